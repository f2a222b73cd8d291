use super::{expression_text, Evaluation, Genome, PromptFields, Signature, Task, TaskError, TaskFamily};
use crate::expr::{canonicalize, evaluate, parse, random_expr, EvalContext, Expr};
use crate::rng::{label, stream};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// MSE recorded for expressions whose predictions are not finite.
pub const MSE_SENTINEL: f64 = 1e6;

const PROBE_POINTS: usize = 64;

/// Damped oscillator, acceleration as a function of position and velocity.
pub const OSCILLATOR1: &str = "-0.7*x - 0.25*v - 0.4*x^3";
/// Driven variant with an explicit time input.
pub const OSCILLATOR2: &str = "0.3*sin(t) - 0.7*x - 0.25*v - 0.4*x^3";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymregDataset {
    pub variables: Vec<String>,
    /// `m × d`, one row per sample, columns in `variables` order.
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl SymregDataset {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.inputs.is_empty() || self.inputs.len() != self.targets.len() {
            return Err(TaskError::Instance(format!(
                "{} input rows vs {} targets",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        let d = self.variables.len();
        if let Some((i, row)) = self.inputs.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(TaskError::Instance(format!("row {i} has {} columns, expected {d}", row.len())));
        }
        if self.inputs.iter().flatten().chain(&self.targets).any(|v| !v.is_finite()) {
            return Err(TaskError::Instance("non-finite value in dataset".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TaskError> {
        let ds: SymregDataset = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }

    /// Sample `m` rows uniformly from per-variable ranges and label them with
    /// a ground-truth expression.
    pub fn synthetic(
        ground_truth: &str,
        variables: &[&str],
        ranges: &[(f64, f64)],
        m: usize,
        seed: u64,
    ) -> Result<Self, TaskError> {
        let truth = parse(ground_truth, variables)?;
        let mut rng = stream(seed, &[label::INSTANCE]);
        let inputs: Vec<Vec<f64>> = (0..m)
            .map(|_| ranges.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect())
            .collect();
        let names: Vec<String> = variables.iter().map(|s| s.to_string()).collect();
        let targets = evaluate(&truth, &context(&names, &inputs)?)?;
        let ds = SymregDataset {
            variables: names,
            inputs,
            targets,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn oscillator1(m: usize, seed: u64) -> Self {
        Self::synthetic(OSCILLATOR1, &["x", "v"], &[(-2.0, 2.0), (-2.0, 2.0)], m, seed)
            .expect("ground truth is well formed")
    }

    pub fn oscillator2(m: usize, seed: u64) -> Self {
        Self::synthetic(
            OSCILLATOR2,
            &["t", "x", "v"],
            &[(0.0, 10.0), (-2.0, 2.0), (-2.0, 2.0)],
            m,
            seed,
        )
        .expect("ground truth is well formed")
    }

    fn column_bounds(&self) -> Vec<(f64, f64)> {
        (0..self.variables.len())
            .map(|j| {
                self.inputs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r[j]), hi.max(r[j]))
                })
            })
            .collect()
    }
}

fn context(vars: &[String], rows: &[Vec<f64>]) -> Result<EvalContext, TaskError> {
    let mut ctx = EvalContext::new();
    for (j, name) in vars.iter().enumerate() {
        ctx = ctx.vector(name, rows.iter().map(|r| r[j]).collect())?;
    }
    Ok(ctx)
}

fn mse_of(pred: &[f64], targets: &[f64]) -> f64 {
    if pred.iter().any(|p| !p.is_finite()) {
        return MSE_SENTINEL;
    }
    let mse = pred
        .iter()
        .zip(targets)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / targets.len() as f64;
    if mse.is_finite() {
        mse
    } else {
        MSE_SENTINEL
    }
}

/// Mean squared error of the expression on the dataset; non-finite
/// predictions give [`MSE_SENTINEL`].
pub fn symreg_fitness(ast: &Expr, ds: &SymregDataset) -> Result<f64, TaskError> {
    let pred = evaluate(ast, &context(&ds.variables, &ds.inputs)?)?;
    Ok(mse_of(&pred, &ds.targets))
}

/// `1 - minmax(MSE)` over all candidates of one task instance.
pub fn normalized_fitness(mses: &[f64]) -> Vec<f64> {
    let lo = mses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mses.iter()
        .map(|&m| if hi > lo { 1.0 - (m - lo) / (hi - lo) } else { 1.0 })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SymregTask {
    id: String,
    seed: u64,
    pub dataset: SymregDataset,
    train_ctx: EvalContext,
    probe_ctx: EvalContext,
    pub probe_grid: Vec<Vec<f64>>,
}

impl SymregTask {
    pub fn new(id: impl Into<String>, dataset: SymregDataset, seed: u64) -> Result<Self, TaskError> {
        dataset.validate()?;
        let bounds = dataset.column_bounds();
        let mut rng = stream(seed, &[label::PROBE]);
        let probe_grid: Vec<Vec<f64>> = (0..PROBE_POINTS)
            .map(|_| {
                bounds
                    .iter()
                    .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                    .collect()
            })
            .collect();
        let train_ctx = context(&dataset.variables, &dataset.inputs)?;
        let probe_ctx = context(&dataset.variables, &probe_grid)?;
        Ok(SymregTask {
            id: id.into(),
            seed,
            dataset,
            train_ctx,
            probe_ctx,
            probe_grid,
        })
    }

    pub fn oscillator1(seed: u64) -> Self {
        Self::new(format!("osc1-s{seed}"), SymregDataset::oscillator1(100, seed), seed)
            .expect("synthetic dataset is valid")
    }

    pub fn oscillator2(seed: u64) -> Self {
        Self::new(format!("osc2-s{seed}"), SymregDataset::oscillator2(100, seed), seed)
            .expect("synthetic dataset is valid")
    }

    pub fn mse(&self, ast: &Expr) -> Result<f64, TaskError> {
        let pred = evaluate(ast, &self.train_ctx)?;
        Ok(mse_of(&pred, &self.dataset.targets))
    }

    /// Outputs on the fixed probe grid.
    pub fn behavior(&self, ast: &Expr) -> Option<Vec<f64>> {
        evaluate(ast, &self.probe_ctx).ok()
    }

    fn signature_line(&self) -> String {
        self.dataset.variables.join(", ")
    }
}

impl Task for SymregTask {
    fn id(&self) -> &str {
        &self.id
    }

    fn family(&self) -> TaskFamily {
        TaskFamily::Symreg
    }

    fn initial_population(&self, n_init: usize) -> Vec<Genome> {
        let mut rng = stream(self.seed, &[label::INIT]);
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(n_init);
        let mut tries = 0;
        while out.len() < n_init {
            tries += 1;
            let e = self.normalize(Genome::Expr(random_expr(&mut rng, &self.dataset.variables, 3)));
            let key = self.canonical(&e);
            // Uniqueness is best-effort; validity is not negotiable.
            if self.evaluate(&e).valid && (seen.insert(key) || tries > 10_000) {
                out.push(e);
            }
        }
        out
    }

    fn evaluate(&self, genome: &Genome) -> Evaluation {
        match genome.as_expr().map(|e| self.mse(e)) {
            Some(Ok(mse)) if mse < MSE_SENTINEL => Evaluation {
                valid: true,
                raw_fitness: -mse,
            },
            _ => Evaluation {
                valid: false,
                raw_fitness: self.invalid_fitness(),
            },
        }
    }

    fn invalid_fitness(&self) -> f64 {
        -MSE_SENTINEL
    }

    fn normalize(&self, genome: Genome) -> Genome {
        match genome {
            Genome::Expr(e) => match parse(&canonicalize(&e), &self.dataset.variables) {
                Ok(n) => Genome::Expr(n),
                Err(_) => Genome::Expr(e),
            },
            other => other,
        }
    }

    fn canonical(&self, genome: &Genome) -> String {
        match genome {
            Genome::Expr(e) => canonicalize(e),
            Genome::Tour(t) => t.to_json(),
        }
    }

    fn parse_canonical(&self, text: &str) -> Result<Genome, TaskError> {
        Ok(Genome::Expr(parse(text, &self.dataset.variables)?))
    }

    fn extract_genome(&self, reply: &str) -> Result<Genome, TaskError> {
        let text = expression_text(reply).ok_or(TaskError::Extraction)?;
        Ok(Genome::Expr(parse(&text, &self.dataset.variables)?))
    }

    fn signature(&self, genome: &Genome) -> Option<Signature> {
        Some(Signature::Behavior(vec![self.behavior(genome.as_expr()?)?]))
    }

    fn prompt_fields(&self) -> PromptFields {
        let samples: Vec<serde_json::Value> = self
            .dataset
            .inputs
            .iter()
            .zip(&self.dataset.targets)
            .take(100)
            .map(|(row, y)| {
                let mut obj = serde_json::Map::new();
                for (name, v) in self.dataset.variables.iter().zip(row) {
                    obj.insert(name.clone(), round3(*v).into());
                }
                obj.insert("a".into(), round3(*y).into());
                serde_json::Value::Object(obj)
            })
            .collect();
        PromptFields {
            question: serde_json::to_string(&samples).expect("samples serialize"),
            n: self.dataset.inputs.len(),
            variables: self.signature_line(),
            ..Default::default()
        }
    }

    fn render_parent(&self, genome: &Genome, raw_fitness: f64) -> String {
        let body = self.canonical(genome);
        serde_json::json!({
            "code": format!("def equation({}): return {body}", self.signature_line()),
            "mse_score": (-raw_fitness * 1e4).round() / 1e4,
        })
        .to_string()
    }

    fn variables(&self) -> &[String] {
        &self.dataset.variables
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}
