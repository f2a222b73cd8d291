use super::{expression_text, Evaluation, Genome, PromptFields, Signature, Task, TaskError, TaskFamily};
use crate::expr::{canonicalize, evaluate, parse, random_expr, EvalContext, Expr};
use crate::rng::{label, stream};
use rand::Rng;
use rand_distr::{Distribution, Weibull};
use serde::{Deserialize, Serialize};

pub const VARIABLES: [&str; 2] = ["item", "bins"];

const PROBE_SCENARIOS: usize = 16;
const PROBE_BINS: usize = 8;

/// Seed heuristics: best-fit, worst-fit, first-fit, then variations.
pub const CANONICAL_RULES: [&str; 7] = [
    "-(bins - item)",
    "bins - item",
    "1",
    "-(bins - item)^2",
    "bins / item",
    "-bins",
    "item - bins",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPackInstance {
    pub capacity: f64,
    pub items: Vec<f64>,
}

impl BinPackInstance {
    pub fn validate(&self) -> Result<(), TaskError> {
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(TaskError::Instance(format!("capacity {} must be positive", self.capacity)));
        }
        if let Some(bad) = self.items.iter().find(|&&s| !(s > 0.0 && s <= self.capacity)) {
            return Err(TaskError::Instance(format!(
                "item size {bad} outside (0, {}]",
                self.capacity
            )));
        }
        Ok(())
    }

    /// OR-library style: capacity 150, integer sizes uniform in [20, 100].
    pub fn or_like(n_items: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[label::INSTANCE]);
        BinPackInstance {
            capacity: 150.0,
            items: (0..n_items).map(|_| rng.random_range(20..=100) as f64).collect(),
        }
    }

    /// Capacity 100, integer sizes from Weibull(scale 45, shape 3) clipped to [1, 100].
    pub fn weibull_like(n_items: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[label::INSTANCE]);
        let dist = Weibull::<f64>::new(45.0, 3.0).expect("valid parameters");
        BinPackInstance {
            capacity: 100.0,
            items: (0..n_items)
                .map(|_| dist.sample(&mut rng).round().clamp(1.0, 100.0))
                .collect(),
        }
    }
}

/// Index of the highest finite priority, lowest index on ties. When no
/// priority is finite every bin ties and the first one wins.
fn argmax_priority(priorities: &[f64]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in priorities.iter().enumerate() {
        if !p.is_finite() {
            continue;
        }
        match best {
            Some((_, b)) if p <= b => {}
            _ => best = Some((i, p)),
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}

/// Online packing driven by a priority expression over `item` (scalar) and
/// `bins` (residual capacities of the bins the item fits in). Returns the
/// number of bins opened.
pub fn binpack_simulate(ast: &Expr, inst: &BinPackInstance) -> Result<usize, TaskError> {
    let mut residual: Vec<f64> = Vec::new();
    for &item in &inst.items {
        let feasible: Vec<usize> = (0..residual.len()).filter(|&b| residual[b] >= item).collect();
        if feasible.is_empty() {
            residual.push(inst.capacity - item);
            continue;
        }
        let ctx = EvalContext::new()
            .scalar("item", item)
            .vector("bins", feasible.iter().map(|&b| residual[b]).collect())?;
        let priorities = evaluate(ast, &ctx)?;
        let chosen = feasible[argmax_priority(&priorities)];
        residual[chosen] -= item;
    }
    Ok(residual.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeScenario {
    pub item: f64,
    pub bins: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BinPackTask {
    id: String,
    dataset: String,
    pub instances: Vec<BinPackInstance>,
    pub probes: Vec<ProbeScenario>,
    variables: Vec<String>,
    seed: u64,
}

impl BinPackTask {
    pub fn new(
        id: impl Into<String>,
        dataset: impl Into<String>,
        instances: Vec<BinPackInstance>,
        seed: u64,
    ) -> Result<Self, TaskError> {
        if instances.is_empty() {
            return Err(TaskError::Instance("no bin-packing instances".into()));
        }
        for inst in &instances {
            inst.validate()?;
        }
        let capacity = instances[0].capacity;
        let mut rng = stream(seed, &[label::PROBE]);
        let probes = (0..PROBE_SCENARIOS)
            .map(|_| {
                // Sizes uniform in (0, capacity]; every bin can take the item.
                let item = capacity * (1.0 - rng.random::<f64>());
                let bins = (0..PROBE_BINS)
                    .map(|_| item + (capacity - item) * (1.0 - rng.random::<f64>()))
                    .collect();
                ProbeScenario { item, bins }
            })
            .collect();
        Ok(BinPackTask {
            id: id.into(),
            dataset: dataset.into(),
            instances,
            probes,
            variables: VARIABLES.iter().map(|s| s.to_string()).collect(),
            seed,
        })
    }

    pub fn or_like(n_instances: usize, n_items: usize, seed: u64) -> Self {
        let instances = (0..n_instances)
            .map(|k| BinPackInstance::or_like(n_items, crate::rng::derive_seed(seed, &[k as u64])))
            .collect();
        Self::new(format!("binpack-or-s{seed}"), "OR3", instances, seed).expect("generated instances are valid")
    }

    pub fn weibull_like(n_instances: usize, n_items: usize, seed: u64) -> Self {
        let instances = (0..n_instances)
            .map(|k| BinPackInstance::weibull_like(n_items, crate::rng::derive_seed(seed, &[k as u64])))
            .collect();
        Self::new(format!("binpack-weibull-s{seed}"), "Weibull", instances, seed)
            .expect("generated instances are valid")
    }

    pub fn mean_bins(&self, ast: &Expr) -> Result<f64, TaskError> {
        let mut total = 0usize;
        for inst in &self.instances {
            total += binpack_simulate(ast, inst)?;
        }
        Ok(total as f64 / self.instances.len() as f64)
    }

    pub fn behavior(&self, ast: &Expr) -> Option<Vec<Vec<f64>>> {
        self.probes
            .iter()
            .map(|p| {
                let ctx = EvalContext::new().scalar("item", p.item).vector("bins", p.bins.clone()).ok()?;
                evaluate(ast, &ctx).ok()
            })
            .collect()
    }
}

impl Task for BinPackTask {
    fn id(&self) -> &str {
        &self.id
    }

    fn family(&self) -> TaskFamily {
        TaskFamily::Binpack
    }

    fn initial_population(&self, n_init: usize) -> Vec<Genome> {
        let mut out: Vec<Genome> = CANONICAL_RULES
            .iter()
            .take(n_init)
            .map(|s| self.normalize(Genome::Expr(parse(s, &VARIABLES).expect("rule parses"))))
            .collect();
        let mut rng = stream(self.seed, &[label::INIT]);
        while out.len() < n_init {
            let g = self.normalize(Genome::Expr(random_expr(&mut rng, &VARIABLES, 3)));
            if self.evaluate(&g).valid {
                out.push(g);
            }
        }
        out
    }

    fn evaluate(&self, genome: &Genome) -> Evaluation {
        match genome.as_expr().map(|e| self.mean_bins(e)) {
            Some(Ok(bins)) => Evaluation {
                valid: true,
                raw_fitness: -bins,
            },
            _ => Evaluation {
                valid: false,
                raw_fitness: self.invalid_fitness(),
            },
        }
    }

    /// One bin per item plus one: worse than any real packing.
    fn invalid_fitness(&self) -> f64 {
        let items: usize = self.instances.iter().map(|i| i.items.len()).sum();
        -(items as f64 / self.instances.len() as f64 + 1.0)
    }

    fn normalize(&self, genome: Genome) -> Genome {
        match genome {
            Genome::Expr(e) => match parse(&canonicalize(&e), &VARIABLES) {
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
        Ok(Genome::Expr(parse(text, &VARIABLES)?))
    }

    fn extract_genome(&self, reply: &str) -> Result<Genome, TaskError> {
        let text = expression_text(reply).ok_or(TaskError::Extraction)?;
        Ok(Genome::Expr(parse(&text, &VARIABLES)?))
    }

    fn signature(&self, genome: &Genome) -> Option<Signature> {
        self.behavior(genome.as_expr()?).map(Signature::Behavior)
    }

    fn prompt_fields(&self) -> PromptFields {
        PromptFields {
            question: String::new(),
            n: self.instances.len(),
            dataset: self.dataset.clone(),
            variables: "item, bins".into(),
        }
    }

    fn render_parent(&self, genome: &Genome, raw_fitness: f64) -> String {
        serde_json::json!({
            "code": format!("def priority(item, bins): return {}", self.canonical(genome)),
            "avg_bins": (-raw_fitness * 100.0).round() / 100.0,
        })
        .to_string()
    }

    fn variables(&self) -> &[String] {
        &self.variables
    }
}
