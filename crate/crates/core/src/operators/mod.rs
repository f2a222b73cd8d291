//! Mutation operators: the chat-completion operator, scripted local edits
//! that stand in for models offline, and the strong/weak mixing operator.

pub mod templates;

use crate::expr::{random_expr, Expr};
use crate::gateway::{ChatExchange, Gateway, GatewayError};
use crate::rng::{label, stream};
use crate::tasks::{Evaluation, Genome, Task, Tour};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use templates::Templates;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
/// Candidate edits tried per subtree mutation.
pub const SUBTREE_CANDIDATES: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ParentView {
    pub id: u64,
    pub genome: Genome,
    pub raw_fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutationRequest {
    pub task_id: String,
    pub parents: Vec<ParentView>,
    pub generation: usize,
    pub attempt_index: usize,
    /// Seed of this attempt's private random stream.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    ParseFailure,
    TransportError,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptFailure {
    pub kind: FailureKind,
    pub message: String,
}

impl AttemptFailure {
    pub fn new(kind: FailureKind, message: impl Into<String>) -> Self {
        AttemptFailure {
            kind,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutationOutcome {
    pub genome: Result<Genome, AttemptFailure>,
    /// Which operator produced the attempt.
    pub tag: String,
    pub exchange: Option<ChatExchange>,
}

pub trait MutationOperator: Send + Sync {
    fn mutate(&self, task: &dyn Task, req: &MutationRequest) -> MutationOutcome;
}

#[derive(Debug, thiserror::Error)]
pub enum OperatorError {
    #[error("invalid operator spec: {0}")]
    Spec(String),
    #[error("llm operator needs a gateway")]
    NoGateway,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum OperatorSpec {
    #[serde(rename = "llm")]
    Llm {
        model: String,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    #[serde(rename = "scripted-2opt")]
    Scripted2Opt,
    #[serde(rename = "scripted-subtree")]
    ScriptedSubtree,
    #[serde(rename = "scripted-shuffle")]
    ScriptedShuffle,
    #[serde(rename = "mixed")]
    Mixed {
        strong: Box<OperatorSpec>,
        weak: Box<OperatorSpec>,
        rho: f64,
    },
}

impl OperatorSpec {
    pub fn validate(&self) -> Result<(), OperatorError> {
        match self {
            OperatorSpec::Llm { model, temperature } => {
                if model.trim().is_empty() {
                    return Err(OperatorError::Spec("model id is empty".into()));
                }
                if !(*temperature >= 0.0) {
                    return Err(OperatorError::Spec(format!("temperature {temperature} < 0")));
                }
                Ok(())
            }
            OperatorSpec::Mixed { strong, weak, rho } => {
                if !(0.0..=1.0).contains(rho) {
                    return Err(OperatorError::Spec(format!("rho {rho} outside [0, 1]")));
                }
                strong.validate()?;
                weak.validate()
            }
            _ => Ok(()),
        }
    }

    /// Short identifier used in run ids and reports.
    pub fn id(&self) -> String {
        match self {
            OperatorSpec::Llm { model, .. } => model.replace('/', "_"),
            OperatorSpec::Scripted2Opt => "scripted-2opt".into(),
            OperatorSpec::ScriptedSubtree => "scripted-subtree".into(),
            OperatorSpec::ScriptedShuffle => "scripted-shuffle".into(),
            OperatorSpec::Mixed { strong, weak, rho } => {
                format!("mixed-{}-{}-rho{}", strong.id(), weak.id(), rho)
            }
        }
    }

    pub fn needs_gateway(&self) -> bool {
        match self {
            OperatorSpec::Llm { .. } => true,
            OperatorSpec::Mixed { strong, weak, .. } => strong.needs_gateway() || weak.needs_gateway(),
            _ => false,
        }
    }

    /// Instantiate. `templates` overrides the family defaults for llm operators.
    pub fn build(
        &self,
        gateway: Option<Arc<Gateway>>,
        templates: Option<Templates>,
    ) -> Result<Box<dyn MutationOperator>, OperatorError> {
        self.validate()?;
        Ok(match self {
            OperatorSpec::Llm { model, temperature } => Box::new(LlmOperator {
                model: model.clone(),
                temperature: *temperature,
                gateway: gateway.ok_or(OperatorError::NoGateway)?,
                templates,
            }),
            OperatorSpec::Scripted2Opt => Box::new(TwoOpt),
            OperatorSpec::ScriptedSubtree => Box::new(SubtreeRefiner),
            OperatorSpec::ScriptedShuffle => Box::new(Shuffle),
            OperatorSpec::Mixed { strong, weak, rho } => Box::new(Mixed {
                strong: strong.build(gateway.clone(), templates.clone())?,
                weak: weak.build(gateway, templates)?,
                rho: *rho,
            }),
        })
    }
}

/// Genome from a free-form reply; see [`Task::extract_genome`].
pub fn extract_genome(text: &str, task: &dyn Task) -> Result<Genome, AttemptFailure> {
    task.extract_genome(text)
        .map_err(|e| AttemptFailure::new(FailureKind::ParseFailure, e.to_string()))
}

pub struct LlmOperator {
    pub model: String,
    pub temperature: f64,
    pub gateway: Arc<Gateway>,
    pub templates: Option<Templates>,
}

impl LlmOperator {
    pub fn prompt(&self, task: &dyn Task, req: &MutationRequest) -> (String, String) {
        let parents: Vec<String> = req
            .parents
            .iter()
            .map(|p| task.render_parent(&p.genome, p.raw_fitness))
            .collect();
        let fallback;
        let templates = match &self.templates {
            Some(t) => t,
            None => {
                fallback = Templates::for_family(task.family());
                &fallback
            }
        };
        templates
            .evolve
            .render(&task.prompt_fields(), &parents.join("\n"), parents.len())
    }
}

impl MutationOperator for LlmOperator {
    fn mutate(&self, task: &dyn Task, req: &MutationRequest) -> MutationOutcome {
        let (system, user) = self.prompt(task, req);
        match self.gateway.chat(&self.model, &system, &user, self.temperature) {
            Ok(exchange) => MutationOutcome {
                genome: extract_genome(&exchange.reply, task),
                tag: self.model.clone(),
                exchange: Some(exchange),
            },
            Err(GatewayError::Transport { message, exchange }) => MutationOutcome {
                genome: Err(AttemptFailure::new(FailureKind::TransportError, message)),
                tag: self.model.clone(),
                exchange: Some(*exchange),
            },
            Err(e) => MutationOutcome {
                genome: Err(AttemptFailure::new(FailureKind::TransportError, e.to_string())),
                tag: self.model.clone(),
                exchange: None,
            },
        }
    }
}

fn attempt_rng(req: &MutationRequest) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(req.seed)
}

fn pick_parent<'a>(req: &'a MutationRequest, rng: &mut ChaCha8Rng) -> &'a ParentView {
    &req.parents[rng.random_range(0..req.parents.len())]
}

fn unsupported(tag: &str, what: &str) -> MutationOutcome {
    MutationOutcome {
        genome: Err(AttemptFailure::new(FailureKind::Unsupported, what.to_string())),
        tag: tag.into(),
        exchange: None,
    }
}

/// Fitness a candidate will receive once normalized, invalid ranked lowest.
fn score(task: &dyn Task, genome: &Genome) -> f64 {
    match task.evaluate(&task.normalize(genome.clone())) {
        Evaluation { valid: true, raw_fitness } => raw_fitness,
        _ => f64::NEG_INFINITY,
    }
}

/// Reverse `order[i..=j]`.
pub fn two_opt_move(order: &[usize], i: usize, j: usize) -> Vec<usize> {
    let mut out = order.to_vec();
    out[i..=j].reverse();
    out
}

/// Best-improvement 2-opt on a uniformly chosen parent. Returns the parent
/// unchanged when it is already 2-opt optimal.
pub struct TwoOpt;

pub const TWO_OPT_TAG: &str = "scripted-2opt";

impl TwoOpt {
    /// The best strictly improving reversal, if any. Ties go to the first
    /// `(i, j)` in lexicographic order.
    pub fn best_move(task: &dyn Task, tour: &Tour) -> Option<Tour> {
        let n = tour.0.len();
        let mut best = score(task, &Genome::Tour(tour.clone()));
        let mut best_tour = None;
        for i in 0..n {
            for j in i + 1..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let cand = Tour(two_opt_move(&tour.0, i, j));
                let f = score(task, &Genome::Tour(cand.clone()));
                if f > best {
                    best = f;
                    best_tour = Some(cand);
                }
            }
        }
        best_tour
    }
}

impl MutationOperator for TwoOpt {
    fn mutate(&self, task: &dyn Task, req: &MutationRequest) -> MutationOutcome {
        let mut rng = attempt_rng(req);
        let parent = pick_parent(req, &mut rng);
        let Some(tour) = parent.genome.as_tour() else {
            return unsupported(TWO_OPT_TAG, "2-opt needs a tour genome");
        };
        let child = TwoOpt::best_move(task, tour).unwrap_or_else(|| tour.clone());
        MutationOutcome {
            genome: Ok(Genome::Tour(child)),
            tag: TWO_OPT_TAG.into(),
            exchange: None,
        }
    }
}

/// Best of a batch of random subtree replacements and constant tweaks on a
/// uniformly chosen parent; the parent itself if none improves on it.
pub struct SubtreeRefiner;

pub const SUBTREE_TAG: &str = "scripted-subtree";

fn subtree_candidate(rng: &mut ChaCha8Rng, expr: &Expr, vars: &[String]) -> Expr {
    let idx = rng.random_range(0..expr.node_count());
    let node = expr.subtree(idx).expect("index within node count");
    let replacement = match node {
        Expr::Const(c) if rng.random_bool(0.7) => {
            let factor = 1.0 + rng.random_range(-0.3..0.3);
            crate::expr::short_constant(c * factor)
        }
        _ => random_expr(rng, vars, 3),
    };
    expr.replace_subtree(idx, &replacement)
}

impl MutationOperator for SubtreeRefiner {
    fn mutate(&self, task: &dyn Task, req: &MutationRequest) -> MutationOutcome {
        let mut rng = attempt_rng(req);
        let parent = pick_parent(req, &mut rng);
        let Some(expr) = parent.genome.as_expr() else {
            return unsupported(SUBTREE_TAG, "subtree mutation needs an expression genome");
        };
        let vars = task.variables().to_vec();
        let mut best = score(task, &parent.genome);
        let mut best_expr = expr.clone();
        for _ in 0..SUBTREE_CANDIDATES {
            let cand = subtree_candidate(&mut rng, expr, &vars);
            if !cand.within_limits() {
                continue;
            }
            let f = score(task, &Genome::Expr(cand.clone()));
            if f > best {
                best = f;
                best_expr = cand;
            }
        }
        MutationOutcome {
            genome: Ok(Genome::Expr(best_expr)),
            tag: SUBTREE_TAG.into(),
            exchange: None,
        }
    }
}

/// Ignores parent content: a uniformly random tour of the parent's size, or
/// a fresh random expression.
pub struct Shuffle;

pub const SHUFFLE_TAG: &str = "scripted-shuffle";

impl MutationOperator for Shuffle {
    fn mutate(&self, task: &dyn Task, req: &MutationRequest) -> MutationOutcome {
        let mut rng = attempt_rng(req);
        let parent = pick_parent(req, &mut rng);
        let genome = match &parent.genome {
            Genome::Tour(t) => {
                let mut order: Vec<usize> = (0..t.0.len()).collect();
                order.shuffle(&mut rng);
                Genome::Tour(Tour(order))
            }
            Genome::Expr(_) => Genome::Expr(random_expr(&mut rng, task.variables(), 4)),
        };
        MutationOutcome {
            genome: Ok(genome),
            tag: SHUFFLE_TAG.into(),
            exchange: None,
        }
    }
}

pub const STRONG_PREFIX: &str = "strong:";
pub const WEAK_PREFIX: &str = "weak:";

/// Delegates each attempt to `weak` with probability `rho`, else `strong`.
/// Tags are prefixed with `strong:` / `weak:`.
pub struct Mixed {
    pub strong: Box<dyn MutationOperator>,
    pub weak: Box<dyn MutationOperator>,
    pub rho: f64,
}

impl MutationOperator for Mixed {
    fn mutate(&self, task: &dyn Task, req: &MutationRequest) -> MutationOutcome {
        let mut rng = stream(req.seed, &[label::MIX]);
        let (op, prefix) = if rng.random_bool(self.rho) {
            (&self.weak, WEAK_PREFIX)
        } else {
            (&self.strong, STRONG_PREFIX)
        };
        let mut out = op.mutate(task, req);
        out.tag = format!("{prefix}{}", out.tag);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{TspInstance, TspTask};

    fn request(parents: Vec<Genome>, seed: u64) -> MutationRequest {
        MutationRequest {
            task_id: "t".into(),
            parents: parents
                .into_iter()
                .enumerate()
                .map(|(i, genome)| ParentView {
                    id: i as u64,
                    genome,
                    raw_fitness: 0.0,
                })
                .collect(),
            generation: 1,
            attempt_index: 0,
            seed,
        }
    }

    #[test]
    fn two_opt_move_reverses_segment() {
        assert_eq!(two_opt_move(&[0, 1, 2, 3], 1, 2), vec![0, 2, 1, 3]);
    }

    #[test]
    fn two_opt_picks_the_crossing_fix() {
        // Unit square: [0,1,2,3] is optimal, [0,2,1,3] crosses.
        let s = 2f64.sqrt();
        let dist = vec![
            vec![0.0, 1.0, s, 1.0],
            vec![1.0, 0.0, 1.0, s],
            vec![s, 1.0, 0.0, 1.0],
            vec![1.0, s, 1.0, 0.0],
        ];
        let task = TspTask::new("sq", TspInstance::new(dist, 0).unwrap());
        let req = request(vec![Genome::Tour(Tour(vec![0, 1, 3, 2]))], 3);
        let out = TwoOpt.mutate(&task, &req);
        let child = out.genome.unwrap();
        assert!((task.evaluate(&task.normalize(child)).raw_fitness + 4.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_boundaries() {
        let task = TspTask::random(6, 1);
        let genome = task.initial_population(1).remove(0);
        for (rho, prefix) in [(0.0, STRONG_PREFIX), (1.0, WEAK_PREFIX)] {
            let op = OperatorSpec::Mixed {
                strong: Box::new(OperatorSpec::Scripted2Opt),
                weak: Box::new(OperatorSpec::ScriptedShuffle),
                rho,
            }
            .build(None, None)
            .unwrap();
            for s in 0..50 {
                let out = op.mutate(&task, &request(vec![genome.clone()], s));
                assert!(out.tag.starts_with(prefix));
            }
        }
    }

    #[test]
    fn spec_serde_and_validation() {
        let spec: OperatorSpec = toml::from_str(
            r#"
kind = "mixed"
rho = 0.25
strong = { kind = "scripted-2opt" }
weak = { kind = "scripted-shuffle" }
"#,
        )
        .unwrap();
        assert!(spec.validate().is_ok());
        let llm: OperatorSpec = toml::from_str("kind = \"llm\"\nmodel = \"m\"").unwrap();
        assert_eq!(
            llm,
            OperatorSpec::Llm {
                model: "m".into(),
                temperature: 0.7
            }
        );
        assert!(llm.build(None, None).is_err());
        let bad = OperatorSpec::Mixed {
            strong: Box::new(OperatorSpec::Scripted2Opt),
            weak: Box::new(OperatorSpec::ScriptedShuffle),
            rho: 1.5,
        };
        assert!(bad.validate().is_err());
    }
}
