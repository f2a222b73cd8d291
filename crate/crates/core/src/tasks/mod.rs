//! Task families: genome validity, fitness, semantic distance, initial
//! populations and canonical genome strings.
//!
//! Fitness is always oriented so that higher is better: tours score `-L`,
//! equations `-MSE`, bin-packing heuristics `-mean(bins used)`.

pub mod binpack;
pub mod symreg;
pub mod tsp;

pub use binpack::{binpack_simulate, BinPackInstance, BinPackTask};
pub use symreg::{normalized_fitness, symreg_fitness, SymregDataset, SymregTask};
pub use tsp::{tsp_distance, tsp_fitness, Tour, TspInstance, TspTask};

use crate::expr::{self, Expr, ParseError};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("invalid genome: {0}")]
    InvalidGenome(String),
    #[error("tour sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] expr::EvalError),
    #[error("no genome could be extracted from the reply")]
    Extraction,
    #[error("invalid instance: {0}")]
    Instance(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskFamily {
    Tsp,
    Symreg,
    Binpack,
}

impl TaskFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskFamily::Tsp => "tsp",
            TaskFamily::Symreg => "symreg",
            TaskFamily::Binpack => "binpack",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Genome {
    Tour(Tour),
    Expr(Expr),
}

impl Genome {
    pub fn as_tour(&self) -> Option<&Tour> {
        match self {
            Genome::Tour(t) => Some(t),
            Genome::Expr(_) => None,
        }
    }

    pub fn as_expr(&self) -> Option<&Expr> {
        match self {
            Genome::Expr(e) => Some(e),
            Genome::Tour(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub valid: bool,
    pub raw_fitness: f64,
}

/// Precomputed representation from which the task distance is computed:
/// the undirected edge set of a tour, or behaviour vectors over fixed probe
/// scenarios for expression genomes.
#[derive(Debug, Clone, PartialEq)]
pub enum Signature {
    Edges(Vec<(u32, u32)>),
    Behavior(Vec<Vec<f64>>),
}

impl Signature {
    pub fn distance(&self, other: &Signature) -> f64 {
        match (self, other) {
            (Signature::Edges(a), Signature::Edges(b)) => tsp::edge_set_distance(a, b),
            (Signature::Behavior(a), Signature::Behavior(b)) => {
                assert_eq!(a.len(), b.len(), "probe scenario counts differ");
                let total: f64 = a.iter().zip(b).map(|(x, y)| cosine_distance(x, y)).sum();
                total / a.len() as f64
            }
            _ => panic!("signatures from different task families"),
        }
    }
}

/// `1 - cos(a, b)` with non-finite entries replaced by 0. Both vectors zero
/// gives 0; exactly one zero gives 1.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let clean = |x: f64| if x.is_finite() { x } else { 0.0 };
    // Identical vectors get exactly 0 rather than a rounding residue.
    if a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| clean(x) == clean(y)) {
        return 0.0;
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (clean(x), clean(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    match (na > 0.0, nb > 0.0) {
        (false, false) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => {
            let na = na.sqrt();
            let nb = nb.sqrt();
            // The product of norms can overflow for huge outputs.
            let cos = if (na * nb).is_finite() {
                dot / (na * nb)
            } else {
                (dot / na) / nb
            };
            (1.0 - cos.clamp(-1.0, 1.0)).clamp(0.0, 2.0)
        }
    }
}

/// Behaviour distance between two expressions over probe rows.
pub fn behavior_distance(a: &[f64], b: &[f64]) -> f64 {
    cosine_distance(a, b)
}

/// What a chat-completion operator needs from a task to fill its templates.
#[derive(Debug, Clone, Default)]
pub struct PromptFields {
    pub question: String,
    pub n: usize,
    pub dataset: String,
    pub variables: String,
}

pub trait Task: Send + Sync {
    fn id(&self) -> &str;
    fn family(&self) -> TaskFamily;

    /// Initial genomes; fixed for a given task instance.
    fn initial_population(&self, n_init: usize) -> Vec<Genome>;

    fn evaluate(&self, genome: &Genome) -> Evaluation;

    /// Raw fitness recorded for invalid genomes.
    fn invalid_fitness(&self) -> f64;

    /// Canonical form of a genome. Fitness and distance are always computed
    /// on this form so persisted genomes reproduce them exactly.
    fn normalize(&self, genome: Genome) -> Genome;

    /// Deduplication key and persisted representation.
    fn canonical(&self, genome: &Genome) -> String;

    fn parse_canonical(&self, text: &str) -> Result<Genome, TaskError>;

    /// Genome from a free-form model reply.
    fn extract_genome(&self, reply: &str) -> Result<Genome, TaskError>;

    /// `None` for genomes that cannot be placed in the semantic space.
    fn signature(&self, genome: &Genome) -> Option<Signature>;

    fn distance(&self, a: &Genome, b: &Genome) -> Option<f64> {
        Some(self.signature(a)?.distance(&self.signature(b)?))
    }

    fn prompt_fields(&self) -> PromptFields;

    /// One line describing a parent for the evolution prompt.
    fn render_parent(&self, genome: &Genome, raw_fitness: f64) -> String;

    /// Variables available to expression genomes (empty for tours).
    fn variables(&self) -> &[String] {
        &[]
    }
}

/// Strip a Python function wrapper, fences and `np.` prefixes from a reply
/// and return the candidate expression text.
pub(crate) fn expression_text(reply: &str) -> Option<String> {
    let body = match reply.find("```") {
        Some(start) => {
            let after = &reply[start + 3..];
            // Skip the info string (e.g. ```python).
            let after = after.split_once('\n').map(|(_, rest)| rest).unwrap_or(after);
            match after.find("```") {
                Some(end) => &after[..end],
                None => after,
            }
        }
        None => reply,
    };

    let mut candidate: Option<String> = None;
    for line in body.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with("import ") || line.starts_with("from ") {
            continue;
        }
        if let Some(rest) = line.strip_prefix("def ") {
            // One-line form: `def f(x, v): return x + v`
            if let Some((_, tail)) = rest.split_once("):") {
                let tail = tail.trim();
                if let Some(e) = tail.strip_prefix("return") {
                    candidate = Some(e.trim().to_string());
                }
            }
            continue;
        }
        if let Some(e) = line.strip_prefix("return") {
            if e.starts_with(char::is_whitespace) || e.starts_with('(') || e.starts_with('-') {
                candidate = Some(e.trim().to_string());
                continue;
            }
        }
        if candidate.is_none() {
            candidate = Some(line.to_string());
        }
    }
    let text = candidate?;
    let text = text
        .replace("np.", "")
        .replace("numpy.", "")
        .replace("math.", "")
        .trim_end_matches(';')
        .trim()
        .to_string();
    (!text.is_empty()).then_some(text)
}
