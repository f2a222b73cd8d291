use super::{Evaluation, Genome, PromptFields, Signature, Task, TaskError, TaskFamily};
use crate::rng::{label, stream};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Symmetric TSP instance; the triangle inequality is not assumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TspInstance {
    pub n: usize,
    pub dist: Vec<Vec<f64>>,
    pub seed: u64,
}

impl TspInstance {
    pub fn new(dist: Vec<Vec<f64>>, seed: u64) -> Result<Self, TaskError> {
        let inst = TspInstance {
            n: dist.len(),
            dist,
            seed,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// `n` cities uniform in a 100×100 square, Euclidean distances.
    pub fn random_euclidean(n: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[label::INSTANCE]);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
            .collect();
        let dist = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                            (dx * dx + dy * dy).sqrt()
                        }
                    })
                    .collect()
            })
            .collect();
        TspInstance { n, dist, seed }
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let n = self.dist.len();
        if n < 3 || self.n != n {
            return Err(TaskError::Instance(format!(
                "need n >= 3 and an n×n matrix (n = {}, rows = {n})",
                self.n
            )));
        }
        for (i, row) in self.dist.iter().enumerate() {
            if row.len() != n {
                return Err(TaskError::Instance(format!("row {i} has {} entries", row.len())));
            }
            for (j, &d) in row.iter().enumerate() {
                if !d.is_finite() || d < 0.0 {
                    return Err(TaskError::Instance(format!("dist[{i}][{j}] = {d}")));
                }
                if i == j && d != 0.0 {
                    return Err(TaskError::Instance(format!("non-zero diagonal at {i}")));
                }
                if d != self.dist[j][i] {
                    return Err(TaskError::Instance(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TaskError> {
        let inst: TspInstance = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }
}

/// A tour as an ordering of city indices. Not necessarily a permutation:
/// validity is checked at evaluation time.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tour(pub Vec<usize>);

impl Tour {
    pub fn is_permutation_of(&self, n: usize) -> bool {
        if self.0.len() != n {
            return false;
        }
        let mut seen = vec![false; n];
        for &c in &self.0 {
            if c >= n || seen[c] {
                return false;
            }
            seen[c] = true;
        }
        true
    }

    /// Rotate so city 0 comes first and orient so the second city is
    /// smaller than the last. Only meaningful for valid permutations.
    pub fn canonical(&self) -> Tour {
        let n = self.0.len();
        let Some(start) = self.0.iter().position(|&c| c == 0) else {
            return self.clone();
        };
        let mut out: Vec<usize> = (0..n).map(|k| self.0[(start + k) % n]).collect();
        if n > 2 && out[1] > out[n - 1] {
            out[1..].reverse();
        }
        Tour(out)
    }

    /// Undirected edges as sorted `(min, max)` pairs.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let n = self.0.len();
        let mut e: Vec<(u32, u32)> = (0..n)
            .map(|i| {
                let (a, b) = (self.0[i] as u32, self.0[(i + 1) % n] as u32);
                (a.min(b), a.max(b))
            })
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("vec of integers serializes")
    }
}

/// `-L(π)` with `L = Σ dist[π_i][π_{i+1}] + dist[π_n][π_1]`.
pub fn tsp_fitness(tour: &Tour, inst: &TspInstance) -> Result<f64, TaskError> {
    if !tour.is_permutation_of(inst.n) {
        return Err(TaskError::InvalidGenome(format!(
            "{} is not a permutation of 0..{}",
            tour.to_json(),
            inst.n
        )));
    }
    Ok(-tour_length(&tour.0, &inst.dist))
}

pub(crate) fn tour_length(order: &[usize], dist: &[Vec<f64>]) -> f64 {
    let n = order.len();
    let mut total = 0.0;
    for i in 0..n - 1 {
        total += dist[order[i]][order[i + 1]];
    }
    total + dist[order[n - 1]][order[0]]
}

pub(crate) fn edge_set_distance(a: &[(u32, u32)], b: &[(u32, u32)]) -> f64 {
    if a.is_empty() {
        return if b.is_empty() { 0.0 } else { 1.0 };
    }
    let (mut i, mut j, mut shared) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    1.0 - shared as f64 / a.len() as f64
}

/// `1 - |E(a) ∩ E(b)| / |E(a)|` over undirected edge sets.
pub fn tsp_distance(a: &Tour, b: &Tour) -> Result<f64, TaskError> {
    if a.0.len() != b.0.len() {
        return Err(TaskError::SizeMismatch(a.0.len(), b.0.len()));
    }
    Ok(edge_set_distance(&a.edges(), &b.edges()))
}

#[derive(Debug, Clone)]
pub struct TspTask {
    id: String,
    pub instance: TspInstance,
}

impl TspTask {
    pub fn new(id: impl Into<String>, instance: TspInstance) -> Self {
        TspTask {
            id: id.into(),
            instance,
        }
    }

    pub fn random(n: usize, seed: u64) -> Self {
        TspTask::new(format!("tsp{n}-s{seed}"), TspInstance::random_euclidean(n, seed))
    }

    pub fn n(&self) -> usize {
        self.instance.n
    }
}

/// Pull the first `{"genome": ...}` object, or failing that the first
/// bracketed integer list, out of a reply.
pub(crate) fn extract_tour(reply: &str) -> Result<Tour, TaskError> {
    for (i, _) in reply.match_indices('{') {
        let mut de = serde_json::Deserializer::from_str(&reply[i..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Object(obj))) = de.next() {
            if let Some(g) = obj.get("genome") {
                let list = match g {
                    serde_json::Value::String(s) => serde_json::from_str::<Vec<i64>>(s.trim()).ok(),
                    other => serde_json::from_value::<Vec<i64>>(other.clone()).ok(),
                };
                if let Some(list) = list {
                    return to_tour(list);
                }
            }
        }
    }
    for (i, _) in reply.match_indices('[') {
        if let Some(end) = reply[i..].find(']') {
            if let Ok(list) = serde_json::from_str::<Vec<i64>>(&reply[i..=i + end]) {
                if !list.is_empty() {
                    return to_tour(list);
                }
            }
        }
    }
    Err(TaskError::Extraction)
}

fn to_tour(list: Vec<i64>) -> Result<Tour, TaskError> {
    if list.iter().any(|&c| c < 0) {
        return Err(TaskError::InvalidGenome("negative city index".into()));
    }
    Ok(Tour(list.into_iter().map(|c| c as usize).collect()))
}

impl Task for TspTask {
    fn id(&self) -> &str {
        &self.id
    }

    fn family(&self) -> TaskFamily {
        TaskFamily::Tsp
    }

    fn initial_population(&self, n_init: usize) -> Vec<Genome> {
        let mut rng = stream(self.instance.seed, &[label::INIT]);
        (0..n_init)
            .map(|_| {
                let mut order: Vec<usize> = (0..self.n()).collect();
                order.shuffle(&mut rng);
                Genome::Tour(Tour(order))
            })
            .collect()
    }

    fn evaluate(&self, genome: &Genome) -> Evaluation {
        match genome.as_tour().map(|t| tsp_fitness(t, &self.instance)) {
            Some(Ok(f)) => Evaluation {
                valid: true,
                raw_fitness: f,
            },
            _ => Evaluation {
                valid: false,
                raw_fitness: self.invalid_fitness(),
            },
        }
    }

    fn invalid_fitness(&self) -> f64 {
        0.0
    }

    fn normalize(&self, genome: Genome) -> Genome {
        match genome {
            Genome::Tour(t) if t.is_permutation_of(self.n()) => Genome::Tour(t.canonical()),
            other => other,
        }
    }

    fn canonical(&self, genome: &Genome) -> String {
        match genome {
            Genome::Tour(t) if t.is_permutation_of(self.n()) => t.canonical().to_json(),
            Genome::Tour(t) => t.to_json(),
            Genome::Expr(e) => e.to_string(),
        }
    }

    fn parse_canonical(&self, text: &str) -> Result<Genome, TaskError> {
        let list: Vec<i64> = serde_json::from_str(text)?;
        Ok(Genome::Tour(to_tour(list)?))
    }

    fn extract_genome(&self, reply: &str) -> Result<Genome, TaskError> {
        extract_tour(reply).map(Genome::Tour)
    }

    fn signature(&self, genome: &Genome) -> Option<Signature> {
        let t = genome.as_tour()?;
        t.is_permutation_of(self.n()).then(|| Signature::Edges(t.edges()))
    }

    fn prompt_fields(&self) -> PromptFields {
        let rounded: Vec<Vec<f64>> = self
            .instance
            .dist
            .iter()
            .map(|row| row.iter().map(|d| (d * 100.0).round() / 100.0).collect())
            .collect();
        PromptFields {
            question: serde_json::to_string(&rounded).expect("matrix serializes"),
            n: self.n(),
            ..Default::default()
        }
    }

    fn render_parent(&self, genome: &Genome, raw_fitness: f64) -> String {
        let genome = match genome {
            Genome::Tour(t) => t.to_json(),
            Genome::Expr(e) => e.to_string(),
        };
        format!("{{\"genome\": {genome}, \"score\": {:.1}}}", -raw_fitness)
    }
}
