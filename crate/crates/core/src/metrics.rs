//! Trajectory descriptors: nearest-prior novelty, breakthroughs, local
//! refinement rate, parent-child distance and kernel entropies of the pool.

use crate::evolution::Trajectory;
use crate::tasks::{Signature, Task};
use serde::{Deserialize, Serialize};

pub const NORMALIZATION_EPSILON: f64 = 1e-9;

/// Minimum distance from `candidate` to any member of `prior`.
///
/// Panics if `prior` is empty.
pub fn novelty<T>(candidate: &T, prior: &[T], d: impl Fn(&T, &T) -> f64) -> f64 {
    assert!(!prior.is_empty(), "novelty needs a non-empty prior set");
    prior.iter().map(|b| d(candidate, b)).fold(f64::INFINITY, f64::min)
}

/// `(n - min) / (max - min + ε)`.
pub fn normalize_novelty(raws: &[f64]) -> Vec<f64> {
    let (lo, hi) = min_max(raws.iter().copied());
    raws.iter()
        .map(|&n| (n - lo) / (hi - lo + NORMALIZATION_EPSILON))
        .collect()
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakthroughs {
    /// Attempt indices (0-based, in attempt order) that raised the best.
    pub events: Vec<usize>,
    /// Events over all attempts.
    pub rate: f64,
    /// Events over valid attempts.
    pub rate_valid_only: f64,
}

/// Strict running-max events over `(raw_fitness, valid)` attempts, starting
/// from the initial population's best. Invalid attempts never count.
pub fn breakthroughs(initial_best: f64, attempts: &[(f64, bool)]) -> Breakthroughs {
    let mut best = initial_best;
    let mut events = Vec::new();
    for (i, &(f, valid)) in attempts.iter().enumerate() {
        if valid && f > best {
            best = f;
            events.push(i);
        }
    }
    let valid = attempts.iter().filter(|a| a.1).count();
    let ratio = |den: usize| if den == 0 { 0.0 } else { events.len() as f64 / den as f64 };
    Breakthroughs {
        rate: ratio(attempts.len()),
        rate_valid_only: ratio(valid),
        events,
    }
}

pub fn trajectory_breakthroughs(traj: &Trajectory) -> Breakthroughs {
    let attempts: Vec<(f64, bool)> = traj.attempts().iter().map(|i| (i.raw_fitness, i.valid)).collect();
    breakthroughs(traj.best_initial(), &attempts)
}

/// Fraction of valid offspring strictly better than their best prompted
/// parent; 0 when the run has no valid offspring.
pub fn local_refinement_rate(traj: &Trajectory) -> f64 {
    let mut valid = 0usize;
    let mut refined = 0usize;
    for child in traj.attempts().iter().filter(|c| c.valid) {
        valid += 1;
        let best_parent = child
            .parent_ids
            .iter()
            .filter_map(|&p| traj.get(p))
            .map(|p| p.raw_fitness)
            .fold(f64::NEG_INFINITY, f64::max);
        if child.raw_fitness > best_parent {
            refined += 1;
        }
    }
    if valid == 0 {
        0.0
    } else {
        refined as f64 / valid as f64
    }
}

/// Signatures indexed by individual id.
pub fn signatures(traj: &Trajectory, task: &dyn Task) -> Vec<Option<Signature>> {
    traj.individuals
        .iter()
        .map(|i| i.genome.as_ref().and_then(|g| task.signature(g)))
        .collect()
}

/// Mean over valid offspring of the mean distance to their prompted parents
/// (repeated parents count repeatedly). 0 without valid offspring.
pub fn parent_child_distance(traj: &Trajectory, sigs: &[Option<Signature>]) -> f64 {
    let mut per_child = Vec::new();
    for child in traj.attempts().iter().filter(|c| c.valid) {
        let Some(cs) = &sigs[child.id as usize] else { continue };
        let ds: Vec<f64> = child
            .parent_ids
            .iter()
            .filter_map(|&p| sigs[p as usize].as_ref())
            .map(|ps| cs.distance(ps))
            .collect();
        if !ds.is_empty() {
            per_child.push(ds.iter().sum::<f64>() / ds.len() as f64);
        }
    }
    mean(&per_child).unwrap_or(0.0)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum EntropyError {
    #[error("entropy undefined: all weights are zero")]
    AllWeightsZero,
    #[error("entropy needs at least one member")]
    Empty,
}

/// `H = -Σ q_i log q_i` with `q_i ∝ Σ_j w_j exp(-D_ij² / 2σ²)`.
pub fn spatial_entropy(dist: &[Vec<f64>], weights: &[f64], sigma: f64) -> Result<f64, EntropyError> {
    let n = dist.len();
    if n == 0 {
        return Err(EntropyError::Empty);
    }
    assert_eq!(weights.len(), n, "one weight per member");
    if weights.iter().all(|&w| w == 0.0) {
        return Err(EntropyError::AllWeightsZero);
    }
    let two_s2 = 2.0 * sigma * sigma;
    let g: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| weights[j] * (-(dist[i][j] * dist[i][j]) / two_s2).exp())
                .sum()
        })
        .collect();
    let total: f64 = g.iter().sum();
    let h = -g
        .iter()
        .map(|&gi| gi / total)
        .filter(|&q| q > 0.0)
        .map(|q| q * q.ln())
        .sum::<f64>();
    // A single member gives -0.0.
    Ok(h.max(0.0))
}

/// Median of the positive off-diagonal distances; 1 when there are none.
pub fn median_bandwidth(dist: &[Vec<f64>]) -> f64 {
    let mut pos: Vec<f64> = (0..dist.len())
        .flat_map(|i| (i + 1..dist.len()).map(move |j| (i, j)))
        .map(|(i, j)| dist[i][j])
        .filter(|&d| d > 0.0)
        .collect();
    if pos.is_empty() {
        return 1.0;
    }
    pos.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = pos.len();
    if m % 2 == 1 {
        pos[m / 2]
    } else {
        0.5 * (pos[m / 2 - 1] + pos[m / 2])
    }
}

pub fn distance_matrix(sigs: &[&Signature]) -> Vec<Vec<f64>> {
    let n = sigs.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sigs[i].distance(sigs[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyRecord {
    pub id: u64,
    pub generation: usize,
    pub raw_novelty: f64,
    pub normalized_novelty: f64,
}

/// Raw novelty of every valid offspring against all valid individuals of
/// strictly earlier generations (initial population included).
pub fn trajectory_novelty(traj: &Trajectory, sigs: &[Option<Signature>]) -> Vec<NoveltyRecord> {
    let mut prior: Vec<&Signature> = Vec::new();
    let mut out = Vec::new();
    let mut generation = 0;
    let mut pending: Vec<&Signature> = Vec::new();
    for ind in &traj.individuals {
        if ind.generation != generation {
            prior.append(&mut pending);
            generation = ind.generation;
        }
        let Some(sig) = sigs[ind.id as usize].as_ref().filter(|_| ind.valid) else {
            continue;
        };
        if ind.generation > 0 && !prior.is_empty() {
            out.push(NoveltyRecord {
                id: ind.id,
                generation: ind.generation,
                raw_novelty: novelty(&sig, &prior, |a, b| a.distance(b)),
                normalized_novelty: f64::NAN,
            });
        }
        pending.push(sig);
    }
    out
}

/// Min-max normalize novelty across all runs of one task instance.
pub fn normalize_instance(runs: &mut [Vec<NoveltyRecord>]) {
    let raws: Vec<f64> = runs.iter().flatten().map(|r| r.raw_novelty).collect();
    let norm = normalize_novelty(&raws);
    for (rec, v) in runs.iter_mut().flatten().zip(norm) {
        rec.normalized_novelty = v;
    }
}

/// Pool geometry at the end of a generation, before any cross-run
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolGeometry {
    pub generation: usize,
    pub member_ids: Vec<u64>,
    pub fitness: Vec<f64>,
    pub dist: Vec<Vec<f64>>,
    pub sigma: f64,
    pub h_spatial: f64,
}

pub fn pool_geometry(traj: &Trajectory, sigs: &[Option<Signature>]) -> Vec<PoolGeometry> {
    traj.generations
        .iter()
        .map(|g| {
            let members: Vec<u64> = g
                .pool_ids
                .iter()
                .copied()
                .filter(|&id| sigs[id as usize].is_some() && traj.individuals[id as usize].valid)
                .collect();
            let s: Vec<&Signature> = members.iter().map(|&id| sigs[id as usize].as_ref().unwrap()).collect();
            let dist = distance_matrix(&s);
            let sigma = median_bandwidth(&dist);
            let h_spatial = spatial_entropy(&dist, &vec![1.0; s.len()], sigma).unwrap_or(0.0);
            PoolGeometry {
                generation: g.generation,
                fitness: members.iter().map(|&id| traj.individuals[id as usize].raw_fitness).collect(),
                member_ids: members,
                dist,
                sigma,
                h_spatial,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub run_id: String,
    pub task_id: String,
    pub operator_id: String,
    pub seed: u64,
    pub generation: usize,
    pub mean_novelty: Option<f64>,
    pub max_novelty: Option<f64>,
    pub h_spatial: f64,
    /// `None` when every fitness weight is zero.
    pub h_fitness: Option<f64>,
    pub sigma: f64,
    pub breakthrough_count: usize,
    pub breakthrough: bool,
    pub offspring_attempts: usize,
    pub valid_attempts: usize,
    pub best_so_far: f64,
}

/// Everything per run that does not need other runs of the same instance.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub novelty: Vec<NoveltyRecord>,
    pub geometry: Vec<PoolGeometry>,
    pub breakthroughs: Breakthroughs,
    pub lrr: f64,
    pub pcd: f64,
}

impl RunMetrics {
    pub fn compute(traj: &Trajectory, task: &dyn Task) -> Self {
        let sigs = signatures(traj, task);
        RunMetrics {
            novelty: trajectory_novelty(traj, &sigs),
            geometry: pool_geometry(traj, &sigs),
            breakthroughs: trajectory_breakthroughs(traj),
            lrr: local_refinement_rate(traj),
            pcd: parent_child_distance(traj, &sigs),
        }
    }
}

/// Valid fitness range over a set of runs of one instance.
pub fn fitness_range<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> (f64, f64) {
    min_max(
        trajs
            .into_iter()
            .flat_map(|t| t.individuals.iter())
            .filter(|i| i.valid)
            .map(|i| i.raw_fitness),
    )
}

/// Per-generation rows for generations 1..=G. `metrics.novelty` must already
/// be normalized; `fitness_range` comes from all runs of the instance.
pub fn generation_summaries(
    traj: &Trajectory,
    metrics: &RunMetrics,
    fitness_range: (f64, f64),
) -> Vec<GenerationSummary> {
    let (lo, hi) = fitness_range;
    let per_gen = traj.config.offspring_per_generation;
    traj.generations
        .iter()
        .zip(&metrics.geometry)
        .filter(|(g, _)| g.generation > 0)
        .map(|(g, geo)| {
            let t = g.generation;
            let nov: Vec<f64> = metrics
                .novelty
                .iter()
                .filter(|r| r.generation == t)
                .map(|r| r.normalized_novelty)
                .collect();
            let attempts = traj.attempts().iter().filter(|a| a.generation == t);
            let valid_attempts = attempts.clone().filter(|a| a.valid).count();
            let span = ((t - 1) * per_gen)..(t * per_gen);
            let breakthrough_count = metrics
                .breakthroughs
                .events
                .iter()
                .filter(|e| span.contains(e))
                .count();
            let weights: Vec<f64> = geo
                .fitness
                .iter()
                .map(|f| ((f - lo) / (hi - lo + NORMALIZATION_EPSILON)).max(0.0))
                .collect();
            GenerationSummary {
                run_id: traj.run_id.clone(),
                task_id: traj.task_id.clone(),
                operator_id: traj.operator_id.clone(),
                seed: traj.config.seed,
                generation: t,
                mean_novelty: mean(&nov),
                max_novelty: nov.iter().copied().reduce(f64::max),
                h_spatial: geo.h_spatial,
                h_fitness: spatial_entropy(&geo.dist, &weights, geo.sigma).ok(),
                sigma: geo.sigma,
                breakthrough_count,
                breakthrough: breakthrough_count > 0,
                offspring_attempts: attempts.count(),
                valid_attempts,
                best_so_far: g.best_so_far,
            }
        })
        .collect()
}
