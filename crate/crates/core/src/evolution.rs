//! The generation loop: top-q weighted parent selection, offspring from an
//! injected operator, evaluation by an injected task, and a deduplicated,
//! capacity-limited pool update with best-so-far tracking.

use crate::gateway::ChatExchange;
use crate::operators::{AttemptFailure, MutationOperator, MutationRequest, ParentView};
use crate::rng::{derive_seed, label, stream};
use crate::tasks::{Genome, Task, TaskFamily};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;

pub const SCHEMA_VERSION: u32 = 1;

/// Added to shifted selection weights so the elite minimum keeps a
/// non-zero probability.
pub const SELECTION_EPSILON: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum EvolutionError {
    #[error("invalid evolution config: {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error("selection impossible: the pool holds no valid individual")]
    SelectionImpossible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub n_init: usize,
    pub elite_fraction: f64,
    pub parents_per_prompt: usize,
    pub offspring_per_generation: usize,
    pub capacity: usize,
    pub generations: usize,
    pub seed: u64,
    pub task_id: String,
    pub operator_id: String,
    /// Operator calls in flight within one generation.
    pub concurrency: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            n_init: 40,
            elite_fraction: 0.2,
            parents_per_prompt: 3,
            offspring_per_generation: 10,
            capacity: 40,
            generations: 30,
            seed: 21,
            task_id: String::new(),
            operator_id: String::new(),
            concurrency: 1,
        }
    }
}

impl EvolutionConfig {
    /// Defaults for a task family (TSP / equations / bin packing).
    pub fn for_family(family: TaskFamily) -> Self {
        match family {
            TaskFamily::Tsp => EvolutionConfig::default(),
            TaskFamily::Symreg => EvolutionConfig {
                n_init: 7,
                parents_per_prompt: 2,
                ..Default::default()
            },
            TaskFamily::Binpack => EvolutionConfig {
                n_init: 7,
                parents_per_prompt: 2,
                seed: 42,
                ..Default::default()
            },
        }
    }

    pub fn elite_size(&self, members: usize) -> usize {
        (self.elite_fraction * members as f64).ceil() as usize
    }

    pub fn validate(&self) -> Result<(), EvolutionError> {
        let err = |field, message: &str| {
            Err(EvolutionError::Config {
                field,
                message: message.to_string(),
            })
        };
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return err("elite_fraction", "must be in (0, 1]");
        }
        for (field, v) in [
            ("n_init", self.n_init),
            ("parents_per_prompt", self.parents_per_prompt),
            ("offspring_per_generation", self.offspring_per_generation),
            ("capacity", self.capacity),
            ("concurrency", self.concurrency),
        ] {
            if v == 0 {
                return err(field, "must be at least 1");
            }
        }
        if self.elite_size(self.capacity) < 1 {
            return err("elite_fraction", "ceil(q * capacity) must be at least 1");
        }
        if self.parents_per_prompt > self.elite_size(self.capacity) {
            return err("parents_per_prompt", "must not exceed ceil(q * capacity)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: u64,
    /// `None` when the operator produced nothing usable.
    pub genome: Option<Genome>,
    /// Canonical genome string; empty when there is no genome.
    pub key: String,
    pub raw_fitness: f64,
    pub generation: usize,
    pub parent_ids: Vec<u64>,
    pub valid: bool,
    pub operator_tag: String,
    pub failure: Option<AttemptFailure>,
    /// Index into the run's exchange ledger.
    pub exchange: Option<usize>,
}

impl Individual {
    /// Fitness used for ranking: invalid individuals sort below every valid one.
    pub fn rank_fitness(&self) -> f64 {
        if self.valid {
            self.raw_fitness
        } else {
            f64::NEG_INFINITY
        }
    }
}

fn rank_order(a: &Individual, b: &Individual) -> Ordering {
    b.valid
        .cmp(&a.valid)
        .then_with(|| b.raw_fitness.partial_cmp(&a.raw_fitness).unwrap_or(Ordering::Equal))
        .then_with(|| a.id.cmp(&b.id))
}

#[derive(Debug, Clone)]
pub struct PopulationPool {
    members: Vec<Individual>,
    capacity: usize,
    best_so_far: f64,
}

impl PopulationPool {
    pub fn new(capacity: usize) -> Self {
        PopulationPool {
            members: Vec::new(),
            capacity,
            best_so_far: f64::NEG_INFINITY,
        }
    }

    /// Members in rank order.
    pub fn members(&self) -> &[Individual] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Maximum valid fitness ever offered to the pool.
    pub fn best_so_far(&self) -> f64 {
        self.best_so_far
    }

    /// Top `ceil(q · |members|)` members by rank.
    pub fn elite(&self, elite_fraction: f64) -> &[Individual] {
        let k = (elite_fraction * self.members.len() as f64).ceil() as usize;
        &self.members[..k.min(self.members.len())]
    }

    pub fn update(&mut self, offspring: impl IntoIterator<Item = Individual>) {
        let mut keys: HashSet<String> = self.members.iter().map(|m| m.key.clone()).collect();
        for child in offspring {
            if child.valid && child.raw_fitness > self.best_so_far {
                self.best_so_far = child.raw_fitness;
            }
            if keys.insert(child.key.clone()) {
                self.members.push(child);
            }
        }
        self.members.sort_by(rank_order);
        self.members.truncate(self.capacity);
    }
}

/// Merge evaluated offspring into the pool (see [`PopulationPool::update`]).
pub fn update_pool(mut pool: PopulationPool, offspring: Vec<Individual>) -> PopulationPool {
    pool.update(offspring);
    pool
}

/// Draw `parents_per_prompt` parents with replacement from the valid elite,
/// with probability proportional to `f - min_elite + ε`.
pub fn select_parents<R: Rng + ?Sized>(
    pool: &PopulationPool,
    cfg: &EvolutionConfig,
    rng: &mut R,
) -> Result<Vec<Individual>, EvolutionError> {
    let eligible: Vec<&Individual> = pool.elite(cfg.elite_fraction).iter().filter(|m| m.valid).collect();
    if eligible.is_empty() {
        return Err(EvolutionError::SelectionImpossible);
    }
    let min = eligible.iter().map(|m| m.raw_fitness).fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = eligible
        .iter()
        .map(|m| m.raw_fitness - min + SELECTION_EPSILON)
        .collect();
    let dist = WeightedIndex::new(&weights).map_err(|_| EvolutionError::SelectionImpossible)?;
    Ok((0..cfg.parents_per_prompt)
        .map(|_| eligible[dist.sample(rng)].clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Elite the generation's parents were drawn from (empty for generation 0).
    pub elite_ids: Vec<u64>,
    /// Pool membership after the update, in rank order.
    pub pool_ids: Vec<u64>,
    pub best_so_far: f64,
}

/// Everything that happened in one run, in creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub run_id: String,
    pub task_id: String,
    pub family: TaskFamily,
    pub operator_id: String,
    pub config: EvolutionConfig,
    /// Initial population first (`n_initial` entries), then offspring
    /// attempts in attempt order. `individuals[i].id == i`.
    pub individuals: Vec<Individual>,
    pub n_initial: usize,
    pub generations: Vec<GenerationRecord>,
    pub exchanges: Vec<ChatExchange>,
}

impl Trajectory {
    pub fn initial(&self) -> &[Individual] {
        &self.individuals[..self.n_initial]
    }

    pub fn attempts(&self) -> &[Individual] {
        &self.individuals[self.n_initial..]
    }

    pub fn get(&self, id: u64) -> Option<&Individual> {
        self.individuals.get(id as usize).filter(|i| i.id == id)
    }

    pub fn best_initial(&self) -> f64 {
        self.initial()
            .iter()
            .filter(|i| i.valid)
            .map(|i| i.raw_fitness)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn best_final(&self) -> f64 {
        self.generations
            .last()
            .map(|g| g.best_so_far)
            .unwrap_or(f64::NEG_INFINITY)
    }
}

fn make_individual(
    task: &dyn Task,
    id: u64,
    generation: usize,
    parent_ids: Vec<u64>,
    tag: String,
    genome: Result<Genome, AttemptFailure>,
) -> Individual {
    match genome {
        Ok(g) => {
            let g = task.normalize(g);
            let eval = task.evaluate(&g);
            Individual {
                id,
                key: task.canonical(&g),
                genome: Some(g),
                raw_fitness: eval.raw_fitness,
                generation,
                parent_ids,
                valid: eval.valid,
                operator_tag: tag,
                failure: None,
                exchange: None,
            }
        }
        Err(failure) => Individual {
            id,
            genome: None,
            key: String::new(),
            raw_fitness: task.invalid_fitness(),
            generation,
            parent_ids,
            valid: false,
            operator_tag: tag,
            failure: Some(failure),
            exchange: None,
        },
    }
}

pub fn run_id(cfg: &EvolutionConfig, repetition: usize) -> String {
    format!("{}__{}__s{}__r{}", cfg.task_id, cfg.operator_id, cfg.seed, repetition)
}

/// Run `cfg.generations` generations. Results depend only on `cfg`, the
/// task and the operator; attempt order in the trajectory is fixed even when
/// operator calls run concurrently.
pub fn run_evolution(
    cfg: &EvolutionConfig,
    task: &dyn Task,
    operator: &dyn MutationOperator,
) -> Result<Trajectory, EvolutionError> {
    cfg.validate()?;
    let mut individuals = Vec::new();
    for (i, g) in task.initial_population(cfg.n_init).into_iter().enumerate() {
        individuals.push(make_individual(task, i as u64, 0, Vec::new(), "init".into(), Ok(g)));
    }
    let n_initial = individuals.len();
    let mut pool = PopulationPool::new(cfg.capacity);
    pool.update(individuals.iter().cloned());
    let mut generations = vec![GenerationRecord {
        generation: 0,
        elite_ids: Vec::new(),
        pool_ids: pool.members().iter().map(|m| m.id).collect(),
        best_so_far: pool.best_so_far(),
    }];
    let mut exchanges = Vec::new();

    for t in 1..=cfg.generations {
        let elite_ids: Vec<u64> = pool.elite(cfg.elite_fraction).iter().map(|m| m.id).collect();
        let outcomes = produce_offspring(cfg, task, operator, &pool, t)?;

        let mut offspring = Vec::with_capacity(outcomes.len());
        for (parents, outcome) in outcomes {
            let id = individuals.len() as u64;
            let mut ind = make_individual(
                task,
                id,
                t,
                parents.iter().map(|p| p.id).collect(),
                outcome.tag,
                outcome.genome,
            );
            if let Some(ex) = outcome.exchange {
                ind.exchange = Some(exchanges.len());
                exchanges.push(ex);
            }
            individuals.push(ind.clone());
            offspring.push(ind);
        }
        pool.update(offspring);
        generations.push(GenerationRecord {
            generation: t,
            elite_ids,
            pool_ids: pool.members().iter().map(|m| m.id).collect(),
            best_so_far: pool.best_so_far(),
        });
    }

    Ok(Trajectory {
        run_id: run_id(cfg, 0),
        task_id: task.id().to_string(),
        family: task.family(),
        operator_id: cfg.operator_id.clone(),
        config: cfg.clone(),
        individuals,
        n_initial,
        generations,
        exchanges,
    })
}

type Produced = (Vec<Individual>, crate::operators::MutationOutcome);

fn produce_offspring(
    cfg: &EvolutionConfig,
    task: &dyn Task,
    operator: &dyn MutationOperator,
    pool: &PopulationPool,
    generation: usize,
) -> Result<Vec<Produced>, EvolutionError> {
    let requests: Vec<(Vec<Individual>, MutationRequest)> = (0..cfg.offspring_per_generation)
        .map(|a| {
            let mut rng = stream(cfg.seed, &[label::SELECT, generation as u64, a as u64]);
            let parents = select_parents(pool, cfg, &mut rng)?;
            let req = MutationRequest {
                task_id: task.id().to_string(),
                parents: parents
                    .iter()
                    .map(|p| ParentView {
                        id: p.id,
                        genome: p.genome.clone().expect("valid parents carry genomes"),
                        raw_fitness: p.raw_fitness,
                    })
                    .collect(),
                generation,
                attempt_index: (generation - 1) * cfg.offspring_per_generation + a,
                seed: derive_seed(cfg.seed, &[label::MUTATE, generation as u64, a as u64]),
            };
            Ok((parents, req))
        })
        .collect::<Result<_, EvolutionError>>()?;

    if cfg.concurrency <= 1 || requests.len() <= 1 {
        return Ok(requests
            .into_iter()
            .map(|(parents, req)| {
                let out = operator.mutate(task, &req);
                (parents, out)
            })
            .collect());
    }

    let slots: Vec<Mutex<Option<crate::operators::MutationOutcome>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..cfg.concurrency.min(requests.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, AtomicOrdering::SeqCst);
                if i >= requests.len() {
                    break;
                }
                let out = operator.mutate(task, &requests[i].1);
                *slots[i].lock().expect("slot lock") = Some(out);
            });
        }
    });
    Ok(requests
        .into_iter()
        .zip(slots)
        .map(|((parents, _), slot)| {
            let out = slot.into_inner().expect("slot lock").expect("every slot filled");
            (parents, out)
        })
        .collect())
}
