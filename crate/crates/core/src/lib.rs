//! Evolutionary search over route, equation and heuristic-design tasks with
//! pluggable mutation operators (chat-completion models or scripted local
//! edits), full trajectory recording, and the analysis stack that goes with
//! it: novelty, breakthroughs, refinement rate, kernel entropies, MDS
//! landscapes and regression models.

pub mod evolution;
pub mod expr;
pub mod gateway;
pub mod geometry;
pub mod metrics;
pub mod operators;
pub mod rng;
pub mod stats;
pub mod tasks;
pub mod workbench;

pub use evolution::{
    run_evolution, select_parents, update_pool, EvolutionConfig, EvolutionError, Individual,
    PopulationPool, Trajectory,
};
pub use expr::{canonicalize, evaluate, parse, EvalContext, Expr};
pub use tasks::{Genome, Task, TaskFamily};
