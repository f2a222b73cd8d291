//! JSONL trajectory files. Line 1 is a header, then one line per individual in
//! id order, then one line per generation. Prompt/reply exchanges go to a
//! sibling `<run_id>.ledger.jsonl`.

use super::config::TaskConfig;
use crate::evolution::{EvolutionConfig, GenerationRecord, Individual, Trajectory, SCHEMA_VERSION};
use crate::gateway::ChatExchange;
use crate::operators::{AttemptFailure, OperatorSpec};
use crate::tasks::{Task, TaskFamily};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: schema version {found}, this build reads {SCHEMA_VERSION}", path.display())]
    Schema { path: PathBuf, found: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub run_id: String,
    pub task_id: String,
    pub family: TaskFamily,
    pub operator_id: String,
    pub operator: OperatorSpec,
    pub task: TaskConfig,
    pub evolution: EvolutionConfig,
    pub base_seed: u64,
    pub repetition: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub id: u64,
    pub generation: usize,
    pub parent_ids: Vec<u64>,
    /// Canonical genome text; `None` when nothing could be parsed.
    pub genome: Option<String>,
    pub raw_fitness: f64,
    pub valid: bool,
    pub operator_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<AttemptFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLine {
    pub generation: usize,
    pub elite_ids: Vec<u64>,
    pub pool_ids: Vec<u64>,
    /// Null when the pool holds no valid member.
    pub best_so_far: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Record {
    Header(Box<Header>),
    Individual(IndividualRecord),
    Generation(GenerationLine),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| IoError::Format {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn ledger_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.ledger.jsonl"))
}

pub fn trajectory_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.jsonl"))
}

/// Write `<dir>/<run_id>.jsonl` and, when the run made model calls, its
/// ledger. Returns the written paths.
pub fn write_trajectory(dir: &Path, header: &Header, traj: &Trajectory) -> Result<Vec<PathBuf>, IoError> {
    let mut records = vec![Record::Header(Box::new(header.clone()))];
    records.extend(traj.individuals.iter().map(|i| {
        Record::Individual(IndividualRecord {
            id: i.id,
            generation: i.generation,
            parent_ids: i.parent_ids.clone(),
            genome: i.genome.as_ref().map(|_| i.key.clone()),
            raw_fitness: i.raw_fitness,
            valid: i.valid,
            operator_tag: i.operator_tag.clone(),
            failure: i.failure.clone(),
            exchange: i.exchange,
        })
    }));
    records.extend(traj.generations.iter().map(|g| {
        Record::Generation(GenerationLine {
            generation: g.generation,
            elite_ids: g.elite_ids.clone(),
            pool_ids: g.pool_ids.clone(),
            best_so_far: Some(g.best_so_far).filter(|v| v.is_finite()),
        })
    }));
    let path = trajectory_path(dir, &header.run_id);
    write_lines(&path, &records)?;
    let mut out = vec![path];
    if !traj.exchanges.is_empty() {
        let lp = ledger_path(dir, &header.run_id);
        let lines = traj.exchanges.iter().map(|e| ChatExchange {
            run_id: Some(header.run_id.clone()),
            ..e.clone()
        });
        write_lines(&lp, lines)?;
        out.push(lp);
    }
    Ok(out)
}

pub fn read_exchanges(path: &Path) -> Result<Vec<ChatExchange>, IoError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IoError::Format {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// A parsed trajectory file before its genomes are interpreted.
#[derive(Debug, Clone)]
pub struct RawRun {
    pub path: PathBuf,
    pub header: Header,
    pub individuals: Vec<IndividualRecord>,
    pub generations: Vec<GenerationLine>,
}

pub fn read_raw(path: &Path) -> Result<RawRun, IoError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let fmt = |line: usize, message: String| IoError::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut header = None;
    let mut individuals = Vec::new();
    let mut generations = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        if n == 0 {
            // Check the version before the rest of the header so newer files
            // give a schema error rather than a field error.
            let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| fmt(1, e.to_string()))?;
            let found = v.get("schema_version").and_then(|s| s.as_u64()).unwrap_or(0) as u32;
            if found != SCHEMA_VERSION {
                return Err(IoError::Schema {
                    path: path.to_path_buf(),
                    found,
                });
            }
        }
        match serde_json::from_str::<Record>(&line).map_err(|e| fmt(n + 1, e.to_string()))? {
            Record::Header(h) if n == 0 => header = Some(*h),
            Record::Header(_) => return Err(fmt(n + 1, "second header".into())),
            _ if header.is_none() => return Err(fmt(n + 1, "missing header".into())),
            Record::Individual(i) => {
                if i.id as usize != individuals.len() {
                    return Err(fmt(n + 1, format!("individual id {} out of order", i.id)));
                }
                individuals.push(i);
            }
            Record::Generation(g) => generations.push(g),
        }
    }
    let header = header.ok_or_else(|| fmt(1, "empty file".into()))?;
    Ok(RawRun {
        path: path.to_path_buf(),
        header,
        individuals,
        generations,
    })
}

impl RawRun {
    /// Rebuild the trajectory against `task`, re-parsing genomes from their
    /// canonical text. Exchanges are loaded from the sibling ledger if present.
    pub fn into_trajectory(self, task: &dyn Task) -> Result<Trajectory, IoError> {
        let path = self.path.clone();
        let mut individuals = Vec::with_capacity(self.individuals.len());
        for (n, r) in self.individuals.into_iter().enumerate() {
            let genome = match &r.genome {
                Some(text) => Some(task.parse_canonical(text).map_err(|e| IoError::Format {
                    path: path.clone(),
                    line: n + 2,
                    message: e.to_string(),
                })?),
                None => None,
            };
            individuals.push(Individual {
                id: r.id,
                key: r.genome.unwrap_or_default(),
                genome,
                raw_fitness: r.raw_fitness,
                generation: r.generation,
                parent_ids: r.parent_ids,
                valid: r.valid,
                operator_tag: r.operator_tag,
                failure: r.failure,
                exchange: r.exchange,
            });
        }
        let n_initial = individuals.iter().take_while(|i| i.generation == 0).count();
        let ledger = path.with_file_name(format!("{}.ledger.jsonl", self.header.run_id));
        let exchanges = if ledger.is_file() { read_exchanges(&ledger)? } else { Vec::new() };
        Ok(Trajectory {
            run_id: self.header.run_id.clone(),
            task_id: self.header.task_id.clone(),
            family: self.header.family,
            operator_id: self.header.operator_id.clone(),
            config: self.header.evolution.clone(),
            individuals,
            n_initial,
            generations: self
                .generations
                .into_iter()
                .map(|g| GenerationRecord {
                    generation: g.generation,
                    elite_ids: g.elite_ids,
                    pool_ids: g.pool_ids,
                    best_so_far: g.best_so_far.unwrap_or(f64::NEG_INFINITY),
                })
                .collect(),
            exchanges,
        })
    }
}

/// Read a trajectory and the task it was run on.
pub fn read_trajectory(path: &Path) -> Result<(Header, Box<dyn Task>, Trajectory), super::WorkbenchError> {
    let raw = read_raw(path)?;
    let task = raw.header.task.build()?;
    let header = raw.header.clone();
    let traj = raw.into_trajectory(task.as_ref())?;
    Ok((header, task, traj))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Format {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    let fmt = |e: csv::Error| IoError::Format {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    for r in rows {
        w.serialize(r).map_err(fmt)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let fmt = |e: csv::Error| IoError::Format {
        path: path.to_path_buf(),
        line: e.position().map(|p| p.line() as usize).unwrap_or(0),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(fmt)?;
    r.deserialize().map(|row| row.map_err(fmt)).collect()
}
