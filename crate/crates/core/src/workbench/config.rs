//! Run configuration (TOML): task, operator, evolution parameters, gateway,
//! an optional parameter matrix and the output location.

use crate::evolution::EvolutionConfig;
use crate::operators::OperatorSpec;
use crate::tasks::binpack::BinPackInstance;
use crate::tasks::{BinPackTask, SymregDataset, SymregTask, Task, TaskFamily, TspInstance, TspTask};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const DEFAULT_REPETITIONS: usize = 2;
pub const DEFAULT_BINPACK_INSTANCES: usize = 5;
pub const DEFAULT_BINPACK_ITEMS: usize = 120;
pub const DEFAULT_TSP_SIZE: usize = 30;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub family: TaskFamily,
    /// Instance seed: fixes the instance and the initial population.
    #[serde(default)]
    pub seed: u64,
    /// City count for generated TSP instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    /// `osc1` / `osc2` for equations, `or` / `weibull` for bin packing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<usize>,
    /// JSON instance file, resolved against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl TaskConfig {
    pub fn build(&self) -> Result<Box<dyn Task>, ConfigError> {
        let file = self.instance_file.as_deref().map(Path::new);
        let bad = |e: crate::tasks::TaskError| invalid("task.instance_file", e.to_string());
        Ok(match self.family {
            TaskFamily::Tsp => {
                let task = match file {
                    Some(f) => {
                        let inst = TspInstance::from_json(&read(f)?).map_err(bad)?;
                        let id = self.id.clone().unwrap_or_else(|| format!("tsp{}-file-s{}", inst.n, self.seed));
                        TspTask::new(id, inst)
                    }
                    None => {
                        let n = self.size.unwrap_or(DEFAULT_TSP_SIZE);
                        if n < 3 {
                            return Err(invalid("task.size", "a tour needs at least 3 cities"));
                        }
                        let mut t = TspTask::random(n, self.seed);
                        if let Some(id) = &self.id {
                            t = TspTask::new(id.clone(), t.instance.clone());
                        }
                        t
                    }
                };
                Box::new(task)
            }
            TaskFamily::Symreg => {
                let (default_id, ds) = match (file, self.dataset.as_deref()) {
                    (Some(f), _) => (
                        format!("symreg-file-s{}", self.seed),
                        SymregDataset::from_json(&read(f)?).map_err(bad)?,
                    ),
                    (None, None | Some("osc1")) => (format!("osc1-s{}", self.seed), SymregDataset::oscillator1(100, self.seed)),
                    (None, Some("osc2")) => (format!("osc2-s{}", self.seed), SymregDataset::oscillator2(100, self.seed)),
                    (None, Some(other)) => {
                        return Err(invalid("task.dataset", format!("unknown equation dataset {other:?} (osc1, osc2)")))
                    }
                };
                let id = self.id.clone().unwrap_or(default_id);
                Box::new(SymregTask::new(id, ds, self.seed).map_err(|e| invalid("task", e.to_string()))?)
            }
            TaskFamily::Binpack => {
                let n_inst = self.instances.unwrap_or(DEFAULT_BINPACK_INSTANCES);
                let n_items = self.items.unwrap_or(DEFAULT_BINPACK_ITEMS);
                if n_inst == 0 || n_items == 0 {
                    return Err(invalid("task.instances", "instance and item counts must be positive"));
                }
                let (dataset, task) = match (file, self.dataset.as_deref()) {
                    (Some(f), _) => {
                        let insts: Vec<BinPackInstance> = serde_json::from_str(&read(f)?)
                            .map_err(|e| invalid("task.instance_file", e.to_string()))?;
                        let id = format!("binpack-file-s{}", self.seed);
                        ("custom", BinPackTask::new(id, "custom", insts, self.seed).map_err(bad)?)
                    }
                    (None, None | Some("or")) => ("OR3", BinPackTask::or_like(n_inst, n_items, self.seed)),
                    (None, Some("weibull")) => ("Weibull", BinPackTask::weibull_like(n_inst, n_items, self.seed)),
                    (None, Some(other)) => {
                        return Err(invalid("task.dataset", format!("unknown bin-packing dataset {other:?} (or, weibull)")))
                    }
                };
                match &self.id {
                    Some(id) => Box::new(BinPackTask::new(id.clone(), dataset, task.instances, self.seed).map_err(bad)?),
                    None => Box::new(task),
                }
            }
        })
    }
}

/// Evolution fields that override the task family's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionOverrides {
    pub n_init: Option<usize>,
    pub elite_fraction: Option<f64>,
    pub parents_per_prompt: Option<usize>,
    pub offspring_per_generation: Option<usize>,
    pub capacity: Option<usize>,
    pub generations: Option<usize>,
    pub seed: Option<u64>,
    pub concurrency: Option<usize>,
}

impl EvolutionOverrides {
    pub fn apply(&self, mut cfg: EvolutionConfig) -> EvolutionConfig {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        set!(n_init, elite_fraction, parents_per_prompt, offspring_per_generation, capacity, generations, seed, concurrency);
        cfg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    /// Mock replies (JSONL); without it the HTTP backend is configured from
    /// the environment.
    pub mock: Option<String>,
    pub in_flight: Option<usize>,
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    #[serde(default)]
    pub temperature: Vec<f64>,
    #[serde(default)]
    pub rho: Vec<f64>,
    #[serde(default)]
    pub seed: Vec<u64>,
}

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

fn default_output_dir() -> String {
    "runs".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub operator: OperatorSpec,
    #[serde(default)]
    pub evolution: EvolutionOverrides,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub matrix: MatrixConfig,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Prompt template file overriding the family default.
    #[serde(default)]
    pub templates: Option<String>,
}

/// Hex SHA-256 of the config file bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn resolve(base: &Path, p: &mut Option<String>) {
    if let Some(s) = p {
        let path = Path::new(s.as_str());
        if path.is_relative() {
            *s = base.join(path).to_string_lossy().into_owned();
        }
    }
}

fn set_temperature(spec: &OperatorSpec, t: f64) -> OperatorSpec {
    match spec {
        OperatorSpec::Llm { model, .. } => OperatorSpec::Llm {
            model: model.clone(),
            temperature: t,
        },
        OperatorSpec::Mixed { strong, weak, rho } => OperatorSpec::Mixed {
            strong: Box::new(set_temperature(strong, t)),
            weak: Box::new(set_temperature(weak, t)),
            rho: *rho,
        },
        other => other.clone(),
    }
}

fn has_llm(spec: &OperatorSpec) -> bool {
    spec.needs_gateway()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub run_id: String,
    pub operator: OperatorSpec,
    pub operator_id: String,
    pub evolution: EvolutionConfig,
    /// The seed as configured; `evolution.seed` is derived from it and the
    /// repetition index.
    pub base_seed: u64,
    pub repetition: usize,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    /// Parse, resolve relative paths against the file's directory, validate.
    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8(bytes.clone()).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok((cfg, config_hash(&bytes)))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.task.instance_file);
        resolve(base, &mut self.gateway.mock);
        resolve(base, &mut self.templates);
        let mut out = Some(self.output_dir.clone());
        resolve(base, &mut out);
        self.output_dir = out.expect("set above");
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "must be at least 1"));
        }
        self.operator
            .validate()
            .map_err(|e| invalid("operator", e.to_string()))?;
        let evo = self.evolution.apply(EvolutionConfig::for_family(self.task.family));
        evo.validate().map_err(|e| match e {
            crate::evolution::EvolutionError::Config { field, message } => invalid(&format!("evolution.{field}"), message),
            other => invalid("evolution", other.to_string()),
        })?;
        for (field, p) in [
            ("task.instance_file", &self.task.instance_file),
            ("gateway.mock", &self.gateway.mock),
            ("templates", &self.templates),
        ] {
            if let Some(p) = p {
                if !Path::new(p).is_file() {
                    return Err(invalid(field, format!("file {p} does not exist")));
                }
            }
        }
        if self.matrix.temperature.iter().any(|t| !(*t >= 0.0)) {
            return Err(invalid("matrix.temperature", "temperatures must be non-negative"));
        }
        if !self.matrix.temperature.is_empty() && !has_llm(&self.operator) {
            return Err(invalid("matrix.temperature", "needs an llm operator"));
        }
        if self.matrix.rho.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(invalid("matrix.rho", "values must lie in [0, 1]"));
        }
        if !self.matrix.rho.is_empty() && !matches!(self.operator, OperatorSpec::Mixed { .. }) {
            return Err(invalid("matrix.rho", "needs a mixed operator"));
        }
        if matches!(self.gateway.in_flight, Some(0)) {
            return Err(invalid("gateway.in_flight", "must be at least 1"));
        }
        Ok(())
    }

    /// Cartesian expansion of the matrix times repetitions, in a fixed order.
    pub fn expand(&self, task_id: &str) -> Vec<PlannedRun> {
        let base = self.evolution.apply(EvolutionConfig::for_family(self.task.family));
        let seeds = if self.matrix.seed.is_empty() {
            vec![base.seed]
        } else {
            self.matrix.seed.clone()
        };
        let temps: Vec<Option<f64>> = if self.matrix.temperature.is_empty() {
            vec![None]
        } else {
            self.matrix.temperature.iter().copied().map(Some).collect()
        };
        let rhos: Vec<Option<f64>> = if self.matrix.rho.is_empty() {
            vec![None]
        } else {
            self.matrix.rho.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for &t in &temps {
            for &rho in &rhos {
                let mut spec = self.operator.clone();
                if let Some(t) = t {
                    spec = set_temperature(&spec, t);
                }
                if let (Some(r), OperatorSpec::Mixed { strong, weak, .. }) = (rho, &spec) {
                    spec = OperatorSpec::Mixed {
                        strong: strong.clone(),
                        weak: weak.clone(),
                        rho: r,
                    };
                }
                let mut op_id = spec.id();
                if let Some(t) = t {
                    op_id = format!("{op_id}-t{t}");
                }
                for &seed in &seeds {
                    for rep in 0..self.repetitions {
                        let mut evo = base.clone();
                        evo.seed = crate::rng::derive_seed(seed, &[crate::rng::label::REPEAT, rep as u64]);
                        evo.task_id = task_id.to_string();
                        evo.operator_id = op_id.clone();
                        out.push(PlannedRun {
                            run_id: format!("{task_id}__{op_id}__s{seed}__r{rep}"),
                            operator: spec.clone(),
                            operator_id: op_id.clone(),
                            evolution: evo,
                            base_seed: seed,
                            repetition: rep,
                        });
                    }
                }
            }
        }
        out
    }
}
