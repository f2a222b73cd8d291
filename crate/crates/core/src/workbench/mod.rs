//! The operational surface behind the CLI: configured runs, per-instance
//! analysis, regressions, landscapes, zero-shot scoring and cost reports.

pub mod config;
pub mod io;

pub use config::{config_hash, ConfigError, PlannedRun, RunConfig, TaskConfig};
pub use io::{read_raw, read_trajectory, write_trajectory, Header, IoError, RawRun};

use crate::evolution::{run_evolution, EvolutionError, Trajectory, SCHEMA_VERSION};
use crate::gateway::{cost_report, zero_shot_best_of_n, CostReport, Gateway, GatewayError, MockBackend, PriceTable};
use crate::geometry::{mds_fit, oos_place, robust_minmax, stratified_sample, GeometryError, MdsConfig};
use crate::metrics::{fitness_range, generation_summaries, normalize_instance, signatures, RunMetrics};
use crate::operators::templates::{TemplateError, Templates};
use crate::operators::{OperatorError, OperatorSpec};
use crate::stats::{
    bin2d_breakthrough, breakthrough_design, mixed_fit, ols_spec, spec_needs_zero_shot, DescriptorRow,
    GenerationRow, RegressionResult, StatsError, OLS_SPECS,
};
use crate::tasks::{Signature, Task};
use io::{write_csv, write_json};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum WorkbenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Templates(#[from] TemplateError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("no trajectory files match {0}")]
    NoMatches(String),
    #[error("bad glob pattern {pattern}: {message}")]
    Pattern { pattern: String, message: String },
    #[error("{0}")]
    Usage(String),
}

fn create_dir(dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn file_sha256(path: &Path) -> Result<String, IoError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(config_hash(&bytes))
}

fn build_gateway(cfg: &RunConfig) -> Result<Gateway, WorkbenchError> {
    let mut gw = match &cfg.gateway.mock {
        Some(p) => Gateway::mock(MockBackend::from_file(Path::new(p))?),
        None => Gateway::from_env()?,
    };
    if let Some(c) = cfg.gateway.in_flight {
        gw = gw.with_in_flight_cap(c);
    }
    if let Some(m) = cfg.gateway.max_tokens {
        gw = gw.with_max_tokens(m);
    }
    Ok(gw)
}

/// A loaded, validated config with everything needed to start runs.
pub struct Prepared {
    pub config: RunConfig,
    pub config_hash: String,
    pub task: Box<dyn Task>,
    pub templates: Option<Templates>,
    pub gateway: Option<Arc<Gateway>>,
    pub plan: Vec<PlannedRun>,
}

/// Load and validate a config, build the task and (when an llm operator is
/// involved) the gateway. Nothing is written. `gateway` replaces the one the
/// config would build.
pub fn prepare(path: &Path, gateway: Option<Arc<Gateway>>) -> Result<Prepared, WorkbenchError> {
    let (config, hash) = RunConfig::load(path)?;
    let task = config.task.build()?;
    let templates = config
        .templates
        .as_deref()
        .map(|p| Templates::from_file(Path::new(p)))
        .transpose()?;
    let gateway = match gateway {
        Some(g) => Some(g),
        None if config.operator.needs_gateway() => Some(Arc::new(build_gateway(&config)?)),
        None => None,
    };
    let plan = config.expand(task.id());
    for run in &plan {
        run.operator.build(gateway.clone(), templates.clone())?;
        run.evolution.validate()?;
    }
    Ok(Prepared {
        config,
        config_hash: hash,
        task,
        templates,
        gateway,
        plan,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run_id: String,
    pub file: String,
    pub sha256: String,
    pub best_initial: Option<f64>,
    pub best_final: Option<f64>,
    pub attempts: usize,
    pub model_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub task_id: String,
    pub runs: Vec<RunOutcome>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    pub trajectories: Vec<Trajectory>,
}

/// Execute every planned run of a config and write trajectories, ledgers,
/// `manifest.json` (deterministic) and `timing.json` (wall-clock).
pub fn cmd_run(
    config: &Path,
    out_dir: Option<&Path>,
    gateway: Option<Arc<Gateway>>,
) -> Result<RunSummary, WorkbenchError> {
    let p = prepare(config, gateway)?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&p.config.output_dir));
    create_dir(&dir)?;
    let mut runs = Vec::new();
    let mut timing = BTreeMap::new();
    let mut trajectories = Vec::new();
    for planned in &p.plan {
        let op = planned.operator.build(p.gateway.clone(), p.templates.clone())?;
        let start = Instant::now();
        let mut traj = run_evolution(&planned.evolution, p.task.as_ref(), op.as_ref())?;
        timing.insert(planned.run_id.clone(), start.elapsed().as_secs_f64());
        traj.run_id = planned.run_id.clone();
        let header = Header {
            schema_version: SCHEMA_VERSION,
            run_id: planned.run_id.clone(),
            task_id: p.task.id().to_string(),
            family: p.task.family(),
            operator_id: planned.operator_id.clone(),
            operator: planned.operator.clone(),
            task: p.config.task.clone(),
            evolution: planned.evolution.clone(),
            base_seed: planned.base_seed,
            repetition: planned.repetition,
            config_hash: p.config_hash.clone(),
        };
        let files = write_trajectory(&dir, &header, &traj)?;
        log::info!("{}: best {} after {} attempts", planned.run_id, traj.best_final(), traj.attempts().len());
        runs.push(RunOutcome {
            run_id: planned.run_id.clone(),
            file: files[0].file_name().unwrap_or_default().to_string_lossy().into_owned(),
            sha256: file_sha256(&files[0])?,
            best_initial: Some(traj.best_initial()).filter(|v| v.is_finite()),
            best_final: Some(traj.best_final()).filter(|v| v.is_finite()),
            attempts: traj.attempts().len(),
            model_calls: traj.exchanges.len(),
        });
        trajectories.push(traj);
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        config_hash: p.config_hash.clone(),
        task_id: p.task.id().to_string(),
        runs,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_json(&dir.join("timing.json"), &timing)?;
    Ok(RunSummary {
        output_dir: dir,
        manifest,
        trajectories,
    })
}

/// Trajectory files matched by the patterns, ledgers and non-JSONL files
/// excluded, sorted and deduplicated.
pub fn expand_patterns(patterns: &[String]) -> Result<Vec<PathBuf>, WorkbenchError> {
    let mut out = Vec::new();
    for pat in patterns {
        let paths = glob::glob(pat).map_err(|e| WorkbenchError::Pattern {
            pattern: pat.clone(),
            message: e.to_string(),
        })?;
        for p in paths.flatten() {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if p.is_file() && name.ends_with(".jsonl") && !name.ends_with(".ledger.jsonl") {
                out.push(p);
            }
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(WorkbenchError::NoMatches(patterns.join(" ")));
    }
    Ok(out)
}

struct Instance {
    task: Box<dyn Task>,
    runs: Vec<(Header, Trajectory)>,
}

/// Group trajectories by task instance.
fn load_instances(files: &[PathBuf]) -> Result<BTreeMap<String, Instance>, WorkbenchError> {
    let mut out: BTreeMap<String, Instance> = BTreeMap::new();
    for f in files {
        let raw = read_raw(f)?;
        let id = raw.header.task_id.clone();
        if !out.contains_key(&id) {
            let task = raw.header.task.build()?;
            out.insert(id.clone(), Instance { task, runs: Vec::new() });
        }
        let inst = out.get_mut(&id).expect("inserted above");
        let header = raw.header.clone();
        let traj = raw.into_trajectory(inst.task.as_ref())?;
        inst.runs.push((header, traj));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: String,
    pub task: String,
    pub operator: String,
    pub seed: u64,
    pub repetition: usize,
    pub attempts: usize,
    pub valid_attempts: usize,
    pub best_initial: f64,
    pub best_final: f64,
    pub breakthroughs: usize,
    pub breakthrough_rate: f64,
    pub breakthrough_rate_valid: f64,
    pub avg_novelty: f64,
    pub initial_nov: f64,
    pub lrr: f64,
    pub pcd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationCsv {
    pub run_id: String,
    pub task: String,
    pub operator: String,
    pub seed: u64,
    pub generation: usize,
    pub mean_novelty: Option<f64>,
    pub max_novelty: Option<f64>,
    pub h_spatial: f64,
    pub h_fitness: Option<f64>,
    pub sigma: f64,
    pub breakthrough_count: usize,
    pub offspring_attempts: usize,
    pub valid_attempts: usize,
    pub prob_breakthrough: f64,
    pub best_so_far: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyCsv {
    pub run_id: String,
    pub task: String,
    pub operator: String,
    pub id: u64,
    pub generation: usize,
    pub raw_novelty: f64,
    pub normalized_novelty: f64,
}

/// Zero-shot score file written by [`cmd_zeroshot`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotFile {
    pub task: String,
    pub operator: String,
    pub model: String,
    pub best: f64,
    pub all_invalid: bool,
    pub calls: usize,
    pub samples: Vec<ZeroShotSampleRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotSampleRow {
    pub temperature: f64,
    pub raw_fitness: f64,
    pub valid: bool,
}

#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub runs: Vec<RunRow>,
    pub generations: Vec<GenerationCsv>,
    pub novelty: Vec<NoveltyCsv>,
    pub descriptors: Vec<DescriptorRow>,
    pub files: Vec<PathBuf>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Compute per-run, per-generation and per-offspring metrics for every
/// instance and write `runs.csv`, `generations.csv`, `novelty.csv` and
/// `descriptors.csv` into `out_dir`. Novelty and fitness weights are
/// normalized within each task instance.
pub fn cmd_analyze(
    patterns: &[String],
    out_dir: &Path,
    zero_shot: &[PathBuf],
) -> Result<AnalysisOutput, WorkbenchError> {
    let files = expand_patterns(patterns)?;
    let mut zs: BTreeMap<(String, String), f64> = BTreeMap::new();
    for f in zero_shot {
        let text = std::fs::read_to_string(f).map_err(|source| IoError::Io {
            path: f.clone(),
            source,
        })?;
        let z: ZeroShotFile = serde_json::from_str(&text).map_err(|e| IoError::Format {
            path: f.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        zs.insert((z.operator, z.task), z.best);
    }
    let instances = load_instances(&files)?;
    let mut runs = Vec::new();
    let mut generations = Vec::new();
    let mut novelty = Vec::new();
    for (task_id, inst) in &instances {
        let mut metrics: Vec<RunMetrics> = inst
            .runs
            .iter()
            .map(|(_, t)| RunMetrics::compute(t, inst.task.as_ref()))
            .collect();
        let mut nov: Vec<_> = metrics.iter_mut().map(|m| std::mem::take(&mut m.novelty)).collect();
        normalize_instance(&mut nov);
        for (m, n) in metrics.iter_mut().zip(nov) {
            m.novelty = n;
        }
        let range = fitness_range(inst.runs.iter().map(|(_, t)| t));
        for ((h, traj), m) in inst.runs.iter().zip(&metrics) {
            for g in generation_summaries(traj, m, range) {
                generations.push(GenerationCsv {
                    run_id: g.run_id,
                    task: g.task_id,
                    operator: g.operator_id,
                    seed: h.base_seed,
                    generation: g.generation,
                    mean_novelty: g.mean_novelty,
                    max_novelty: g.max_novelty,
                    h_spatial: g.h_spatial,
                    h_fitness: g.h_fitness,
                    sigma: g.sigma,
                    breakthrough_count: g.breakthrough_count,
                    offspring_attempts: g.offspring_attempts,
                    valid_attempts: g.valid_attempts,
                    prob_breakthrough: if g.offspring_attempts > 0 {
                        g.breakthrough_count as f64 / g.offspring_attempts as f64
                    } else {
                        0.0
                    },
                    best_so_far: Some(g.best_so_far).filter(|v| v.is_finite()),
                });
            }
            for r in &m.novelty {
                novelty.push(NoveltyCsv {
                    run_id: traj.run_id.clone(),
                    task: task_id.clone(),
                    operator: traj.operator_id.clone(),
                    id: r.id,
                    generation: r.generation,
                    raw_novelty: r.raw_novelty,
                    normalized_novelty: r.normalized_novelty,
                });
            }
            runs.push(RunRow {
                run_id: traj.run_id.clone(),
                task: task_id.clone(),
                operator: traj.operator_id.clone(),
                seed: h.base_seed,
                repetition: h.repetition,
                attempts: traj.attempts().len(),
                valid_attempts: traj.attempts().iter().filter(|a| a.valid).count(),
                best_initial: traj.best_initial(),
                best_final: traj.best_final(),
                breakthroughs: m.breakthroughs.events.len(),
                breakthrough_rate: m.breakthroughs.rate,
                breakthrough_rate_valid: m.breakthroughs.rate_valid_only,
                avg_novelty: mean(m.novelty.iter().map(|r| r.normalized_novelty)),
                initial_nov: mean(m.novelty.iter().filter(|r| r.generation == 1).map(|r| r.normalized_novelty)),
                lrr: m.lrr,
                pcd: m.pcd,
            });
        }
    }
    let mut groups: BTreeMap<(String, String), Vec<&RunRow>> = BTreeMap::new();
    for r in &runs {
        groups.entry((r.operator.clone(), r.task.clone())).or_default().push(r);
    }
    let descriptors: Vec<DescriptorRow> = groups
        .into_iter()
        .map(|((operator, task), rs)| DescriptorRow {
            zero_shot_perf: zs.get(&(operator.clone(), task.clone())).copied(),
            best_final_perf: mean(rs.iter().map(|r| r.best_final)),
            avg_novelty: mean(rs.iter().map(|r| r.avg_novelty)),
            initial_nov: mean(rs.iter().map(|r| r.initial_nov)),
            avg_breakthrough_rate: mean(rs.iter().map(|r| r.breakthrough_rate)),
            lrr: mean(rs.iter().map(|r| r.lrr)),
            pcd: mean(rs.iter().map(|r| r.pcd)),
            operator,
            task,
        })
        .collect();
    create_dir(out_dir)?;
    let files = vec![
        out_dir.join("runs.csv"),
        out_dir.join("generations.csv"),
        out_dir.join("novelty.csv"),
        out_dir.join("descriptors.csv"),
    ];
    write_csv(&files[0], &runs)?;
    write_csv(&files[1], &generations)?;
    write_csv(&files[2], &novelty)?;
    write_csv(&files[3], &descriptors)?;
    Ok(AnalysisOutput {
        runs,
        generations,
        novelty,
        descriptors,
        files,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub term: String,
    pub coef: f64,
    pub se: f64,
    pub se_naive: f64,
    pub p_value: f64,
}

fn write_result(out_dir: &Path, name: &str, r: &RegressionResult) -> Result<Vec<PathBuf>, IoError> {
    let json = out_dir.join(format!("{name}.json"));
    let csv = out_dir.join(format!("{name}.csv"));
    write_json(&json, r)?;
    let rows: Vec<CoefficientRow> = (0..r.names.len())
        .map(|i| CoefficientRow {
            term: r.names[i].clone(),
            coef: r.coef[i],
            se: r.se[i],
            se_naive: r.se_naive[i],
            p_value: r.p_values[i],
        })
        .collect();
    write_csv(&csv, &rows)?;
    Ok(vec![json, csv])
}

pub const MIXED_SPECS: [&str; 2] = ["concurrent", "lagged"];

/// Fit one specification (`M1`..`M8`, `PCD`, `LRR_PCD`, `concurrent`,
/// `lagged`) or `all`. With `all`, specifications whose inputs are missing
/// are skipped with a warning; a named one fails instead.
pub fn cmd_stats(
    descriptors: Option<&Path>,
    generations: Option<&Path>,
    spec: &str,
    out_dir: &Path,
) -> Result<BTreeMap<String, RegressionResult>, WorkbenchError> {
    let all = spec == "all";
    let known = OLS_SPECS.contains(&spec) || MIXED_SPECS.contains(&spec);
    if !all && !known {
        return Err(StatsError::UnknownSpec(spec.to_string()).into());
    }
    let desc: Option<Vec<DescriptorRow>> = descriptors.map(io::read_csv).transpose()?;
    let gens: Option<Vec<GenerationRow>> = generations.map(io::read_csv).transpose()?;
    create_dir(out_dir)?;
    let mut out = BTreeMap::new();
    for s in OLS_SPECS.iter().filter(|s| all || **s == spec) {
        let Some(rows) = &desc else {
            if all {
                continue;
            }
            return Err(WorkbenchError::Usage(format!("{s} needs a descriptor table")));
        };
        if all && spec_needs_zero_shot(s) && rows.iter().any(|r| r.zero_shot_perf.is_none()) {
            log::warn!("skipping {s}: zero-shot scores missing");
            continue;
        }
        let r = ols_spec(s, rows)?;
        write_result(out_dir, s, &r)?;
        out.insert(s.to_string(), r);
    }
    for (lag, s) in MIXED_SPECS.iter().enumerate().filter(|(_, s)| all || **s == spec) {
        let Some(rows) = &gens else {
            if all {
                continue;
            }
            return Err(WorkbenchError::Usage(format!("{s} needs a generation table")));
        };
        let r = mixed_fit(&breakthrough_design(rows, lag)?)?;
        write_result(out_dir, s, &r)?;
        out.insert(s.to_string(), r);
    }
    if let Some(rows) = &gens {
        let used: Vec<&GenerationRow> = rows.iter().filter(|r| r.mean_novelty.is_some()).collect();
        if !used.is_empty() {
            let cells = bin2d_breakthrough(
                &used.iter().map(|r| r.mean_novelty.unwrap_or(0.0)).collect::<Vec<_>>(),
                &used.iter().map(|r| r.h_spatial).collect::<Vec<_>>(),
                &used.iter().map(|r| r.prob_breakthrough).collect::<Vec<_>>(),
                10,
            );
            write_csv(&out_dir.join("breakthrough_bins.csv"), &cells)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdsOptions {
    pub mds: MdsConfig,
    pub k: usize,
    pub power: f64,
    pub cap_per_bucket: usize,
    pub total_cap: usize,
}

impl Default for MdsOptions {
    fn default() -> Self {
        MdsOptions {
            mds: MdsConfig::default(),
            k: 8,
            power: 2.0,
            cap_per_bucket: 60,
            total_cap: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub run_id: String,
    pub operator: String,
    pub id: u64,
    pub generation: usize,
    pub x: f64,
    pub y: f64,
    pub raw_fitness: f64,
    pub fitness_scaled: f64,
    pub base: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSummary {
    pub task: String,
    pub stress: f64,
    pub iterations: usize,
    pub base_points: usize,
    pub total_points: usize,
    pub config: MdsOptions,
}

/// One 2-D landscape per task instance: SMACOF on a stratified base sample of
/// valid individuals (bucketed by operator and generation), the rest placed
/// by k-NN interpolation.
pub fn cmd_mds(
    patterns: &[String],
    out_dir: &Path,
    opts: &MdsOptions,
) -> Result<Vec<LandscapeSummary>, WorkbenchError> {
    let files = expand_patterns(patterns)?;
    let instances = load_instances(&files)?;
    create_dir(out_dir)?;
    let mut summaries = Vec::new();
    for (task_id, inst) in &instances {
        let mut points: Vec<(&Trajectory, u64, Signature)> = Vec::new();
        let mut buckets: BTreeMap<(String, usize), Vec<u64>> = BTreeMap::new();
        for (_, traj) in &inst.runs {
            let sigs = signatures(traj, inst.task.as_ref());
            for (ind, sig) in traj.individuals.iter().zip(sigs) {
                if let (true, Some(sig)) = (ind.valid, sig) {
                    buckets
                        .entry((traj.operator_id.clone(), ind.generation))
                        .or_default()
                        .push(points.len() as u64);
                    points.push((traj, ind.id, sig));
                }
            }
        }
        if points.len() < 2 {
            log::warn!("{task_id}: fewer than two valid individuals, no landscape");
            continue;
        }
        let base = stratified_sample(&buckets, opts.cap_per_bucket, opts.total_cap, opts.mds.seed);
        let d: Vec<Vec<f64>> = base
            .iter()
            .map(|&i| base.iter().map(|&j| points[i as usize].2.distance(&points[j as usize].2)).collect())
            .collect();
        let model = mds_fit(&d, &base, &opts.mds)?;
        let k = opts.k.min(base.len());
        let scaled = robust_minmax(&points.iter().map(|p| p.0.individuals[p.1 as usize].raw_fitness).collect::<Vec<_>>());
        let mut base_pos = BTreeMap::new();
        for (b, &i) in base.iter().enumerate() {
            base_pos.insert(i, b);
        }
        let mut rows = Vec::with_capacity(points.len());
        for (i, (traj, id, sig)) in points.iter().enumerate() {
            let xy = match base_pos.get(&(i as u64)) {
                Some(&b) => model.coords[b],
                None => {
                    let to_base: Vec<f64> = base.iter().map(|&j| sig.distance(&points[j as usize].2)).collect();
                    oos_place(&to_base, &model, k, opts.power)?
                }
            };
            let ind = &traj.individuals[*id as usize];
            rows.push(LandscapePoint {
                run_id: traj.run_id.clone(),
                operator: traj.operator_id.clone(),
                id: *id,
                generation: ind.generation,
                x: xy[0],
                y: xy[1],
                raw_fitness: ind.raw_fitness,
                fitness_scaled: scaled[i],
                base: base_pos.contains_key(&(i as u64)),
            });
        }
        write_csv(&out_dir.join(format!("{task_id}.mds.csv")), &rows)?;
        let summary = LandscapeSummary {
            task: task_id.clone(),
            stress: model.stress,
            iterations: model.iterations,
            base_points: base.len(),
            total_points: points.len(),
            config: *opts,
        };
        write_json(&out_dir.join(format!("{task_id}.mds.json")), &summary)?;
        summaries.push(summary);
    }
    Ok(summaries)
}

/// MDS of an explicit square distance matrix in CSV form: a header row of
/// labels (first cell ignored), then one row per point starting with its label.
pub fn cmd_mds_matrix(matrix: &Path, out_dir: &Path, cfg: &MdsConfig) -> Result<crate::geometry::MdsModel, WorkbenchError> {
    let fmt = |message: String| IoError::Format {
        path: matrix.to_path_buf(),
        line: 0,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(matrix)
        .map_err(|e| fmt(e.to_string()))?;
    let mut labels = Vec::new();
    let mut d = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        labels.push(rec.get(0).unwrap_or_default().to_string());
        let row: Result<Vec<f64>, _> = rec.iter().skip(1).map(|v| v.trim().parse::<f64>()).collect();
        d.push(row.map_err(|e| fmt(format!("row {}: {e}", labels.len())))?);
    }
    let ids: Vec<u64> = (0..d.len() as u64).collect();
    let model = mds_fit(&d, &ids, cfg)?;
    create_dir(out_dir)?;
    #[derive(Serialize)]
    struct Coord<'a> {
        label: &'a str,
        x: f64,
        y: f64,
    }
    let rows: Vec<Coord> = labels
        .iter()
        .zip(&model.coords)
        .map(|(l, c)| Coord { label: l, x: c[0], y: c[1] })
        .collect();
    write_csv(&out_dir.join("mds.csv"), &rows)?;
    write_json(&out_dir.join("mds.json"), &model)?;
    Ok(model)
}

/// Best-of-n zero-shot score for the config's task and llm operator. Writes
/// `<task>__<operator>.zeroshot.json` and its ledger.
pub fn cmd_zeroshot(
    config: &Path,
    out_dir: Option<&Path>,
    gateway: Option<Arc<Gateway>>,
) -> Result<ZeroShotFile, WorkbenchError> {
    let p = prepare(config, gateway)?;
    let OperatorSpec::Llm { model, .. } = &p.config.operator else {
        return Err(WorkbenchError::Usage("zero-shot scoring needs an llm operator".into()));
    };
    let gateway = p.gateway.clone().ok_or(OperatorError::NoGateway)?;
    let templates = p.templates.clone().unwrap_or_else(|| Templates::for_family(p.task.family()));
    let result = zero_shot_best_of_n(&gateway, p.task.as_ref(), model, &templates);
    let operator = p.config.operator.id();
    let file = ZeroShotFile {
        task: p.task.id().to_string(),
        operator: operator.clone(),
        model: model.clone(),
        best: result.best,
        all_invalid: result.all_invalid,
        calls: result.exchanges.len(),
        samples: result
            .samples
            .iter()
            .map(|s| ZeroShotSampleRow {
                temperature: s.temperature,
                raw_fitness: s.raw_fitness,
                valid: s.valid,
            })
            .collect(),
    };
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&p.config.output_dir));
    create_dir(&dir)?;
    let stem = format!("{}__{}", file.task, operator);
    write_json(&dir.join(format!("{stem}.zeroshot.json")), &file)?;
    let ledger: Vec<_> = result
        .exchanges
        .into_iter()
        .map(|mut e| {
            e.run_id = Some(format!("{stem}__zeroshot"));
            e
        })
        .collect();
    let path = dir.join(format!("{stem}.zeroshot.ledger.jsonl"));
    let mut text = String::new();
    for e in &ledger {
        text.push_str(&serde_json::to_string(e).map_err(|e| WorkbenchError::Usage(e.to_string()))?);
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|source| IoError::Io { path, source })?;
    Ok(file)
}

/// Token usage and cost over every ledger matched by the patterns.
pub fn cmd_cost(patterns: &[String], prices: &Path, out: Option<&Path>) -> Result<CostReport, WorkbenchError> {
    let text = std::fs::read_to_string(prices).map_err(|source| IoError::Io {
        path: prices.to_path_buf(),
        source,
    })?;
    let table = PriceTable::from_json(&text)?;
    let mut files = Vec::new();
    for pat in patterns {
        let paths = glob::glob(pat).map_err(|e| WorkbenchError::Pattern {
            pattern: pat.clone(),
            message: e.to_string(),
        })?;
        files.extend(
            paths
                .flatten()
                .filter(|p| p.to_string_lossy().ends_with(".ledger.jsonl")),
        );
    }
    files.sort();
    files.dedup();
    if files.is_empty() {
        return Err(WorkbenchError::NoMatches(patterns.join(" ")));
    }
    let mut exchanges = Vec::new();
    for f in &files {
        exchanges.extend(io::read_exchanges(f)?);
    }
    let report = cost_report(&exchanges, &table);
    if let Some(out) = out {
        write_json(out, &report)?;
    }
    Ok(report)
}
