//! Regression pipeline: z-scoring, OLS with task fixed effects and
//! cluster-robust errors, a random-intercept linear mixed model fit by
//! maximum likelihood, and binned breakthrough tables.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("column {0} is constant")]
    ConstantColumn(String),
    #[error("need at least {needed} observations, have {have}")]
    TooFewRows { needed: usize, have: usize },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("non-finite value in column {0}")]
    NonFinite(String),
    #[error("column {name} has {got} rows, expected {expected}")]
    Length { name: String, got: usize, expected: usize },
    #[error("mixed model needs at least 2 groups, have {0}")]
    TooFewGroups(usize),
    #[error("unknown model specification {0}")]
    UnknownSpec(String),
    #[error("missing descriptor {0}")]
    MissingColumn(String),
}

/// Mean 0, sample standard deviation 1 (denominator n-1).
pub fn zscore(v: &[f64]) -> Result<Vec<f64>, StatsError> {
    zscore_named(v, "column")
}

fn zscore_named(v: &[f64], name: &str) -> Result<Vec<f64>, StatsError> {
    let n = v.len();
    if n < 2 {
        return Err(StatsError::TooFewRows { needed: 2, have: n });
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 1e-300) || !sd.is_finite() {
        return Err(StatsError::ConstantColumn(name.to_string()));
    }
    Ok(v.iter().map(|x| (x - mean) / sd).collect())
}

/// Z-score within each category; categories with fewer than two rows or
/// zero spread map to 0.
pub fn zscore_within(v: &[f64], categories: &[String]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in categories.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    for idx in groups.values() {
        let vals: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
        if let Ok(z) = zscore(&vals) {
            for (&i, zi) in idx.iter().zip(z) {
                out[i] = zi;
            }
        }
    }
    out
}

/// The standardized interaction of two columns: both are z-scored, multiplied
/// elementwise and the product is z-scored again.
pub fn interaction(a: &[f64], b: &[f64]) -> Result<Vec<f64>, StatsError> {
    let za = zscore_named(a, "interaction lhs")?;
    let zb = zscore_named(b, "interaction rhs")?;
    let prod: Vec<f64> = za.iter().zip(&zb).map(|(x, y)| x * y).collect();
    zscore_named(&prod, "interaction")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DesignMatrix {
    pub y: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
    /// Cluster (or group) label per row.
    pub clusters: Option<Vec<String>>,
}

impl DesignMatrix {
    pub fn new(y: Vec<f64>) -> Self {
        DesignMatrix {
            y,
            columns: Vec::new(),
            clusters: None,
        }
    }

    pub fn intercept(mut self) -> Self {
        let n = self.y.len();
        self.columns.push(("intercept".into(), vec![1.0; n]));
        self
    }

    pub fn column(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.columns.push((name.into(), values));
        self
    }

    /// One indicator per category except the reference (the first in sorted
    /// order unless given).
    pub fn fixed_effects(mut self, name: &str, categories: &[String], reference: Option<&str>) -> Self {
        let levels: BTreeSet<&str> = categories.iter().map(String::as_str).collect();
        let reference = reference
            .filter(|r| levels.contains(r))
            .or_else(|| levels.iter().next().copied());
        for level in levels.iter().filter(|l| Some(**l) != reference) {
            let col = categories.iter().map(|c| f64::from(c == level)).collect();
            self.columns.push((format!("{name}[{level}]"), col));
        }
        self
    }

    pub fn clusters(mut self, ids: Vec<String>) -> Self {
        self.clusters = Some(ids);
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|(n, _)| n.clone()).collect()
    }

    fn check(&self) -> Result<(), StatsError> {
        let n = self.n();
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite("response".into()));
        }
        for (name, col) in &self.columns {
            if col.len() != n {
                return Err(StatsError::Length {
                    name: name.clone(),
                    got: col.len(),
                    expected: n,
                });
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::NonFinite(name.clone()));
            }
        }
        if let Some(c) = &self.clusters {
            if c.len() != n {
                return Err(StatsError::Length {
                    name: "clusters".into(),
                    got: c.len(),
                    expected: n,
                });
            }
        }
        if n <= self.p() {
            return Err(StatsError::TooFewRows {
                needed: self.p() + 1,
                have: n,
            });
        }
        Ok(())
    }

    pub fn x(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.p(), |i, j| self.columns[j].1[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeKind {
    Clustered,
    /// Heteroskedasticity-robust (HC1); used when there is a single cluster.
    Robust,
    Naive,
    /// Model-based ML standard errors of a mixed model.
    ModelBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub se_naive: Vec<f64>,
    pub p_values: Vec<f64>,
    pub se_kind: SeKind,
    pub n: usize,
    pub groups: usize,
    pub r2: Option<f64>,
    pub adj_r2: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub sigma2: Option<f64>,
    pub tau2: Option<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.coef[i], self.se[i]))
    }
}

/// Two-sided p-value under the standard normal.
pub fn normal_p_value(z: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * (1.0 - normal.cdf(z.abs()))
}

struct LeastSquares {
    beta: DVector<f64>,
    xtx_inv: DMatrix<f64>,
    resid: DVector<f64>,
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LeastSquares, StatsError> {
    let p = x.ncols();
    let qr = x.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..p).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    if max == 0.0 || diag.iter().any(|&d| d <= 1e-10 * max) {
        return Err(StatsError::RankDeficient);
    }
    let qty = qr.q().transpose() * y;
    let beta = r.solve_upper_triangular(&qty).ok_or(StatsError::RankDeficient)?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(StatsError::RankDeficient)?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let resid = y - x * &beta;
    Ok(LeastSquares { beta, xtx_inv, resid })
}

pub fn ols_fit(d: &DesignMatrix) -> Result<RegressionResult, StatsError> {
    d.check()?;
    let (n, p) = (d.n(), d.p());
    let x = d.x();
    let y = DVector::from_vec(d.y.clone());
    let ls = least_squares(&x, &y)?;

    let ssr = ls.resid.norm_squared();
    let mean = d.y.iter().sum::<f64>() / n as f64;
    let sst: f64 = d.y.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    let adj_r2 = 1.0 - (1.0 - r2) * (n - 1) as f64 / (n - p) as f64;

    let s2 = ssr / (n - p) as f64;
    let se_naive: Vec<f64> = (0..p).map(|j| (s2 * ls.xtx_inv[(j, j)]).sqrt()).collect();

    let mut warnings = Vec::new();
    let labels: Vec<String> = d.clusters.clone().unwrap_or_default();
    let distinct: BTreeSet<&String> = labels.iter().collect();
    let (se, se_kind, groups) = if d.clusters.is_none() {
        (se_naive.clone(), SeKind::Naive, 0)
    } else {
        let mut meat = DMatrix::<f64>::zeros(p, p);
        let factor;
        let kind;
        if distinct.len() >= 2 {
            let mut scores: BTreeMap<&String, DVector<f64>> = BTreeMap::new();
            for (i, g) in labels.iter().enumerate() {
                let s = scores.entry(g).or_insert_with(|| DVector::zeros(p));
                *s += x.row(i).transpose() * ls.resid[i];
            }
            for s in scores.values() {
                meat += s * s.transpose();
            }
            let g = distinct.len() as f64;
            factor = g / (g - 1.0) * (n - 1) as f64 / (n - p) as f64;
            kind = SeKind::Clustered;
        } else {
            log::warn!("single cluster: falling back to heteroskedasticity-robust errors");
            warnings.push("single cluster: heteroskedasticity-robust (HC1) errors reported".into());
            for i in 0..n {
                let xi = x.row(i).transpose();
                meat += &xi * xi.transpose() * ls.resid[i].powi(2);
            }
            factor = n as f64 / (n - p) as f64;
            kind = SeKind::Robust;
        }
        let cov = &ls.xtx_inv * meat * &ls.xtx_inv * factor;
        ((0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(), kind, distinct.len())
    };
    let p_values = ls.beta.iter().zip(&se).map(|(b, s)| normal_p_value(b / s)).collect();
    Ok(RegressionResult {
        names: d.names(),
        coef: ls.beta.iter().copied().collect(),
        se,
        se_naive,
        p_values,
        se_kind,
        n,
        groups,
        r2: Some(r2),
        adj_r2: Some(adj_r2),
        log_likelihood: None,
        sigma2: Some(s2),
        tau2: None,
        converged: true,
        warnings,
    })
}

/// Per-group sufficient statistics for the random-intercept likelihood.
struct GroupStats {
    n: usize,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    sx: DVector<f64>,
    sy: f64,
}

pub struct MixedDesign {
    pub design: DesignMatrix,
    groups: Vec<GroupStats>,
}

impl MixedDesign {
    /// `design.clusters` holds the group label of each row.
    pub fn new(design: DesignMatrix) -> Result<Self, StatsError> {
        design.check()?;
        let labels = design
            .clusters
            .clone()
            .ok_or(StatsError::TooFewGroups(0))?;
        let x = design.x();
        let p = design.p();
        let mut by_group: BTreeMap<&String, Vec<usize>> = BTreeMap::new();
        for (i, g) in labels.iter().enumerate() {
            by_group.entry(g).or_default().push(i);
        }
        if by_group.len() < 2 {
            return Err(StatsError::TooFewGroups(by_group.len()));
        }
        let groups = by_group
            .values()
            .map(|rows| {
                let xg = DMatrix::from_fn(rows.len(), p, |i, j| x[(rows[i], j)]);
                let yg = DVector::from_iterator(rows.len(), rows.iter().map(|&i| design.y[i]));
                GroupStats {
                    n: rows.len(),
                    xtx: xg.transpose() * &xg,
                    xty: xg.transpose() * &yg,
                    yty: yg.norm_squared(),
                    sx: xg.row_sum().transpose(),
                    sy: yg.sum(),
                }
            })
            .collect();
        Ok(MixedDesign { design, groups })
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    /// Profiled fit at variance ratio `λ = τ²/σ²`.
    fn profile(&self, lambda: f64) -> Option<Profile> {
        let p = self.design.p();
        let mut a = DMatrix::<f64>::zeros(p, p);
        let mut b = DVector::<f64>::zeros(p);
        let mut logdet = 0.0;
        for g in &self.groups {
            let c = lambda / (1.0 + lambda * g.n as f64);
            a += &g.xtx - &g.sx * g.sx.transpose() * c;
            b += &g.xty - &g.sx * (c * g.sy);
            logdet += (1.0 + lambda * g.n as f64).ln();
        }
        let chol = a.clone().cholesky()?;
        let beta = chol.solve(&b);
        // r'Hr summed over groups without forming residual vectors.
        let mut rhr = 0.0;
        for g in &self.groups {
            let c = lambda / (1.0 + lambda * g.n as f64);
            let rtr = g.yty - 2.0 * g.xty.dot(&beta) + beta.dot(&(&g.xtx * &beta));
            let rsum = g.sy - g.sx.dot(&beta);
            rhr += rtr - c * rsum * rsum;
        }
        let n = self.n() as f64;
        let sigma2 = (rhr / n).max(0.0);
        if !(sigma2 > 0.0) {
            return None;
        }
        let loglik = -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0) - 0.5 * logdet;
        Some(Profile {
            lambda,
            beta,
            cov_unscaled: chol.inverse(),
            sigma2,
            loglik,
        })
    }
}

struct Profile {
    lambda: f64,
    beta: DVector<f64>,
    cov_unscaled: DMatrix<f64>,
    sigma2: f64,
    loglik: f64,
}

pub const LAMBDA_MAX: f64 = 1e4;

fn lambda_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend((0..=120).map(|k| 10f64.powf(-8.0 + 0.1 * k as f64)));
    grid
}

fn mixed_result(md: &MixedDesign, prof: Profile, converged: bool, warnings: Vec<String>) -> RegressionResult {
    let p = md.design.p();
    let se: Vec<f64> = (0..p)
        .map(|j| (prof.sigma2 * prof.cov_unscaled[(j, j)]).max(0.0).sqrt())
        .collect();
    let p_values = prof.beta.iter().zip(&se).map(|(b, s)| normal_p_value(b / s)).collect();
    RegressionResult {
        names: md.design.names(),
        coef: prof.beta.iter().copied().collect(),
        se_naive: se.clone(),
        se,
        p_values,
        se_kind: SeKind::ModelBased,
        n: md.n(),
        groups: md.groups.len(),
        r2: None,
        adj_r2: None,
        log_likelihood: Some(prof.loglik),
        sigma2: Some(prof.sigma2),
        tau2: Some(prof.lambda * prof.sigma2),
        converged,
        warnings,
    }
}

/// ML fit with the variance ratio held at `lambda`.
pub fn mixed_fit_fixed_lambda(md: &MixedDesign, lambda: f64) -> Result<RegressionResult, StatsError> {
    let prof = md.profile(lambda).ok_or(StatsError::RankDeficient)?;
    Ok(mixed_result(md, prof, true, Vec::new()))
}

/// ML fit of `y = Xβ + u_g + ε`: grid search over `λ ∈ {0} ∪ [1e-8, 1e4]`
/// then golden-section refinement around the best grid point.
pub fn mixed_fit(md: &MixedDesign) -> Result<RegressionResult, StatsError> {
    let grid = lambda_grid();
    let lls: Vec<f64> = grid
        .iter()
        .map(|&l| md.profile(l).map_or(f64::NEG_INFINITY, |p| p.loglik))
        .collect();
    let k = (0..grid.len())
        .max_by(|&a, &b| lls[a].total_cmp(&lls[b]).then(b.cmp(&a)))
        .expect("non-empty grid");
    if !lls[k].is_finite() {
        return Err(StatsError::RankDeficient);
    }
    let lo = if k == 0 { 0.0 } else { grid[k - 1] };
    let hi = grid[(k + 1).min(grid.len() - 1)];
    let f = |l: f64| md.profile(l).map_or(f64::NEG_INFINITY, |p| p.loglik);

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iterations = 0;
    let max_iter = 200;
    while (b - a) > 1e-12 * (1.0 + a.abs() + b.abs()) && iterations < max_iter {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
        iterations += 1;
    }
    let refined = 0.5 * (a + b);
    let best = if f(refined) > lls[k] { refined } else { grid[k] };

    let mut warnings = Vec::new();
    let mut converged = iterations < max_iter;
    if !converged {
        warnings.push("variance-ratio search hit its iteration budget".into());
    }
    if k == grid.len() - 1 {
        converged = false;
        warnings.push(format!("variance ratio at the search bound {LAMBDA_MAX}"));
    }
    let prof = md.profile(best).ok_or(StatsError::RankDeficient)?;
    Ok(mixed_result(md, prof, converged, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin2dCell {
    pub x_bin: usize,
    pub y_bin: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub count: usize,
    /// `None` for empty cells.
    pub mean: Option<f64>,
}

fn bin_of(v: f64, lo: f64, width: f64, bins: usize) -> usize {
    if width <= 0.0 {
        return 0;
    }
    (((v - lo) / width).floor() as usize).min(bins - 1)
}

/// Mean outcome on an equal-width `bins × bins` grid over the observed
/// ranges; the maximum falls in the last bin.
pub fn bin2d_breakthrough(x: &[f64], y: &[f64], outcome: &[f64], bins: usize) -> Vec<Bin2dCell> {
    assert!(bins >= 2, "need at least two bins");
    assert!(x.len() == y.len() && y.len() == outcome.len(), "equal lengths");
    let range = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (xl, xh) = if x.is_empty() { (0.0, 1.0) } else { range(x) };
    let (yl, yh) = if y.is_empty() { (0.0, 1.0) } else { range(y) };
    let (wx, wy) = ((xh - xl) / bins as f64, (yh - yl) / bins as f64);
    let mut sums = vec![(0usize, 0.0); bins * bins];
    for i in 0..x.len() {
        let (bx, by) = (bin_of(x[i], xl, wx, bins), bin_of(y[i], yl, wy, bins));
        let cell = &mut sums[bx * bins + by];
        cell.0 += 1;
        cell.1 += outcome[i];
    }
    let mut out = Vec::with_capacity(bins * bins);
    for bx in 0..bins {
        for by in 0..bins {
            let (count, sum) = sums[bx * bins + by];
            out.push(Bin2dCell {
                x_bin: bx,
                y_bin: by,
                x_lo: xl + wx * bx as f64,
                x_hi: xl + wx * (bx + 1) as f64,
                y_lo: yl + wy * by as f64,
                y_hi: yl + wy * (by + 1) as f64,
                count,
                mean: (count > 0).then(|| sum / count as f64),
            });
        }
    }
    out
}

/// One (operator, task instance) row of the run-level descriptor table,
/// averaged over seeds and repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorRow {
    pub operator: String,
    pub task: String,
    pub best_final_perf: f64,
    pub avg_novelty: f64,
    pub initial_nov: f64,
    pub avg_breakthrough_rate: f64,
    pub zero_shot_perf: Option<f64>,
    pub lrr: f64,
    pub pcd: f64,
}

pub const OLS_SPECS: [&str; 10] = ["M1", "M2", "M3", "M4", "M5", "M6", "M7", "M8", "PCD", "LRR_PCD"];

fn predictors_of(spec: &str) -> Result<&'static [&'static str], StatsError> {
    Ok(match spec {
        "M1" => &["avg_novelty"],
        "M2" => &["initial_nov"],
        "M3" | "M7" => &["zero_shot_perf"],
        "M4" => &["zero_shot_perf", "avg_novelty"],
        "M5" => &["zero_shot_perf", "initial_nov"],
        "M6" => &["avg_breakthrough_rate"],
        "M8" => &["zero_shot_perf", "avg_breakthrough_rate"],
        "PCD" => &["pcd"],
        "LRR_PCD" => &["lrr", "pcd"],
        other => return Err(StatsError::UnknownSpec(other.to_string())),
    })
}

/// Whether a specification can be fitted on rows lacking zero-shot scores.
pub fn spec_needs_zero_shot(spec: &str) -> bool {
    predictors_of(spec).is_ok_and(|p| p.contains(&"zero_shot_perf"))
}

/// `best_final_perf_z ~ predictors_z + task fixed effects`, clustered by
/// operator. Fitness-valued columns (response, zero-shot) are z-scored within
/// task since their units differ between tasks; the rest globally.
pub fn ols_spec(spec: &str, rows: &[DescriptorRow]) -> Result<RegressionResult, StatsError> {
    let preds = predictors_of(spec)?;
    let tasks: Vec<String> = rows.iter().map(|r| r.task.clone()).collect();
    let y = zscore_within(&rows.iter().map(|r| r.best_final_perf).collect::<Vec<_>>(), &tasks);
    let mut d = DesignMatrix::new(y).intercept();
    for &name in preds {
        let col = match name {
            "zero_shot_perf" => {
                let zs: Option<Vec<f64>> = rows.iter().map(|r| r.zero_shot_perf).collect();
                zscore_within(&zs.ok_or_else(|| StatsError::MissingColumn(name.into()))?, &tasks)
            }
            _ => {
                let raw: Vec<f64> = rows
                    .iter()
                    .map(|r| match name {
                        "avg_novelty" => r.avg_novelty,
                        "initial_nov" => r.initial_nov,
                        "avg_breakthrough_rate" => r.avg_breakthrough_rate,
                        "lrr" => r.lrr,
                        _ => r.pcd,
                    })
                    .collect();
                zscore_named(&raw, name)?
            }
        };
        d = d.column(format!("{name}_z"), col);
    }
    d = d
        .fixed_effects("task", &tasks, None)
        .clusters(rows.iter().map(|r| r.operator.clone()).collect());
    ols_fit(&d)
}

/// One generation of one run, as fed to the mixed models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub operator: String,
    pub task: String,
    pub run_id: String,
    pub generation: usize,
    pub h_fitness: Option<f64>,
    pub h_spatial: f64,
    pub mean_novelty: Option<f64>,
    pub max_novelty: Option<f64>,
    pub prob_breakthrough: f64,
}

fn complete(r: &GenerationRow) -> Option<[f64; 4]> {
    Some([r.h_fitness?, r.h_spatial, r.mean_novelty?, r.max_novelty?])
}

/// The concurrent (`lag = 0`) or lagged (`lag = 1`) breakthrough model with an
/// operator-level random intercept.
pub fn breakthrough_design(rows: &[GenerationRow], lag: usize) -> Result<MixedDesign, StatsError> {
    let mut next: BTreeMap<(&str, usize), f64> = BTreeMap::new();
    for r in rows {
        next.insert((r.run_id.as_str(), r.generation), r.prob_breakthrough);
    }
    let mut used = Vec::new();
    let mut response = Vec::new();
    for r in rows {
        let (Some(vals), Some(&y)) = (complete(r), next.get(&(r.run_id.as_str(), r.generation + lag))) else {
            continue;
        };
        used.push((r, vals));
        response.push(y);
    }
    let col = |k: usize| used.iter().map(|(_, v)| v[k]).collect::<Vec<f64>>();
    let h_fit = zscore_named(&col(0), "H_fitness")?;
    let h_sp = zscore_named(&col(1), "H_spatial")?;
    let mean_nov = zscore_named(&col(2), "mean_novelty")?;
    let max_nov = zscore_named(&col(3), "max_novelty")?;
    let inter = interaction(&mean_nov, &h_sp)?;
    let gen = zscore_named(&used.iter().map(|(r, _)| r.generation as f64).collect::<Vec<_>>(), "generation")?;
    let tasks: Vec<String> = used.iter().map(|(r, _)| r.task.clone()).collect();
    let d = DesignMatrix::new(zscore_named(&response, "prob_breakthrough")?)
        .intercept()
        .column("H_fitness_z", h_fit)
        .column("H_spatial_z", h_sp)
        .column("mean_novelty_z", mean_nov)
        .column("max_novelty_z", max_nov)
        .column("mean_novelty_z:H_spatial_z", inter)
        .column("generation_z", gen)
        .fixed_effects("task", &tasks, None)
        .clusters(used.iter().map(|(r, _)| r.operator.clone()).collect());
    MixedDesign::new(d)
}
