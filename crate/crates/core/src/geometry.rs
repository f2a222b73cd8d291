//! 2-D landscapes: SMACOF metric MDS on precomputed distances, k-NN Shepard
//! placement of out-of-sample points, and bucketed sampling of the base set.

use crate::rng::{label, stream};
use nalgebra::DMatrix;
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const SHEPARD_EPSILON: f64 = 1e-8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("distance matrix: {0}")]
    Matrix(String),
    #[error("need {needed} base points, have {have}")]
    TooFewPoints { needed: usize, have: usize },
}

/// Starting configuration for SMACOF.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MdsInit {
    /// I.i.d. standard normal coordinates from the seed.
    #[default]
    Random,
    /// Classical (Torgerson) scaling of the double-centred squared distances.
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdsConfig {
    pub max_iter: usize,
    /// Stop when the relative stress decrease of one iteration drops below this.
    pub eps: f64,
    pub seed: u64,
    pub init: MdsInit,
}

impl Default for MdsConfig {
    fn default() -> Self {
        MdsConfig {
            max_iter: 300,
            eps: 1e-3,
            seed: 0,
            init: MdsInit::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdsModel {
    pub ids: Vec<u64>,
    pub coords: Vec<[f64; 2]>,
    /// Raw stress `Σ_{i<j} (D_ij - d_ij)²` of `coords`.
    pub stress: f64,
    pub iterations: usize,
    /// Stress of the start followed by one entry per iteration.
    pub stress_history: Vec<f64>,
    pub config: MdsConfig,
}

fn validate(d: &[Vec<f64>]) -> Result<(), GeometryError> {
    let m = d.len();
    if m < 2 {
        return Err(GeometryError::TooFewPoints { needed: 2, have: m });
    }
    for (i, row) in d.iter().enumerate() {
        if row.len() != m {
            return Err(GeometryError::Matrix(format!("row {i} has {} entries, expected {m}", row.len())));
        }
        if row[i] != 0.0 {
            return Err(GeometryError::Matrix(format!("diagonal entry {i} is {}", row[i])));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(GeometryError::Matrix(format!("entry ({i},{j}) = {v}")));
            }
            let t = d[j][i];
            if (v - t).abs() > 1e-9 * v.abs().max(t.abs()).max(1.0) {
                return Err(GeometryError::Matrix(format!("asymmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn stress(d: &[Vec<f64>], x: &[[f64; 2]]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            s += (d[i][j] - euclid(x[i], x[j])).powi(2);
        }
    }
    s
}

/// One Guttman transform `X ← B(X) X / m`.
fn guttman(d: &[Vec<f64>], x: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let m = x.len();
    let mut out = vec![[0.0; 2]; m];
    for i in 0..m {
        let mut acc = [0.0; 2];
        for j in 0..m {
            if i == j {
                continue;
            }
            let dij = euclid(x[i], x[j]);
            if dij > 0.0 {
                let b = d[i][j] / dij;
                acc[0] += b * (x[i][0] - x[j][0]);
                acc[1] += b * (x[i][1] - x[j][1]);
            }
        }
        out[i] = [acc[0] / m as f64, acc[1] / m as f64];
    }
    out
}

/// Standard normal start; each point's coordinates come from its own
/// stream keyed by its id, so permuting points with their ids permutes the
/// start the same way.
fn random_start(ids: &[u64], seed: u64) -> Vec<[f64; 2]> {
    ids.iter()
        .map(|&id| {
            let mut rng = stream(seed, &[label::MDS, id]);
            [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)]
        })
        .collect()
}

/// Top two principal coordinates of `-J D² J / 2`. Eigenvector signs are fixed
/// so the largest-magnitude entry is positive.
fn classical_start(d: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let m = d.len();
    let sq = DMatrix::from_fn(m, m, |i, j| d[i][j] * d[i][j]);
    let row_means: Vec<f64> = (0..m).map(|i| sq.row(i).mean()).collect();
    let grand = row_means.iter().sum::<f64>() / m as f64;
    let b = DMatrix::from_fn(m, m, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
    let mut x = vec![[0.0; 2]; m];
    for (k, &e) in order.iter().take(2).enumerate() {
        let scale = eig.eigenvalues[e].max(0.0).sqrt();
        let v = eig.eigenvectors.column(e);
        let pivot = (0..m).max_by(|&a, &c| v[a].abs().total_cmp(&v[c].abs())).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            x[i][k] = sign * scale * v[i];
        }
    }
    x
}

pub fn mds_fit(d: &[Vec<f64>], ids: &[u64], cfg: &MdsConfig) -> Result<MdsModel, GeometryError> {
    validate(d)?;
    if ids.len() != d.len() {
        return Err(GeometryError::Matrix(format!("{} ids for {} rows", ids.len(), d.len())));
    }
    let mut x = match cfg.init {
        MdsInit::Random => random_start(ids, cfg.seed),
        MdsInit::Classical => classical_start(d),
    };
    let mut s = stress(d, &x);
    let mut history = vec![s];
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let next = guttman(d, &x);
        let s_next = stress(d, &next);
        iterations += 1;
        debug_assert!(
            s_next <= s * (1.0 + 1e-12) + 1e-15,
            "stress increased: {s} -> {s_next}"
        );
        history.push(s_next);
        let decrease = s - s_next;
        x = next;
        let done = s_next == 0.0 || decrease < cfg.eps * s;
        s = s_next;
        if done {
            break;
        }
    }
    Ok(MdsModel {
        ids: ids.to_vec(),
        coords: x,
        stress: s,
        iterations,
        stress_history: history,
        config: *cfg,
    })
}

/// Inverse-distance weighted mean of the `k` nearest base coordinates with
/// weights `1 / (d + 1e-8)^p`. Ties in distance go to the lower base index.
pub fn oos_place(d_to_base: &[f64], model: &MdsModel, k: usize, p: f64) -> Result<[f64; 2], GeometryError> {
    let m = model.coords.len();
    if d_to_base.len() != m {
        return Err(GeometryError::Matrix(format!("{} distances for {m} base points", d_to_base.len())));
    }
    if k == 0 || k > m {
        return Err(GeometryError::TooFewPoints { needed: k.max(1), have: m });
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| d_to_base[a].total_cmp(&d_to_base[b]).then(a.cmp(&b)));
    let (mut wx, mut wy, mut wsum) = (0.0, 0.0, 0.0);
    for &i in &order[..k] {
        let w = 1.0 / (d_to_base[i] + SHEPARD_EPSILON).powf(p);
        wx += w * model.coords[i][0];
        wy += w * model.coords[i][1];
        wsum += w;
    }
    Ok([wx / wsum, wy / wsum])
}

/// Up to `cap_per_bucket` ids per bucket, uniformly without replacement, and
/// at most `total_cap` overall. When every id fits under `total_cap` all ids
/// pass through unsampled. Output is sorted.
pub fn stratified_sample<K: Ord>(
    buckets: &BTreeMap<K, Vec<u64>>,
    cap_per_bucket: usize,
    total_cap: usize,
    seed: u64,
) -> Vec<u64> {
    let total: usize = buckets.values().map(Vec::len).sum();
    let mut out: Vec<u64> = if total <= total_cap {
        buckets.values().flatten().copied().collect()
    } else {
        let mut picked = Vec::new();
        for (b, ids) in buckets.values().enumerate() {
            if ids.len() <= cap_per_bucket {
                picked.extend_from_slice(ids);
            } else {
                let mut rng = stream(seed, &[label::SAMPLE, b as u64]);
                picked.extend(index::sample(&mut rng, ids.len(), cap_per_bucket).into_iter().map(|i| ids[i]));
            }
        }
        if picked.len() > total_cap {
            picked.sort_unstable();
            let mut rng = stream(seed, &[label::SAMPLE, u64::MAX]);
            let keep = index::sample(&mut rng, picked.len(), total_cap);
            picked = keep.into_iter().map(|i| picked[i]).collect();
        }
        picked
    };
    out.sort_unstable();
    out
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Min-max scaling between the 1st and 99th percentiles, clipped to [0, 1].
pub fn robust_minmax(values: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, 0.01);
    let hi = percentile(&sorted, 0.99);
    values
        .iter()
        .map(|&v| {
            if hi > lo {
                ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points() {
        let d = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let m = mds_fit(&d, &[0, 1], &MdsConfig::default()).unwrap();
        assert!((euclid(m.coords[0], m.coords[1]) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_matrices() {
        let asym = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        assert!(mds_fit(&asym, &[0, 1], &MdsConfig::default()).is_err());
        let neg = vec![vec![0.0, -1.0], vec![-1.0, 0.0]];
        assert!(mds_fit(&neg, &[0, 1], &MdsConfig::default()).is_err());
    }

    fn model(coords: Vec<[f64; 2]>) -> MdsModel {
        MdsModel {
            ids: (0..coords.len() as u64).collect(),
            coords,
            stress: 0.0,
            iterations: 0,
            stress_history: vec![],
            config: MdsConfig::default(),
        }
    }

    #[test]
    fn shepard_rules() {
        let m = model(vec![[0.0, 0.0], [2.0, 0.0], [5.0, 5.0]]);
        let p = oos_place(&[0.0, 1.0, 3.0], &m, 3, 2.0).unwrap();
        assert!(euclid(p, [0.0, 0.0]) < 1e-6);
        assert_eq!(oos_place(&[0.5, 1.0, 3.0], &m, 1, 2.0).unwrap(), [0.0, 0.0]);
        let mid = oos_place(&[1.0, 1.0, 3.0], &m, 2, 2.0).unwrap();
        assert!(euclid(mid, [1.0, 0.0]) < 1e-12);
    }

    #[test]
    fn sampling() {
        let mut b = BTreeMap::new();
        b.insert(("op", 1), (0..3000).collect::<Vec<u64>>());
        assert_eq!(stratified_sample(&b, 60, 4000, 1).len(), 3000);
        let mut one = BTreeMap::new();
        one.insert(("op", 1), (0..100).collect::<Vec<u64>>());
        let s = stratified_sample(&one, 60, 80, 1);
        assert_eq!(s.len(), 60);
        assert_eq!(s, stratified_sample(&one, 60, 80, 1));
    }

    #[test]
    fn robust_scaling() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        let s = robust_minmax(&v);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[100], 1.0);
        assert!((s[50] - 0.5).abs() < 1e-12);
    }
}
