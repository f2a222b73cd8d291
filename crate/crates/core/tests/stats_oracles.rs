use evoscope::stats::{
    mixed_fit, ols_fit, ols_spec, spec_needs_zero_shot, zscore, DescriptorRow, DesignMatrix, MixedDesign, SeKind,
    StatsError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

proptest! {
    #[test]
    fn zscore_has_unit_moments(v in prop::collection::vec(-100.0..100.0f64, 3..50)) {
        prop_assume!(v.iter().any(|x| (x - v[0]).abs() > 1e-6));
        let z = zscore(&v).unwrap();
        let n = z.len() as f64;
        let m = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        prop_assert!(m.abs() < 1e-12);
        prop_assert!((sd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residuals_orthogonal_to_design(seed in any::<u64>(), n in 20usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let x2: Vec<f64> = (0..n).map(|_| normal(&mut rng) * 3.0).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.0 + x1[i] - 0.5 * x2[i] + normal(&mut rng)).collect();
        let cats: Vec<String> = (0..n).map(|i| format!("t{}", i % 3)).collect();
        let d = DesignMatrix::new(y.clone())
            .intercept()
            .column("x1", x1)
            .column("x2", x2)
            .fixed_effects("task", &cats, None)
            .clusters((0..n).map(|i| format!("c{}", i % 4)).collect());
        let fit = ols_fit(&d).unwrap();
        let x = d.x();
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..x.ncols() {
            let dot: f64 = (0..n)
                .map(|i| {
                    let pred: f64 = (0..x.ncols()).map(|k| x[(i, k)] * fit.coef[k]).sum();
                    x[(i, j)] * (y[i] - pred)
                })
                .sum();
            prop_assert!(dot.abs() < 1e-8 * ynorm);
        }
        prop_assert!(fit.r2.unwrap() >= 0.0 && fit.r2.unwrap() <= 1.0);
    }
}

#[test]
fn clustered_errors_exceed_naive_on_correlated_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut clustered, mut naive) = (0.0, 0.0);
    for _ in 0..100 {
        let (groups, per) = (15, 20);
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut c = Vec::new();
        for g in 0..groups {
            // Within-cluster correlation 0.5 in both the regressor and the error.
            let (xg, eg) = (normal(&mut rng), normal(&mut rng));
            for _ in 0..per {
                let xi = 0.5f64.sqrt() * xg + 0.5f64.sqrt() * normal(&mut rng);
                let ei = 0.5f64.sqrt() * eg + 0.5f64.sqrt() * normal(&mut rng);
                x.push(xi);
                y.push(1.0 + 2.0 * xi + ei);
                c.push(format!("g{g}"));
            }
        }
        let fit = ols_fit(&DesignMatrix::new(y).intercept().column("x", x).clusters(c)).unwrap();
        assert_eq!(fit.se_kind, SeKind::Clustered);
        clustered += fit.se[1];
        naive += fit.se_naive[1];
    }
    assert!(clustered > naive, "clustered {clustered} naive {naive}");
}

#[test]
fn single_cluster_falls_back_with_warning() {
    let x: Vec<f64> = (0..30).map(f64::from).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v + (v * 1.7).sin()).collect();
    let fit = ols_fit(&DesignMatrix::new(y).intercept().column("x", x).clusters(vec!["a".into(); 30])).unwrap();
    assert_eq!(fit.se_kind, SeKind::Robust);
    assert!(!fit.warnings.is_empty());
}

fn table(seed: u64, planted: f64) -> Vec<DescriptorRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for op in 0..12 {
        for task in 0..3 {
            let br: f64 = rng.random();
            rows.push(DescriptorRow {
                operator: format!("op{op}"),
                task: format!("task{task}"),
                best_final_perf: planted * br + 0.01 * normal(&mut rng),
                avg_novelty: rng.random(),
                initial_nov: rng.random(),
                avg_breakthrough_rate: br,
                zero_shot_perf: None,
                lrr: rng.random(),
                pcd: rng.random(),
            });
        }
    }
    rows
}

#[test]
fn m6_recovers_planted_slope_sign_and_fit() {
    let rows = table(2, 3.0);
    let fit = ols_spec("M6", &rows).unwrap();
    let (b, se) = fit.coefficient("avg_breakthrough_rate_z").unwrap();
    assert!(b > 0.9 && se < 0.1, "b {b} se {se}");
    // Response is scaled per task, the predictor globally, so the fit is not exact.
    assert!(fit.r2.unwrap() > 0.9, "{fit:?}");
    assert_eq!(fit.groups, 12);
}

#[test]
fn zero_shot_specs_need_the_column() {
    let rows = table(3, 1.0);
    assert!(spec_needs_zero_shot("M3") && !spec_needs_zero_shot("M6"));
    assert_eq!(ols_spec("M3", &rows).unwrap_err(), StatsError::MissingColumn("zero_shot_perf".into()));
    assert_eq!(ols_spec("M9", &rows).unwrap_err(), StatsError::UnknownSpec("M9".into()));
}

#[test]
fn mixed_model_variance_components_are_sane() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut g = Vec::new();
    for k in 0..20 {
        let u = 2.0 * normal(&mut rng);
        for _ in 0..50 {
            let xi = normal(&mut rng);
            x.push(xi);
            y.push(u + xi + normal(&mut rng));
            g.push(format!("g{k}"));
        }
    }
    let md = MixedDesign::new(DesignMatrix::new(y).intercept().column("x", x).clusters(g)).unwrap();
    let fit = mixed_fit(&md).unwrap();
    assert!(fit.converged);
    let (tau2, sigma2) = (fit.tau2.unwrap(), fit.sigma2.unwrap());
    assert!(tau2 > 1.0 && tau2 < 8.0, "tau2 {tau2}");
    assert!((sigma2 - 1.0).abs() < 0.2, "sigma2 {sigma2}");
    assert!(fit.log_likelihood.unwrap().is_finite());
}
