use evoscope::geometry::{mds_fit, oos_place, stress, stratified_sample, MdsConfig, MdsInit};
use proptest::prelude::*;
use std::collections::BTreeMap;

fn euclid(p: &[(f64, f64)]) -> Vec<Vec<f64>> {
    p.iter()
        .map(|a| p.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect())
        .collect()
}

fn cloud() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..15)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stress_never_increases(p in cloud(), seed in 0u64..1000) {
        let ids: Vec<u64> = (0..p.len() as u64).collect();
        let m = mds_fit(&euclid(&p), &ids, &MdsConfig { seed, ..MdsConfig::default() }).unwrap();
        for w in m.stress_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
        prop_assert!(m.coords.iter().all(|c| c[0].is_finite() && c[1].is_finite()));
    }

    #[test]
    fn stress_invariant_under_permutation(p in cloud(), seed in 0u64..1000) {
        let n = p.len();
        let d = euclid(&p);
        let ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
        let perm: Vec<usize> = (0..n).rev().collect();
        let dp: Vec<Vec<f64>> = perm.iter().map(|&i| perm.iter().map(|&j| d[i][j]).collect()).collect();
        let idp: Vec<u64> = perm.iter().map(|&i| ids[i]).collect();
        let cfg = MdsConfig { seed, ..MdsConfig::default() };
        let a = mds_fit(&d, &ids, &cfg).unwrap();
        let b = mds_fit(&dp, &idp, &cfg).unwrap();
        prop_assert!((a.stress - b.stress).abs() <= 1e-9 * a.stress.max(1.0));
    }

    #[test]
    fn placement_inside_neighbour_box(p in cloud(), q in (-5.0..5.0f64, -5.0..5.0f64), k in 1usize..4) {
        let ids: Vec<u64> = (0..p.len() as u64).collect();
        let m = mds_fit(&euclid(&p), &ids, &MdsConfig::default()).unwrap();
        let to_base: Vec<f64> = p.iter().map(|b| ((q.0 - b.0).powi(2) + (q.1 - b.1).powi(2)).sqrt()).collect();
        let k = k.min(p.len());
        let xy = oos_place(&to_base, &m, k, 2.0).unwrap();
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| to_base[a].total_cmp(&to_base[b]).then(a.cmp(&b)));
        let near = &order[..k];
        for axis in 0..2 {
            let lo = near.iter().map(|&i| m.coords[i][axis]).fold(f64::INFINITY, f64::min);
            let hi = near.iter().map(|&i| m.coords[i][axis]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(xy[axis] >= lo - 1e-9 && xy[axis] <= hi + 1e-9);
        }
    }
}

#[test]
fn classical_start_embeds_exact_configurations() {
    let line = vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]];
    let cfg = MdsConfig {
        init: MdsInit::Classical,
        ..MdsConfig::default()
    };
    let m = mds_fit(&line, &[0, 1, 2], &cfg).unwrap();
    assert!(m.stress < 1e-12);
    assert!((stress(&line, &m.coords) - m.stress).abs() < 1e-15);
}

#[test]
fn triangle_from_random_start() {
    let d = euclid(&[(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)]);
    let m = mds_fit(&d, &[0, 1, 2], &MdsConfig::default()).unwrap();
    assert!(m.stress < 1e-6, "stress {}", m.stress);
}

#[test]
fn sampling_caps_buckets_and_is_seeded() {
    let mut b = BTreeMap::new();
    for g in 0..100u64 {
        b.insert(("op", g), (g * 1000..g * 1000 + 90).collect::<Vec<u64>>());
    }
    let s = stratified_sample(&b, 60, 4000, 9);
    assert_eq!(s.len(), 4000);
    assert!(s.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(s, stratified_sample(&b, 60, 4000, 9));
    assert_ne!(s, stratified_sample(&b, 60, 4000, 10));
    let per_bucket = stratified_sample(&b, 30, 3500, 9);
    assert_eq!(per_bucket.len(), 3000);
}
