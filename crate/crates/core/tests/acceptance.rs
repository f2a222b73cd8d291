//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line. Failures are reported, not fatal, unless
//! `EVOSCOPE_STRICT_ACCEPTANCE=1` is set.

use evoscope::evolution::{run_evolution, EvolutionConfig, Individual, Trajectory};
use evoscope::gateway::{zero_shot_best_of_n, BackendReply, ChatRequest, Gateway};
use evoscope::geometry::{mds_fit, MdsConfig, MdsInit};
use evoscope::metrics::{
    local_refinement_rate, parent_child_distance, signatures, spatial_entropy, trajectory_novelty, RunMetrics,
};
use evoscope::operators::templates::Templates;
use evoscope::operators::{Mixed, MutationOperator, OperatorSpec, Shuffle, SubtreeRefiner, TwoOpt};
use evoscope::stats::{
    mixed_fit, mixed_fit_fixed_lambda, ols_fit, ols_spec, DescriptorRow, DesignMatrix, MixedDesign,
};
use evoscope::tasks::{Genome, SymregTask, Task, TaskFamily, Tour, TspTask};
use evoscope::workbench::cmd_run;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- oracles

/// Shortest closed tour by enumerating every permutation with city 0 fixed.
fn brute_force_tsp(dist: &[Vec<f64>]) -> f64 {
    fn rec(dist: &[Vec<f64>], path: &mut Vec<usize>, used: &mut [bool], len: f64, best: &mut f64) {
        let n = dist.len();
        if path.len() == n {
            let total = len + dist[*path.last().unwrap()][path[0]];
            if total < *best {
                *best = total;
            }
            return;
        }
        for c in 1..n {
            if !used[c] {
                let last = *path.last().unwrap();
                used[c] = true;
                path.push(c);
                rec(dist, path, used, len + dist[last][c], best);
                path.pop();
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    let mut used = vec![false; dist.len()];
    used[0] = true;
    rec(dist, &mut vec![0], &mut used, 0.0, &mut best);
    best
}

fn edge_set(t: &[usize]) -> HashSet<(usize, usize)> {
    (0..t.len())
        .map(|i| {
            let (a, b) = (t[i], t[(i + 1) % t.len()]);
            (a.min(b), a.max(b))
        })
        .collect()
}

fn oracle_tour_distance(a: &[usize], b: &[usize]) -> f64 {
    let (ea, eb) = (edge_set(a), edge_set(b));
    1.0 - ea.intersection(&eb).count() as f64 / ea.len() as f64
}

/// Normal equations solved by Gauss-Jordan elimination with partial pivoting.
fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &yi) in x.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * yi;
        }
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

// ------------------------------------------------------------- criteria

fn tsp_config(seed: u64) -> EvolutionConfig {
    let mut cfg = EvolutionConfig::for_family(TaskFamily::Tsp);
    cfg.seed = seed;
    cfg.generations = 30;
    cfg.offspring_per_generation = 10;
    cfg
}

fn criterion_1() -> Outcome {
    let mut hits = 0;
    let mut slowest = 0.0f64;
    for seed in 0..10 {
        let task = TspTask::random(8, seed);
        let optimum = brute_force_tsp(&task.instance.dist);
        let start = Instant::now();
        let traj = run_evolution(&tsp_config(seed), &task, &TwoOpt).expect("run");
        slowest = slowest.max(start.elapsed().as_secs_f64());
        if (-traj.best_final() - optimum).abs() <= 1e-9 * optimum {
            hits += 1;
        }
    }
    outcome(
        hits >= 9 && slowest < 10.0,
        format!("optimum reached in {hits}/10 seeds, slowest run {slowest:.3} s"),
    )
}

fn synthetic_trajectory(seed: u64, task: &TspTask) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = task.instance.n;
    let n_init = 10;
    let generations = 25;
    let per_gen = 10;
    let mut individuals: Vec<Individual> = Vec::new();
    for g in 0..=generations {
        let count = if g == 0 { n_init } else { per_gen };
        for _ in 0..count {
            let id = individuals.len() as u64;
            let valid_ids: Vec<u64> = individuals
                .iter()
                .filter(|i| i.valid && i.generation < g)
                .map(|i| i.id)
                .collect();
            let parent_ids: Vec<u64> = if g == 0 {
                vec![]
            } else {
                (0..rng.random_range(1..=3))
                    .map(|_| valid_ids[rng.random_range(0..valid_ids.len())])
                    .collect()
            };
            let failed = g > 0 && rng.random::<f64>() < 0.1;
            let (genome, valid, fitness) = if failed {
                (None, false, 0.0)
            } else {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                let genome = task.normalize(Genome::Tour(Tour(order)));
                let e = task.evaluate(&genome);
                (Some(genome), e.valid, e.raw_fitness)
            };
            individuals.push(Individual {
                id,
                key: genome.as_ref().map(|g| task.canonical(g)).unwrap_or_default(),
                genome,
                raw_fitness: fitness,
                generation: g,
                parent_ids,
                valid,
                operator_tag: "synthetic".into(),
                failure: None,
                exchange: None,
            });
        }
    }
    let mut config = EvolutionConfig::for_family(TaskFamily::Tsp);
    config.n_init = n_init;
    config.generations = generations;
    config.offspring_per_generation = per_gen;
    Trajectory {
        run_id: format!("synthetic-{seed}"),
        task_id: task.id().to_string(),
        family: TaskFamily::Tsp,
        operator_id: "synthetic".into(),
        config,
        individuals,
        n_initial: n_init,
        generations: vec![],
        exchanges: vec![],
    }
}

fn tour_of(i: &Individual) -> &[usize] {
    &i.genome.as_ref().unwrap().as_tour().unwrap().0
}

fn criterion_2() -> Outcome {
    let mut mismatches = Vec::new();
    let mut min_attempts = usize::MAX;
    for seed in 0..20u64 {
        let task = TspTask::random(12, 100 + seed);
        let traj = synthetic_trajectory(seed, &task);
        min_attempts = min_attempts.min(traj.attempts().len());
        let sigs = signatures(&traj, &task);
        let inds = &traj.individuals;

        let pipeline = trajectory_novelty(&traj, &sigs);
        let mut oracle = Vec::new();
        for a in inds.iter().filter(|a| a.valid && a.generation > 0) {
            let mut best = f64::INFINITY;
            for b in inds.iter().filter(|b| b.valid && b.generation < a.generation) {
                best = best.min(oracle_tour_distance(tour_of(a), tour_of(b)));
            }
            oracle.push((a.id, best));
        }
        let got: Vec<(u64, f64)> = pipeline.iter().map(|r| (r.id, r.raw_novelty)).collect();
        if got.len() != oracle.len()
            || got.iter().zip(&oracle).any(|(g, o)| g.0 != o.0 || g.1.to_bits() != o.1.to_bits())
        {
            mismatches.push(format!("novelty seed {seed}"));
        }

        let (mut valid, mut refined) = (0usize, 0usize);
        let mut per_child = Vec::new();
        for c in inds.iter().filter(|c| c.generation > 0 && c.valid) {
            valid += 1;
            let best_parent = c
                .parent_ids
                .iter()
                .map(|&p| inds[p as usize].raw_fitness)
                .fold(f64::NEG_INFINITY, f64::max);
            if c.raw_fitness > best_parent {
                refined += 1;
            }
            let ds: Vec<f64> = c
                .parent_ids
                .iter()
                .map(|&p| oracle_tour_distance(tour_of(c), tour_of(&inds[p as usize])))
                .collect();
            per_child.push(ds.iter().sum::<f64>() / ds.len() as f64);
        }
        let lrr = refined as f64 / valid as f64;
        let pcd = per_child.iter().sum::<f64>() / per_child.len() as f64;
        if local_refinement_rate(&traj).to_bits() != lrr.to_bits() {
            mismatches.push(format!("LRR seed {seed}"));
        }
        if parent_child_distance(&traj, &sigs).to_bits() != pcd.to_bits() {
            mismatches.push(format!("PCD seed {seed}"));
        }
    }
    outcome(
        mismatches.is_empty() && min_attempts >= 200,
        format!(
            "20 trajectories of >= {min_attempts} attempts, {} mismatches {:?}",
            mismatches.len(),
            mismatches
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut worst_log = 0.0f64;
    for n in [1usize, 2, 8, 64] {
        let d = vec![vec![0.0; n]; n];
        let h = spatial_entropy(&d, &vec![1.0; n], 1.0).unwrap();
        worst_log = worst_log.max((h - (n as f64).ln()).abs());
    }
    let h1 = spatial_entropy(&[vec![0.0]], &[1.0], 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_perm = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..30);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let dist = |p: &[(f64, f64)]| -> Vec<Vec<f64>> {
            p.iter()
                .map(|a| p.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect())
                .collect()
        };
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pp: Vec<(f64, f64)> = perm.iter().map(|&i| pts[i]).collect();
        let wp: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
        for (wa, wb) in [(vec![1.0; n], vec![1.0; n]), (w.clone(), wp)] {
            let a = spatial_entropy(&dist(&pts), &wa, 0.3).unwrap();
            let b = spatial_entropy(&dist(&pp), &wb, 0.3).unwrap();
            worst_perm = worst_perm.max((a - b).abs());
        }
    }
    outcome(
        worst_log <= 1e-10 && h1 == 0.0 && worst_perm <= 1e-12,
        format!("|H - log n| <= {worst_log:.1e}, H(n=1) = {h1}, permutation gap {worst_perm:.1e}"),
    )
}

fn mds_check(d: &[Vec<f64>], cfg: &MdsConfig) -> (f64, f64, bool) {
    let ids: Vec<u64> = (0..d.len() as u64).collect();
    let m = mds_fit(d, &ids, cfg).unwrap();
    let mut worst = 0.0f64;
    for i in 0..d.len() {
        for j in i + 1..d.len() {
            let e = ((m.coords[i][0] - m.coords[j][0]).powi(2) + (m.coords[i][1] - m.coords[j][1]).powi(2)).sqrt();
            worst = worst.max((e - d[i][j]).abs() / d[i][j]);
        }
    }
    let monotone = m.stress_history.windows(2).all(|w| w[1] <= w[0]);
    (m.stress, worst, monotone)
}

fn criterion_4() -> Outcome {
    let line = vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<(f64, f64)> = (0..10).map(|_| (rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0)).collect();
    let planar: Vec<Vec<f64>> = pts
        .iter()
        .map(|a| pts.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect())
        .collect();
    let cfg = MdsConfig::default();
    let (s1, r1, m1) = mds_check(&line, &cfg);
    let (s2, r2, m2) = mds_check(&planar, &cfg);
    // Not part of the verdict: the same fixtures from a classical-scaling start.
    let classical = MdsConfig {
        init: MdsInit::Classical,
        ..cfg
    };
    let (c1, _, _) = mds_check(&line, &classical);
    let (c2, _, _) = mds_check(&planar, &classical);
    outcome(
        s1 < 1e-6 && s2 < 1e-6 && r1 <= 1e-3 && r2 <= 1e-3 && m1 && m2,
        format!(
            "random start: collinear stress {s1:.2e} rel err {r1:.1e}, planar stress {s2:.2e} rel err {r2:.1e}, monotone {}; \
             classical start (info): stress {c1:.1e} / {c2:.1e}",
            m1 && m2
        ),
    )
}

fn descriptor_table(rng: &mut ChaCha8Rng) -> Vec<DescriptorRow> {
    let mut rows = Vec::new();
    for op in 0..15 {
        for task in 0..4 {
            let zs: f64 = StandardNormal.sample(rng);
            let br: f64 = rng.random();
            let noise: f64 = StandardNormal.sample(rng);
            rows.push(DescriptorRow {
                operator: format!("op{op}"),
                task: format!("task{task}"),
                best_final_perf: 0.5 * zs + br + 0.5 * noise + task as f64,
                avg_novelty: rng.random(),
                initial_nov: rng.random(),
                avg_breakthrough_rate: br,
                zero_shot_perf: Some(zs * (task + 1) as f64),
                lrr: rng.random(),
                pcd: rng.random(),
            });
        }
    }
    rows
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = 200;
        let p = 4;
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut row = vec![1.0];
                row.extend((1..p).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)));
                row
            })
            .collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|r| r.iter().enumerate().map(|(k, v)| (k as f64 - 1.5) * v).sum::<f64>() + Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let mut d = DesignMatrix::new(y.clone()).intercept();
        for k in 1..p {
            d = d.column(format!("x{k}"), xs.iter().map(|r| r[k]).collect());
        }
        d = d.clusters((0..n).map(|i| format!("c{}", i % 10)).collect());
        let fit = ols_fit(&d).unwrap();
        let oracle = normal_equations(&xs, &y);
        for (a, b) in fit.coef.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    let mut nested = 0;
    let tables = 20;
    for _ in 0..tables {
        let rows = descriptor_table(&mut rng);
        let r7 = ols_spec("M7", &rows).unwrap().r2.unwrap();
        let r8 = ols_spec("M8", &rows).unwrap().r2.unwrap();
        if r8 >= r7 {
            nested += 1;
        }
    }
    outcome(
        worst <= 1e-8 && nested == tables,
        format!("max |beta - oracle| = {worst:.1e} over 50 problems; R2(M8) >= R2(M7) on {nested}/{tables} tables"),
    )
}

fn simulate_mixed(rng: &mut ChaCha8Rng, groups: usize, rows: usize, tau2: f64) -> DesignMatrix {
    let beta = [0.5, -0.2];
    let u = Normal::new(0.0, tau2.sqrt()).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut g = Vec::new();
    for k in 0..groups {
        let uk = if tau2 > 0.0 { u.sample(rng) } else { 0.0 };
        for _ in 0..rows {
            let xi: f64 = StandardNormal.sample(rng);
            let e: f64 = StandardNormal.sample(rng);
            x.push(xi);
            y.push(beta[0] + beta[1] * xi + uk + e);
            g.push(format!("g{k}"));
        }
    }
    DesignMatrix::new(y).intercept().column("x", x).clusters(g)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let truth = [0.5, -0.2];
    let mut covered = 0;
    for _ in 0..100 {
        let md = MixedDesign::new(simulate_mixed(&mut rng, 15, 238, 0.25)).unwrap();
        let fit = mixed_fit(&md).unwrap();
        if (0..2).all(|k| (fit.coef[k] - truth[k]).abs() <= 3.0 * fit.se[k]) {
            covered += 1;
        }
    }
    // A single pre-committed null dataset (seed 0).
    let mut null_rng = ChaCha8Rng::seed_from_u64(0);
    let null = mixed_fit(&MixedDesign::new(simulate_mixed(&mut null_rng, 15, 200, 0.0)).unwrap()).unwrap();
    let tau0 = null.tau2.unwrap();
    // Reported for context only: how often the null fit lands on the boundary.
    let mut boundary = 0;
    for s in 1..=100 {
        let mut r = ChaCha8Rng::seed_from_u64(s);
        let f = mixed_fit(&MixedDesign::new(simulate_mixed(&mut r, 15, 200, 0.0)).unwrap()).unwrap();
        if f.tau2.unwrap() < 1e-4 {
            boundary += 1;
        }
    }
    let d = simulate_mixed(&mut rng, 15, 238, 0.25);
    let ols = ols_fit(&d).unwrap();
    let md = MixedDesign::new(d).unwrap();
    let lam0 = mixed_fit_fixed_lambda(&md, 0.0).unwrap();
    let gap = ols.coef.iter().zip(&lam0.coef).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        covered >= 95 && tau0 < 1e-4 && gap <= 1e-8,
        format!(
            "coverage {covered}/100; null tau2 {tau0:.2e} (boundary in {boundary}/100 other null draws); lambda=0 gap {gap:.1e}"
        ),
    )
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (m(&rx), m(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let rhos = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut fit = Vec::new();
    let mut lrr = Vec::new();
    for &rho in &rhos {
        let op = Mixed {
            strong: Box::new(TwoOpt),
            weak: Box::new(Shuffle),
            rho,
        };
        let (mut f, mut l) = (0.0, 0.0);
        for seed in 0..10 {
            let task = TspTask::random(30, seed);
            let traj = run_evolution(&tsp_config(seed), &task, &op).expect("run");
            f += traj.best_final() / 10.0;
            l += local_refinement_rate(&traj) / 10.0;
        }
        fit.push(f);
        lrr.push(l);
    }
    let rho_s = spearman(&rhos, &fit);
    let lrr_ok = lrr.windows(2).all(|w| w[1] <= w[0]);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        rho_s <= -0.9 && lrr_ok && secs < 300.0,
        format!(
            "spearman {rho_s:.3}; mean fitness {:?}; mean LRR {:?}; {secs:.1} s",
            fit.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
            lrr.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn grid_cell(task: &dyn Task, cfg: &EvolutionConfig, strong: &dyn MutationOperator) -> (bool, String) {
    let mut stats = Vec::new();
    for (name, op) in [("strong", strong), ("weak", &Shuffle as &dyn MutationOperator)] {
        let (mut rate, mut best) = (0.0, 0.0);
        for seed in 0..5 {
            let mut c = cfg.clone();
            c.seed = seed;
            let traj = run_evolution(&c, task, op).expect("run");
            rate += RunMetrics::compute(&traj, task).breakthroughs.rate / 5.0;
            best += traj.best_final() / 5.0;
        }
        stats.push((name, rate, best));
    }
    let (hi, lo) = if stats[0].1 >= stats[1].1 { (&stats[0], &stats[1]) } else { (&stats[1], &stats[0]) };
    let ok = stats[0].1 != stats[1].1 && hi.2 > lo.2;
    (
        ok,
        format!("{}: {} rate {:.3} best {:.4} vs {} rate {:.3} best {:.4}", task.id(), hi.0, hi.1, hi.2, lo.0, lo.1, lo.2),
    )
}

fn criterion_8() -> Outcome {
    let tsp = TspTask::random(30, 8);
    let sym = SymregTask::oscillator1(8);
    let (a, da) = grid_cell(&tsp, &tsp_config(0), &TwoOpt);
    let (b, db) = grid_cell(&sym, &EvolutionConfig::for_family(TaskFamily::Symreg), &SubtreeRefiner);
    outcome(a && b, format!("{da}; {db}"))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "repetitions = 2\n[task]\nfamily = \"tsp\"\nseed = 5\nsize = 12\n[operator]\nkind = \"scripted-2opt\"\n[evolution]\ngenerations = 10\n",
    )
    .unwrap();
    let a = cmd_run(&cfg, Some(&dir.path().join("a")), None).unwrap();
    let b = cmd_run(&cfg, Some(&dir.path().join("b")), None).unwrap();
    let mut identical = a.manifest == b.manifest;
    for r in &a.manifest.runs {
        let fa = std::fs::read(dir.path().join("a").join(&r.file)).unwrap();
        let fb = std::fs::read(dir.path().join("b").join(&r.file)).unwrap();
        identical &= fa == fb;
    }
    let ma = std::fs::read(dir.path().join("a/manifest.json")).unwrap();
    let mb = std::fs::read(dir.path().join("b/manifest.json")).unwrap();
    identical &= ma == mb;

    // Offline mock-gateway run through the whole pipeline.
    let mock = dir.path().join("mock.jsonl");
    std::fs::write(&mock, "{\"reply\": \"[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]\"}\n").unwrap();
    let llm = dir.path().join("llm.toml");
    std::fs::write(
        &llm,
        "repetitions = 1\n[task]\nfamily = \"tsp\"\nseed = 5\nsize = 12\n[operator]\nkind = \"llm\"\nmodel = \"mock-model\"\n[evolution]\ngenerations = 3\n[gateway]\nmock = \"mock.jsonl\"\n",
    )
    .unwrap();
    let offline = cmd_run(&llm, Some(&dir.path().join("llm")), None)
        .map(|s| s.manifest.runs[0].model_calls)
        .and_then(|calls| {
            evoscope::workbench::cmd_analyze(
                &[format!("{}/llm/*.jsonl", dir.path().display())],
                &dir.path().join("analysis"),
                &[],
            )
            .map(|_| calls)
        });
    let offline_ok = matches!(offline, Ok(30));
    outcome(
        identical && offline_ok,
        format!(
            "{} trajectory files byte-identical: {identical}; offline mock pipeline: {:?}",
            a.manifest.runs.len(),
            offline.map_err(|e| e.to_string())
        ),
    )
}

fn criterion_10() -> Outcome {
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let backend = move |req: &ChatRequest| {
        let k = counter.fetch_add(1, Ordering::SeqCst);
        let mut order: Vec<usize> = (0..10).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(k as u64 + req.user.len() as u64));
        Ok(BackendReply {
            text: format!("{order:?}"),
            prompt_tokens: Some(10),
            completion_tokens: Some(5),
        })
    };
    let gateway = Arc::new(Gateway::new(Box::new(backend)));
    let op = OperatorSpec::Llm {
        model: "mock".into(),
        temperature: 0.7,
    }
    .build(Some(gateway.clone()), None)
    .unwrap();
    let task = TspTask::random(10, 1);
    let traj = run_evolution(&tsp_config(1), &task, op.as_ref()).expect("run");
    let run_calls = calls.load(Ordering::SeqCst);
    calls.store(0, Ordering::SeqCst);
    let zs = zero_shot_best_of_n(&gateway, &task, "mock", &Templates::for_family(TaskFamily::Tsp));
    let zs_calls = calls.load(Ordering::SeqCst);
    outcome(
        run_calls == 300 && traj.exchanges.len() == 300 && zs_calls == 12 && zs.exchanges.len() == 12,
        format!("run calls {run_calls} (ledger {}), zero-shot calls {zs_calls}", traj.exchanges.len()),
    )
}

fn main() {
    // `cargo test` passes harness flags; a name filter selects criteria.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 tsp8 optimum with 2-opt", criterion_1),
        ("2 metric oracles bit-equal", criterion_2),
        ("3 entropy closed forms", criterion_3),
        ("4 mds fidelity", criterion_4),
        ("5 ols oracle and nesting", criterion_5),
        ("6 mixed model recovery", criterion_6),
        ("7 mixing mechanism", criterion_7),
        ("8 breakthrough direction", criterion_8),
        ("9 determinism and offline suite", criterion_9),
        ("10 call budget", criterion_10),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let o = f();
        println!(
            "criterion {name}: {} ({}) [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 && std::env::var("EVOSCOPE_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
