//! Acceptance suite. Runs every criterion in sequence (timings stay
//! meaningful on a single core), prints one PASS/FAIL line each and exits
//! nonzero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use rand::Rng;

use spikelasso::bench::{
    choose_lambda, f_plateau, mean_by, method_slopes, run_bench, run_grid_metrics, run_method, run_sync_sweep,
    summarize, BenchGrid, GridMetricsConfig, Method, RunStatus, SyncSweepConfig,
};
use spikelasso::diagnostics::assumption_params;
use spikelasso::metrics::{conv_performance, f_measure};
use spikelasso::simulator::{gen_spike_train, measure_temporal_overlaps, simulate, Geometry, Instance, SimConfig};
use spikelasso::{
    adjoint_apply, forward_model, gram_band, kkt_check, solve_clustered, solve_sliding, solve_subproblem,
    solve_working_set, ClusterSolver, LassoConfig, SparseActivation, Spike, Variant,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Same support and amplitudes within `tol`.
fn same_solution(a: &SparseActivation, b: &SparseActivation, tol: f64) -> bool {
    a.support() == b.support() && a.max_abs_diff(b) <= tol
}

fn refractory_ok(inst: &Instance) -> bool {
    let l = inst.config.shape_len;
    let mut last = vec![None; inst.truth.n_neurons()];
    inst.truth.entries().iter().all(|s| {
        let ok = last[s.neuron].map_or(true, |p: usize| s.time - p > l);
        last[s.neuron] = Some(s.time);
        ok
    })
}

fn cfg_for(inst: &Instance, alpha: f64) -> LassoConfig {
    let shapes = &inst.shapes.shapes;
    let (lambda, _) =
        choose_lambda(shapes, inst.config.noise_sigma, inst.config.n_samples, inst.config.amplitude_range.0, alpha)
            .unwrap();
    LassoConfig::new(lambda, LassoConfig::default_kkt_tol(assumption_params(shapes).c_upper)).unwrap()
}

/// Shared state: criterion 2 audits the outputs of criterion 1.
#[derive(Default)]
struct Audit {
    runs: usize,
    failures: Vec<String>,
}

impl Audit {
    fn record(&mut self, what: &str, inst: &Instance, a: &SparseActivation, cfg: &LassoConfig) {
        self.runs += 1;
        let rep = kkt_check(&inst.shapes.shapes, &inst.signal, a, cfg, None).unwrap();
        if !rep.passes(cfg) {
            self.failures.push(format!("{what} seed {}: {rep:?}", inst.config.seed));
        }
    }
}

fn exactness(audit: &mut Audit) -> Outcome {
    let (mut worst, mut slowest, mut bad) = (0.0f64, Duration::ZERO, Vec::new());
    for seed in 0..50 {
        let inst = simulate(&SimConfig { n_neurons: 5, n_electrodes: 4, n_samples: 20_000, shape_len: 30, noise_sigma: 0.05, seed, ..SimConfig::default() })
            .unwrap();
        let cfg = cfg_for(&inst, 0.05);
        let start = Instant::now();
        let sliding = solve_sliding(&inst.shapes.shapes, &inst.signal, &cfg).unwrap().solution;
        let elapsed = start.elapsed();
        let (global, _) =
            solve_working_set(&inst.shapes.shapes, &inst.signal, &cfg, None, Variant::Convolutional, None).unwrap();
        slowest = slowest.max(elapsed);
        worst = worst.max(sliding.max_abs_diff(&global));
        if !same_solution(&sliding, &global, 1e-5) || elapsed >= Duration::from_secs(5) {
            bad.push(seed);
        }
        audit.record("sliding", &inst, &sliding, &cfg);
        audit.record("ws_conv", &inst, &global, &cfg);
    }
    check(
        bad.is_empty(),
        format!("50 instances, max amplitude gap {worst:.2e}, slowest sliding solve {slowest:.2?}, mismatched seeds {bad:?}"),
    )
}

fn certificates(audit: &mut Audit) -> Outcome {
    // every method on smaller instances, on top of the criterion-1 outputs
    for seed in 0..10 {
        let inst = simulate(&SimConfig { n_neurons: 3, n_samples: 2_000, noise_sigma: 0.05, seed, ..SimConfig::default() }).unwrap();
        let cfg = cfg_for(&inst, 0.05);
        for m in Method::ALL {
            let a = run_method(m, &inst.shapes.shapes, &inst.signal, &cfg, 1 << 31).unwrap();
            audit.record(m.name(), &inst, &a, &cfg);
        }
        for solver in [ClusterSolver::Sliding, ClusterSolver::WorkingSet] {
            let a = solve_clustered(&inst.shapes.shapes, &inst.signal, &cfg, solver).unwrap();
            audit.record("clustered", &inst, &a, &cfg);
        }
    }
    check(
        audit.failures.is_empty(),
        format!("{} of {} outputs certified {:?}", audit.runs - audit.failures.len(), audit.runs, audit.failures),
    )
}

fn scaling() -> Outcome {
    let start = Instant::now();
    let grid = BenchGrid { methods: vec![Method::Sliding, Method::WsConv], ..BenchGrid::default() };
    let records = run_bench(&grid, |_| {}).unwrap();
    let elapsed = start.elapsed();
    let failed = records.iter().filter(|r| r.status != RunStatus::Ok).count();
    let slopes = method_slopes(&summarize(&records));
    let slope = |m: Method| slopes.iter().find(|(x, _)| *x == m).and_then(|(_, s)| *s);
    let (s, w) = (slope(Method::Sliding), slope(Method::WsConv));
    let ok = match (s, w) {
        (Some(s), Some(w)) => (0.8..=1.3).contains(&s) && w >= s + 0.5,
        _ => false,
    };
    check(
        ok && failed == 0 && elapsed < Duration::from_secs(1800),
        format!("slopes sliding {s:?}, ws_conv {w:?}; {} runs, {failed} failed, wall {elapsed:.1?}", records.len()),
    )
}

fn plateau() -> Outcome {
    let cfg = GridMetricsConfig::default();
    let rows = run_grid_metrics(&cfg).unwrap();
    let width = |snr: f64| f_plateau(&rows, &cfg.lambdas, snr, 0.95).map(|(lo, hi)| (lo, hi, hi / lo));
    let mut detail = Vec::new();
    let mut ok = true;
    let high: Vec<f64> = cfg.snr_db.iter().copied().filter(|&s| s >= 20.0).collect();
    let mut narrowest_high = f64::INFINITY;
    for &s in &high {
        let w = width(s);
        detail.push(format!("{s} dB: {w:?}"));
        let factor = w.map_or(0.0, |w| w.2);
        ok &= factor >= 4.0 * (1.0 - 1e-9);
        narrowest_high = narrowest_high.min(factor);
    }
    for &s in cfg.snr_db.iter().filter(|&&s| s < 20.0) {
        let w = width(s);
        detail.push(format!("{s} dB: {w:?}"));
        ok &= w.map_or(true, |w| w.2 < narrowest_high);
    }
    check(ok && !high.is_empty(), detail.join("; "))
}

fn synchronization() -> Outcome {
    let cfg = SyncSweepConfig::default();
    let rows = run_sync_sweep(&cfg).unwrap();
    let mean = |method: &str, sync: f64| {
        mean_by(&rows, |r| r.method == method && r.sync_fraction == sync, |r| r.f).unwrap()
    };
    let first = cfg.sync_fractions[0];
    let last = *cfg.sync_fractions.last().unwrap();
    let lasso_drop = cfg.sync_fractions.iter().map(|&s| mean("lasso", first) - mean("lasso", s)).fold(0.0, f64::max);
    let centroid_drop = mean("centroid", first) - mean("centroid", last);
    check(
        lasso_drop <= 0.05 && centroid_drop >= 0.2,
        format!(
            "lasso F {:.3} -> {:.3} (largest drop {lasso_drop:.3}), centroid F {:.3} -> {:.3} (drop {centroid_drop:.3}), {} seeds",
            mean("lasso", first),
            mean("lasso", last),
            mean("centroid", first),
            mean("centroid", last),
            cfg.seeds.len()
        ),
    )
}

fn oracles() -> Outcome {
    let mut worst = [0.0f64; 5];
    for seed in 0..200 {
        let mut r = rng(seed);
        let (n, e, l) = (r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=8));
        let t = r.gen_range(2 * l + 2..=100);
        let shapes = rand_bank(&mut r, n, e, l, 0.3);
        let dh = DenseH::new(&shapes, t);
        let band = gram_band(&shapes);
        for a in 0..n {
            for b in 0..n {
                for lag in -(l as isize)..=l as isize {
                    let want = if lag.unsigned_abs() < l { dh.gram(a, l, b, (l as isize + lag) as usize) } else { 0.0 };
                    worst[0] = worst[0].max((band.get(a, b, lag) - want).abs());
                }
            }
        }
        let k = r.gen_range(0..6);
        let act = rand_act(&mut r, n, t, k);
        let y = rand_signal(&mut r, e, t);
        worst[1] = worst[1].max(max_diff(&adjoint_apply(&shapes, &y).unwrap().data, dh.adjoint(&y).as_slice()));
        worst[2] = worst[2].max(max_diff(forward_model(&shapes, &act, t).unwrap().data(), dh.forward(&act).as_slice()));
        let lambda = r.gen_range(0.05..1.0);
        let cfg = LassoConfig::new(lambda, 1e-9).unwrap();
        let rep = kkt_check(&shapes, &y, &act, &cfg, None).unwrap();
        let (viol, _, dev) = dh.kkt(&y, &act, lambda);
        worst[3] = worst[3].max((rep.max_violation - viol).abs()).max((rep.max_support_deviation - dev).abs());
    }
    for seed in 0..100 {
        let mut r = rng(10_000 + seed);
        let (n, t) = (2, 50);
        let shapes = rand_bank(&mut r, n, 2, 4, 0.0);
        let dh = DenseH::new(&shapes, t);
        let m = r.gen_range(1..=5);
        let centre = r.gen_range(5..40);
        let mut cols = std::collections::BTreeSet::new();
        while cols.len() < m {
            cols.insert((r.gen_range(0..n), centre + r.gen_range(0..6)));
        }
        let cols: Vec<_> = cols.into_iter().collect();
        let truth = SparseActivation::from_unsorted(
            n,
            t,
            cols.iter().map(|&(neuron, time)| Spike { neuron, time, amplitude: r.gen_range(-1.5..1.5) }).collect(),
        )
        .unwrap();
        let mut y = forward_model(&shapes, &truth, t).unwrap();
        y.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.1..0.1));
        let lambda = r.gen_range(0.01..0.8);
        let cfg = LassoConfig::new(lambda, 1e-9).unwrap();
        let got = solve_subproblem(&shapes, &y, &cols, &cfg, &SparseActivation::empty(n, t)).unwrap();
        let (want, _) = sign_pattern_qp(&dh, &y, &cols, lambda);
        for (i, &(a, b)) in cols.iter().enumerate() {
            worst[4] = worst[4].max((got.get(a, b) - want[i]).abs());
        }
    }
    let ok = worst[..4].iter().all(|&w| w <= 1e-9) && worst[4] <= 1e-8;
    check(
        ok,
        format!(
            "gram {:.1e}, adjoint {:.1e}, forward {:.1e}, kkt {:.1e} on 200 instances; subproblem vs QP {:.1e} on 100",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

fn decomposition() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    // separable lattices: detection radius below half the pitch
    let mut clusters = 0;
    for seed in 0..20 {
        let inst = simulate(&SimConfig {
            n_electrodes: 16,
            n_samples: 5_000,
            geometry: Some(Geometry { pitch: 1.0, radius: 0.45, intensity: 1.5 }),
            noise_sigma: 0.05,
            seed,
            ..SimConfig::default()
        })
        .unwrap();
        let cfg = cfg_for(&inst, 0.05);
        let whole = solve_sliding(&inst.shapes.shapes, &inst.signal, &cfg).unwrap().solution;
        for solver in [ClusterSolver::Sliding, ClusterSolver::WorkingSet] {
            let c = solve_clustered(&inst.shapes.shapes, &inst.signal, &cfg, solver).unwrap();
            ok &= same_solution(&c, &whole, 1e-5);
        }
        clusters += spikelasso::cluster_neurons(&inst.shapes.shapes).len();
        ok &= refractory_ok(&inst);
    }
    notes.push(format!("clustered == whole on 20 lattices ({clusters} clusters)"));
    // refractory gap on dense, synchronized trains
    let mut trains = 0;
    for seed in 0..100 {
        let inst = simulate(&SimConfig { n_samples: 20_000, firing_prob: 0.2, sync_fraction: 0.5, seed, ..SimConfig::default() }).unwrap();
        ok &= refractory_ok(&inst);
        trains += 1;
    }
    notes.push(format!("refractory gap held on {trains} dense trains"));
    // temporal overlaps, ratio test at p * 4l = 1.2
    let grid = [10_000usize, 100_000, 1_000_000];
    let longest = |l: usize, p: f64, t: usize| {
        (0..10)
            .map(|seed| {
                let c = SimConfig { n_samples: t, shape_len: l, firing_prob: p, seed, ..SimConfig::default() };
                measure_temporal_overlaps(&gen_spike_train(&c).unwrap(), 4 * l).into_iter().max().unwrap_or(0) as f64
            })
            .sum::<f64>()
            / 10.0
    };
    let m: Vec<f64> = grid.iter().map(|&t| longest(10, 0.03, t)).collect();
    for i in 1..grid.len() {
        ok &= m[i] / m[0] <= 1.5 * (grid[i] as f64).ln() / (grid[0] as f64).ln();
    }
    notes.push(format!("longest overlap (l=10, p=0.03) {m:?}"));
    let d: Vec<f64> = grid.iter().map(|&t| longest(30, 0.01, t)).collect();
    notes.push(format!("[info] l=30, p=0.01: {d:?}"));
    check(ok, notes.join("; "))
}

fn metric_identities() -> Outcome {
    let mut ok = true;
    for seed in 0..500 {
        let mut r = rng(seed);
        let (n, t) = (r.gen_range(1..=4), r.gen_range(10..2_000));
        let k = r.gen_range(0..40);
        let x = rand_act(&mut r, n, t, k);
        ok &= f_measure(&x, &x, 0).unwrap().f == 1.0;
        let s = r.gen_range(1..50);
        ok &= conv_performance(&x, &x, s).unwrap() == 1.0;
        let pos = SparseActivation::from_unsorted(
            n,
            t,
            x.entries().iter().map(|sp| Spike { amplitude: sp.amplitude.abs(), ..*sp }).collect(),
        )
        .unwrap();
        if !pos.is_empty() {
            ok &= conv_performance(&pos, &SparseActivation::empty(n, t), s).unwrap() == 0.0;
        }
    }
    check(ok, "500 random activations, F(x, x) = 1, CP(x, x) = 1, CP(x, 0) = 0 compared with ==".into())
}

fn main() {
    let mut audit = Audit::default();
    let started = Instant::now();
    let results: Vec<(&str, Outcome)> = vec![
        ("1 exactness", exactness(&mut audit)),
        ("2 certificates", certificates(&mut audit)),
        ("3 scaling", scaling()),
        ("4 plateau", plateau()),
        ("5 synchronization", synchronization()),
        ("6 oracles", oracles()),
        ("7 decomposition", decomposition()),
        ("8 metric identities", metric_identities()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => println!("criterion {name}: PASS ({d})"),
            Err(d) => {
                failed += 1;
                println!("criterion {name}: FAIL ({d})")
            }
        }
    }
    println!("acceptance: {} of {} passed in {:.1?}", results.len() - failed, results.len(), started.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
