//! Timing grids over the four solvers and the recovery-quality sweeps.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dense::DEFAULT_MEMORY_CAP;
use crate::diagnostics::{assumption_params, lambda_range, noise_quantile};
use crate::error::{Error, Result};
use crate::lasso::{kkt_check, LassoConfig};
use crate::metrics::{conv_performance, f_measure, nearest_centroid_assign, sigma_for_snr};
use crate::pool::map_ordered;
use crate::signal::{MultichannelSignal, ShapeBank, SparseActivation, Spike};
use crate::simulator::{gen_shapes, simulate, Instance, SimConfig};
use crate::sliding::solve_sliding;
use crate::working_set::{solve_global, solve_working_set, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Global,
    WsNaive,
    WsConv,
    Sliding,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Global, Method::WsNaive, Method::WsConv, Method::Sliding];

    pub fn name(self) -> &'static str {
        match self {
            Method::Global => "global",
            Method::WsNaive => "ws_naive",
            Method::WsConv => "ws_conv",
            Method::Sliding => "sliding",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (global, ws_naive, ws_conv, sliding)")))
    }
}

/// Runs one solver on the whole signal.
pub fn run_method(
    method: Method,
    shapes: &ShapeBank,
    y: &MultichannelSignal,
    cfg: &LassoConfig,
    memory_cap: u64,
) -> Result<SparseActivation> {
    match method {
        Method::Global => solve_global(shapes, y, cfg, memory_cap),
        Method::WsNaive => {
            let solver = crate::working_set::WorkingSetSolver::new(shapes, Variant::Naive).with_memory_cap(memory_cap);
            Ok(solver.solve(y, cfg, None, None)?.solution)
        }
        Method::WsConv => Ok(solve_working_set(shapes, y, cfg, None, Variant::Convolutional, None)?.0),
        Method::Sliding => Ok(solve_sliding(shapes, y, cfg)?.solution),
    }
}

/// SHA-256 over the sorted support `(neuron, time)`; amplitudes are left
/// out so solvers agreeing up to tolerance hash alike.
pub fn solution_hash(a: &SparseActivation) -> String {
    let mut h = Sha256::new();
    h.update((a.n_neurons() as u64).to_le_bytes());
    h.update((a.n_samples() as u64).to_le_bytes());
    for (n, t) in a.support() {
        h.update((n as u64).to_le_bytes());
        h.update((t as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// How `lambda` was picked for an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSource {
    /// Midpoint of the admissible range.
    Range,
    /// Twice the noise quantile, used when the range is empty.
    TwiceQuantile,
}

/// `lambda` for an instance: the midpoint of the admissible range when it
/// exists, else `2 z_alpha`.
pub fn choose_lambda(
    shapes: &ShapeBank,
    sigma: f64,
    n_samples: usize,
    a_min: f64,
    alpha: f64,
) -> Result<(f64, LambdaSource)> {
    let p = assumption_params(shapes);
    let z = noise_quantile(sigma, p.c_upper, shapes.n_neurons(), n_samples, alpha)?;
    let r = lambda_range(&p, z, shapes.n_neurons() as f64, 0.0, a_min)?;
    match (r.feasible, r.lambda_min, r.lambda_max) {
        (true, Some(lo), Some(hi)) => Ok((0.5 * (lo + hi), LambdaSource::Range)),
        _ if z > 0.0 => Ok((2.0 * z, LambdaSource::TwiceQuantile)),
        _ => Err(Error::Domain("noise-free instance with an empty lambda range".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    CapacityRefusal,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    #[serde(rename = "T")]
    pub n_samples: usize,
    #[serde(rename = "N")]
    pub n_neurons: usize,
    #[serde(rename = "E")]
    pub n_electrodes: usize,
    #[serde(rename = "l")]
    pub shape_len: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub seed: u64,
    pub status: RunStatus,
    /// Zero unless the run completed.
    pub wall_ns: u64,
    pub peak_note: Option<String>,
    pub solution_hash: Option<String>,
    pub kkt_max_violation: Option<f64>,
    pub support_size: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchGrid {
    pub base: SimConfig,
    pub sizes: Vec<usize>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub memory_cap: u64,
    pub alpha: f64,
    /// Run and discard one solve per (method, T) before timing.
    pub warmup: bool,
}

impl Default for BenchGrid {
    fn default() -> Self {
        BenchGrid {
            base: SimConfig {
                n_neurons: 2,
                n_electrodes: 4,
                shape_len: 30,
                firing_prob: 1e-4,
                noise_sigma: 0.05,
                ..SimConfig::default()
            },
            sizes: vec![10_000, 30_000, 100_000, 300_000, 1_000_000],
            methods: Method::ALL.to_vec(),
            seeds: (0..10).collect(),
            memory_cap: DEFAULT_MEMORY_CAP,
            alpha: 0.05,
            warmup: true,
        }
    }
}

fn instance(base: &SimConfig, t: usize, seed: u64) -> Result<Instance> {
    simulate(&SimConfig {
        n_samples: t,
        seed,
        ..base.clone()
    })
}

/// Runs every (T, seed, method) cell in grid order, handing each record to
/// `sink` as soon as it exists.
pub fn run_bench(grid: &BenchGrid, mut sink: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for &t in &grid.sizes {
        for (si, &seed) in grid.seeds.iter().enumerate() {
            let inst = instance(&grid.base, t, seed)?;
            let shapes = &inst.shapes.shapes;
            let (lambda, _) = choose_lambda(
                shapes,
                grid.base.noise_sigma,
                t,
                grid.base.amplitude_range.0,
                grid.alpha,
            )?;
            let p = assumption_params(shapes);
            let cfg = LassoConfig::new(lambda, LassoConfig::default_kkt_tol(p.c_upper))?;
            for &method in &grid.methods {
                if grid.warmup && si == 0 {
                    let _ = run_method(method, shapes, &inst.signal, &cfg, grid.memory_cap);
                }
                let rec = bench_one(method, &inst, &cfg, grid.memory_cap);
                sink(&rec);
                out.push(rec);
            }
        }
    }
    Ok(out)
}

fn bench_one(method: Method, inst: &Instance, cfg: &LassoConfig, memory_cap: u64) -> BenchRecord {
    let shapes = &inst.shapes.shapes;
    let mut rec = BenchRecord {
        method,
        n_samples: inst.signal.n_samples(),
        n_neurons: shapes.n_neurons(),
        n_electrodes: shapes.n_electrodes(),
        shape_len: shapes.shape_len(),
        lambda: cfg.lambda,
        sigma: inst.config.noise_sigma,
        seed: inst.config.seed,
        status: RunStatus::Ok,
        wall_ns: 0,
        peak_note: None,
        solution_hash: None,
        kkt_max_violation: None,
        support_size: None,
        error: None,
    };
    let start = Instant::now();
    match run_method(method, shapes, &inst.signal, cfg, memory_cap) {
        Ok(a) => {
            rec.wall_ns = (start.elapsed().as_nanos() as u64).max(1);
            rec.solution_hash = Some(solution_hash(&a));
            rec.support_size = Some(a.len());
            match kkt_check(shapes, &inst.signal, &a, cfg, None) {
                Ok(k) => rec.kkt_max_violation = Some(k.max_violation),
                Err(e) => rec.error = Some(e.to_string()),
            }
        }
        Err(e) => {
            if matches!(e.root(), Error::Capacity(_)) {
                rec.status = RunStatus::CapacityRefusal;
                rec.peak_note = Some(e.to_string());
            } else {
                rec.status = RunStatus::Failed;
                rec.error = Some(e.to_string());
            }
        }
    }
    rec
}

pub fn write_jsonl<W: Write, T: Serialize>(rows: &[T], mut out: W) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    #[serde(rename = "T")]
    pub n_samples: usize,
    pub runs: usize,
    pub refusals: usize,
    pub failures: usize,
    pub median_ns: Option<f64>,
    pub p20_ns: Option<f64>,
    pub p80_ns: Option<f64>,
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Per (method, T) timing percentiles over completed runs, in first-seen order.
pub fn summarize(records: &[BenchRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, usize)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.method, r.n_samples)) {
            keys.push((r.method, r.n_samples));
        }
    }
    keys.into_iter()
        .map(|(m, t)| {
            let cell: Vec<&BenchRecord> = records.iter().filter(|r| r.method == m && r.n_samples == t).collect();
            let mut times: Vec<f64> = cell
                .iter()
                .filter(|r| r.status == RunStatus::Ok)
                .map(|r| r.wall_ns as f64)
                .collect();
            times.sort_by(f64::total_cmp);
            SummaryRow {
                method: m,
                n_samples: t,
                runs: times.len(),
                refusals: cell.iter().filter(|r| r.status == RunStatus::CapacityRefusal).count(),
                failures: cell.iter().filter(|r| r.status == RunStatus::Failed).count(),
                median_ns: percentile(&times, 0.5),
                p20_ns: percentile(&times, 0.2),
                p80_ns: percentile(&times, 0.8),
            }
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Fitted median-runtime slope per method.
pub fn method_slopes(summary: &[SummaryRow]) -> Vec<(Method, Option<f64>)> {
    let mut methods: Vec<Method> = summary.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    methods
        .into_iter()
        .map(|m| {
            let pts: Vec<(f64, f64)> = summary
                .iter()
                .filter(|r| r.method == m)
                .filter_map(|r| r.median_ns.map(|v| (r.n_samples as f64, v)))
                .collect();
            (m, loglog_slope(&pts))
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(summary: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in summary {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// One cell of a recovery-quality sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub lambda: f64,
    pub sigma: f64,
    pub snr_db: f64,
    pub sync_fraction: f64,
    pub seed: u64,
    pub method: String,
    pub precision: f64,
    pub recall: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "CP")]
    pub cp: f64,
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Sweep of `lambda` against noise level, solved with the sliding window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMetricsConfig {
    pub base: SimConfig,
    pub lambdas: Vec<f64>,
    /// Noise levels as SNR in dB, converted per instance through the
    /// largest template magnitude.
    pub snr_db: Vec<f64>,
    pub seeds: Vec<u64>,
    pub time_tol: usize,
    pub kernel_support: usize,
    pub workers: usize,
}

impl Default for GridMetricsConfig {
    fn default() -> Self {
        GridMetricsConfig {
            base: small_experiment(),
            lambdas: (0..29).map(|i| 0.1 * 2f64.powf(i as f64 / 4.0)).collect(),
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
            seeds: (0..5).collect(),
            time_tol: 0,
            kernel_support: 10,
            workers: 1,
        }
    }
}

/// `T = 500`, two neurons at 50 Hz each assuming 10 kHz sampling, four
/// electrodes.
pub fn small_experiment() -> SimConfig {
    SimConfig {
        n_neurons: 2,
        n_electrodes: 4,
        n_samples: 500,
        shape_len: 30,
        firing_prob: 0.01,
        noise_sigma: 0.0,
        ..SimConfig::default()
    }
}

fn score(
    est: &SparseActivation,
    truth: &SparseActivation,
    time_tol: usize,
    kernel_support: usize,
) -> Result<(f64, f64, f64, f64)> {
    let f = f_measure(est, truth, time_tol)?;
    let cp = conv_performance(est, truth, kernel_support)?;
    Ok((f.precision, f.recall, f.f, cp))
}

fn instance_at_snr(base: &SimConfig, seed: u64, snr: f64, sync: f64) -> Result<(Instance, f64)> {
    let mut cfg = SimConfig {
        seed,
        sync_fraction: sync,
        ..base.clone()
    };
    let shapes = gen_shapes(&cfg)?.shapes;
    cfg.noise_sigma = sigma_for_snr(&shapes, snr);
    let sigma = cfg.noise_sigma;
    Ok((simulate(&cfg)?, sigma))
}

/// Rows ordered by SNR, seed, then lambda.
pub fn run_grid_metrics(cfg: &GridMetricsConfig) -> Result<Vec<MetricRow>> {
    let cells: Vec<(f64, u64)> = cfg
        .snr_db
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let per_cell = map_ordered(cells.len(), cfg.workers, |i| -> Result<Vec<MetricRow>> {
        let (snr, seed) = cells[i];
        let (inst, sigma) = instance_at_snr(&cfg.base, seed, snr, cfg.base.sync_fraction)?;
        let shapes = &inst.shapes.shapes;
        let mut rows = Vec::new();
        for &lambda in &cfg.lambdas {
            let lc = LassoConfig::new(lambda, LassoConfig::default_kkt_tol(assumption_params(shapes).c_upper))?;
            let est = solve_sliding(shapes, &inst.signal, &lc)?.solution;
            let (precision, recall, f, cp) = score(&est, &inst.truth, cfg.time_tol, cfg.kernel_support)?;
            rows.push(MetricRow {
                lambda,
                sigma,
                snr_db: snr,
                sync_fraction: cfg.base.sync_fraction,
                seed,
                method: "lasso".into(),
                precision,
                recall,
                f,
                cp,
            });
        }
        Ok(rows)
    });
    let mut out = Vec::new();
    for r in per_cell {
        out.extend(r?);
    }
    Ok(out)
}

/// Synchronization sweep: the Lasso against nearest-centroid labelling of
/// the true event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncSweepConfig {
    pub base: SimConfig,
    pub sync_fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub snr_db: f64,
    pub lambda: f64,
    pub time_tol: usize,
    pub kernel_support: usize,
    pub workers: usize,
}

impl Default for SyncSweepConfig {
    fn default() -> Self {
        SyncSweepConfig {
            base: small_experiment(),
            sync_fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            seeds: (0..50).collect(),
            snr_db: 25.0,
            lambda: 2.5,
            time_tol: 0,
            kernel_support: 10,
            workers: 1,
        }
    }
}

/// Rows ordered by sync fraction, seed, then method (`lasso`, `centroid`).
pub fn run_sync_sweep(cfg: &SyncSweepConfig) -> Result<Vec<MetricRow>> {
    let cells: Vec<(f64, u64)> = cfg
        .sync_fractions
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let per_cell = map_ordered(cells.len(), cfg.workers, |i| -> Result<Vec<MetricRow>> {
        let (sync, seed) = cells[i];
        let (inst, sigma) = instance_at_snr(&cfg.base, seed, cfg.snr_db, sync)?;
        let shapes = &inst.shapes.shapes;
        let lc = LassoConfig::new(cfg.lambda, LassoConfig::default_kkt_tol(assumption_params(shapes).c_upper))?;
        let lasso = solve_sliding(shapes, &inst.signal, &lc)?.solution;
        let centroid = centroid_baseline(&inst.signal, shapes, &inst.truth)?;
        let mut rows = Vec::new();
        for (name, est) in [("lasso", &lasso), ("centroid", &centroid)] {
            let (precision, recall, f, cp) = score(est, &inst.truth, cfg.time_tol, cfg.kernel_support)?;
            rows.push(MetricRow {
                lambda: cfg.lambda,
                sigma,
                snr_db: cfg.snr_db,
                sync_fraction: sync,
                seed,
                method: name.into(),
                precision,
                recall,
                f,
                cp,
            });
        }
        Ok(rows)
    });
    let mut out = Vec::new();
    for r in per_cell {
        out.extend(r?);
    }
    Ok(out)
}

/// One unit spike per distinct true event time, labelled by the nearest
/// template. Events too close to the end for a full snippet are skipped.
pub fn centroid_baseline(
    y: &MultichannelSignal,
    shapes: &ShapeBank,
    truth: &SparseActivation,
) -> Result<SparseActivation> {
    let l = shapes.shape_len();
    let mut times: Vec<usize> = truth
        .entries()
        .iter()
        .map(|s| s.time)
        .filter(|&t| t + l <= y.n_samples())
        .collect();
    times.sort_unstable();
    times.dedup();
    let labels = nearest_centroid_assign(y, shapes, &times)?;
    SparseActivation::from_unsorted(
        truth.n_neurons(),
        truth.n_samples(),
        times
            .into_iter()
            .zip(labels)
            .map(|(time, neuron)| Spike {
                neuron,
                time,
                amplitude: 1.0,
            })
            .collect(),
    )
}

/// Mean of `f` over rows passing `keep`.
pub fn mean_by(rows: &[MetricRow], keep: impl Fn(&MetricRow) -> bool, f: impl Fn(&MetricRow) -> f64) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter(|r| keep(r)).map(f).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Widest run of consecutive `lambdas` (sorted ascending) at `snr` whose
/// mean F over seeds is at least `threshold`, as `(first, last)`.
pub fn f_plateau(rows: &[MetricRow], lambdas: &[f64], snr: f64, threshold: f64) -> Option<(f64, f64)> {
    let mut ls = lambdas.to_vec();
    ls.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    let mut start: Option<f64> = None;
    for (i, &l) in ls.iter().enumerate() {
        let ok = mean_by(rows, |r| r.lambda == l && r.snr_db == snr, |r| r.f).is_some_and(|f| f >= threshold);
        if ok {
            let lo = *start.get_or_insert(l);
            if best.map_or(true, |(a, b)| l / lo > b / a) {
                best = Some((lo, l));
            }
        }
        if !ok || i + 1 == ls.len() {
            start = None;
        }
    }
    best
}
