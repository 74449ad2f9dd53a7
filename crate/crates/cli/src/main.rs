mod kv;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::json;

use spikelasso::bench::{
    f_plateau, mean_by, method_slopes, run_bench, run_grid_metrics, run_method, run_sync_sweep, small_experiment,
    solution_hash, summarize, write_metrics_csv, write_summary_csv, BenchGrid, GridMetricsConfig, Method,
    SyncSweepConfig,
};
use spikelasso::dense::DEFAULT_MEMORY_CAP;
use spikelasso::diagnostics::{assumption_params, assumption_report, ReportInputs};
use spikelasso::io::{load_shapes, load_signal, save_activation, save_shapes, save_signal, write_sidecar, Meta};
use spikelasso::pool::default_workers;
use spikelasso::simulator::{simulate, Geometry, SimConfig, RNG_ID};
use spikelasso::{
    cluster_neurons_with_threshold, kkt_check, solve_partitioned, solve_sliding_with, ClusterSolver, Error,
    LassoConfig, Result, SlidingOptions,
};

use kv::Kv;

const KEYS: &str = "\
Keys are read from the file named by --config (lines `key = value`) and
overridden by `--key value` flags.

simulate     n_neurons n_electrodes n_samples shape_len firing_prob noise_sigma
             amplitude_lo amplitude_hi sync_fraction seed
             geometry (none|lattice) pitch radius intensity   out (dir)
solve        signal shapes lambda method (global|ws_naive|ws_conv|sliding)
             cluster cluster_threshold kkt_tol inner_tol max_inner_iters
             max_window_len memory_cap workers   out (dir)
bench        the simulate keys except seed, sizes methods seeds memory_cap
             alpha warmup   out (dir)
grid-metrics the simulate keys except noise_sigma and seed, lambdas snr_db seeds
             time_tol kernel_support workers   out (csv)
             with --sync-sweep: sync_fractions snr_db lambda instead of the
             lambda and SNR lists
diagnose     shapes sigma n_samples alpha boundary_sup a_min n_script   out (json)
cluster      shapes threshold   out (json)

Lists are comma separated; seeds also take `a..b`. The worker count
defaults to $SPIKELASSO_WORKERS.

Exit codes: 0 ok, 1 solver failure or failed KKT check, 2 configuration,
3 file IO or format.";

#[derive(Parser)]
#[command(name = "spikelasso", version, about = "Convolutional Lasso spike sorting", after_help = KEYS)]
struct Cli {
    #[arg(value_enum)]
    verb: Verb,
    /// `--key value` settings.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    settings: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Verb {
    /// Draw shapes, a spike train and a noisy signal.
    Simulate,
    /// Solve the Lasso for a signal and shape bank.
    Solve,
    /// Time the four solvers over a grid of signal lengths.
    Bench,
    /// F-measure and CP over lambda and SNR, or a synchronization sweep.
    GridMetrics,
    /// Shape-correlation parameters and the admissible lambda range.
    Diagnose,
    /// Export the spatial partition of a shape bank.
    Cluster,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = Kv::from_args(&cli.settings).and_then(|kv| match cli.verb {
        Verb::Simulate => cmd_simulate(kv),
        Verb::Solve => cmd_solve(kv),
        Verb::Bench => cmd_bench(kv),
        Verb::GridMetrics => cmd_grid_metrics(kv),
        Verb::Diagnose => cmd_diagnose(kv),
        Verb::Cluster => cmd_cluster(kv),
    });
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = exit_code(&e);
            fail(error_kind(&e), &e.to_string(), code)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Domain(_) | Error::Invalid(_) | Error::Dimension(_) | Error::Index(_) => 2,
        Error::Io(_) | Error::Format(_) => 3,
        _ => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e.root() {
        Error::Dimension(_) => "dimension",
        Error::Index(_) => "index",
        Error::Invalid(_) => "invalid",
        Error::Domain(_) => "domain",
        Error::Convergence { .. } => "convergence",
        Error::Budget { .. } => "budget",
        Error::Capacity(_) => "capacity",
        Error::Config(_) => "config",
        Error::Format(_) => "format",
        Error::Io(_) => "io",
        Error::InWindow { .. } | Error::InCluster { .. } => "solver",
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message, "exit_code": code }));
    ExitCode::from(code)
}

fn print_json(v: &serde_json::Value) {
    println!("{v}");
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Output directory; created only after every key has been checked.
fn out_dir(kv: Kv) -> Result<PathBuf> {
    let mut kv = kv;
    let dir = PathBuf::from(kv.or("out", ".".to_string())?);
    kv.finish()?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn out_file(kv: Kv, default: &str) -> Result<PathBuf> {
    let mut kv = kv;
    let p = PathBuf::from(kv.or("out", default.to_string())?);
    kv.finish()?;
    if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(p)
}

fn meta<C: Serialize>(config: &C) -> Result<Meta> {
    Meta::new(config, RNG_ID)
}

fn sim_config(kv: &mut Kv, base: SimConfig, noise: bool, seed: bool) -> Result<SimConfig> {
    let mut c = base;
    c.n_neurons = kv.or("n_neurons", c.n_neurons)?;
    c.n_electrodes = kv.or("n_electrodes", c.n_electrodes)?;
    c.n_samples = kv.or("n_samples", c.n_samples)?;
    c.shape_len = kv.or("shape_len", c.shape_len)?;
    c.firing_prob = kv.or("firing_prob", c.firing_prob)?;
    if noise {
        c.noise_sigma = kv.or("noise_sigma", c.noise_sigma)?;
    }
    c.amplitude_range = (
        kv.or("amplitude_lo", c.amplitude_range.0)?,
        kv.or("amplitude_hi", c.amplitude_range.1)?,
    );
    c.sync_fraction = kv.or("sync_fraction", c.sync_fraction)?;
    if seed {
        c.seed = kv.or("seed", c.seed)?;
    }
    let geometry = kv.or("geometry", "none".to_string())?;
    let (pitch, radius, intensity) = (kv.get("pitch")?, kv.get("radius")?, kv.get("intensity")?);
    c.geometry = match geometry.as_str() {
        "none" => {
            if pitch.is_some() || radius.is_some() || intensity.is_some() {
                return Err(Error::Config("pitch, radius and intensity need geometry = lattice".into()));
            }
            None
        }
        "lattice" => Some(Geometry {
            pitch: pitch.unwrap_or(1.0),
            radius: radius.unwrap_or(1.0),
            intensity: intensity.unwrap_or(1.0),
        }),
        g => return Err(Error::Config(format!("geometry {g:?} (none, lattice)"))),
    };
    c.validate()?;
    Ok(c)
}

fn cmd_simulate(mut kv: Kv) -> Result<u8> {
    let cfg = sim_config(&mut kv, SimConfig::default(), true, true)?;
    let dir = out_dir(kv)?;
    let inst = simulate(&cfg)?;
    let m = meta(&cfg)?;
    let (signal, shapes, truth) = (dir.join("signal.clsg"), dir.join("shapes.clsh"), dir.join("truth.csv"));
    save_signal(&signal, &inst.signal)?;
    save_shapes(&shapes, &inst.shapes.shapes)?;
    save_activation(&truth, &inst.truth)?;
    for p in [&signal, &shapes, &truth] {
        write_sidecar(p, &m)?;
    }
    print_json(&json!({
        "signal": signal,
        "shapes": shapes,
        "truth": truth,
        "n_neurons": inst.shapes.shapes.n_neurons(),
        "dropped_neurons": inst.shapes.dropped_neurons,
        "spikes": inst.truth.len(),
        "config_digest": m.config_digest,
    }));
    Ok(0)
}

fn cmd_solve(mut kv: Kv) -> Result<u8> {
    let signal_path = kv.path("signal")?;
    let shapes_path = kv.path("shapes")?;
    let lambda: f64 = kv.required("lambda")?;
    let method: Method = kv.or("method", Method::Sliding)?;
    let cluster = kv.flag("cluster")?;
    let threshold: f64 = kv.or("cluster_threshold", 0.0)?;
    let kkt_tol: Option<f64> = kv.get("kkt_tol")?;
    let inner_tol: Option<f64> = kv.get("inner_tol")?;
    let max_inner: Option<usize> = kv.get("max_inner_iters")?;
    let max_window_len: Option<usize> = kv.get("max_window_len")?;
    let memory_cap: u64 = kv.or("memory_cap", DEFAULT_MEMORY_CAP)?;
    let workers: usize = kv.or("workers", default_workers())?;
    let dir = out_dir(kv)?;

    let shapes = load_shapes(&shapes_path)?;
    let y = load_signal(&signal_path)?;
    let mut lc = LassoConfig::new(
        lambda,
        kkt_tol.unwrap_or_else(|| LassoConfig::default_kkt_tol(assumption_params(&shapes).c_upper)),
    )?;
    if let Some(t) = inner_tol {
        lc.inner_tol = t;
    }
    if let Some(m) = max_inner {
        lc.max_inner_iters = m;
    }
    lc.validate()?;
    if max_window_len.is_some() && (method != Method::Sliding || cluster) {
        return Err(Error::Config("max_window_len applies to the unclustered sliding method".into()));
    }

    let mut trace = None;
    let solution = if cluster {
        let solver = match method {
            Method::Sliding => ClusterSolver::Sliding,
            Method::WsConv => ClusterSolver::WorkingSet,
            m => return Err(Error::Config(format!("--cluster needs method sliding or ws_conv, got {m}"))),
        };
        let partition = cluster_neurons_with_threshold(&shapes, threshold);
        solve_partitioned(&shapes, &y, &lc, solver, &partition, workers)?
    } else if method == Method::Sliding {
        let out = solve_sliding_with(
            &shapes,
            &y,
            &lc,
            SlidingOptions {
                max_window_len,
                ..SlidingOptions::default()
            },
        )?;
        trace = Some(out.trace);
        out.solution
    } else {
        run_method(method, &shapes, &y, &lc, memory_cap)?
    };

    let report = kkt_check(&shapes, &y, &solution, &lc, None)?;
    let passes = report.passes(&lc);
    let hash = solution_hash(&solution);
    let m = meta(&json!({
        "signal": signal_path,
        "shapes": shapes_path,
        "method": method,
        "cluster": cluster,
        "cluster_threshold": threshold,
        "lasso": lc,
    }))?;
    let act = dir.join("activation.csv");
    save_activation(&act, &solution)?;
    write_sidecar(&act, &m)?;
    if let Some(tr) = &trace {
        let p = dir.join("trace.jsonl");
        let mut w = create(&p)?;
        tr.write_jsonl(&mut w)?;
        w.flush()?;
        write_sidecar(&p, &m)?;
    }
    let summary = json!({
        "method": method,
        "cluster": cluster,
        "lambda": lc.lambda,
        "kkt_tol": lc.kkt_tol,
        "inner_tol": lc.inner_tol,
        "support_size": solution.len(),
        "solution_hash": hash,
        "kkt_max_violation": report.max_violation,
        "kkt_argmax": report.argmax_index,
        "support_sign_ok": report.support_sign_ok,
        "max_support_deviation": report.max_support_deviation,
        "passes": passes,
    });
    let kkt_path = dir.join("kkt.json");
    let mut w = create(&kkt_path)?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| Error::Format(e.to_string()))?;
    w.flush()?;
    write_sidecar(&kkt_path, &m)?;
    print_json(&summary);
    if passes {
        Ok(0)
    } else {
        let msg = format!(
            "KKT check failed: max violation {:.3e} (tolerance {:.3e}), support signs ok: {}",
            report.max_violation, lc.kkt_tol, report.support_sign_ok
        );
        fail("kkt", &msg, 1);
        Ok(1)
    }
}

fn cmd_bench(mut kv: Kv) -> Result<u8> {
    let d = BenchGrid::default();
    let grid = BenchGrid {
        base: sim_config(&mut kv, d.base.clone(), true, false)?,
        sizes: kv.list("sizes")?.unwrap_or(d.sizes),
        methods: kv.list("methods")?.unwrap_or(d.methods),
        seeds: kv.seeds("seeds")?.unwrap_or(d.seeds),
        memory_cap: kv.or("memory_cap", d.memory_cap)?,
        alpha: kv.or("alpha", d.alpha)?,
        warmup: kv.or("warmup", d.warmup)?,
    };
    let dir = out_dir(kv)?;
    let m = meta(&grid)?;
    let rec_path = dir.join("bench.jsonl");
    let mut w = create(&rec_path)?;
    let mut sink_err = None;
    let records = run_bench(&grid, |r| {
        eprintln!("{} T={} seed={} {:?} {:.3} ms", r.method, r.n_samples, r.seed, r.status, r.wall_ns as f64 / 1e6);
        let line = serde_json::to_string(r).expect("record serializes");
        if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
            sink_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = sink_err {
        return Err(e.into());
    }
    write_sidecar(&rec_path, &m)?;
    let summary = summarize(&records);
    let sum_path = dir.join("summary.csv");
    write_summary_csv(&summary, create(&sum_path)?)?;
    write_sidecar(&sum_path, &m)?;
    let slopes: serde_json::Map<String, serde_json::Value> = method_slopes(&summary)
        .into_iter()
        .map(|(m, s)| (m.name().to_string(), json!(s)))
        .collect();
    let slope_path = dir.join("slopes.json");
    let mut w = create(&slope_path)?;
    serde_json::to_writer_pretty(&mut w, &slopes).map_err(|e| Error::Format(e.to_string()))?;
    w.flush()?;
    write_sidecar(&slope_path, &m)?;
    print_json(&json!({ "records": records.len(), "slopes": slopes }));
    Ok(0)
}

fn cmd_grid_metrics(mut kv: Kv) -> Result<u8> {
    let sweep = kv.flag("sync_sweep")?;
    let base = sim_config(&mut kv, small_experiment(), false, false)?;
    if sweep {
        let d = SyncSweepConfig::default();
        let cfg = SyncSweepConfig {
            base,
            sync_fractions: kv.list("sync_fractions")?.unwrap_or(d.sync_fractions),
            seeds: kv.seeds("seeds")?.unwrap_or(d.seeds),
            snr_db: kv.or("snr_db", d.snr_db)?,
            lambda: kv.or("lambda", d.lambda)?,
            time_tol: kv.or("time_tol", d.time_tol)?,
            kernel_support: kv.or("kernel_support", d.kernel_support)?,
            workers: kv.or("workers", default_workers())?,
        };
        let out = out_file(kv, "sync_sweep.csv")?;
        let rows = run_sync_sweep(&cfg)?;
        write_metrics_csv(&rows, create(&out)?)?;
        write_sidecar(&out, &meta(&cfg)?)?;
        let mut means = Vec::new();
        for method in ["lasso", "centroid"] {
            for &s in &cfg.sync_fractions {
                let f = mean_by(&rows, |r| r.method == method && r.sync_fraction == s, |r| r.f);
                means.push(json!({ "method": method, "sync_fraction": s, "mean_F": f }));
            }
        }
        print_json(&json!({ "rows": rows.len(), "out": out, "mean_F": means }));
    } else {
        let d = GridMetricsConfig::default();
        let cfg = GridMetricsConfig {
            base,
            lambdas: kv.list("lambdas")?.unwrap_or(d.lambdas),
            snr_db: kv.list("snr_db")?.unwrap_or(d.snr_db),
            seeds: kv.seeds("seeds")?.unwrap_or(d.seeds),
            time_tol: kv.or("time_tol", d.time_tol)?,
            kernel_support: kv.or("kernel_support", d.kernel_support)?,
            workers: kv.or("workers", default_workers())?,
        };
        let out = out_file(kv, "grid_metrics.csv")?;
        let rows = run_grid_metrics(&cfg)?;
        write_metrics_csv(&rows, create(&out)?)?;
        write_sidecar(&out, &meta(&cfg)?)?;
        let plateaus: Vec<serde_json::Value> = cfg
            .snr_db
            .iter()
            .map(|&s| {
                let p = f_plateau(&rows, &cfg.lambdas, s, 0.95);
                json!({ "snr_db": s, "plateau_F_0.95": p, "factor": p.map(|(lo, hi)| hi / lo) })
            })
            .collect();
        print_json(&json!({ "rows": rows.len(), "out": out, "plateaus": plateaus }));
    }
    Ok(0)
}

fn cmd_diagnose(mut kv: Kv) -> Result<u8> {
    let shapes_path = kv.path("shapes")?;
    let inputs = ReportInputs {
        sigma: kv.required("sigma")?,
        alpha: kv.or("alpha", 0.05)?,
        n_samples: kv.required("n_samples")?,
        boundary_sup: kv.or("boundary_sup", 0.0)?,
        a_min: kv.or("a_min", SimConfig::default().amplitude_range.0)?,
        n_script: kv.get("n_script")?,
    };
    let out: Option<String> = kv.get("out")?;
    kv.finish()?;
    let shapes = load_shapes(&shapes_path)?;
    let report = assumption_report(&shapes, &inputs)?;
    if let Some(p) = out {
        let p = PathBuf::from(p);
        let mut w = create(&p)?;
        report.write_json(&mut w)?;
        w.flush()?;
        write_sidecar(&p, &meta(&json!({ "shapes": shapes_path, "inputs": format!("{inputs:?}") }))?)?;
    }
    print_json(&serde_json::to_value(&report).map_err(|e| Error::Format(e.to_string()))?);
    Ok(0)
}

fn cmd_cluster(mut kv: Kv) -> Result<u8> {
    let shapes_path = kv.path("shapes")?;
    let threshold: f64 = kv.or("threshold", 0.0)?;
    let out = out_file(kv, "partition.json")?;
    if !(threshold >= 0.0) {
        return Err(Error::Config(format!("threshold {threshold} must be >= 0")));
    }
    let shapes = load_shapes(&shapes_path)?;
    let partition = cluster_neurons_with_threshold(&shapes, threshold);
    let mut w = create(&out)?;
    partition.write_json(&mut w)?;
    w.flush()?;
    write_sidecar(&out, &meta(&json!({ "shapes": shapes_path, "threshold": threshold }))?)?;
    print_json(&json!({ "clusters": partition.len(), "sizes": partition.sizes(), "out": out }));
    Ok(0)
}
