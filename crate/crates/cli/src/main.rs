mod config;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ampmmv::io::{probe_header, read_instance, write_frames, write_instance, write_posterior};
use ampmmv::metrics::{k_largest_rows, threshold_support};
use ampmmv::selftest::run_selftest;
use ampmmv::sweep::write_sweep_outputs;
use ampmmv::{
    generate_instance, initial_params, nser, sks_smooth, solve, tnmse, to_db, Complex64,
    FieldKind, GenConfig, MatrixKind, ModelParams, Scalar, SksInput, SolverConfig, SupportRule,
    SweepSpec,
};

#[derive(Parser)]
#[command(name = "ampmmv", version, about = "Joint-sparse recovery of time-varying signals by AMP-MMV")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance and write it to a directory.
    Gen(GenArgs),
    /// Run AMP-MMV on an instance directory.
    Solve(SolveArgs),
    /// Run the support-aware Kalman smoother on an instance directory.
    Sks(SksArgs),
    /// Run a seeded parameter sweep and write CSV summaries.
    Sweep(SweepArgs),
    /// Check the fast paths against their reference computations.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Field {
    Real,
    Complex,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Serial,
    Parallel,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    KLargest,
    PosteriorThreshold,
}

impl From<RuleArg> for SupportRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::KLargest => SupportRule::KLargest,
            RuleArg::PosteriorThreshold => SupportRule::PosteriorThreshold,
        }
    }
}

/// Flags shared by commands that read a JSON configuration.
#[derive(Args)]
struct ConfigArgs {
    /// JSON file overlaid on the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration field, e.g. `--set params.zeta=0.5`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "real")]
    field: Field,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Noise variance; clears the SNR target unless --snr-db is also given.
    #[arg(long)]
    sigma_e2: Option<f64>,
    /// Target SNR in dB; `inf` gives noiseless measurements.
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Model parameters (JSON); defaults to those stored with the instance.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Learn the parameters by EM, starting from a data-driven guess unless
    /// --params is given.
    #[arg(long)]
    em: bool,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    #[arg(long)]
    max_passes: Option<usize>,
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "posterior-threshold")]
    support_rule: RuleArg,
}

#[derive(Args)]
struct SksArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    params: Option<PathBuf>,
    /// JSON array of active indices; defaults to the instance's true support.
    #[arg(long)]
    support: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep specification (JSON); flags and --set override its fields.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "real")]
    field: Field,
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Comma-separated subset of amp-mmv, sks, enum.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    #[arg(long, value_enum)]
    support_rule: Option<RuleArg>,
    #[arg(long)]
    record_runtime: bool,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(a) => match a.field {
            Field::Real => gen::<f64>(&a),
            Field::Complex => gen::<Complex64>(&a),
        },
        Command::Solve(a) => match probe_header(&a.instance)?.field {
            FieldKind::Real => run_solve::<f64>(&a),
            FieldKind::Complex => run_solve::<Complex64>(&a),
        },
        Command::Sks(a) => match probe_header(&a.instance)?.field {
            FieldKind::Real => run_sks::<f64>(&a),
            FieldKind::Complex => run_sks::<Complex64>(&a),
        },
        Command::Sweep(a) => match a.field {
            Field::Real => sweep::<f64>(&a),
            Field::Complex => sweep::<Complex64>(&a),
        },
        Command::Selftest(a) => selftest(&a),
    }
}

fn with_overrides(mut v: Value, overrides: &[String], flags: Vec<(&str, Value)>) -> Result<Value> {
    for (path, value) in flags {
        config::set_path(&mut v, path, value)?;
    }
    for o in overrides {
        config::apply_assignment(&mut v, o)?;
    }
    Ok(v)
}

fn default_gen<T: Scalar>() -> GenConfig<T> {
    GenConfig {
        params: ModelParams::with_stationary_variance(0.1, T::zero(), 0.1, 1.0, 1e-2),
        n: 500,
        m: 200,
        t: 4,
        snr_db: Some(25.0),
        beta: 0.0,
        matrix_kind: MatrixKind::IidGaussianUnitColumns,
        seed: 0,
    }
}

fn gen<T: Scalar>(a: &GenArgs) -> Result<()> {
    let base = config::layered(serde_json::to_value(default_gen::<T>())?, a.cfg.config.as_deref())?;
    let mut flags: Vec<(&str, Value)> = Vec::new();
    let opt = |x: Option<usize>| x.map(|v| json!(v));
    for (path, v) in [("n", opt(a.n)), ("m", opt(a.m)), ("t", opt(a.t)), ("seed", a.seed.map(|s| json!(s)))] {
        if let Some(v) = v {
            flags.push((path, v));
        }
    }
    for (path, flag, v) in [
        ("params.alpha", "alpha", a.alpha),
        ("params.rho", "rho", a.rho),
        ("params.sigma_e2", "sigma-e2", a.sigma_e2),
        ("beta", "beta", a.beta),
    ] {
        if let Some(x) = v {
            flags.push((path, config::number(x, flag)?));
        }
    }
    if let Some(l) = a.lambda {
        flags.push(("params.lambda", json!([config::number(l, "lambda")?])));
    }
    match a.snr_db {
        Some(s) if s == f64::INFINITY => {
            flags.push(("snr_db", Value::Null));
            flags.push(("params.sigma_e2", json!(0.0)));
        }
        Some(s) => flags.push(("snr_db", config::number(s, "snr-db")?)),
        None if a.sigma_e2.is_some() => flags.push(("snr_db", Value::Null)),
        None => {}
    }
    let v = with_overrides(base, &a.cfg.overrides, flags)?;
    let cfg: GenConfig<T> = serde_json::from_value(v).context("invalid generator configuration")?;
    let inst = generate_instance(&cfg)?;
    write_instance(&a.out, &inst)?;
    println!(
        "{} instance N={} M={} T={} K={} sigma_e2={:.6e} -> {}",
        T::KIND,
        cfg.n,
        cfg.m,
        cfg.t,
        inst.truth.k(),
        inst.params.sigma_e2,
        a.out.display()
    );
    Ok(())
}

fn read_json<V: serde::de::DeserializeOwned>(path: &Path) -> Result<V> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<V: Serialize>(path: &Path, v: &V) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct RecoveryMetrics {
    k: usize,
    tnmse: f64,
    tnmse_db: f64,
    nser: f64,
}

fn recovery_metrics<T: Scalar>(
    x: &ampmmv::DMatrix<T>,
    x_hat: &ampmmv::DMatrix<T>,
    truth: &[usize],
    est: &[usize],
) -> Option<RecoveryMetrics> {
    let t = tnmse(x, x_hat).ok()?;
    Some(RecoveryMetrics { k: truth.len(), tnmse: t, tnmse_db: to_db(t), nser: nser(truth, est).ok()? })
}

fn print_metrics(m: &Option<RecoveryMetrics>) {
    match m {
        Some(m) => println!("TNMSE {:.2} dB, NSER {:.4} (K={})", m.tnmse_db, m.nser, m.k),
        None => println!("no ground truth with a nonempty support; metrics skipped"),
    }
}

#[derive(Serialize)]
#[serde(bound = "")]
struct SolveReport<T: Scalar> {
    field: FieldKind,
    config: SolverConfig,
    schedule: ampmmv::Schedule,
    passes: usize,
    converged: bool,
    residual: f64,
    runtime_s: f64,
    params: ModelParams<T>,
    support: Vec<usize>,
    metrics: Option<RecoveryMetrics>,
}

fn run_solve<T: Scalar>(a: &SolveArgs) -> Result<()> {
    let loaded = read_instance::<T>(&a.instance)?;
    let base = config::layered(serde_json::to_value(SolverConfig::default())?, a.cfg.config.as_deref())?;
    let mut flags: Vec<(&str, Value)> = Vec::new();
    if a.em {
        flags.push(("em_enabled", json!(true)));
    }
    if let Some(s) = a.schedule {
        flags.push(("schedule", json!(match s { ScheduleArg::Serial => "serial", ScheduleArg::Parallel => "parallel" })));
    }
    if let Some(v) = a.max_passes {
        flags.push(("max_passes", json!(v)));
    }
    if let Some(v) = a.inner_iters {
        flags.push(("inner_iters", json!(v)));
    }
    if let Some(v) = a.epsilon {
        flags.push(("epsilon", config::number(v, "epsilon")?));
    }
    if let Some(v) = a.damping {
        flags.push(("damping", config::number(v, "damping")?));
    }
    if let Some(v) = a.seed {
        flags.push(("seed", json!(v)));
    }
    let cfg: SolverConfig = serde_json::from_value(with_overrides(base, &a.cfg.overrides, flags)?)
        .context("invalid solver configuration")?;
    let params: ModelParams<T> = match (&a.params, cfg.em_enabled) {
        (Some(p), _) => read_json(p)?,
        (None, true) => initial_params(&loaded.problem, cfg.seed),
        (None, false) => loaded
            .header
            .params
            .clone()
            .context("the instance stores no parameters; pass --params or --em")?,
    };
    let started = Instant::now();
    let out = solve(&loaded.problem, &params, &cfg)?;
    let runtime_s = started.elapsed().as_secs_f64();

    let truth_idx = loaded.truth.as_ref().map(|t| t.support_indices());
    let support = match a.support_rule {
        RuleArg::PosteriorThreshold => threshold_support(&out.posterior.s_post),
        RuleArg::KLargest => {
            let k = truth_idx.as_ref().map(Vec::len).context("k-largest support needs the true K")?;
            k_largest_rows(&out.posterior.x_mean, k)?
        }
    };
    let metrics = loaded
        .truth
        .as_ref()
        .and_then(|t| recovery_metrics(&t.signals, &out.posterior.x_mean, truth_idx.as_deref().unwrap_or(&[]), &support));

    write_posterior(&a.out, &out.posterior)?;
    out.diagnostics
        .write_json_lines(std::fs::File::create(a.out.join("diagnostics.jsonl"))?)?;
    let report = SolveReport {
        field: T::KIND,
        config: cfg,
        schedule: out.schedule,
        passes: out.passes,
        converged: out.converged,
        residual: out.residual,
        runtime_s,
        params: out.params,
        support,
        metrics,
    };
    write_json(&a.out.join("result.json"), &report)?;
    println!(
        "{} passes ({:?}), converged {}, residual {:.4e}, {:.3}s",
        report.passes, report.schedule, report.converged, report.residual, runtime_s
    );
    print_metrics(&report.metrics);
    Ok(())
}

#[derive(Serialize)]
struct SksReport {
    field: FieldKind,
    support: Vec<usize>,
    log_evidence: f64,
    regularized: bool,
    runtime_s: f64,
    metrics: Option<RecoveryMetrics>,
}

fn run_sks<T: Scalar>(a: &SksArgs) -> Result<()> {
    let loaded = read_instance::<T>(&a.instance)?;
    let n = loaded.problem.n();
    let params: ModelParams<T> = match &a.params {
        Some(p) => read_json(p)?,
        None => loaded.header.params.clone().context("the instance stores no parameters; pass --params")?,
    };
    let support_idx: Vec<usize> = match (&a.support, &loaded.truth) {
        (Some(p), _) => read_json(p)?,
        (None, Some(t)) => t.support_indices(),
        (None, None) => bail!("the instance has no ground truth; pass --support"),
    };
    let mut support = vec![false; n];
    for &i in &support_idx {
        if i >= n {
            bail!("support index {i} out of range for N = {n}");
        }
        support[i] = true;
    }
    let started = Instant::now();
    let out = sks_smooth(&SksInput { problem: &loaded.problem, support: &support, params: &params })?;
    let runtime_s = started.elapsed().as_secs_f64();
    let support_idx: Vec<usize> = (0..n).filter(|&i| support[i]).collect();
    let metrics = loaded.truth.as_ref().and_then(|t| {
        recovery_metrics(&t.signals, &out.x_hat, &t.support_indices(), &support_idx)
    });

    std::fs::create_dir_all(&a.out)?;
    write_frames(&a.out.join("x_hat.bin"), &out.x_hat)?;
    write_frames(&a.out.join("theta_mean.bin"), &out.theta_hat)?;
    write_frames(&a.out.join("theta_var.bin"), &out.theta_cov_diag)?;
    let report = SksReport {
        field: T::KIND,
        support: support_idx,
        log_evidence: out.log_evidence,
        regularized: out.regularized,
        runtime_s,
        metrics,
    };
    write_json(&a.out.join("result.json"), &report)?;
    println!("log evidence {:.6}, {:.3}s", report.log_evidence, runtime_s);
    print_metrics(&report.metrics);
    Ok(())
}

fn sweep<T: Scalar>(a: &SweepArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let base: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.spec.display()))?;
    let mut flags: Vec<(&str, Value)> = vec![("seed", json!(a.seed))];
    if let Some(t) = a.trials {
        flags.push(("trials", json!(t)));
    }
    if let Some(g) = &a.grid {
        flags.push(("grid", json!(g)));
    }
    if let Some(algs) = &a.algorithms {
        flags.push(("algorithms", json!(algs)));
    }
    if let Some(r) = a.support_rule {
        flags.push(("support_rule", serde_json::to_value(SupportRule::from(r))?));
    }
    if a.record_runtime {
        flags.push(("record_runtime", json!(true)));
    }
    let spec: SweepSpec<T> = serde_json::from_value(with_overrides(base, &a.overrides, flags)?)
        .context("invalid sweep specification")?;
    spec.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = a.threads {
        pool = pool.num_threads(n);
    }
    let results = pool.build()?.install(|| ampmmv::run_sweep(&spec))?;
    let manifest = write_sweep_outputs(&a.out, &spec, &results)?;
    println!("{:>10} {:>8} {:>7} {:>12} {:>8} {:>8}", "value", "alg", "trials", "tnmse_db", "se", "nser");
    for r in &results.aggregates {
        println!(
            "{:>10} {:>8} {:>7} {:>12.2} {:>8.2} {:>8.4}{}",
            r.grid_value,
            r.algorithm.name(),
            r.trials - r.failures,
            r.tnmse_mean_db,
            r.tnmse_db_se,
            r.nser_mean,
            if r.flagged { "  FLAGGED" } else { "" }
        );
    }
    println!("wrote {} and {}", manifest.trials_csv.display(), manifest.aggregate_csv.display());
    Ok(())
}

fn selftest(a: &SelftestArgs) -> Result<()> {
    let checks = run_selftest(a.seed);
    for c in &checks {
        println!(
            "{}  {}: worst {:.2e} (tol {:.0e}, {} cases)",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.worst,
            c.tol,
            c.cases
        );
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        bail!("{failed} of {} checks failed", checks.len());
    }
    Ok(())
}
