//! Command-line front end: selection, hierarchical selection, the
//! experiment protocols, and the gradient self-check.
//!
//! Exit codes: 0 success, 1 gradcheck tolerance failure, 2 malformed
//! input or flags, 3 solver failure.

use clap::{Args, Parser, Subcommand};
use kfs::experiments::{self, SweepOpts};
use kfs::kernels::KernelSpec;
use kfs::krr::Dataset;
use kfs::optimize::{Beta, SelectionConfig, SelectionResult, Stepsize};
use kfs::signals::ModelSpec;
use kfs::{KfsError, Result};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

#[derive(Parser)]
#[command(name = "kfs", version = kfs::VERSION, about = "Kernel feature selection by projected gradient descent")]
struct Cli {
    /// Worker threads (default: hardware parallelism; env KFS_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select features on a CSV dataset.
    Select(SelectArgs),
    /// Multi-round selection that pins discovered features at tau.
    Hier(SelectArgs),
    /// Run a built-in experiment protocol.
    Experiment(ExperimentArgs),
    /// Check the closed-form gradient against central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SelectArgs {
    /// Input CSV with a header row; all non-target numeric columns are features.
    input: PathBuf,

    /// Response column name.
    #[arg(long)]
    target: Option<String>,

    /// laplace | gaussian | mixture:<t:w,...>
    #[arg(long)]
    kernel: Option<String>,

    /// Distance exponent (1 or 2); defaults to the kernel's natural exponent.
    #[arg(long)]
    q: Option<u8>,

    #[arg(long)]
    lambda: Option<f64>,

    #[arg(long)]
    gamma: Option<f64>,

    /// l1 budget of the feasible set.
    #[arg(long, alias = "M")]
    m: Option<f64>,

    /// "auto" or a positive stepsize.
    #[arg(long)]
    step: Option<String>,

    #[arg(long)]
    max_iters: Option<usize>,

    #[arg(long)]
    tol: Option<f64>,

    #[arg(long)]
    support_eps: Option<f64>,

    /// Pin value for hierarchical rounds.
    #[arg(long)]
    tau: Option<f64>,

    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,

    /// key=value file supplying defaults for any of the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// fig1 | fig2 | trend
    #[arg(long)]
    protocol: String,

    #[arg(long)]
    n: Option<usize>,

    #[arg(long)]
    p: Option<usize>,

    #[arg(long)]
    trials: Option<usize>,

    #[arg(long)]
    lambda: Option<f64>,

    #[arg(long)]
    sigma2: Option<f64>,

    /// Comma-separated gamma grid override.
    #[arg(long)]
    gammas: Option<String>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    m: Option<f64>,

    #[arg(long)]
    step: Option<String>,

    #[arg(long)]
    max_iters: Option<usize>,

    #[arg(long)]
    tol: Option<f64>,

    #[arg(long)]
    support_eps: Option<f64>,

    #[arg(long)]
    tau: Option<f64>,

    /// Comma-separated sample sizes for the trend protocol.
    #[arg(long)]
    n_list: Option<String>,

    #[arg(long)]
    n_ref: Option<usize>,

    /// Replicates per sample size for the trend protocol.
    #[arg(long)]
    trend_seeds: Option<usize>,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 40)]
    n: usize,

    #[arg(long, default_value_t = 8)]
    p: usize,

    /// Check a single exponent; default runs q = 1 then q = 2.
    #[arg(long)]
    q: Option<u8>,

    #[arg(long, default_value_t = 0.1)]
    lambda: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads(cli.threads);
    let outcome = match cli.command {
        Command::Select(args) => cmd_select(args, false),
        Command::Hier(args) => cmd_select(args, true),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_solver() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn init_threads(flag: Option<usize>) {
    let threads = flag.or_else(|| {
        std::env::var("KFS_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global();
    }
}

// ---------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// FNV-1a over the raw bytes; enough to notice an input changing between
/// runs, which is all the manifest needs.
fn fnv64(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: serde_json::Value,
    inputs: &[(String, String)],
    outputs: &[String],
    started: u64,
    wall: f64,
) -> Result<()> {
    let manifest = json!({
        "schema": kfs::SCHEMA,
        "command": command,
        "version": kfs::VERSION,
        "config": config,
        "input_digests": inputs.iter().map(|(p, d)| json!({"path": p, "fnv64": d})).collect::<Vec<_>>(),
        "outputs": outputs,
        "started_unix": started,
        "wall_clock_secs": wall,
    });
    write_file(&out_dir.join("manifest.json"), &pretty(&manifest))
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serialization");
    s.push('\n');
    s
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)
        .map_err(|e| KfsError::invalid(format!("cannot write {}: {e}", path.display())))
}

fn ensure_out_dir(out: Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| KfsError::invalid(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

// ---------------------------------------------------------------------
// CSV input
// ---------------------------------------------------------------------

struct CsvData {
    feature_names: Vec<String>,
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    p: usize,
}

fn read_csv(path: &Path, target: &str) -> Result<(CsvData, String)> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| KfsError::invalid(format!("cannot read {}: {e}", path.display())))?;
    let digest = fnv64(raw.as_bytes());
    let mut lines = raw.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| KfsError::invalid("empty CSV: missing header row"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let target_idx = columns
        .iter()
        .position(|c| *c == target)
        .ok_or_else(|| KfsError::invalid(format!("target column '{target}' not in header")))?;
    let feature_names: Vec<String> = columns
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, c)| c.to_string())
        .collect();
    let p = feature_names.len();
    if p == 0 {
        return Err(KfsError::invalid("no feature columns besides the target"));
    }

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut n = 0;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row_no = line_no + 1; // 1-based, header is row 1
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(KfsError::invalid(format!(
                "row {row_no}: {} cells, expected {}",
                cells.len(),
                columns.len()
            )));
        }
        for (ci, cell) in cells.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| {
                KfsError::invalid(format!(
                    "row {row_no}, column '{}': cannot parse '{cell}' as a number",
                    columns[ci]
                ))
            })?;
            if !value.is_finite() {
                return Err(KfsError::invalid(format!(
                    "row {row_no}, column '{}': non-finite value '{cell}'",
                    columns[ci]
                )));
            }
            if ci == target_idx {
                y.push(value);
            } else {
                x.push(value);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(KfsError::invalid("CSV has a header but no data rows"));
    }
    Ok((
        CsvData {
            feature_names,
            x,
            y,
            n,
            p,
        },
        digest,
    ))
}

// ---------------------------------------------------------------------
// config file + flag resolution
// ---------------------------------------------------------------------

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| KfsError::invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(KfsError::invalid(format!(
                "{}:{}: expected key=value, got '{line}'",
                path.display(),
                i + 1
            )));
        };
        map.insert(
            key.trim().replace('_', "-"),
            value.trim().trim_matches('"').to_string(),
        );
    }
    Ok(map)
}

fn parse_from<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| KfsError::invalid(format!("config key '{key}': bad value '{raw}'"))),
    }
}

fn parse_stepsize(raw: &str) -> Result<Stepsize> {
    if raw.eq_ignore_ascii_case("auto") {
        return Ok(Stepsize::Auto);
    }
    let v: f64 = raw.parse().map_err(|_| {
        KfsError::invalid(format!("--step expects 'auto' or a number, got '{raw}'"))
    })?;
    if !(v > 0.0) {
        return Err(KfsError::invalid(format!(
            "--step must be positive, got {v}"
        )));
    }
    Ok(Stepsize::Fixed(v))
}

/// laplace | gaussian | mixture:<t:w,...>, with --q overriding the
/// kernel's natural exponent.
fn parse_kernel(name: &str, q: Option<u8>) -> Result<(String, KernelSpec)> {
    let lower = name.to_ascii_lowercase();
    if lower == "laplace" {
        let spec = KernelSpec::new(q.unwrap_or(1), vec![(1.0, 1.0)])?;
        return Ok(("laplace".into(), spec));
    }
    if lower == "gaussian" {
        let spec = KernelSpec::new(q.unwrap_or(2), vec![(1.0, 1.0)])?;
        return Ok(("gaussian".into(), spec));
    }
    if let Some(body) = lower.strip_prefix("mixture:") {
        let q = q.ok_or_else(|| KfsError::invalid("mixture kernels need an explicit --q"))?;
        let mut atoms = Vec::new();
        for part in body.split(',') {
            let Some((t, w)) = part.split_once(':') else {
                return Err(KfsError::invalid(format!(
                    "mixture atom '{part}' is not t:w"
                )));
            };
            let t: f64 = t
                .trim()
                .parse()
                .map_err(|_| KfsError::invalid(format!("mixture scale '{t}' is not a number")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| KfsError::invalid(format!("mixture weight '{w}' is not a number")))?;
            atoms.push((t, w));
        }
        return Ok(("mixture".into(), KernelSpec::new(q, atoms)?));
    }
    Err(KfsError::invalid(format!(
        "unknown kernel '{name}' (expected laplace, gaussian, or mixture:<t:w,...>)"
    )))
}

struct ResolvedSelect {
    kernel_name: String,
    spec: KernelSpec,
    target: String,
    config: SelectionConfig,
}

fn resolve_select(args: &SelectArgs) -> Result<ResolvedSelect> {
    let file = match &args.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let target = args
        .target
        .clone()
        .or_else(|| file.get("target").cloned())
        .unwrap_or_else(|| "y".to_string());
    let kernel_name = args
        .kernel
        .clone()
        .or_else(|| file.get("kernel").cloned())
        .unwrap_or_else(|| "laplace".to_string());
    let q = match args.q {
        Some(q) => Some(q),
        None => parse_from::<u8>(&file, "q")?,
    };
    let (kernel_name, spec) = parse_kernel(&kernel_name, q)?;

    let lambda = match args.lambda {
        Some(v) => v,
        None => parse_from::<f64>(&file, "lambda")?.ok_or_else(|| {
            KfsError::invalid(
                "missing --lambda\n\nUsage: kfs select --lambda <LAMBDA> [OPTIONS] <INPUT>",
            )
        })?,
    };
    let step = match &args.step {
        Some(raw) => parse_stepsize(raw)?,
        None => match file.get("step") {
            Some(raw) => parse_stepsize(raw)?,
            None => Stepsize::Auto,
        },
    };
    let defaults = SelectionConfig::default();
    let config = SelectionConfig {
        lambda,
        gamma: pick(args.gamma, &file, "gamma", defaults.gamma)?,
        m: pick(args.m, &file, "m", defaults.m)?,
        stepsize: step,
        max_iters: pick(args.max_iters, &file, "max-iters", defaults.max_iters)?,
        tol: pick(args.tol, &file, "tol", defaults.tol)?,
        support_eps: pick(args.support_eps, &file, "support-eps", defaults.support_eps)?,
        tau: pick(args.tau, &file, "tau", defaults.tau)?,
        seed: pick(args.seed, &file, "seed", 0)?,
    };
    Ok(ResolvedSelect {
        kernel_name,
        spec,
        target,
        config,
    })
}

fn pick<T: std::str::FromStr + Copy>(
    flag: Option<T>,
    file: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    Ok(parse_from::<T>(file, key)?.unwrap_or(default))
}

// ---------------------------------------------------------------------
// select / hier
// ---------------------------------------------------------------------

fn selection_json(
    command: &str,
    resolved: &ResolvedSelect,
    data_names: &[String],
    y_mean: f64,
    res: &SelectionResult,
) -> serde_json::Value {
    let support_1based: Vec<usize> = res.support.iter().map(|l| l + 1).collect();
    let support_names: Vec<&String> = res.support.iter().map(|&l| &data_names[l]).collect();
    let rounds_1based: Vec<Vec<usize>> = res
        .rounds
        .iter()
        .map(|r| r.iter().map(|l| l + 1).collect())
        .collect();
    json!({
        "schema": kfs::SCHEMA,
        "command": command,
        "version": kfs::VERSION,
        "kernel": {"name": resolved.kernel_name, "q": resolved.spec.q(), "atoms": resolved.spec.atoms()},
        "target": resolved.target,
        "feature_names": data_names,
        "y_mean": y_mean,
        "beta": res.beta_final.values(),
        "support": support_1based,
        "support_names": support_names,
        "rounds": rounds_1based,
        "objective_history": res.objective_history,
        "iterate_sup_changes": res.iterate_sup_changes,
        "resolved_stepsize": res.resolved_stepsize,
        "halvings": res.halvings,
        "config": res.config_echo,
    })
}

fn cmd_select(args: SelectArgs, hierarchical: bool) -> Result<ExitCode> {
    let started = now_unix();
    let t0 = Instant::now();
    let resolved = resolve_select(&args)?;
    let (csv, digest) = read_csv(&args.input, &resolved.target)?;
    let data = Dataset::new(csv.x, csv.n, csv.p, csv.y)?;
    let out_dir = ensure_out_dir(args.out.clone())?;

    let command = if hierarchical { "hier" } else { "select" };
    let res = if hierarchical {
        kfs::hier_select(&resolved.spec, &data, &resolved.config)?
    } else {
        let beta0 = Beta::zeros(data.p(), resolved.config.m)?;
        kfs::pgd_select(&resolved.spec, &data, &resolved.config, &beta0)?
    };

    let result_json = selection_json(command, &resolved, &csv.feature_names, data.y_mean(), &res);
    let result_path = out_dir.join("result.json");
    write_file(&result_path, &pretty(&result_json))?;

    // the response mean removed on load travels with the manifest so a
    // prediction-time consumer can re-add it
    let mut manifest_config = serde_json::to_value(&res.config_echo).expect("config echo");
    manifest_config["y_mean"] = json!(data.y_mean());
    manifest_config["target"] = json!(resolved.target);
    write_manifest(
        &out_dir,
        command,
        manifest_config,
        &[(args.input.display().to_string(), digest)],
        &[result_path.display().to_string()],
        started,
        t0.elapsed().as_secs_f64(),
    )?;
    println!(
        "{command}: selected {} of {} features -> {}",
        res.support.len(),
        data.p(),
        result_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------

fn parse_f64_list(raw: &str, what: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| KfsError::invalid(format!("{what}: '{s}' is not a number")))
        })
        .collect()
}

fn parse_usize_list(raw: &str, what: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| KfsError::invalid(format!("{what}: '{s}' is not an integer")))
        })
        .collect()
}

const FIG1_GAMMAS: [f64; 9] = [0.0, 0.002, 0.005, 0.01, 0.02, 0.05, 0.20, 0.6, 2.0];
const FIG2_GAMMAS: [f64; 9] = [0.0, 0.002, 0.005, 0.01, 0.02, 0.05, 0.2, 0.5, 1.0];

fn sweep_opts(args: &ExperimentArgs) -> Result<SweepOpts> {
    let defaults = SweepOpts::default();
    Ok(SweepOpts {
        m: args.m.unwrap_or(defaults.m),
        stepsize: match &args.step {
            Some(raw) => parse_stepsize(raw)?,
            None => defaults.stepsize,
        },
        max_iters: args.max_iters.unwrap_or(defaults.max_iters),
        tol: args.tol.unwrap_or(defaults.tol),
        support_eps: args.support_eps.unwrap_or(defaults.support_eps),
        tau: args.tau.unwrap_or(defaults.tau),
    })
}

fn cmd_experiment(args: ExperimentArgs) -> Result<ExitCode> {
    let started = now_unix();
    let t0 = Instant::now();
    let out_dir = ensure_out_dir(args.out.clone())?;
    let seed = args.seed.unwrap_or(0);
    let opts = sweep_opts(&args)?;

    let (csv_text, result_json, config_echo) = match args.protocol.as_str() {
        "fig1" => {
            let n = args.n.unwrap_or(200);
            let p = args.p.unwrap_or(200);
            let trials = args.trials.unwrap_or(20);
            let lambda = args.lambda.unwrap_or(0.01);
            let sigma2 = args.sigma2.unwrap_or(4.0);
            let gammas = match &args.gammas {
                Some(raw) => parse_f64_list(raw, "--gammas")?,
                None => FIG1_GAMMAS.to_vec(),
            };
            let model = ModelSpec::main_effect(p, sigma2)?;
            let kernels = vec![
                ("laplace".to_string(), KernelSpec::laplace()),
                ("gaussian".to_string(), KernelSpec::gaussian()),
            ];
            let curves =
                experiments::run_roc(&model, &kernels, &gammas, n, lambda, trials, seed, &opts)?;
            let config = json!({
                "protocol": "fig1", "n": n, "p": p, "trials": trials, "lambda": lambda,
                "sigma2": sigma2, "gammas": gammas, "seed": seed, "opts": opts,
            });
            let result = json!({
                "schema": kfs::SCHEMA, "command": "experiment", "version": kfs::VERSION,
                "config": config, "curves": curves,
            });
            (experiments::roc_to_csv(&curves), result, config)
        }
        "fig2" => {
            let n = args.n.unwrap_or(200);
            let p = args.p.unwrap_or(200);
            let trials = args.trials.unwrap_or(20);
            let lambda = args.lambda.unwrap_or(0.01);
            let sigma2 = args.sigma2.unwrap_or(1.0);
            let gammas = match &args.gammas {
                Some(raw) => parse_f64_list(raw, "--gammas")?,
                None => FIG2_GAMMAS.to_vec(),
            };
            let (points, logs) = experiments::run_hier_experiment(
                n, p, sigma2, lambda, &gammas, trials, seed, &opts,
            )?;
            let curves = vec![experiments::RocCurve {
                kernel: "laplace".to_string(),
                q: 1,
                points,
            }];
            let config = json!({
                "protocol": "fig2", "n": n, "p": p, "trials": trials, "lambda": lambda,
                "sigma2": sigma2, "gammas": gammas, "seed": seed, "opts": opts,
            });
            let result = json!({
                "schema": kfs::SCHEMA, "command": "experiment", "version": kfs::VERSION,
                "config": config, "curves": curves, "round_logs": logs,
            });
            (experiments::roc_to_csv(&curves), result, config)
        }
        "trend" => {
            let p = args.p.unwrap_or(10);
            let lambda = args.lambda.unwrap_or(0.1);
            let sigma2 = args.sigma2.unwrap_or(4.0);
            let n_list = match &args.n_list {
                Some(raw) => parse_usize_list(raw, "--n-list")?,
                None => vec![100, 200, 400, 800],
            };
            let n_ref = args.n_ref.unwrap_or(3200);
            let seeds = args.trend_seeds.unwrap_or(10);
            let model = ModelSpec::main_effect(p, sigma2)?;
            let points = experiments::run_concentration_trend(
                &model,
                &KernelSpec::laplace(),
                lambda,
                &n_list,
                seeds,
                n_ref,
                seed,
            )?;
            let config = json!({
                "protocol": "trend", "p": p, "lambda": lambda, "sigma2": sigma2,
                "n_list": n_list, "n_ref": n_ref, "seeds": seeds, "seed": seed,
            });
            let result = json!({
                "schema": kfs::SCHEMA, "command": "experiment", "version": kfs::VERSION,
                "config": config, "points": points,
            });
            (experiments::trend_to_csv(&points), result, config)
        }
        other => {
            return Err(KfsError::invalid(format!(
                "unknown protocol '{other}' (expected fig1, fig2, or trend)"
            )))
        }
    };

    let csv_path = out_dir.join("results.csv");
    let json_path = out_dir.join("results.json");
    write_file(&csv_path, &csv_text)?;
    write_file(&json_path, &pretty(&result_json))?;
    write_manifest(
        &out_dir,
        "experiment",
        config_echo,
        &[],
        &[
            csv_path.display().to_string(),
            json_path.display().to_string(),
        ],
        started,
        t0.elapsed().as_secs_f64(),
    )?;
    println!(
        "experiment {}: wrote {} and {}",
        args.protocol,
        csv_path.display(),
        json_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------

const GRADCHECK_FD_TOL: f64 = 1e-5;
const GRADCHECK_NSD_TOL: f64 = 1e-10;
const GRADCHECK_FD_STEP: f64 = 1e-5;

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    use rand::Rng;

    if args.n == 0 || args.p == 0 {
        return Err(KfsError::invalid("gradcheck needs n >= 1 and p >= 1"));
    }
    let qs: Vec<u8> = match args.q {
        Some(q) => vec![q],
        None => vec![1, 2],
    };
    let model = ModelSpec::main_effect(args.p.max(2), 1.0)?;
    let mut ok = true;
    for q in qs {
        let spec = KernelSpec::new(q, vec![(1.0, 1.0)])?;
        let data = kfs::signals::generate(&model, args.n, args.seed)?;
        let mut rng = kfs::rng::stream_rng(args.seed, 77);
        let mut worst_rel = 0.0f64;
        let mut worst_nsd = f64::NEG_INFINITY;
        for _ in 0..10 {
            let beta: Vec<f64> = (0..data.p()).map(|_| rng.gen_range(0.1..1.0)).collect();
            let report = kfs::full_gradient(&spec, &data, &beta, args.lambda, 0.0)?;
            if args.n > 1 {
                let fd = kfs::gradient::finite_diff_gradient(
                    &spec,
                    &data,
                    &beta,
                    args.lambda,
                    GRADCHECK_FD_STEP,
                )?;
                for l in 0..data.p() {
                    let rel = (report.grad[l] - fd[l]).abs() / (1.0 + report.grad[l].abs());
                    worst_rel = worst_rel.max(rel);
                }
            }
            worst_nsd = worst_nsd.max(report.pairwise_nsd_value);
        }
        let nsd_scale = spec.h_prime0().abs() * data.mean_sq_y();
        let nsd_bound = GRADCHECK_NSD_TOL * nsd_scale;
        let pass = worst_rel <= GRADCHECK_FD_TOL && worst_nsd <= nsd_bound;
        println!(
            "gradcheck q={q}: max relative gradient error {worst_rel:.3e} (tol {GRADCHECK_FD_TOL:.0e}), \
             nsd form max {worst_nsd:.3e} (bound {nsd_bound:.3e}) -> {}",
            if pass { "ok" } else { "FAIL" }
        );
        ok &= pass;
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
