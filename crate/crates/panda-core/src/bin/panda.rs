//! Command-line simulator for decentralized optimization over time-varying
//! networks.
//!
//! Exit codes: 0 success, 1 config error, 2 numerical divergence,
//! 3 assumption-verification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use panda_core::harness::{
    self, compare_over_seeds, load_trace, run_experiment, theorem_compliance_suite, write_outputs,
    RunConfig,
};
use panda_core::model::instance_from_text;
use panda_core::theory::{rate_bound, residual_sequences, small_gain_gains, verify_arrows};

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGENCE: u8 = 2;
const EXIT_ASSUMPTION: u8 = 3;

#[derive(Parser)]
#[command(name = "panda", about = "Decentralized dual-ascent simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigOverrides {
    /// TOML config file; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for instance and graph generation
    #[arg(long)]
    seed: Option<u64>,
    /// Number of rounds to simulate
    #[arg(long)]
    iters: Option<u64>,
    /// Algorithm(s) to run (repeatable): panda, panda-accel, diging, exact-avg, static-dual
    #[arg(long)]
    algo: Vec<String>,
    /// Dual step size c for the PANDA family
    #[arg(long)]
    step_size: Option<f64>,
    /// DIGing step size alpha
    #[arg(long)]
    diging_step: Option<f64>,
    /// Acceleration weight eta
    #[arg(long)]
    eta: Option<f64>,
    /// Number of agents
    #[arg(long)]
    n: Option<usize>,
    /// Local variable dimension
    #[arg(long)]
    p: Option<usize>,
    /// Per-round independent link removal probability
    #[arg(long)]
    removal_prob: Option<f64>,
    /// Condition-number cap for generated local matrices
    #[arg(long)]
    cond_cap: Option<f64>,
    /// Output directory for CSV, plot data and trace files
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record full-state snapshots every this many rounds
    #[arg(long)]
    snapshot_stride: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment and write residual CSV and plot data
    Run(ConfigOverrides),
    /// Run all requested algorithms over an 11-seed sweep and report medians
    Compare(ConfigOverrides),
    /// Run the theorem compliance suite over a grid of instances and graphs
    Certify,
    /// Check the small-gain arrow inequalities on a stored trace
    VerifyArrows {
        /// Trace JSON produced by `run` with snapshot stride 1
        #[arg(long)]
        trace: PathBuf,
        /// Instance text file the trace was produced from
        #[arg(long)]
        instance: PathBuf,
        /// Dual step size the trace was run with
        #[arg(long)]
        step_size: f64,
        /// Contraction window
        #[arg(long, default_value_t = 1)]
        b: usize,
        /// Contraction factor; estimated from the config when omitted
        #[arg(long)]
        delta: f64,
        /// Horizons to check
        #[arg(long, value_delimiter = ',', default_values_t = [10usize, 50, 200])]
        k: Vec<usize>,
    },
}

fn build_config(overrides: &ConfigOverrides) -> Result<RunConfig, String> {
    let mut cfg = match &overrides.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            RunConfig::from_toml_str(&text).map_err(|e| e.to_string())?
        }
        None => RunConfig::default(),
    };
    if !overrides.algo.is_empty() {
        cfg.algorithms = overrides.algo.clone();
    }
    macro_rules! over {
        ($($field:ident <- $src:ident),*) => {
            $(if let Some(v) = overrides.$src.clone() { cfg.$field = v; })*
        };
    }
    over!(
        seed <- seed, iters <- iters, c <- step_size, alpha <- diging_step, eta <- eta,
        n <- n, p <- p, removal_prob <- removal_prob, cond_cap <- cond_cap,
        snapshot_stride <- snapshot_stride
    );
    if overrides.out.is_some() {
        cfg.out = overrides.out.clone();
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn cmd_run(overrides: &ConfigOverrides) -> Result<u8, String> {
    let cfg = build_config(overrides)?;
    let result = run_experiment(&cfg).map_err(|e| e.to_string())?;
    for summary in &result.summaries {
        match &summary.error {
            Some(err) => println!("{}: error: {err}", summary.algorithm),
            None => {
                let reached = summary
                    .iterations_to_threshold
                    .map(|k| format!("reached {:.0e} at round {k}", cfg.threshold))
                    .unwrap_or_else(|| "did not reach threshold".into());
                let rate = summary
                    .rate_fit
                    .map(|f| format!(", rate {:.6} (R^2 {:.4})", f.lambda_hat, f.r_squared))
                    .unwrap_or_default();
                println!(
                    "{}: final residual {:.3e}, {} rounds, {}{}, {} messages{}",
                    summary.algorithm,
                    summary.final_residual.unwrap_or(f64::NAN),
                    cfg.iters,
                    reached,
                    rate,
                    summary.total_messages,
                    if summary.diverged { " [DIVERGED]" } else { "" },
                );
            }
        }
    }
    if let Some(dir) = &cfg.out {
        let files = write_outputs(&result, dir).map_err(|e| e.to_string())?;
        for f in files {
            println!("wrote {}", f.display());
        }
    }
    if result.summaries.iter().any(|s| s.diverged) {
        return Ok(EXIT_DIVERGENCE);
    }
    if result.summaries.iter().any(|s| s.error.is_some()) {
        return Ok(EXIT_DIVERGENCE);
    }
    Ok(0)
}

fn cmd_compare(overrides: &ConfigOverrides) -> Result<u8, String> {
    let mut cfg = build_config(overrides)?;
    if overrides.algo.is_empty() && cfg.algorithms == vec!["panda".to_string()] {
        cfg.algorithms =
            vec!["panda".into(), "panda-accel".into(), "diging".into()];
    }
    let seeds: Vec<u64> =
        (0..harness::COMPARISON_SEEDS as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let summary = compare_over_seeds(&cfg, &seeds).map_err(|e| e.to_string())?;
    println!("seeds: {:?}", summary.seeds);
    for algo in &summary.per_algorithm {
        let median = algo
            .median_iterations
            .map(|k| k.to_string())
            .unwrap_or_else(|| "not reached".into());
        println!(
            "{}: median iterations to {:.0e} = {} ({} of {} seeds converged)",
            algo.algorithm,
            cfg.threshold,
            median,
            algo.converged_seeds,
            summary.seeds.len(),
        );
    }
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        let path = dir.join("comparison.json");
        let json = serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?;
        std::fs::write(&path, json).map_err(|e| e.to_string())?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_certify() -> Result<u8, String> {
    let report = theorem_compliance_suite().map_err(|e| e.to_string())?;
    for cell in &report.cells {
        println!("kappa = {}, graph = {}, delta = {:.6}", cell.kappa, cell.graph, cell.delta);
        for check in &cell.checks {
            println!(
                "  [{}] {}: {}",
                if check.passed { "pass" } else { "FAIL" },
                check.name,
                check.detail
            );
        }
    }
    if report.all_passed() {
        println!("compliance suite: all cells passed");
        Ok(0)
    } else {
        println!("compliance suite: {} failure(s)", report.failures().len());
        Ok(EXIT_ASSUMPTION)
    }
}

fn cmd_verify_arrows(
    trace_path: &PathBuf,
    instance_path: &PathBuf,
    c: f64,
    b: usize,
    delta: f64,
    k: &[usize],
) -> Result<u8, String> {
    let trace = load_trace(trace_path).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(instance_path)
        .map_err(|e| format!("cannot read {}: {e}", instance_path.display()))?;
    let prob = instance_from_text(&text).map_err(|e| e.to_string())?;
    let (mu, lip) = (prob.mu(), prob.lip());
    let bundle = residual_sequences(&trace, &prob).map_err(|e| e.to_string())?;
    let lambda = match rate_bound(mu, lip, b, delta, c) {
        Ok(cert) if !cert.vacuous => cert
            .lambda
            .max((1.0 - c / (2.0 * lip)).sqrt())
            .max((1.0 + delta.powf(1.0 / b as f64)) / 2.0),
        _ => (1.0 - c / (2.0 * lip)).sqrt().max((1.0 + delta.powf(1.0 / b as f64)) / 2.0),
    };
    let gains = small_gain_gains(mu, lip, b, delta, c, lambda, &bundle)
        .map_err(|e| e.to_string())?;
    let report = verify_arrows(&bundle, &gains, k).map_err(|e| e.to_string())?;
    println!("lambda = {lambda:.6}, loop gain = {:.6}", gains.loop_gain());
    let mut all_hold = true;
    for check in &report.checks {
        all_hold &= check.holds;
        println!(
            "  [{}] {} at K={}: lhs {:.6e} <= rhs {:.6e} (slack {:.3e})",
            if check.holds { "pass" } else { "FAIL" },
            check.arrow,
            check.k,
            check.lhs,
            check.rhs,
            check.slack
        );
    }
    Ok(if all_hold { 0 } else { EXIT_ASSUMPTION })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(overrides) => cmd_run(overrides),
        Command::Compare(overrides) => cmd_compare(overrides),
        Command::Certify => cmd_certify(),
        Command::VerifyArrows { trace, instance, step_size, b, delta, k } => {
            cmd_verify_arrows(trace, instance, *step_size, *b, *delta, k)
        }
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
