use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use qfvm_core::config::RawConfig;
use qfvm_core::experiments;
use qfvm_core::{Config, RunStatus};

const DEFAULT_EPSILONS: &str = "5e-1,1e-1,1e-2,1e-3,1e-4";
const DEFAULT_SIZES: &str = "16x4,32x8,64x16";

/// Desk-scale emulator of a quantum finite volume method.
///
/// Any `--section.key=value` argument overrides the matching config key.
#[derive(Parser, Debug)]
#[command(name = "qfvm", version)]
struct Cli {
    /// Run configuration (flat `key = value` file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory [default: $QFVM_OUT_DIR or ./qfvm-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Concurrent runs for sweep, scaling and compare.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Overrides quantum.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single run; exit 0 converged, 2 diverged or nonphysical, 3 max_iters.
    Run,
    /// Noise-free baseline plus one run per epsilon.
    Sweep {
        /// Comma-separated epsilon grid.
        #[arg(long, default_value = DEFAULT_EPSILONS)]
        epsilons: String,
    },
    /// One noisy step from converged baselines at increasing sizes.
    Scaling {
        /// Comma-separated `NXxNY` sizes.
        #[arg(long, default_value = DEFAULT_SIZES)]
        sizes: String,
        /// Tomography error, or `bypass` for the noise-free step.
        #[arg(long, default_value = "1e-2")]
        epsilon: String,
    },
    /// Noise-free baseline against the configured noisy run.
    Compare,
}

/// Splits dotted `--a.b=v` overrides from the arguments clap should see.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((k, v)) if k.contains('.') => overrides.push((k.to_string(), v.to_string())),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

fn load_config(cli: &Cli, overrides: &[(String, String)]) -> anyhow::Result<Config> {
    let path = cli.config.as_deref().context("--config is required")?;
    let mut raw = RawConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    for (k, v) in overrides {
        raw.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        raw.set("quantum.seed", &seed.to_string())?;
    }
    Ok(raw.build()?)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("QFVM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("qfvm-out"))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> anyhow::Result<Vec<T>> {
    s.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| anyhow::anyhow!("bad {what} `{t}`")))
        .collect()
}

fn parse_sizes(s: &str) -> anyhow::Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|t| {
            let (a, b) = t.trim().split_once('x').with_context(|| format!("bad size `{t}`, expected NXxNY"))?;
            Ok((a.parse()?, b.parse()?))
        })
        .collect()
}

fn cmd_run(cfg: &Config, out: &Path) -> anyhow::Result<u8> {
    let (outcome, summary) = experiments::run_single(cfg, Some(out))?;
    print!("{}", summary.render());
    Ok(match outcome.status {
        RunStatus::Converged => 0,
        RunStatus::Diverged | RunStatus::NonPhysical { .. } => 2,
        RunStatus::MaxIters => 3,
    })
}

fn cmd_sweep(cfg: &Config, out: &Path, jobs: usize, epsilons: &str) -> anyhow::Result<u8> {
    let eps: Vec<f64> = parse_list(epsilons, "epsilon")?;
    let report = experiments::sweep(cfg, &eps, jobs, Some(out))?;
    print!("{}", report.to_csv());
    for p in report.points.iter().chain([&report.baseline]) {
        if let Some(e) = &p.error {
            eprintln!("point {:?} failed: {e}", p.epsilon);
        }
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", report.thresholds_text().lines().filter(|l| !l.starts_with("warning")).map(|l| format!("{l}\n")).collect::<String>());
    Ok(0)
}

fn cmd_scaling(cfg: &Config, out: &Path, jobs: usize, sizes: &str, epsilon: &str) -> anyhow::Result<u8> {
    let sizes = parse_sizes(sizes)?;
    let eps = match epsilon {
        "bypass" => None,
        e => Some(e.parse::<f64>().with_context(|| format!("bad epsilon `{e}`"))?),
    };
    let report = experiments::scaling(cfg, &sizes, eps, jobs, Some(out))?;
    print!("{}", report.to_csv());
    println!("error_spread = {:.4}", report.error_spread);
    println!("within_band = {}", report.within_band);
    let ratios: Vec<String> = report.norm_ratio_vs_sqrt.iter().map(|r| format!("{r:.4}")).collect();
    println!("norm_ratio_vs_sqrt = {}", ratios.join(","));
    println!("norm_scaling_ok = {}", report.norm_scaling_ok);
    Ok(0)
}

fn cmd_compare(cfg: &Config, out: &Path, jobs: usize) -> anyhow::Result<u8> {
    let report = experiments::compare(cfg, jobs, Some(out))?;
    print!("{}", report.summary().render());
    Ok(0)
}

fn real_main() -> anyhow::Result<u8> {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    if cli.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let cfg = load_config(&cli, &overrides)?;
    let out = out_dir(&cli);
    match &cli.command {
        Command::Run => cmd_run(&cfg, &out),
        Command::Sweep { epsilons } => cmd_sweep(&cfg, &out, cli.jobs, epsilons),
        Command::Scaling { sizes, epsilon } => cmd_scaling(&cfg, &out, cli.jobs, sizes, epsilon),
        Command::Compare => cmd_compare(&cfg, &out, cli.jobs),
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
