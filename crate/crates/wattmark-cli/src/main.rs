//! Command-line front end: run scenario epochs, evaluate attack detection
//! rates, and benchmark the protocol's initialization and sealing costs.
//!
//! Exit codes: 0 when the run completed (detections count as success), 1
//! when any frame suffered undetected corruption of its recovered sum, 2
//! for configuration or usage errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wattmark::bench::{run_bench, BenchConfig};
use wattmark::domain::{AesKeySize, HashAlg};
use wattmark::netsim::{attack_eval, run_epoch, RunReport};
use wattmark::scenario::ScenarioConfig;

#[derive(Parser)]
#[command(
    name = "wattmark",
    version,
    about = "Privacy-preserving smart-meter aggregation: scenario runner, \
             attack evaluator, and microbenchmarks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario epoch and report per-frame outcomes.
    Run(RunArgs),
    /// Measure initialization and per-reading sealing costs.
    Bench(BenchArgs),
    /// Measure detection rates for every scripted attack class.
    AttackEval(AttackEvalArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory for run_report.json and frames.csv; overrides the
    /// config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated hash algorithms (sha224, sha256, sha512).
    #[arg(long, default_value = "sha224,sha256,sha512")]
    hash: String,
    /// Comma-separated AES key sizes in bits (128, 192, 256).
    #[arg(long, default_value = "128,192,256")]
    aes: String,
    /// Repetitions per measurement (at least 1000).
    #[arg(long, default_value_t = 1000)]
    reps: u32,
    /// Frames in the benchmarked epoch initialization.
    #[arg(long, default_value_t = 24)]
    frames: u32,
    /// Directory for bench_report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttackEvalArgs {
    /// Scenario config file (TOML); its epoch parameters seed the
    /// evaluation runs.
    #[arg(long)]
    config: PathBuf,
    /// Attacked frames per attack class (at least 1000).
    #[arg(long, default_value_t = 1000)]
    trials: u32,
    /// Directory for attack_eval.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Bench(args) => cmd_bench(args),
        Cmd::AttackEval(args) => cmd_attack_eval(args),
    }
}

fn write_report(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating report directory {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_summary(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "mode: {} | meters: {} (effective {}) | frames: {}\n",
        report.mode, report.meters_registered, report.effective_meters, report.frames_total
    ));
    out.push_str(&format!(
        "attacked: {} | detected: {} | undetected corruption: {} | exact: {}\n",
        report.frames_attacked,
        report.frames_detected,
        report.frames_corrupted_undetected,
        report.frames_recovered_exact
    ));
    if !report.detections_by_kind.is_empty() {
        out.push_str("detections by kind:\n");
        for (kind, count) in &report.detections_by_kind {
            out.push_str(&format!("  {kind}: {count}\n"));
        }
    }
    let verdict = if report.frames_corrupted_undetected > 0 {
        "UNDETECTED CORRUPTION"
    } else if report.frames_detected > 0 {
        "all tampering detected"
    } else {
        "clean"
    };
    out.push_str(&format!("verdict: {verdict}\n"));
    out
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let cfg = ScenarioConfig::load(&args.config)
        .with_context(|| format!("loading scenario {}", args.config.display()))?;
    let report = run_epoch(&cfg).context("running scenario")?;

    print!("{}", run_summary(&report));
    if let Some(dir) = args.out.as_ref().or(cfg.out_dir.as_ref()) {
        write_report(dir, "run_report.json", &report.to_json_string())?;
        write_report(dir, "frames.csv", &report.frames_csv())?;
    }

    if report.frames_corrupted_undetected > 0 {
        Ok(ExitCode::from(1))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn parse_hashes(list: &str) -> Result<Vec<HashAlg>> {
    list.split(',')
        .map(|item| {
            HashAlg::parse(item).ok_or_else(|| anyhow::anyhow!("unknown hash algorithm {item:?}"))
        })
        .collect()
}

fn parse_aes_sizes(list: &str) -> Result<Vec<AesKeySize>> {
    list.split(',')
        .map(|item| {
            let bits: u16 = item
                .trim()
                .parse()
                .with_context(|| format!("AES key size {item:?} is not a number"))?;
            AesKeySize::from_bits(bits)
                .ok_or_else(|| anyhow::anyhow!("AES key size must be 128, 192, or 256 (got {bits})"))
        })
        .collect()
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    let cfg = BenchConfig {
        reps: args.reps,
        frames: args.frames,
        hashes: parse_hashes(&args.hash)?,
        aes_sizes: parse_aes_sizes(&args.aes)?,
        ..BenchConfig::default()
    };
    let report = run_bench(&cfg).context("benchmark configuration rejected")?;
    print!("{}", report.human_table());
    if let Some(dir) = args.out.as_ref() {
        write_report(dir, "bench_report.json", &report.to_json_string())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_attack_eval(args: AttackEvalArgs) -> Result<ExitCode> {
    let cfg = ScenarioConfig::load(&args.config)
        .with_context(|| format!("loading scenario {}", args.config.display()))?;
    if args.trials < 1000 {
        bail!("attack evaluation needs at least 1000 trials (got {})", args.trials);
    }
    let report = attack_eval(&cfg, args.trials).context("running attack evaluation")?;
    print!("{}", report.human_table());
    if let Some(dir) = args.out.as_ref() {
        write_report(dir, "attack_eval.json", &report.to_json_string())?;
    }
    Ok(ExitCode::SUCCESS)
}
