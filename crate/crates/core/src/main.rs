use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use objectalign::drift::DEFAULT_QUANTILE;
use objectalign::feature::{load_video, save_video};
use objectalign::harness::{calibrate_on, run_bench, training_set, InjectedEvent, NegativePairing};
use objectalign::pipeline::{run_loop, LoopStatus, PipelineConfig, DEFAULT_MAX_ITERATIONS};
use objectalign::repair::{execute_repairs, plan_repairs, BuiltinInterpolator, ExecInterpolator, Interpolator, RepairError};
use objectalign::temporal::{parse_spec, TemporalCheck, DEFAULT_PROP_THRESHOLD};
use objectalign::threshold::{fit_thresholds, metric_probabilities, FitConfig, DEFAULT_LAMBDA};
use objectalign::{metrics, Report, Thresholds, Tolerances, Video};

#[derive(Parser)]
#[command(name = "objectalign", version, about = "Verify and repair temporal consistency of edited video features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit metric thresholds from consistent and inconsistent examples.
    Learn(LearnArgs),
    /// Verify every transition of a video and write a report.
    Verify(VerifyArgs),
    /// Repair the runs flagged in a report.
    Repair(RepairArgs),
    /// Verify and repair until consistent.
    Run(RunArgs),
    /// Print the satisfaction probability of a temporal specification.
    CheckSpec(CheckSpecArgs),
    /// Inject synthetic inconsistencies, detect and repair them.
    Bench(BenchArgs),
}

#[derive(Args)]
struct LearnArgs {
    /// Consistent video; its consecutive frames are the positive examples.
    #[arg(long)]
    positives: PathBuf,
    #[arg(long)]
    negatives: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, value_enum, default_value_t = NegativePairing::SameIndex)]
    negative_pairing: NegativePairing,
}

#[derive(Args)]
struct CheckOptions {
    #[arg(long)]
    thresholds: PathBuf,
    #[arg(long, requires = "eps_bg", conflicts_with = "calibrate")]
    eps_s: Option<f64>,
    #[arg(long, requires = "eps_s", conflicts_with = "calibrate")]
    eps_bg: Option<f64>,
    /// Consistent video to calibrate drift tolerances on.
    #[arg(long)]
    calibrate: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_QUANTILE)]
    quantile: f64,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    sat_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_PROP_THRESHOLD)]
    prop_threshold: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    video: PathBuf,
    #[command(flatten)]
    checks: CheckOptions,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct RepairArgs {
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// `builtin` or `exec:<command>`.
    #[arg(long, default_value = "builtin")]
    interpolator: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    video: PathBuf,
    #[command(flatten)]
    checks: CheckOptions,
    #[arg(long, default_value = "builtin")]
    interpolator: String,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iterations: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CheckSpecArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    video: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PROP_THRESHOLD)]
    prop_threshold: f64,
    /// Weight transitions by metric probabilities; without it every transition proceeds.
    #[arg(long)]
    thresholds: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    frames: usize,
    /// Event list as inline JSON or a path to a JSON file.
    #[arg(long)]
    events: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn video(path: &Path) -> Result<Video> {
    load_video(path).with_context(|| format!("loading {}", path.display()))
}

fn interpolator(spec: &str) -> Result<Box<dyn Interpolator<f64>>> {
    match spec {
        "builtin" => Ok(Box::new(BuiltinInterpolator)),
        _ => match spec.strip_prefix("exec:") {
            Some(cmd) if !cmd.trim().is_empty() => Ok(Box::new(ExecInterpolator::new(cmd))),
            _ => bail!("unknown interpolator `{spec}`; expected `builtin` or `exec:<command>`"),
        },
    }
}

fn temporal_check(spec: &Path, sat_threshold: f64, prop_threshold: f64) -> Result<TemporalCheck> {
    if !(0.0..=1.0).contains(&sat_threshold) {
        bail!("--sat-threshold must lie in [0, 1], got {sat_threshold}");
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let formula = parse_spec(text.trim()).with_context(|| format!("parsing {}", spec.display()))?;
    Ok(TemporalCheck::new(formula, sat_threshold, prop_threshold))
}

fn pipeline_config(opts: &CheckOptions) -> Result<PipelineConfig> {
    let thresholds: Thresholds = read_json(&opts.thresholds)?;
    let tolerances = match (opts.eps_s, opts.eps_bg, &opts.calibrate) {
        (Some(s), Some(bg), None) => Tolerances::new(s, bg)?,
        (None, None, Some(path)) => calibrate_on(&video(path)?, opts.quantile)?,
        _ => bail!("drift tolerances need either --eps-s and --eps-bg or --calibrate"),
    };
    let mut cfg = PipelineConfig::new(thresholds, tolerances);
    if let Some(spec) = &opts.spec {
        cfg = cfg.with_temporal(temporal_check(spec, opts.sat_threshold, opts.prop_threshold)?);
    }
    Ok(cfg)
}

fn learn(args: LearnArgs) -> Result<ExitCode> {
    let train = training_set(&video(&args.positives)?, &video(&args.negatives)?, args.negative_pairing)?;
    let cfg = FitConfig {
        lambda: args.lambda,
        learning_rate: args.lr,
        max_epochs: args.epochs,
        ..FitConfig::default()
    };
    let fit = fit_thresholds(&train, &cfg)?;
    log::info!(
        "fitted on {} examples in {} epochs: loss {:.6} -> {:.6}",
        train.len(),
        fit.epochs,
        fit.initial_loss,
        fit.final_loss
    );
    write_json(&args.out, &fit.thresholds)?;
    Ok(ExitCode::SUCCESS)
}

fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let cfg = pipeline_config(&args.checks)?;
    let report = cfg.evaluate(&video(&args.video)?)?;
    eprintln!(
        "{} of {} transitions inconsistent",
        report.inconsistent.len(),
        report.verdicts.len()
    );
    write_json(&args.report, &report)?;
    Ok(ExitCode::SUCCESS)
}

fn repair(args: RepairArgs) -> Result<ExitCode> {
    let frames = video(&args.video)?;
    let report: Report = read_json(&args.report)?;
    let plan = match plan_repairs(&report, frames.len()) {
        Ok(plan) => plan,
        Err(RepairError::NoAnchors) => {
            eprintln!("no valid anchor frames: every transition is inconsistent");
            return Ok(ExitCode::from(LoopStatus::NoAnchors.exit_code() as u8));
        }
        Err(e) => return Err(e.into()),
    };
    let repaired = execute_repairs(&frames, &plan.actions, interpolator(&args.interpolator)?.as_ref())?;
    save_video(&args.out, &repaired)?;
    Ok(ExitCode::SUCCESS)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let cfg = pipeline_config(&args.checks)?.with_max_iterations(args.max_iterations);
    let result = run_loop(video(&args.video)?, &cfg, interpolator(&args.interpolator)?.as_ref())?;
    if let Some(dir) = &args.report_dir {
        fs::create_dir_all(dir)?;
        for report in &result.reports {
            write_json(&dir.join(format!("report_{:03}.json", report.iteration)), report)?;
        }
    }
    save_video(&args.out, &result.video)?;
    eprintln!(
        "{:?} after {} repair passes; {} transitions still inconsistent",
        result.status,
        result.repair_passes(),
        result.final_report().inconsistent.len()
    );
    Ok(ExitCode::from(result.status.exit_code() as u8))
}

fn check_spec(args: CheckSpecArgs) -> Result<ExitCode> {
    let frames = video(&args.video)?;
    let check = temporal_check(&args.spec, 0.0, args.prop_threshold)?;
    let probs = match &args.thresholds {
        Some(path) => {
            let tau: Thresholds = read_json(path)?;
            frames
                .windows(2)
                .map(|w| {
                    let s = metrics::transition_features(&w[0], &w[1])?;
                    Ok(metric_probabilities(&s, &tau).iter().product())
                })
                .collect::<Result<Vec<f64>>>()?
        }
        None => vec![1.0; frames.len().saturating_sub(1)],
    };
    let result = check.evaluate(&frames, probs)?;
    println!("{}", result.psi);
    Ok(ExitCode::SUCCESS)
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    let events: Vec<InjectedEvent> = if args.events.trim_start().starts_with('[') {
        serde_json::from_str(&args.events).context("parsing --events")?
    } else {
        read_json(Path::new(&args.events))?
    };
    let outcome = run_bench(args.frames, &events, args.seed)?;
    fs::create_dir_all(&args.out)?;
    let out = |name: &str| args.out.join(name);
    save_video(out("clean.jsonl"), &outcome.clean)?;
    save_video(out("corrupted.jsonl"), &outcome.corrupted)?;
    save_video(out("corrected.jsonl"), &outcome.result.video)?;
    write_json(&out("thresholds.json"), &outcome.fixture.thresholds)?;
    write_json(&out("tolerances.json"), &outcome.fixture.tolerances)?;
    write_json(&out("ground_truth.json"), &outcome.truth)?;
    write_json(&out("report.json"), &outcome.result.reports[0])?;
    write_json(&out("scores.json"), &outcome.score)?;
    for (check, counts) in &outcome.score.per_check {
        println!(
            "{:<8} precision {:.3} recall {:.3} flagged {}",
            check.name(),
            counts.precision(),
            counts.recall(),
            counts.flagged
        );
    }
    println!(
        "{:?} after {} repair passes",
        outcome.result.status,
        outcome.result.repair_passes()
    );
    Ok(ExitCode::from(outcome.result.status.exit_code() as u8))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // usage errors exit 1; 2 is reserved for an unconverged loop
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Learn(a) => learn(a),
        Command::Verify(a) => verify(a),
        Command::Repair(a) => repair(a),
        Command::Run(a) => run(a),
        Command::CheckSpec(a) => check_spec(a),
        Command::Bench(a) => bench(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
