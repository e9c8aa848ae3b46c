mod plot;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use siddm_core::divergence::{run_trials, TrialSummary};
use siddm_core::eval::{evaluate, read_samples_csv, write_atomic, write_samples_csv, MogSpec};
use siddm_core::objectives::{AfdWeight, Objective};
use siddm_core::rng::LabRng;
use siddm_core::trainer::{ablation_sweep, sweep_csv, train, Checkpoint, Models, RunConfig, SweepAxis};

const THREADS_ENV: &str = "SIDDM_LAB_THREADS";
/// Stream tag for the sampler and evaluator draws, mixed with `--seed`.
const CLI_STREAM: u64 = 0x636c_69;

#[derive(Parser)]
#[command(name = "siddm-lab", version, about = "Train, sample and evaluate few-step diffusion GANs on the 2-D mixture benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write checkpoint, run log and samples to --out-dir.
    Train(TrainArgs),
    /// Draw samples from a checkpoint's EMA generator.
    Sample(SampleArgs),
    /// Score samples against fresh draws from the mixture.
    Eval(EvalArgs),
    /// Train once per value of one config axis and tabulate final metrics.
    Sweep(SweepArgs),
    /// Check the joint-divergence bound on random discrete distributions.
    VerifyTheorem(VerifyArgs),
    /// Render samples over the mixture's mode centers as SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the reduced desk-scale config instead of the defaults.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// siddm, ddgan, ddpm or vanilla_gan.
    #[arg(long)]
    objective: Option<Objective>,
    #[arg(long)]
    steps: Option<usize>,
    /// A weight, or `inf` to drop the adversarial term.
    #[arg(long)]
    lambda_afd: Option<AfdWeight>,
    #[arg(long)]
    lambda_reg: Option<f64>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Must match the checkpoint's step count when given.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV.
    #[arg(long, default_value = "samples.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// CSV with header `x,y`.
    #[arg(long)]
    samples: PathBuf,
    /// JSON mixture spec; the 5x5 default when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// lambda_afd or steps.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated values, e.g. `0,0.5,1,inf`.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Largest support size on either axis.
    #[arg(long, default_value_t = 8)]
    max_support: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "samples.svg")]
    out: PathBuf,
    /// Panel title.
    #[arg(long)]
    title: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<siddm_core::Error> for Failure {
    fn from(e: siddm_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    run(std::env::args_os())
}

fn run(argv: impl IntoIterator<Item = OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::VerifyTheorem(a) => cmd_verify(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Six significant digits for human-facing output.
struct Sig6(f64);

impl fmt::Display for Sig6 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let x = self.0;
        if x == 0.0 || !x.is_finite() {
            return write!(f, "{x}");
        }
        let mag = x.abs().log10().floor() as i32;
        if !(-4..6).contains(&mag) {
            return write!(f, "{x:.5e}");
        }
        let s = format!("{x:.*}", (5 - mag).max(0) as usize);
        let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.') } else { &s };
        f.write_str(s)
    }
}

fn build_config(a: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut c = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?
        }
        None if a.desk => RunConfig::desk(),
        None => RunConfig::default(),
    };
    if a.config.is_some() && a.desk {
        return Err(Failure::Usage("--desk and --config are mutually exclusive".into()));
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = &a.out_dir {
        c.output_dir = Some(v.clone());
    }
    if let Some(v) = a.objective {
        c.objective = v;
    }
    if let Some(v) = a.steps {
        c.steps = v;
    }
    if let Some(v) = a.lambda_afd {
        c.lambda_afd = v;
    }
    if let Some(v) = a.lambda_reg {
        c.lambda_reg = v;
    }
    if let Some(v) = a.latent_dim {
        c.latent_dim = v;
    }
    if let Some(v) = a.iters {
        c.iters = v;
    }
    if let Some(v) = a.batch {
        c.batch_size = v;
    }
    c.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(c)
}

fn ensure_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

fn read_spec(path: Option<&Path>) -> Result<MogSpec, Failure> {
    let spec: MogSpec = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?
        }
        None => MogSpec::default(),
    };
    spec.validate()?;
    Ok(spec)
}

fn threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) => cap.clamp(1, available),
        None => available,
    }
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let config = build_config(&a.config)?;
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&dir)?;
    let config = RunConfig {
        output_dir: Some(dir.clone()),
        ..config
    };
    write_atomic(&dir.join("config.json"), serde_json::to_string_pretty(&config).expect("config serializes").as_bytes())?;
    eprintln!(
        "training {} with T={} for {} iterations (seed {})",
        config.objective.name(),
        config.steps,
        config.iters,
        config.seed
    );
    let out = train(config)?;
    match out.log.last() {
        Some(r) => {
            let m = &r.metrics;
            println!(
                "iteration {}: modes {} hq {} frechet {} sliced_w2 {}",
                r.iteration,
                m.modes_covered,
                Sig6(m.hq_fraction),
                Sig6(m.frechet),
                Sig6(m.sliced_w2)
            );
        }
        None => println!("iteration 0: no evaluation"),
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> CmdResult {
    let ck = Checkpoint::load(&a.checkpoint)?;
    if let Some(steps) = a.steps {
        if steps != ck.config.steps {
            return Err(Failure::Usage(format!(
                "--steps {steps} does not match the checkpoint's {} (the generator is conditioned on T)",
                ck.config.steps
            )));
        }
    }
    if a.n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    let models = Models::new(&ck.config)?;
    let gen = ck.ema_params.split_prefix("gen");
    let mut rng = LabRng::derived(a.seed, CLI_STREAM);
    let samples = models.sample(&gen, a.n, &mut rng)?;
    write_samples_csv(&a.out, &samples)?;
    println!("wrote {} samples to {}", a.n, a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let spec = read_spec(a.spec.as_deref())?;
    let samples = read_samples_csv(&a.samples)?;
    let mut rng = LabRng::derived(a.seed, CLI_STREAM + 1);
    let report = evaluate(&samples, &spec, &mut rng)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(out) = &a.out {
        write_atomic(out, json.as_bytes())?;
    }
    println!("{json}");
    eprintln!(
        "modes {}/{} hq {} frechet {} sliced_w2 {}",
        report.modes_covered,
        spec.num_modes(),
        Sig6(report.hq_fraction),
        Sig6(report.frechet),
        Sig6(report.sliced_w2)
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> CmdResult {
    let base = build_config(&a.config)?;
    let dir = base.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&dir)?;
    let base = RunConfig {
        output_dir: Some(dir.clone()),
        ..base
    };
    let values: Vec<String> = a.values.iter().map(|v| v.trim().to_owned()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Failure::Usage("--values needs at least one value".into()));
    }
    for v in &values {
        a.axis
            .apply(&base, v)
            .and_then(|c| c.validate())
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let rows = ablation_sweep(&base, a.axis, &values, threads())?;
    let table = sweep_csv(a.axis, &rows);
    write_atomic(&dir.join("sweep.csv"), table.as_bytes())?;
    for r in &rows {
        println!(
            "{} = {}: modes {} hq {} frechet {} sliced_w2 {}",
            a.axis.name(),
            r.value,
            r.metrics.modes_covered,
            Sig6(r.metrics.hq_fraction),
            Sig6(r.metrics.frechet),
            Sig6(r.metrics.sliced_w2)
        );
    }
    println!("wrote {}", dir.join("sweep.csv").display());
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    if a.max_support < 1 {
        return Err(Failure::Usage("--max-support must be at least 1".into()));
    }
    ensure_dir(&a.out_dir)?;
    let reports = run_trials(a.trials, a.max_support, a.seed)?;
    let summary = TrialSummary::from_reports(&reports);
    let path = a.out_dir.join("theorem_reports.json");
    write_atomic(&path, serde_json::to_string_pretty(&reports).expect("reports serialize").as_bytes())?;
    let slack = summary.min_slack.map_or_else(|| "n/a".to_owned(), |s| Sig6(s).to_string());
    println!(
        "trials {} violations {} not_applicable {} min_slack {slack}",
        summary.trials, summary.violations, summary.not_applicable
    );
    println!(
        "triangle failures {} pinsker failures {} sandwich failures {}",
        summary.triangle_failures, summary.pinsker_failures, summary.sandwich_failures
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> CmdResult {
    let spec = read_spec(a.spec.as_deref())?;
    let samples = read_samples_csv(&a.samples)?;
    let title = a.title.unwrap_or_else(|| a.samples.display().to_string());
    let svg = plot::scatter_svg(&samples, &spec, &title);
    write_atomic(&a.out, svg.as_bytes())?;
    println!("wrote {}", a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(Sig6(0.0048280613868982416).to_string(), "0.00482806");
        assert_eq!(Sig6(2.0).to_string(), "2");
        assert_eq!(Sig6(123456.7).to_string(), "123457");
        assert_eq!(Sig6(1234567.0).to_string(), "1.23457e6");
        assert_eq!(Sig6(-0.5).to_string(), "-0.5");
        assert_eq!(Sig6(12.345678).to_string(), "12.3457");
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from(["siddm-lab", "train", "--desk", "--steps", "2", "--lambda-afd", "inf", "--batch", "64"]).unwrap();
        let Command::Train(a) = cli.command else { panic!("expected train") };
        let c = build_config(&a.config).unwrap();
        assert_eq!((c.steps, c.lambda_afd, c.batch_size), (2, AfdWeight::Infinite, 64));
        assert_eq!(c.hidden, RunConfig::desk().hidden);
    }

    #[test]
    fn unknown_flags_are_rejected() {
        assert!(Cli::try_parse_from(["siddm-lab", "train", "--bogus"]).is_err());
    }
}
