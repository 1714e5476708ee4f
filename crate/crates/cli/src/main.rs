mod analyze;
mod book;
mod config;
mod effects;
mod output;
mod simulate;
mod telemetry;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ProjectConfig;
use crate::output::{Failure, Usage};

#[derive(Debug, Parser)]
#[command(name = "learnprof", version, about = "Quiz authoring, telemetry and psychometric analysis for online textbooks")]
struct Cli {
    /// Project configuration file [default: ./learnprof.toml when present]
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel analyses [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print JSON instead of text tables
    #[arg(long, global = true)]
    json: bool,
    /// Embed a generatedAt timestamp in written JSON files
    #[arg(long, global = true)]
    stamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check quiz files for schema and answer-key defects
    Validate(book::ValidateArgs),
    /// Expand quiz directives in a book and write the manifest
    Build(book::BuildArgs),
    /// Run the telemetry server
    Serve(telemetry::ServeArgs),
    /// Download an NDJSON export from a server or read one from a store file
    Export(telemetry::ExportArgs),
    /// Reader drop-off, classical test theory or IRT analysis
    Analyze(analyze::AnalyzeArgs),
    /// Before/after evaluation of deployed interventions
    Interventions(effects::InterventionArgs),
    /// Sample size needed to detect an effect
    Power(effects::PowerArgs),
    /// Small-sample error simulation
    Simulate(simulate::SimulateArgs),
    /// Generate a synthetic book and telemetry from a known 3PL model
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Dropoff,
    Ctt,
    Irt,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 60)]
    items: usize,
    #[arg(long, default_value_t = 3000)]
    readers: usize,
    /// [default: seed from the config, else 7]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 6)]
    chapters: usize,
    /// Probability of stopping after each chapter
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Probability of retrying a quiz with missed questions
    #[arg(long, default_value_t = 0.0)]
    retry_rate: f64,
    #[arg(long, default_value_t = 90)]
    span_days: u32,
    /// Project directory to create
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Settings shared by every subcommand.
pub struct Global {
    pub config: ProjectConfig,
    pub json: bool,
    pub stamp: bool,
}

fn synth(g: &Global, args: &SynthArgs) -> anyhow::Result<()> {
    use learnprof_core::synth::{generate, SynthConfig};

    for (name, p) in [("dropout", args.dropout), ("retry-rate", args.retry_rate)] {
        if !(0.0..1.0).contains(&p) {
            return Err(Usage(format!("--{name} must lie in [0, 1), got {p}")).into());
        }
    }
    if args.items == 0 || args.readers == 0 || args.chapters == 0 {
        return Err(Usage("--items, --readers and --chapters must be positive".into()).into());
    }
    let cfg = SynthConfig {
        items: args.items,
        readers: args.readers,
        seed: args.seed.unwrap_or(if g.config.seed != 0 { g.config.seed } else { 7 }),
        chapters: args.chapters,
        dropout: args.dropout,
        retry_rate: args.retry_rate,
        span_days: args.span_days,
    };
    let data = generate(&cfg);
    std::fs::create_dir_all(&args.out)?;
    data.write_to(&args.out)?;
    if g.json {
        output::print_json(&serde_json::json!({
            "dir": args.out,
            "config": cfg,
            "commitHash": data.truth.commit_hash,
            "events": data.events.len(),
        }))?;
    } else {
        println!(
            "wrote {} items, {} readers, {} events to {}",
            cfg.items,
            cfg.readers,
            data.events.len(),
            args.out.display()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Usage("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let g = Global {
        config: ProjectConfig::load(cli.config.as_deref())?,
        json: cli.json,
        stamp: cli.stamp,
    };
    match &cli.command {
        Command::Validate(a) => book::validate(&g, a),
        Command::Build(a) => book::build(&g, a),
        Command::Serve(a) => telemetry::serve(&g, a),
        Command::Export(a) => telemetry::export(&g, a),
        Command::Analyze(a) => analyze::run(&g, a),
        Command::Interventions(a) => effects::interventions(&g, a),
        Command::Power(a) => effects::power(&g, a),
        Command::Simulate(a) => simulate::run(&g, a),
        Command::Synth(a) => synth(&g, a),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Failure>() => ExitCode::from(1),
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
