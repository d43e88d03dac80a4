use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use apikg::fixtures::verify_golden;
use apikg::pipeline::config::Decimal;
use apikg::pipeline::{
    Pipeline, PipelineConfig, PipelineError, ProviderMode, StagePaths, StageReport, StageStatus,
};

/// Build API knowledge graphs: explore a schema from seed texts, construct
/// a graph from target texts, filter it by association rules, and score it.
#[derive(Parser, Debug)]
#[command(name = "apikg", version)]
struct Cli {
    /// TOML configuration file; its relative paths resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderMode>,
    /// Write per-invocation trace files under <out>/trace.
    #[arg(long, global = true)]
    trace: bool,
    /// Unknown types and fusion coverage gaps become fatal.
    #[arg(long, global = true)]
    strict: bool,
    /// Record every provider answer into this fixture file.
    #[arg(long, global = true)]
    record: Option<PathBuf>,
    /// Rerun stages even if their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
    /// Maximum number of provider calls.
    #[arg(long, global = true)]
    budget: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct FilterArgs {
    #[arg(long)]
    support: Option<String>,
    #[arg(long)]
    confidence: Option<String>,
    #[arg(long)]
    lift: Option<String>,
    /// Compare with >= instead of >.
    #[arg(long)]
    inclusive: bool,
    #[arg(long, value_parser = ["occurrence", "distinct"])]
    count_mode: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Induce the potential schema from the seed corpus.
    Explore,
    /// Extract the unreliable knowledge graph from the target corpus.
    Construct {
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Validate type triples and prune the knowledge graph.
    Filter {
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        kg: Option<PathBuf>,
        #[command(flatten)]
        thresholds: FilterArgs,
    },
    /// Score a knowledge graph against gold triples.
    Eval {
        #[arg(long)]
        kg: Option<PathBuf>,
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Validated schema for type-triple accuracy.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// All stages in order.
    Run {
        #[command(flatten)]
        thresholds: FilterArgs,
    },
    /// Rerun a fixture kit and diff its artifacts against the golden copies.
    Verify {
        #[arg(long)]
        golden: PathBuf,
        /// Overwrite the golden copies with the new outputs.
        #[arg(long)]
        bless: bool,
    },
}

fn apply_filter_args(cfg: &mut PipelineConfig, a: &FilterArgs) -> Result<(), PipelineError> {
    if let Some(s) = &a.support {
        cfg.filter.support = Decimal::Text(s.clone());
    }
    if let Some(s) = &a.confidence {
        cfg.filter.confidence = Decimal::Text(s.clone());
    }
    if let Some(s) = &a.lift {
        cfg.filter.lift = Decimal::Text(s.clone());
    }
    if a.inclusive {
        cfg.filter.inclusive = true;
    }
    if let Some(m) = &a.count_mode {
        cfg.filter.count_mode = m.parse().map_err(PipelineError::Config)?;
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(p) = cli.provider {
        cfg.provider.mode = p;
    }
    cfg.trace |= cli.trace;
    cfg.strict |= cli.strict;
    if cli.budget.is_some() {
        cfg.provider.budget = cli.budget;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    match &cli.command {
        Command::Filter { thresholds, .. } | Command::Run { thresholds } => {
            apply_filter_args(&mut cfg, thresholds)?
        }
        _ => {}
    }
    Ok(cfg)
}

fn print_reports(reports: &[StageReport]) {
    for r in reports {
        let status = match r.status {
            StageStatus::Ran => "done",
            StageStatus::Skipped => "up to date",
        };
        println!("{:<10} {status}", r.stage);
        for o in &r.outputs {
            println!("           {}", o.display());
        }
    }
}

fn execute(cli: &Cli) -> Result<bool, PipelineError> {
    let cfg = load_config(cli)?;
    if let Command::Verify { golden, bless } = &cli.command {
        let work = cfg.out.clone();
        let report = verify_golden(cfg, golden, &work, *bless)?;
        print!("{report}");
        return Ok(report.passed());
    }
    let mut pipeline = Pipeline::new(cfg)?.with_force(cli.force);
    if let Some(r) = &cli.record {
        pipeline = pipeline.with_recording(r.clone());
    }
    let result = match &cli.command {
        Command::Explore => pipeline.explore().map(|r| vec![r]),
        Command::Construct { schema } => pipeline
            .construct(&StagePaths {
                schema: schema.clone(),
                ..StagePaths::default()
            })
            .map(|r| vec![r]),
        Command::Filter { schema, kg, .. } => pipeline
            .filter(&StagePaths {
                schema: schema.clone(),
                kg: kg.clone(),
                gold: None,
            })
            .map(|r| vec![r]),
        Command::Eval { kg, gold, schema } => pipeline
            .eval(&StagePaths {
                schema: schema.clone(),
                kg: kg.clone(),
                gold: gold.clone(),
            })
            .map(|r| vec![r]),
        Command::Run { .. } => pipeline.run(),
        Command::Verify { .. } => unreachable!("handled above"),
    };
    if let Some(n) = pipeline.finish()? {
        eprintln!("recorded {n} fixture entries");
    }
    let calls = pipeline.provider_calls();
    if calls > 0 {
        log::info!("{calls} provider call(s)");
    }
    print_reports(&result?);
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
