use adasa::harness::{execute, Experiment, ExperimentConfig, HarnessError};
use clap::{Args, CommandFactory, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "adasa", version, about = "Adaptive stochastic gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Seeded runs of one schedule, with thinned diagnostic series.
    Run(Common),
    /// Rate metric against the horizon N for constant-parameter settings.
    RateStudy(Common),
    /// Escape fractions from a strict saddle over a (beta, r, s) grid.
    TrapStudy(Common),
    /// Historical vs rescaled recursions for the three beta2 regimes.
    EquivCheck(Common),
    /// Step-size checks, regime and oracle cost table.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of seeds per configuration (overrides the config).
    #[arg(long)]
    seeds: Option<usize>,
    /// Worker threads (overrides the config).
    #[arg(long)]
    workers: Option<usize>,
    /// Run schedules that fail the step-size checks.
    #[arg(long)]
    override_assumptions: bool,
}

fn usage(sub: Option<&str>) -> ExitCode {
    let mut cmd = Cli::command();
    let help = match sub.and_then(|s| cmd.find_subcommand_mut(s)) {
        Some(sc) => sc.render_help(),
        None => cmd.render_help(),
    };
    eprintln!("{help}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(command) = cli.command else {
        return usage(None);
    };
    let (exp, common, name) = match command {
        Command::Run(c) => (Experiment::Run, c, "run"),
        Command::RateStudy(c) => (Experiment::RateStudy, c, "rate-study"),
        Command::TrapStudy(c) => (Experiment::TrapStudy, c, "trap-study"),
        Command::EquivCheck(c) => (Experiment::EquivCheck, c, "equiv-check"),
        Command::Validate(c) => (Experiment::Validate, c, "validate"),
    };
    let Some(path) = common.config.as_ref() else {
        eprintln!("error: --config is required");
        return usage(Some(name));
    };
    let mut cfg = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(HarnessError::EmptyConfig) => {
            eprintln!("error: {} is empty", path.display());
            return usage(Some(name));
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(m) = common.seeds {
        cfg.seeds = m;
    }
    if let Some(k) = common.workers {
        cfg.workers = k;
    }
    if common.override_assumptions {
        cfg.override_assumptions = true;
    }
    cfg.out_dir = Some(common.out.display().to_string());
    if let Err(e) = cfg.check() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }

    match execute(exp, &cfg, &common.out) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            for f in outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
