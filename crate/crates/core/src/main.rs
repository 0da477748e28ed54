use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use toggle_core::harness::{
    cmd_evaluate, cmd_plot_data, cmd_search, cmd_sensitivity, cmd_validate, parse_seed_override, render_evaluation,
    render_sensitivity, HarnessError, RunConfig, SeedKind, RECORD_LOG,
};
use toggle_core::modes::DEFAULT_MODES;

#[derive(Parser)]
#[command(name = "toggle", version, about = "Constraint-guided compression search for small transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a seed, e.g. `search=3` (keys: model, corpus, search).
    #[arg(long = "seed-override", value_parser = parse_seed_override)]
    seed_override: Vec<(SeedKind, u64)>,
    /// Override the evaluation budget.
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a run configuration and list every problem.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the search and write records, Pareto front, modes and traces.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one configuration file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// JSON list of {layer, component, bits, prune}.
        #[arg(long)]
        kappa: PathBuf,
        #[arg(long, default_value = "toggle-out")]
        out: PathBuf,
    },
    /// Sweep each predicate threshold; `--budget` sets the per-cell budget.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit plot tables from a record log.
    PlotData {
        /// Record log; defaults to `<out>/records.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Run configuration supplying mode targets.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common, search_budget: bool) -> Result<RunConfig, HarnessError> {
    let cfg = cmd_validate(&common.config)?;
    if search_budget {
        cfg.with_overrides(&common.seed_override, common.budget)
            .map_err(HarnessError::Invalid)
    } else {
        let mut cfg = cfg
            .with_overrides(&common.seed_override, None)
            .map_err(HarnessError::Invalid)?;
        if let Some(b) = common.budget {
            cfg.sensitivity.budget = b;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Validate { config } => {
            cmd_validate(&config)?;
            println!("{}: ok", config.display());
        }
        Command::Search { common, out } => {
            let cfg = load(&common, true)?;
            let res = cmd_search(&cfg, &out)?;
            println!(
                "{} records, {} feasible, {} on the feasible Pareto front",
                res.records.len(),
                res.records.iter().filter(|r| r.feasible).count(),
                res.front.len()
            );
            print!("{}", res.report.render_table());
            println!("outputs in {}", out.display());
        }
        Command::Evaluate { common, kappa, out } => {
            let cfg = load(&common, true)?;
            print!("{}", render_evaluation(&cmd_evaluate(&cfg, &kappa, &out)?));
        }
        Command::Sensitivity { common, out } => {
            let cfg = load(&common, false)?;
            print!("{}", render_sensitivity(&cmd_sensitivity(&cfg, &out)?));
        }
        Command::PlotData { log, config, out } => {
            let modes = match &config {
                Some(p) => cmd_validate(p)?.modes,
                None => DEFAULT_MODES.iter().map(|(n, t)| (n.to_string(), *t)).collect(),
            };
            let log = log.unwrap_or_else(|| out.join(RECORD_LOG));
            let (a, b) = cmd_plot_data(Path::new(&log), &modes, &out)?;
            println!("wrote {} and {}", a.display(), b.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let HarnessError::Invalid(vs) = &e {
                for v in vs {
                    eprintln!("error: {v}");
                }
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
