//! `kdaug`: command-line front end for the distillation toolkit.
//!
//! Exit codes: 0 on success, 1 on invalid input or a failed run, 2 when
//! `prop-check` completes but one of its checks fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kdaug::pipeline::{self, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "kdaug", version, about = "Knowledge distillation with data-augmentation ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run with this single seed (replaces the config's seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the teacher with cross-entropy and write its checkpoint.
    TrainTeacher,
    /// Distil one student from the saved teacher.
    Distill,
    /// Compute T. stddev, v̄ and r̄ of the teacher for every scheme and seed.
    Tstddev,
    /// Distil a student per scheme and seed and correlate the metrics with
    /// student test loss.
    RankDa,
    /// Run the correlated-sampling lab and check its properties.
    PropCheck,
    /// Correlate two columns of a ranking CSV over scheme means.
    Correlate,
    /// Print the effective configuration as JSON.
    PrintConfig,
}

fn load_config(cli: &Cli) -> kdaug::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> kdaug::Result<ExitCode> {
    let cfg = load_config(cli)?;
    let mut progress = |line: &str| eprintln!("{line}");
    match cli.command {
        Command::TrainTeacher => {
            pipeline::cmd_train_teacher(&cfg, &mut progress)?;
        }
        Command::Distill => {
            pipeline::cmd_distill(&cfg, &mut progress)?;
        }
        Command::Tstddev => {
            pipeline::cmd_tstddev(&cfg, &mut progress)?;
        }
        Command::RankDa => {
            let (_, summary) = pipeline::cmd_rank_da(&cfg, &mut progress)?;
            for c in &summary.correlations {
                match (&c.report, &c.undefined) {
                    (Some(r), _) => println!("{} vs {}: r = {:.4}, p = {:.4e}", c.x, c.y, r.r, r.p_value),
                    (_, Some(why)) => println!("{} vs {}: undefined ({why})", c.x, c.y),
                    _ => {}
                }
            }
        }
        Command::PropCheck => {
            let report = pipeline::cmd_prop_check(&cfg, &mut progress)?;
            if !report.passed() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Correlate => {
            pipeline::cmd_correlate(&cfg, &mut progress)?;
        }
        Command::PrintConfig => println!("{}", cfg.to_json()?),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // clap's own exit code for usage errors is 2, which is reserved here
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
