use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use saferl::harness::{
    run_experiment_with,
    validate::{validate_numerics, validate_suite},
    ExperimentConfig, HarnessError,
};

#[derive(Parser)]
#[command(
    name = "saferl",
    version,
    about = "Safe policy-gradient learning for robust linear MPC"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the batch RL experiment and write CSV/gnuplot artifacts.
    Run(Overrides),
    /// Run the acceptance checks; closed-loop runs write under <out-dir>/validate.
    Validate {
        #[command(flatten)]
        overrides: Overrides,
        /// Skip the closed-loop checks (7 to 10).
        #[arg(long)]
        numerics_only: bool,
    },
    /// Print a complete configuration file for a case.
    PrintConfig {
        #[arg(long, default_value_t = 1)]
        case: u8,
    },
}

#[derive(Args)]
struct Overrides {
    /// TOML configuration; every key is required.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Case preset (1 or 2). Applied on top of --config.
    #[arg(long)]
    case: Option<u8>,
    /// Number of RL steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::case_defaults(self.case.unwrap_or(1))?,
        };
        if let (Some(case), Some(_)) = (self.case, &self.config) {
            cfg.apply_case(case)?;
        }
        if let Some(n) = self.steps {
            cfg.rl_steps = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.to_string_lossy().into_owned();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_for(err: &anyhow::Error) -> ExitCode {
    let code = err
        .downcast_ref::<HarnessError>()
        .map(HarnessError::exit_code)
        .unwrap_or(1);
    ExitCode::from(code as u8)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(o) => {
            let cfg = o.resolve()?;
            eprintln!(
                "case {}: {} RL steps, {} rollouts x {} steps, seed {}",
                cfg.case, cfg.rl_steps, cfg.rollouts, cfg.rollout_steps, cfg.seed
            );
            let trace = run_experiment_with(&cfg, |t| {
                let k = t.j_mean.len() - 1;
                eprintln!("step {k:>4}  J = {:.6} ± {:.6}", t.j_mean[k], t.j_std[k]);
            })
            .with_context(|| format!("artifacts written to {}", cfg.out_dir))?;
            let first = trace.j_mean.first().copied().unwrap_or(f64::NAN);
            let last = trace.j_mean.last().copied().unwrap_or(f64::NAN);
            println!("J: {first:.6} -> {last:.6}");
            println!("artifacts: {}", cfg.out_dir);
            Ok(())
        }
        Command::Validate {
            overrides,
            numerics_only,
        } => {
            let cfg = overrides.resolve()?;
            let results = if numerics_only {
                validate_numerics(&cfg)
            } else {
                validate_suite(&cfg)
            };
            let mut failed = 0;
            for r in &results {
                println!("{}", r.line());
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                anyhow::bail!("{failed} of {} checks failed", results.len());
            }
            Ok(())
        }
        Command::PrintConfig { case } => {
            print!(
                "{}",
                ExperimentConfig::case_defaults(case)?.to_toml_string()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_for(&e)
        }
    }
}
