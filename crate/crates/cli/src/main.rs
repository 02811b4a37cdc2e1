use std::path::PathBuf;
use std::process::ExitCode;

use adapid_core::experiment::{emit_plot_data, run_experiment, verify};
use adapid_core::pe::{certify_pe_with, PeSettings};
use adapid_core::{ingest_trajectory, Error, ExperimentConfig, LossSpec, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adapid", version, about = "Adaptive identification experiments with ISS error bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the number of trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Certify persistence of excitation for a trajectory CSV.
    CertifyPe {
        trajectory: PathBuf,
        /// Loss as JSON or shorthand: `power:P`, `power:P:SCALE`, `half_square`, `huber:H`.
        #[arg(long)]
        loss: String,
        /// Window length.
        #[arg(short = 'T', long = "T")]
        horizon: usize,
        /// Seed for the sphere sampler (non-quadratic losses).
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recompute a finished run from its persisted files.
    Verify { run_dir: PathBuf },
    /// Rewrite error_vs_bound.csv and, with --svg, plot.svg for each trial.
    Plot {
        run_dir: PathBuf,
        #[arg(long)]
        svg: bool,
    },
}

fn parse_loss(text: &str) -> Result<LossSpec> {
    let text = text.trim();
    let spec = if text.starts_with('{') {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("loss JSON: {e}")))?
    } else {
        let parts: Vec<&str> = text.split(':').collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number {s:?} in loss {text:?}")))
        };
        match parts.as_slice() {
            ["half_square"] => LossSpec::half_square(),
            ["power", p] => LossSpec::power(num(p)?),
            ["power", p, scale] => LossSpec::Power {
                p: num(p)?,
                scale: num(scale)?,
            },
            ["huber", h] => LossSpec::huber(num(h)?),
            _ => return Err(Error::Config(format!("unrecognized loss {text:?}"))),
        }
    };
    spec.validate()?;
    Ok(spec)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run {
            config,
            out,
            trials,
            seed,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(trials) = trials {
                cfg.trials = trials;
            }
            if let Some(seed) = seed {
                cfg.system.seed = seed;
            }
            let report = run_experiment(&cfg)?;
            print!("{}", report.summary_text());
            println!("results in {}", cfg.output_dir.display());
            Ok(report.exit_code())
        }
        Command::CertifyPe {
            trajectory,
            loss,
            horizon,
            seed,
        } => {
            let loss = parse_loss(&loss)?;
            let traj = ingest_trajectory(&trajectory)?;
            let mut settings = PeSettings::default();
            settings.sampler.seed = seed;
            let cert = certify_pe_with(&traj.regressors(), &loss, horizon, &settings)?;
            println!("{}", cert.to_json()?);
            if cert.is_pe {
                Ok(0)
            } else {
                eprintln!(
                    "PE certification failed: gamma1 = {:e} <= floor {:e}",
                    cert.gamma1, cert.gamma_floor
                );
                Ok(2)
            }
        }
        Command::Verify { run_dir } => {
            let v = verify(&run_dir)?;
            for m in &v.mismatches {
                println!("mismatch: {m}");
            }
            println!(
                "{} trials checked, {} violations ({} unexplained), artifacts {}",
                v.trials_checked,
                v.violations,
                v.unexplained_violations,
                if v.consistent() { "consistent" } else { "INCONSISTENT" }
            );
            Ok(v.exit_code())
        }
        Command::Plot { run_dir, svg } => {
            for p in emit_plot_data(&run_dir, svg)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
