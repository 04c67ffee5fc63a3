use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fentrisk::bounds::BoundKind;
use fentrisk::data::{load_csv, partition_by_class, Reference, SynthSpec};
use fentrisk::experiment::{checkpoint_name, emit_report, run_experiment_with, ExperimentConfig, ExperimentError};
use fentrisk::model::{Checkpoint, DEFAULT_L_MAX};
use fentrisk::risk::oracle::run_oracle_suite;
use fentrisk::risk::RiskKind;
use fentrisk::trainer::{certify, CertifySettings};

#[derive(Parser)]
#[command(name = "fentrisk", version, about = "Subgroup risk measures, PAC-Bayes bounds and self-bounding training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config
    Run {
        config: PathBuf,
        /// Output directory for report.json and plotdata.csv
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also save every trained model under <out>/checkpoints
        #[arg(long)]
        checkpoints: bool,
    },
    /// Certify a saved model on a dataset
    Bound {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        bound_kind: BoundKind,
        #[arg(long, default_value = "label")]
        label_column: String,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value = "cvar")]
        risk: RiskKind,
        #[arg(long, default_value = "class-ratio")]
        reference: Reference,
        #[arg(long, default_value_t = DEFAULT_L_MAX)]
        l_max: f64,
    },
    /// Generate a synthetic imbalanced dataset
    Synth {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check the risk solvers against brute-force oracles
    OracleCheck {
        #[arg(long, default_value_t = 500)]
        cvar_instances: usize,
        #[arg(long, default_value_t = 200)]
        evar_instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn validation(e: impl ToString) -> Failure {
    Failure::Validation(e.to_string())
}

fn runtime(e: impl ToString) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            out,
            checkpoints,
        } => {
            let config = ExperimentConfig::load(&config)?;
            let ckpt_dir = out.join("checkpoints");
            if checkpoints {
                std::fs::create_dir_all(&ckpt_dir).map_err(runtime)?;
            }
            let report = run_experiment_with(&config, |cell| {
                if checkpoints {
                    let path = ckpt_dir.join(checkpoint_name(cell.bound, cell.alpha, cell.repetition));
                    cell.checkpoint.save(&path)?;
                }
                Ok(())
            })?;
            emit_report(&report, &out)?;
            for a in &report.aggregates {
                println!(
                    "{:<22} alpha={:<5} bound={:.4}±{:.4} test_risk={:.4}±{:.4} f_score={:.4}±{:.4}",
                    a.bound.to_string(),
                    a.alpha,
                    a.bound_value.mean,
                    a.bound_value.std,
                    a.test_risk.mean,
                    a.test_risk.std,
                    a.f_score.mean,
                    a.f_score.std
                );
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Bound {
            checkpoint,
            dataset,
            alpha,
            bound_kind,
            label_column,
            delta,
            lambda,
            risk,
            reference,
            l_max,
        } => {
            let ckpt = Checkpoint::load(&checkpoint).map_err(validation)?;
            let data = load_csv(&dataset, &label_column)
                .and_then(|d| d.with_class_order(&ckpt.class_names))
                .map_err(validation)?;
            let partition = partition_by_class(&data, reference).map_err(validation)?;
            let (posterior, prior) = ckpt.distributions(1e-6).map_err(validation)?;
            let settings = CertifySettings {
                risk,
                delta,
                lambda,
                l_max,
                n_priors: ckpt.n_priors,
            };
            let report = certify(
                &ckpt.arch,
                &ckpt.params,
                &posterior,
                &prior,
                bound_kind,
                alpha,
                &data,
                &partition,
                &settings,
            )
            .map_err(|e| match e {
                fentrisk::trainer::TrainError::Io(_) => runtime(e),
                _ => validation(e),
            })?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
            Ok(())
        }
        Command::Synth { spec, output } => {
            let text = std::fs::read_to_string(&spec)
                .map_err(|e| validation(format!("cannot read {}: {e}", spec.display())))?;
            let spec: SynthSpec = toml::from_str(&text).map_err(validation)?;
            let data = spec.generate().map_err(validation)?;
            data.write_csv(&output).map_err(runtime)?;
            println!("wrote {} rows to {}", data.len(), output.display());
            Ok(())
        }
        Command::OracleCheck {
            cvar_instances,
            evar_instances,
            seed,
        } => {
            let report = run_oracle_suite(cvar_instances, evar_instances, seed).map_err(runtime)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
            if report.passed() {
                Ok(())
            } else {
                Err(runtime("solver disagrees with the oracles"))
            }
        }
    }
}
