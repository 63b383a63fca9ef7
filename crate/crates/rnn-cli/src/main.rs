//! Command-line harness: gradient checking, desk-scale sequence training,
//! evaluation of saved models, and serialization round-trip verification.
//!
//! Exit codes: 0 ok, 1 check failure, 2 config error, 3 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rnn_cli::config::{ModelKind, Task, TrainConfig};
use rnn_cli::{check, metrics, train};

#[derive(Parser)]
#[command(name = "rnn-cli", about = "Recurrent network training and verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct TrainArgs {
    /// Recurrent core
    #[arg(long, value_enum, default_value_t = ModelKind::Lstm)]
    model: ModelKind,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// BPTT window and training sequence length
    #[arg(long, default_value_t = 8)]
    rho: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1234)]
    seed: u64,
    #[arg(long, value_enum)]
    task: Task,
    /// Text corpus path (charlm)
    #[arg(long)]
    data: Option<String>,
    /// Carry hidden state across windows instead of resetting per window
    #[arg(long, default_value_t = false)]
    remember: bool,
    /// Directory receiving metrics.csv and model.bin
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainArgs {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model,
            hidden_size: self.hidden,
            rho: self.rho,
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            task: self.task,
            data_path: self.data.clone(),
            remember: self.remember,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compare every registered architecture's gradients against central
    /// finite differences
    Gradcheck {
        #[arg(long, default_value_t = 1234)]
        seed: u64,
        /// Test hook: also check a deliberately wrong gradient (must fail)
        #[arg(long, hide = true, default_value_t = false)]
        corrupt_gradients: bool,
    },
    /// Train a model and emit per-epoch metrics
    Train(TrainArgs),
    /// Evaluate a saved model on a task's validation data
    Eval {
        /// Saved model file
        #[arg(long)]
        model_path: PathBuf,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Save and reload every module type, checking bit-exact forwards
    SerializeRoundtrip {
        /// Directory for the model files (a temp dir by default)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code_for(err: &rnn::Error) -> u8 {
    match err {
        rnn::Error::Io(_) | rnn::Error::Format(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<u8, rnn::Error> {
    match cli.command {
        Command::Gradcheck {
            seed,
            corrupt_gradients,
        } => {
            let ok = check::run_gradcheck(seed, corrupt_gradients)?;
            Ok(if ok { 0 } else { 1 })
        }
        Command::Train(args) => {
            let cfg = args.to_config();
            let (metrics, store, model) = train::run_train(&cfg)?;
            if let Some(out) = &args.out {
                std::fs::create_dir_all(out)?;
                metrics.write(out.join("metrics.csv"))?;
                rnn::serialize::save(out.join("model.bin"), model.as_ref(), &store)?;
            }
            Ok(0)
        }
        Command::Eval { model_path, args } => {
            let cfg = args.to_config();
            let (mut store, mut model) = rnn::serialize::load(&model_path, cfg.seed)?;
            let row = train::run_eval(&cfg, &mut store, model.as_mut())?;
            let mut metrics = metrics::Metrics::new();
            metrics.push(row);
            if let Some(out) = &args.out {
                std::fs::create_dir_all(out)?;
                metrics.write(out.join("metrics.csv"))?;
            }
            Ok(0)
        }
        Command::SerializeRoundtrip { out } => {
            let tmp;
            let dir = match &out {
                Some(d) => d.clone(),
                None => {
                    tmp = std::env::temp_dir().join(format!("rnn-roundtrip-{}", std::process::id()));
                    tmp
                }
            };
            let ok = check::run_roundtrip(&dir)?;
            Ok(if ok { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
