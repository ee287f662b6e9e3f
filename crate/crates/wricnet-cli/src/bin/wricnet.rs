//! Command-line front end. Exit codes: 0 success, 1 validation failure (bad
//! flags, bad config, unusable inputs), 2 invariant/assertion failure.

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wricnet_cli::commands;
use wricnet_cli::config::RunConfig;
use wricnet_cli::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "wricnet",
    about = "Multi-scale change detection: data preparation, training, evaluation, and audits",
    long_about = "Every command reads one TOML run configuration (all fields defaulted, unknown \
                  keys rejected) and is deterministic given that file plus the seed. Flags \
                  override config keys one-for-one."
)]
struct Cli {
    /// Run configuration file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides model.seed, the single seed all randomness flows from.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the command's primary output directory (prepare: the tile
    /// root; train: the checkpoint/loss-log directory; eval: the report
    /// directory).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build per-tier tile sets from source pairs (or synthesize them) with a
    /// provenance manifest.
    Prepare {
        /// Overrides data.synth_pairs: generate this many synthetic pairs.
        #[arg(long, value_name = "N")]
        synth: Option<usize>,
        /// Overrides data.synth_size.
        #[arg(long, value_name = "PIXELS")]
        size: Option<usize>,
        /// Overrides data.window.
        #[arg(long, value_name = "PIXELS")]
        window: Option<usize>,
        /// Overrides data.source.
        #[arg(long, value_name = "DIR")]
        source: Option<PathBuf>,
    },
    /// Train on the prepared training split; writes a checkpoint and a
    /// per-step loss log.
    Train {
        /// Overrides training.epochs.
        #[arg(long)]
        epochs: Option<u32>,
        /// Overrides training.lr.
        #[arg(long)]
        lr: Option<f64>,
        /// Overrides model.variant.
        #[arg(long)]
        variant: Option<String>,
        /// Overrides model.width_scale.
        #[arg(long, value_name = "SCALE")]
        width_scale: Option<f64>,
    },
    /// Score a checkpoint on the prepared evaluation split.
    Eval {
        /// Overrides training.checkpoint (the weights to load).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Overrides model.variant.
        #[arg(long)]
        variant: Option<String>,
        /// Overrides model.width_scale.
        #[arg(long, value_name = "SCALE")]
        width_scale: Option<f64>,
    },
    /// Print the trainable-parameter total for the configured variant.
    CountParams {
        /// Overrides model.variant.
        #[arg(long)]
        variant: Option<String>,
        /// Overrides model.width_scale.
        #[arg(long, value_name = "SCALE")]
        width_scale: Option<f64>,
    },
    /// Audit analytic gradients against finite differences, block by block.
    Gradcheck,
    /// Parameter table across all seven variants, with the full-width
    /// ordering asserted.
    Ablate {
        /// Only the parameter table; skip the per-variant toy training runs.
        #[arg(long)]
        params_only: bool,
        /// Overrides model.width_scale.
        #[arg(long, value_name = "SCALE")]
        width_scale: Option<f64>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.model.seed = seed;
    }
    if let Some(out) = &cli.out {
        match &cli.command {
            Command::Prepare { .. } => cfg.data.prepared = out.clone(),
            Command::Train { .. } => {
                let ck = cfg.training.checkpoint.file_name().map(PathBuf::from);
                let ll = cfg.training.loss_log.file_name().map(PathBuf::from);
                cfg.training.checkpoint = out.join(ck.unwrap_or_else(|| "model.ckpt".into()));
                cfg.training.loss_log = out.join(ll.unwrap_or_else(|| "loss.csv".into()));
            }
            Command::Eval { .. } => cfg.eval.out = out.clone(),
            _ => {}
        }
    }
    match &cli.command {
        Command::Prepare {
            synth,
            size,
            window,
            source,
        } => {
            if let Some(n) = synth {
                cfg.data.synth_pairs = *n;
            }
            if let Some(s) = size {
                cfg.data.synth_size = *s;
            }
            if let Some(w) = window {
                cfg.data.window = *w;
            }
            if let Some(src) = source {
                cfg.data.source = src.clone();
            }
        }
        Command::Train {
            epochs,
            lr,
            variant,
            width_scale,
        } => {
            if let Some(e) = epochs {
                cfg.training.epochs = *e;
            }
            if let Some(lr) = lr {
                cfg.training.lr = *lr;
            }
            if let Some(v) = variant {
                cfg.model.variant = v.clone();
            }
            if let Some(ws) = width_scale {
                cfg.model.width_scale = *ws;
            }
        }
        Command::Eval {
            checkpoint,
            variant,
            width_scale,
        } => {
            if let Some(ck) = checkpoint {
                cfg.training.checkpoint = ck.clone();
            }
            if let Some(v) = variant {
                cfg.model.variant = v.clone();
            }
            if let Some(ws) = width_scale {
                cfg.model.width_scale = *ws;
            }
        }
        Command::CountParams {
            variant,
            width_scale,
        } => {
            if let Some(v) = variant {
                cfg.model.variant = v.clone();
            }
            if let Some(ws) = width_scale {
                cfg.model.width_scale = *ws;
            }
        }
        Command::Gradcheck => {}
        Command::Ablate { width_scale, .. } => {
            if let Some(ws) = width_scale {
                cfg.model.width_scale = *ws;
            }
        }
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Prepare { .. } => commands::cmd_prepare(&cfg),
        Command::Train { .. } => commands::cmd_train(&cfg),
        Command::Eval { .. } => commands::cmd_eval(&cfg),
        Command::CountParams { .. } => commands::cmd_count_params(&cfg),
        Command::Gradcheck => commands::cmd_gradcheck(&cfg),
        Command::Ablate { params_only, .. } => commands::cmd_ablate(&cfg, *params_only),
    }
}

fn panic_text(payload: &(dyn std::any::Any + Send)) -> &str {
    payload
        .downcast_ref::<&str>()
        .copied()
        .or_else(|| payload.downcast_ref::<String>().map(String::as_str))
        .unwrap_or("unknown panic")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; only real usage
            // errors are validation failures.
            let is_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(u8::from(is_error));
        }
    };
    // Internal assertions (shape checks, invariant guards) unwind; report
    // them as invariant failures rather than aborting with a backtrace.
    panic::set_hook(Box::new(|_| {}));
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| dispatch(&cli)));
    let _ = panic::take_hook();
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(payload) => {
            eprintln!(
                "error: invariant violated: {}",
                panic_text(payload.as_ref())
            );
            ExitCode::from(CliError::invariant("").exit_code() as u8)
        }
    }
}
