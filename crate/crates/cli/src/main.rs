//! `sre-unet`: train, evaluate and inspect symmetric rotation-equivariant U-Nets.

mod commands;
mod config;
mod error;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{resolve, RunConfig};
use crate::error::CliError;
use crate::run_dir::RunDir;

#[derive(Parser, Debug)]
#[command(
    name = "sre-unet",
    version,
    about = "SRE U-Net training, evaluation and equivariance checks"
)]
struct Cli {
    /// JSON run config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.net.base_channels=16`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; must not exist yet.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Use the full 6000-epoch training protocol.
    #[arg(long, global = true)]
    long_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the band grid of a k×k kernel.
    Bandmap {
        k: usize,
        /// Also write the grid as a PGM image.
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Train a network; writes a checkpoint and a loss log.
    Train {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the unrotated test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint on the rotated test set.
    RotEval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Check f(g·x) = g·f(x) for every element of D4.
    EquivCheck {
        #[arg(long, conflicts_with = "untrained")]
        checkpoint: Option<PathBuf>,
        /// Check a freshly initialised network built from the config.
        #[arg(long)]
        untrained: bool,
        /// Succeed only if the network is observed to break equivariance.
        #[arg(long)]
        expect_violation: bool,
    },
    /// Parameter and FLOP report: SRE net, its dense twin and the reference U-Net.
    Count {
        #[arg(long, default_value_t = 96)]
        size: usize,
    },
    /// Time the reference, im2col and band-pooled convolution paths.
    Bench,
    /// Write a synthetic vessel dataset.
    Synth {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Bandmap { .. } => "bandmap",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::RotEval { .. } => "rot-eval",
            Command::EquivCheck { .. } => "equiv-check",
            Command::Count { .. } => "count",
            Command::Bench => "bench",
            Command::Synth { .. } => "synth",
        }
    }

    fn needs_out(&self) -> bool {
        !matches!(
            self,
            Command::Bandmap { .. } | Command::EquivCheck { .. } | Command::Count { .. }
        )
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg: RunConfig = resolve(
        cli.config.as_deref(),
        cli.long_run,
        &cli.overrides,
        cli.seed,
    )?;
    cfg.train.validate()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        sre_unet::par::set_threads(n);
    }
    let name = cli.command.name();
    let dir = match &cli.out {
        Some(out) => Some(RunDir::create(out, name, &cfg, cfg.train.seed)?),
        None if cli.command.needs_out() => {
            return Err(CliError::Usage(format!("{name} needs --out DIR")));
        }
        None => None,
    };
    match cli.command {
        Command::Bandmap { k, pgm } => commands::bandmap(k, pgm.as_deref(), dir),
        Command::Train { resume } => {
            commands::run_train(&cfg, resume.as_deref(), dir.expect("checked"))
        }
        Command::Eval { checkpoint } => {
            commands::run_eval(&cfg, &checkpoint, false, dir.expect("checked"))
        }
        Command::RotEval { checkpoint } => {
            commands::run_eval(&cfg, &checkpoint, true, dir.expect("checked"))
        }
        Command::EquivCheck {
            checkpoint,
            untrained,
            expect_violation,
        } => {
            if checkpoint.is_none() && !untrained {
                return Err(CliError::Usage(
                    "equiv-check needs --checkpoint or --untrained".into(),
                ));
            }
            commands::equiv_check(&cfg, checkpoint.as_deref(), expect_violation, dir)
        }
        Command::Count { size } => commands::count(&cfg, size, dir),
        Command::Bench => commands::bench(&cfg, dir.expect("checked")),
        Command::Synth { count, size } => commands::synth(
            &cfg,
            count.unwrap_or(cfg.data.synthetic_count),
            size.unwrap_or(cfg.data.synthetic_size),
            dir.expect("checked"),
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
