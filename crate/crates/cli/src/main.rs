//! `glua`: train and compare gated-attention transformers at desk scale.
//!
//! Exit codes: 0 success, 1 usage, 2 numeric failure, 3 I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use glua_cli::commands::{self, CliError};

#[derive(Parser)]
#[command(
    name = "glua",
    version,
    about = "Gated-attention A/B experiment harness",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a key=value spec file.
    ///
    /// Trains the variant(s) named in the run spec, writing metrics.csv
    /// and model.ckpt per variant under the output directory (the run spec's
    /// out_dir, overridden by GLUA_OUT_DIR). With variant=both the two
    /// runs share data order and seeds, and a comparison is emitted.
    Train {
        /// Path to the run spec file.
        spec: PathBuf,
    },
    /// Check analytic gradients against f64 central differences.
    Gradcheck {
        /// What to check: ops, attention, model, or all.
        #[arg(default_value = "all")]
        scope: String,
        /// Seed for the check inputs.
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Print the parameter parity table for both attention variants.
    Params {
        /// Model width.
        d_model: usize,
        /// Number of attention heads.
        n_heads: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successes; anything else is a usage
            // error, exit 1 (clap's own default would be 2).
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train { spec } => commands::cmd_train(&spec),
        Command::Gradcheck { scope, seed } => commands::cmd_gradcheck(&scope, seed),
        Command::Params { d_model, n_heads } => commands::cmd_params(d_model, n_heads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.code() as u8
}
