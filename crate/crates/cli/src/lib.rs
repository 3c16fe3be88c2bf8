//! Command-line front end: simulation, training, denoising, evaluation,
//! gradient checking, and ablation sweeps.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod denoise;
pub mod eval;
pub mod gradcheck;
pub mod resolve;
pub mod simulate;
pub mod train;

use denomamba::Error;

pub use args::{Cli, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTEGRITY: i32 = 3;

/// Process exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Integrity(_) | Error::Format { .. } => EXIT_INTEGRITY,
        Error::NonFinite(_) | Error::Oracle(_) => EXIT_VERIFICATION,
        Error::ShapeMismatch { .. } | Error::Config(_) | Error::Usage(_) | Error::Io { .. } => EXIT_USAGE,
    }
}

/// Runs one command and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let outcome = match &cli.command {
        Command::SimulateLdct(a) => simulate::run(a).map(|_| true),
        Command::Train(a) => train::train(a).map(|_| true),
        Command::Denoise(a) => denoise::run(a).map(|_| true),
        Command::Eval(a) => eval::run(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck::run(a),
        Command::Ablate(a) => train::ablate(a),
    };
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_VERIFICATION,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Sizes the global worker pool from `DENOMAMBA_THREADS`, if set.
pub fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("DENOMAMBA_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Usage(format!("DENOMAMBA_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}
