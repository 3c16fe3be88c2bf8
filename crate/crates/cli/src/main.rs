use clap::Parser;
use denomamba_cli::{configure_threads, exit_code, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
    std::process::exit(run(&cli));
}
