use std::process::ExitCode;

use clap::Parser;

use stiffnet_cli::{run, Cli, EXIT_NONCONVERGED, SEED_ENV};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let env_seed = std::env::var(SEED_ENV).ok();
    match run(&cli, env_seed.as_deref()) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.nonconverged {
                eprintln!("warning: some micro-equilibrations did not converge; results were written anyway");
                ExitCode::from(EXIT_NONCONVERGED as u8)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("stiffnet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
