use std::process::ExitCode;

use clap::Parser;
use mam_cli::commands::{run, Cli};
use mam_cli::Failure;

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("MAM_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(anyhow::anyhow!("MAM_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(Failure::general)
}

fn main() -> ExitCode {
    // clap exits with status 2 on invalid flags
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code as u8)
        }
    }
}
