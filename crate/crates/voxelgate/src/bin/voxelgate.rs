use std::process::ExitCode;

use clap::Parser;
use voxelgate::cli::{self, Cli};
use voxelgate::ExitKind;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { ExitKind::Usage as u8 } else { 0 });
        }
    };
    if let Some(n) = std::env::var("VOXELGATE_THREADS").ok().and_then(|v| v.parse().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: VOXELGATE_THREADS: {e}");
            return ExitCode::from(ExitKind::Usage as u8);
        }
    }
    match cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_kind() as u8)
        }
    }
}
