use std::process::ExitCode;

use rsen::cli::{run_from, EXIT_INPUT};

/// Sizes the global worker pool from `RSEN_THREADS`; unset means one
/// worker per core.
fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("RSEN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("RSEN_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_INPUT as u8);
    }
    ExitCode::from(run_from(std::env::args_os()) as u8)
}
