use std::process::ExitCode;

use clap::Parser;

use dekl_cli::{emit, run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors are user errors; help and version are not errors
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (value, err) = match run(&cli) {
        Ok(v) => (Some(v), None),
        Err((v, e)) => (v, Some(e)),
    };
    if let Some(v) = value {
        if let Err(e) = emit(&v, cli.out.as_deref()) {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match err {
        None => ExitCode::SUCCESS,
        Some(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
