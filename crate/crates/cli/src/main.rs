use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = baymoth_cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match baymoth_cli::run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(baymoth_cli::exit_code(&e) as u8)
        }
    }
}
