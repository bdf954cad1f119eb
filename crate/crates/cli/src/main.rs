use clap::Parser;
use ogstyle_cli::{run, Cli, CliError};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => e.exit(),
            _ => {
                let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
                let err = CliError::Config(first);
                eprintln!("{}", err.line());
                std::process::exit(err.exit_code());
            }
        },
    };
    if let Err(e) = run(cli) {
        eprintln!("{}", e.line());
        std::process::exit(e.exit_code());
    }
}
