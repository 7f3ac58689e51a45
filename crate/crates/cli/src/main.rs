use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = caplab_cli::Cli::parse();
    match caplab_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let s = cause.to_string();
                if !msg.contains(&s) {
                    msg = format!("{msg}: {s}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(caplab_cli::exit_code(&e))
        }
    }
}
