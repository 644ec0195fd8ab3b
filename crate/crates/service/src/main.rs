use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use mhfa_service::cli::{self, Cli, Command};
use mhfa_service::ServiceError;

fn fail(e: &ServiceError) -> ExitCode {
    let body = serde_json::json!({"error": e.kind(), "message": e.to_string()});
    eprintln!("{body}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Cli::parse();
    if let Command::Serve {
        config,
        host,
        port,
        store,
    } = &args.command
    {
        let result = cli::serve_config(config.as_deref(), host.clone(), *port, store.clone(), args.backend.clone())
            .and_then(|c| Ok((cli::serve_gateway(&c)?, c)))
            .and_then(|(gw, c)| {
                let rt = tokio::runtime::Runtime::new()?;
                rt.block_on(mhfa_service::serve(c, gw, |addr| {
                    println!("listening on {addr}");
                    let _ = std::io::stdout().flush();
                }))
            });
        return match result {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(&e),
        };
    }
    match cli::run(args) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
