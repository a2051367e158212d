mod ablate;
mod args;
mod error;
mod evaluate;
mod gradcheck;
mod inspect;
mod run;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => {
            let config = a.run.resolve()?;
            let run = run::train_run(&config, &a.out, a.overwrite)?;
            print!("{}", run.summary());
            Ok(())
        }
        Command::Evaluate(a) => evaluate::cmd(&a),
        Command::Ablate(a) => ablate::cmd(&a),
        Command::Gradcheck(a) => gradcheck::cmd(&a),
        Command::InspectData(a) => inspect::cmd(&a),
        Command::GenSynthetic(a) => {
            let spec = seqmtl::synthetic::SyntheticSpec {
                seed: a.seed,
                ..Default::default()
            };
            seqmtl::synthetic::generate(&spec).write(&a.out)?;
            println!("wrote synthetic corpus to {}", a.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            let err = CliError::Config(first.trim_start_matches("error: ").to_string());
            eprintln!("{err}");
            let _ = e.print();
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
