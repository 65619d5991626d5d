mod args;
mod stages;
mod store;

use std::process::ExitCode;

use clap::Parser;
use voxelforge::Error;

use args::{Cli, Command};
use stages::UsageError;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Generate(a) => {
            stages::generate(g, &a.config(g))?;
        }
        Command::Train(a) => {
            stages::train(g, a.archive.as_ref(), &a.ppo.config(g.paper_scale), a.episode.episode_length)?;
        }
        Command::Evaluate(a) => {
            stages::evaluate(g, a.archive.as_ref(), a.episode.episode_length)?;
        }
        Command::Analyze(a) => {
            stages::analyze(g, a.results.as_ref(), a.raw_flops, a.levels)?;
        }
        Command::Pipeline(a) => {
            stages::pipeline(g, a)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NumericalBlowup(_) => EXIT_NUMERICAL,
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn error_classes_map_to_exit_codes() {
        let wrap = |e: Error| Err::<(), _>(e).context("stage").unwrap_err();
        assert_eq!(exit_code(&wrap(Error::NumericalBlowup("x".into()))), EXIT_NUMERICAL);
        assert_eq!(exit_code(&wrap(Error::Config("x".into()))), EXIT_USAGE);
        assert_eq!(exit_code(&wrap(Error::InvalidGenome("x".into()))), EXIT_DATA);
        assert_eq!(exit_code(&wrap(Error::Inconsistent("x".into()))), EXIT_DATA);
        assert_eq!(exit_code(&UsageError("x".into()).into()), EXIT_USAGE);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(exit_code(&Err::<(), _>(io).context("reading").unwrap_err()), EXIT_DATA);
    }
}
