mod args;
mod commands;
mod meta;

use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command, ReplayArgs};
use commands::Usage;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("REPSIM_THREADS") else {
        return Ok(());
    };
    let threads: usize = match value.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return Err(Usage(format!("REPSIM_THREADS must be a positive integer, got `{value}`")).into()),
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn execute(argv: &[String], command: &Command) -> Result<Option<meta::RunMeta>> {
    let outcome = commands::run(command)?;
    meta::record(argv, command, &outcome)
}

fn replay(args: &ReplayArgs) -> Result<()> {
    let recorded = meta::load(&args.meta)?;
    if recorded.version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "repsim: warning: recorded with version {}, replaying with {}",
            recorded.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    meta::check_inputs(&recorded)?;
    let argv = match &args.out {
        Some(out) => meta::with_out(&recorded.argv, out),
        None => recorded.argv.clone(),
    };
    let cli = Cli::try_parse_from(std::iter::once(meta::TOOL.to_string()).chain(argv.iter().cloned()))
        .map_err(|e| Usage(format!("recorded arguments no longer parse: {}", first_line(&e.to_string()))))?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!(Usage("cannot replay a replay".into()));
    }
    let Some(replayed) = execute(&argv, &cli.command)? else {
        bail!("recorded run wrote no files");
    };
    meta::compare_artifacts(&recorded, &replayed)?;
    eprintln!("replay matches {} recorded artifacts", replayed.artifacts.len());
    Ok(())
}

fn first_line(s: &str) -> &str {
    let line = s.lines().next().unwrap_or("").trim();
    line.strip_prefix("error: ").unwrap_or(line)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<repsim::Error>() {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
        Err(e) => {
            eprintln!("repsim: usage: {}", first_line(&e.to_string()));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Replay(args) => replay(args),
        command => execute(&argv[1..], command).map(|_| ()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("repsim: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
