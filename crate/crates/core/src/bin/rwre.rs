use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use rwre::config::parse_config_with_overrides;
use rwre::runner::{run_command, Command, EXIT_USAGE};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Simulate,
    Speed,
    Clt,
    Branching,
    L1Tail,
    OracleCheck,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Simulate => Command::Simulate,
            Cmd::Speed => Command::Speed,
            Cmd::Clt => Command::Clt,
            Cmd::Branching => Command::Branching,
            Cmd::L1Tail => Command::L1Tail,
            Cmd::OracleCheck => Command::OracleCheck,
        }
    }
}

/// Random walks in random environments on free-product Cayley trees.
///
/// Exit status: 0 on success, 1 when a statistical check fails, 2 on a
/// usage or configuration error. RWRE_THREADS overrides parallel.workers.
#[derive(Debug, Parser)]
#[command(name = "rwre", version)]
struct Cli {
    command: Cmd,
    /// Flat key = value configuration file.
    config: PathBuf,
    /// Override a config key, e.g. --set walk.n_traj=10 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set output.dir=DIR.
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = Command::from(cli.command);
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("rwre {}: cannot read {}: {e}", cmd.as_str(), cli.config.display());
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    let mut overrides = cli.set;
    if let Some(dir) = cli.output_dir {
        overrides.push(format!("output.dir = {}", dir.display()));
    }
    let cfg = match parse_config_with_overrides(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("rwre {}: {}: {e}", cmd.as_str(), cli.config.display());
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    match run_command(cmd, &cfg) {
        Ok(out) => {
            for r in &out.records {
                println!("{r}");
            }
            ExitCode::from(out.exit_code as u8)
        }
        Err(e) => {
            eprintln!("rwre {}: {e}", cmd.as_str());
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
