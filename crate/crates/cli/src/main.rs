use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use indexfree_cli::commands::{run, write_report, Command};
use indexfree_cli::settings::{load_config, Resolved, Settings};
use indexfree_cli::CliError;

/// Seeded experiments for index-free finite-sum optimization.
#[derive(Debug, Parser)]
#[command(name = "indexfree", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML config with `[common]` and per-subcommand tables; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exit with status 2 when the command's acceptance threshold fails.
    #[arg(long)]
    check: bool,
    #[command(flatten)]
    settings: Settings,
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    let file = match &cli.config {
        Some(path) => load_config(path, cli.command.name())?,
        None => Settings::default(),
    };
    let resolved = Resolved::from_settings(cli.settings.over(file))?;
    let report = run(cli.command, &resolved)?;
    write_report(&report, &resolved)?;
    for line in &report.summary {
        println!("{line}");
    }
    println!(
        "wrote {}",
        resolved.out_dir.join(format!("{}.csv", cli.command.name())).display()
    );
    Ok(report.check_passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let check = cli.check;
    match execute(cli) {
        Ok(passed) if check && !passed => {
            eprintln!("check failed");
            ExitCode::from(2)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
