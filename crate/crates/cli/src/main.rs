use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use topoflock::config::Mode;

#[derive(Parser)]
#[command(name = "topoflock", version, about = "Alignment-flow simulations in mass coordinates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration.
    Run {
        config: PathBuf,
        /// Output directory (default: out/<config stem>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration without running it.
    Validate { config: PathBuf },
    /// Run a sweep configuration.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn default_out(config: &Path) -> PathBuf {
    let stem = config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    PathBuf::from("out").join(stem)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => topoflock::validate(&config).map(|lc| {
            println!("{}: ok ({} mode)", config.display(), lc.config.mode.name());
        }),
        Command::Run { config, out } => {
            let out = out.unwrap_or_else(|| default_out(&config));
            topoflock::run(&config, &out).map(|_| println!("wrote {}", out.display()))
        }
        Command::Sweep { config, out } => {
            let out = out.unwrap_or_else(|| default_out(&config));
            topoflock::load_config(&config).and_then(|lc| {
                if lc.config.mode != Mode::Sweep {
                    return Err(topoflock::CliError::Validation(vec![lc.issue("mode", "sweep requires mode \"sweep\"")]));
                }
                topoflock::run_loaded(&lc, &out).map(|_| println!("wrote {}", out.display()))
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
