use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crowd_core::cli::{exit_code, project_command, run_command, selftest};
use crowd_core::config::{parse_config, parse_config_str, SchemeKind};
use crowd_core::Result;

/// Crowd motion with a hard density cap: splitting, JKO and projection runs.
#[derive(Parser)]
#[command(name = "crowdsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scheme named in the configuration file.
    Run { config: PathBuf },
    /// Run the Fokker-Planck flow alone (ignores `scheme`).
    Fp { config: PathBuf },
    /// Run the JKO scheme (ignores `scheme`).
    Jko { config: PathBuf },
    /// Project one density (`x,rho` CSV) onto {rho <= 1}.
    Project {
        density: PathBuf,
        /// Treat the grid as periodic.
        #[arg(long)]
        circle: bool,
        /// Output table (default: `<stem>.projected.csv` beside the input).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quick end-to-end checks of the numerical core.
    Selftest,
}

fn run(config: &Path, scheme: Option<SchemeKind>) -> Result<()> {
    let mut cfg = parse_config(config)?;
    if let Some(s) = scheme {
        cfg.scheme = s;
        // Re-validate: the scheme must still fit the domain and drift.
        cfg = parse_config_str(&cfg.to_meta())?;
    }
    let base = config.parent().unwrap_or(Path::new("."));
    let summary = run_command(&cfg, base)?;
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => run(&config, None),
        Command::Fp { config } => run(&config, Some(SchemeKind::FpOnly)),
        Command::Jko { config } => run(&config, Some(SchemeKind::Jko)),
        Command::Project { density, circle, out } => project_command(&density, circle, out.as_deref()).map(|(w2, path)| {
            println!("W2 moved: {w2:.17e}");
            println!("wrote {}", path.display());
        }),
        Command::Selftest => {
            let checks = selftest();
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.pass);
            }
            if failed > 0 {
                eprintln!("selftest: {failed} of {} checks failed", checks.len());
                return ExitCode::from(3);
            }
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crowdsim: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
