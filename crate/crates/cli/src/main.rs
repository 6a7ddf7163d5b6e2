use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use loopsched_cli::commands::{self, ValidateSource};
use loopsched_cli::report::to_json;
use loopsched_cli::{exit, Cli, CliError, CliResult, Command, THREADS_ENV};

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => commands::write_atomic(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        CliError::Usage(format!("{THREADS_ENV} must be a thread count, got `{raw}`"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("{THREADS_ENV}: {e}")))
}

fn run(cli: Cli) -> CliResult<i32> {
    init_threads()?;
    match cli.command {
        Command::Schedule {
            layer,
            hw,
            search,
            out,
        } => {
            let report = commands::cmd_schedule(&layer, &hw, &search)?;
            emit(out.as_deref(), &to_json(&report))?;
        }
        Command::Sweep {
            network,
            hw,
            search,
            out,
        } => {
            let report = commands::cmd_sweep(&network, &hw, &search)?;
            emit(out.as_deref(), &to_json(&report))?;
        }
        Command::Distribution {
            layer,
            hw,
            samples,
            seed,
            lpf_limit,
            out,
        } => {
            let csv = commands::cmd_distribution(&layer, &hw, samples, seed, lpf_limit)?;
            commands::write_atomic(&out, &csv)?;
        }
        Command::Validate {
            fixtures,
            random,
            seed,
            out,
        } => {
            let source = match (&fixtures, random) {
                (Some(dir), _) => ValidateSource::Fixtures(dir),
                (None, Some(count)) => ValidateSource::Random { count, seed },
                (None, None) => unreachable!("clap requires one source"),
            };
            let report = commands::cmd_validate(source, seed)?;
            emit(out.as_deref(), &to_json(&report))?;
            if !report.passed {
                if let Some(m) = &report.first_mismatch {
                    eprintln!("mismatch in {}: {} ({})", m.case, m.check, m.detail);
                }
                return Ok(exit::MISMATCH);
            }
        }
        Command::ExportFixtures { out } => {
            for path in commands::cmd_export_fixtures(&out)? {
                eprintln!("wrote {}", path.display());
            }
        }
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = run(cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}
