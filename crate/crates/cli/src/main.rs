use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use crsma::config::SystemConfig;
use crsma::experiment::{run_experiment, ExperimentSpec, RowStatus};
use crsma::schemes::SchemeId;

#[derive(Parser)]
#[command(name = "crsma", version, about = "Energy sweeps for RIS-assisted cooperative rate splitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write its tables.
    Run {
        spec: PathBuf,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of channel draws per axis value.
        #[arg(long)]
        draws: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the available schemes.
    ListSchemes {
        #[arg(long)]
        json: bool,
    },
    /// Check a system config or experiment spec file.
    ValidateConfig {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Auto)]
        kind: Kind,
    },
    /// Print the default system config as TOML.
    DefaultConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Auto,
    System,
    Spec,
}

fn run(spec: PathBuf, seed: Option<u64>, draws: Option<usize>, output: Option<PathBuf>, threads: Option<usize>) -> Result<ExitCode> {
    let mut spec = ExperimentSpec::load(&spec).with_context(|| format!("loading {}", spec.display()))?;
    if let Some(s) = seed {
        spec.system.rng_seed = s;
    }
    if let Some(d) = draws {
        spec.n_channel_draws = d;
    }
    if let Some(o) = output {
        spec.output_dir = o;
    }
    if let Some(t) = threads {
        spec.threads = t;
    }
    let report = run_experiment(&spec).with_context(|| format!("running {}", spec.name))?;

    println!(
        "{}: {} rows, {} draws per value, seed {}",
        spec.name,
        report.rows.len(),
        spec.n_channel_draws,
        spec.seed()
    );
    print!("{:>20}", spec.axis.name());
    for s in &report.summary.schemes {
        print!(" {:>12}", s.name());
    }
    println!();
    for &v in &report.summary.values {
        print!("{v:>20}");
        for &s in &report.summary.schemes {
            match report.summary.cell(s, v).and_then(|c| c.mean_energy) {
                Some(e) => print!(" {e:>12.5e}"),
                None => print!(" {:>12}", "-"),
            }
        }
        println!();
    }
    println!("plot data: {}", report.plot_path.display());
    println!("results:   {}", report.results_path.display());

    let failed = report.numerical_failures();
    if failed > 0 {
        eprintln!("{failed} rows ended in numerical failure");
        for r in report.rows.iter().filter(|r| r.status == RowStatus::NumericalFailure) {
            eprintln!("  {} {}={} draw {}", r.scheme, spec.axis.name(), r.axis_value, r.draw);
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(path: PathBuf, kind: Kind) -> Result<()> {
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let is_spec = match kind {
        Kind::Spec => true,
        Kind::System => false,
        Kind::Auto => text.parse::<toml::Table>().context("parsing TOML")?.contains_key("axis"),
    };
    if is_spec {
        let spec = ExperimentSpec::from_toml_str(&text)?;
        println!(
            "ok: experiment {} over {} ({} values, {} schemes, {} draws)",
            spec.name,
            spec.axis.name(),
            spec.values.len(),
            spec.schemes.len(),
            spec.n_channel_draws
        );
    } else {
        let cfg = SystemConfig::from_toml_str(&text)?;
        println!("ok: system with {} antennas, {} RIS elements", cfg.n_antennas, cfg.n_ris_elements);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Run {
            spec,
            seed,
            draws,
            output,
            threads,
        } => run(spec, seed, draws, output, threads),
        Command::ListSchemes { json } => {
            if json {
                let list: Vec<_> = SchemeId::ALL
                    .iter()
                    .map(|s| {
                        serde_json::json!({
                            "name": s.name(),
                            "description": s.description(),
                            "cooperative": s.cooperative(),
                            "uses_ris": s.uses_ris(),
                        })
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&list).expect("json"));
            } else {
                for s in SchemeId::ALL {
                    println!("{:<12} {}", s.name(), s.description());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateConfig { path, kind } => validate(path, kind).map(|_| ExitCode::SUCCESS),
        Command::DefaultConfig => {
            print!("{}", SystemConfig::default().to_toml_string());
            Ok(ExitCode::SUCCESS)
        }
    };
    match out {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
