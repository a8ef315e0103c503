use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use lkrr::experiment::diagnose::{run_diagnose, DiagnoseConfig};
use lkrr::experiment::{
    emit_tables, read_report, run_experiment, run_fit, write_json, ExperimentConfig, TableFormat,
    REPORT_FILE,
};
use lkrr::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "lkrr", version, about = "Learned-kernel ridge regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TableFormat::Csv,
            Format::Json => TableFormat::Json,
        }
    }
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model on the full training source using the [fit] section.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the cross-validated protocol and write report and tables.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[command(flatten)]
        common: Common,
    },
    /// Residual, identity and stability suites.
    Diagnose {
        /// TOML file with a [diagnose] table; defaults apply without one.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Re-render tables from a saved report.
    Emit {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if seed.is_some() {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(flag: Option<PathBuf>, config: Option<&ExperimentConfig>) -> PathBuf {
    flag.or_else(|| config.and_then(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

#[derive(Deserialize, Default)]
struct DiagnoseFile {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    diagnose: DiagnoseConfig,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { config, common } => {
            let config = load_config(&config, common.seed)?;
            let report = with_pool(common.jobs, || run_fit(&config))?;
            let path = out_dir(common.out, Some(&config)).join("fit.json");
            write_json(&report, &path)?;
            println!("{}", path.display());
        }
        Command::Experiment { config, format, common } => {
            let mut config = load_config(&config, common.seed)?;
            let dir = out_dir(common.out, Some(&config));
            config.output = Some(dir.clone());
            let report = with_pool(common.jobs, || run_experiment(&config))?;
            let (files, notes) = emit_tables(&report, format.into(), &dir)?;
            println!("{}", dir.join(REPORT_FILE).display());
            for f in files {
                println!("{}", f.display());
            }
            for n in notes {
                eprintln!("note: {n}");
            }
        }
        Command::Diagnose { config, common } => {
            let file: DiagnoseFile = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                        path: p.display().to_string(),
                        source: e,
                    })?;
                    toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => DiagnoseFile::default(),
            };
            let seed = common.seed.or(file.seed).unwrap_or(0);
            let report = with_pool(common.jobs, || run_diagnose(&file.diagnose, seed))?;
            let path = out_dir(common.out, None).join("diagnose.json");
            write_json(&report, &path)?;
            println!("{}", path.display());
            println!(
                "worst KKT residual / epsilon: {:.3e}; median iterations: {}; identity discrepancy: {:.3e}",
                report.worst_kkt_over_epsilon, report.median_iterations, report.lemma_max_discrepancy
            );
            for s in &report.stability {
                println!(
                    "m = {}: {} swaps, {} violations, max delta {:.3e}, bound {:.3e}",
                    s.m, s.trials, s.violations, s.max_empirical_delta, s.bound
                );
            }
        }
        Command::Emit { report, format, out } => {
            let saved = read_report(&report)?;
            let dir = out.unwrap_or_else(|| {
                report.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
            });
            let (files, notes) = emit_tables(&saved, format.into(), &dir)?;
            for f in files {
                println!("{}", f.display());
            }
            for n in notes {
                eprintln!("note: {n}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
