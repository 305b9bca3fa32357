use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use deform_cli::builtin::{builtin, NAMES};
use deform_cli::report::{summary, write_csv};
use deform_cli::runner::{continuity_rows, convergence_rows};
use deform_cli::series::SeriesError;
use deform_cli::{emit_series, run_scenario, RunOptions, Scenario, SeriesKind};

#[derive(Parser)]
#[command(name = "deform", version, about = "Run convolution-algebra checks on tangent groupoids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = false, multiple = false)]
struct Source {
    /// Scenario JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Name of a built-in scenario (see `list-scenarios`).
    #[arg(long)]
    scenario: Option<String>,
}

impl Source {
    fn load(&self, default: &str) -> Result<Scenario> {
        Ok(match (&self.config, &self.scenario) {
            (Some(path), _) => Scenario::load(path)?,
            (None, Some(name)) => builtin(name)?,
            (None, None) => builtin(default)?,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report rows as CSV.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
        /// Record per-row wall-clock time (makes the CSV non-reproducible).
        #[arg(long)]
        timing: bool,
        /// Replace the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the built-in scenarios.
    ListScenarios,
    /// Write a two-column plot series with its log-log slope.
    Series {
        #[arg(long, value_enum)]
        check: SeriesKind,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        source: Source,
        /// Lattice sizes for a convergence series.
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
        grids: Vec<usize>,
        /// Parameter for a convergence series; defaults to the first
        /// positive value of the scenario's t grid.
        #[arg(long)]
        t: Option<f64>,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DEFORM_THREADS") {
        let n: usize = v.parse().with_context(|| format!("DEFORM_THREADS=`{v}` is not a thread count"))?;
        if n == 0 {
            bail!("DEFORM_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create `{}`", path.display()))?))
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    configure_threads()?;
    match cli.command {
        Command::ListScenarios => {
            for name in NAMES {
                let s = builtin(name)?;
                let checks: Vec<&str> = s.checks.iter().map(|c| c.name()).collect();
                println!("{name}\t{}\t{}", s.groupoid, checks.join(","));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { source, out, timing, seed } => {
            let mut scenario = source.load("gaussian-pair-r1")?;
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            let prepared = scenario.prepare()?;
            let rows = run_scenario(&prepared, RunOptions { timing });
            write_csv(&rows, create(&out)?)?;
            print!("{}", summary(&rows));
            Ok(if rows.iter().all(|r| r.pass) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Series { check, out, source, grids, t } => {
            let default = match check {
                SeriesKind::Continuity => "gaussian-pair-r1",
                SeriesKind::Convergence => "gaussian-pair-t1",
            };
            let prepared = source.load(default)?.prepare()?;
            let opts = RunOptions::default();
            let rows = match check {
                SeriesKind::Continuity => continuity_rows(&prepared, opts).into_iter().filter(|r| r.check == "continuity").collect(),
                SeriesKind::Convergence => {
                    if grids.len() < 3 {
                        return Err(SeriesError::TooFewPoints(grids.len()).into());
                    }
                    let t = match t.or_else(|| prepared.scenario.t_grid.iter().copied().find(|&t| t > 0.0)) {
                        Some(t) => t,
                        None => bail!("no positive t for the convergence series"),
                    };
                    convergence_rows(&prepared, t, &grids, opts)
                }
            };
            let series = emit_series(&rows, check)?;
            let text = series.render();
            std::fs::write(&out, &text).with_context(|| format!("cannot write `{}`", out.display()))?;
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
