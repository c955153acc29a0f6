//! Command-line front end: generate a population, run one config, sweep a
//! grid, or summarize a results file.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lendsim::config::{self, RunParams};
use lendsim::policies::Method;
use lendsim::sweep::{self, SweepGrid};
use lendsim::{aggregate, record, simulator, synthgen, RunRecord, SimError};

#[derive(Parser)]
#[command(
    name = "lendsim",
    version,
    about = "Sequential lending simulator under selective labels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic applicant population as CSV.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override random_seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one config and write its results rows.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// A method name or `all`.
        #[arg(long, default_value = "all")]
        method: String,
    },
    /// Run every config of a grid, resuming from existing output.
    Sweep {
        /// Grid file; keys it omits take the full experimental grid's values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Restrict the grid to a single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Aggregate a results file into rankings, traces or distributions.
    Summarize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        which: Which,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Ranks,
    Traces,
    Dist,
}

/// Prefixes an I/O error with the path it concerns.
fn at(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |e| SimError::from(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_text(path: Option<&Path>) -> lendsim::Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).map_err(at(p)),
        None => Ok(String::new()),
    }
}

fn load_params(path: Option<&Path>, seed: Option<u64>) -> lendsim::Result<RunParams> {
    let mut params = config::load_run_params(&read_text(path)?, config::process_env)?;
    if let Some(s) = seed {
        params.random_seed = s;
    }
    Ok(params)
}

fn create(path: &Path) -> lendsim::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(at(path))?))
}

fn finish(mut w: BufWriter<File>) -> lendsim::Result<()> {
    w.flush()?;
    Ok(())
}

fn execute(cmd: Command) -> lendsim::Result<()> {
    match cmd {
        Command::Generate { config, out, seed } => {
            let params = load_params(config.as_deref(), seed)?;
            let cfg = params.to_sim_config();
            let pop = synthgen::generate_population(&cfg.bias, cfg.dim, cfg.seed)?;
            let mut w = create(&out)?;
            synthgen::write_population_csv(&mut w, &pop)?;
            finish(w)
        }
        Command::Run {
            config,
            out,
            seed,
            method,
        } => {
            let methods: Vec<Method> = match method.as_str() {
                "all" => Method::ALL.to_vec(),
                name => vec![name.parse()?],
            };
            let params = load_params(config.as_deref(), seed)?;
            let cfg = params.to_sim_config();
            let cohorts = simulator::prepare_cohorts(&cfg)?;
            let mut rows = Vec::new();
            for m in methods {
                let (outcomes, _) = simulator::run_on_cohorts(&cfg, m, &cohorts)?;
                rows.extend(RunRecord::from_outcomes(&params, m, &outcomes));
            }
            let mut w = create(&out)?;
            record::write_records(&mut w, &rows)?;
            finish(w)
        }
        Command::Sweep {
            config,
            out,
            seed,
            workers,
        } => {
            let text = read_text(config.as_deref())?;
            let mut grid = SweepGrid::from_text_with_process_env(&text, SweepGrid::paper())?;
            if let Some(s) = seed {
                grid.set("random_seed", &[&s.to_string()])?;
            }
            let s = sweep::execute_sweep(&grid, workers, &out).map_err(|e| match e {
                SimError::Io(io) => at(&out)(io),
                other => other,
            })?;
            println!(
                "{} configs run, {} configs skipped, {} rows written",
                s.configs_run, s.configs_skipped, s.rows_written
            );
            Ok(())
        }
        Command::Summarize { input, which, out } => {
            let records = record::read_records(File::open(&input).map_err(at(&input))?)?;
            let mut w = create(&out)?;
            match which {
                Which::Ranks => aggregate::write_ranks(&mut w, &aggregate::rank_tables(&records)?)?,
                Which::Traces => aggregate::write_traces(&mut w, &aggregate::temporal_traces(&records)?)?,
                Which::Dist => aggregate::write_dist(&mut w, &aggregate::distribution_summaries(&records))?,
            }
            finish(w)
        }
    }
}

/// Usage and config problems exit 1; anything that fails at run time exits 2.
fn exit_code(e: &SimError) -> u8 {
    match e {
        SimError::Config { .. } | SimError::Parse(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
