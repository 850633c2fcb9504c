use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use grbf::experiment::{
    beampattern, default_grid, gnuplot_script, run_experiment, write_beampattern, write_beampattern_to, ExperimentConfig, ExperimentKind,
    Sweep,
};
use grbf::linksim::{self, LinkConfig};
use grbf::pipeline::{solve_downlink, SolutionFile, SolveOptions};
use grbf::scenario::ScenarioConfig;
use grbf::Error;

/// Worker-count override for the Monte-Carlo pool.
const WORKERS_ENV: &str = "GRBF_WORKERS";

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "grbf", version, about = "General-rank multiuser downlink beamforming with shaping constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design beamformers for a JSON scenario file.
    Solve {
        scenario: PathBuf,
        /// Write the solution file here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Randomization draws if the reduced rank exceeds 8.
        #[arg(long = "rand", default_value_t = 300)]
        n_rand: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also simulate the link and write per-user statistics to this CSV.
        #[arg(long)]
        link: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        blocks: usize,
    },
    /// Run one of the reference studies or a custom SINR sweep.
    Experiment {
        /// example1 | example2 | example3 | example4 | custom
        kind: String,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long = "rand")]
        n_rand: Option<usize>,
        /// SINR grid in dB as lo:hi:step.
        #[arg(long = "sinr-db", allow_hyphen_values = true)]
        sinr_db: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Scenario file for the custom sweep.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Tabulate per-user and sum beam patterns of a solution file.
    Beampattern {
        solution: PathBuf,
        /// Angle grid in degrees as lo:hi:step.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        /// CSV destination; defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a gnuplot script for the tables in an output directory.
    Plot { dir: PathBuf },
}

enum Failure {
    Config(anyhow::Error),
    Infeasible(anyhow::Error),
    Other(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Infeasible { .. } => Failure::Infeasible(e.into()),
            Error::InvalidScenario(_)
            | Error::DimensionMismatch(_)
            | Error::UnsupportedCodeDimension(_)
            | Error::ZeroVirtualChannel
            | Error::Json(_) => Failure::Config(e.into()),
            other => Failure::Other(other.into()),
        }
    }
}

fn config_error(e: impl Into<anyhow::Error>, what: &str) -> Failure {
    Failure::Config(e.into().context(what.to_string()))
}

fn load_scenario(path: &Path) -> Result<grbf::scenario::Scenario, Failure> {
    let cfg = ScenarioConfig::from_path(path).map_err(|e| config_error(e, &format!("reading {}", path.display())))?;
    cfg.to_scenario().map_err(|e| config_error(e, &format!("invalid scenario {}", path.display())))
}

fn solve(
    scenario: &Path,
    out: Option<&Path>,
    n_rand: usize,
    seed: u64,
    link: Option<&Path>,
    blocks: usize,
) -> Result<(), Failure> {
    let scenario = load_scenario(scenario)?;
    let opts = SolveOptions { n_rand, seed, ..SolveOptions::default() };
    let sol = solve_downlink(&scenario, &opts)?;
    let file = SolutionFile::from(&sol);
    match out {
        Some(p) => file.write(p).with_context(|| format!("writing {}", p.display())).map_err(Failure::Other)?,
        None => println!("{}", serde_json::to_string_pretty(&file).map_err(|e| Failure::Other(e.into()))?),
    }
    eprintln!(
        "K = {}, total power {:.6} ({}), ranks {:?} -> {:?}",
        sol.k,
        sol.total_power,
        if sol.exact { "exact" } else { "randomized" },
        sol.diagnostics.initial_ranks,
        sol.diagnostics.reduced_ranks
    );
    if let Some(path) = link {
        let stats = linksim::empirical_sinr(&LinkConfig { blocks, seed, ..LinkConfig::default() }, &sol.w, &scenario)?;
        linksim::write_csv(&stats, path)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn experiment(
    kind: &str,
    runs: Option<usize>,
    n_rand: Option<usize>,
    sinr_db: Option<&str>,
    seed: u64,
    out: &Path,
    scenario: Option<&Path>,
) -> Result<(), Failure> {
    let kind: ExperimentKind = kind.parse().map_err(|e: Error| config_error(e, "experiment"))?;
    let mut cfg = ExperimentConfig::new(kind, out);
    cfg.seed = seed;
    if let Some(r) = runs {
        cfg.runs = r;
    }
    if let Some(n) = n_rand {
        cfg.n_rand = n;
    }
    if let Some(s) = sinr_db {
        cfg.sweep = s.parse::<Sweep>().map_err(|e| config_error(e, "--sinr-db"))?;
    }
    if let Some(p) = scenario {
        cfg.scenario = Some(load_scenario(p)?);
    }
    cfg.validate().map_err(|e| config_error(e, "experiment configuration"))?;
    let report = run_experiment(&cfg)?;
    for f in &report.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn pattern(solution: &Path, grid: Option<&str>, out: Option<&Path>) -> Result<(), Failure> {
    let file = SolutionFile::read(solution).map_err(|e| config_error(e, &format!("reading {}", solution.display())))?;
    let sol = file.to_solution()?;
    let grid = match grid {
        Some(g) => g.parse::<Sweep>().map_err(|e| config_error(e, "--grid"))?.points(),
        None => default_grid(),
    };
    let bp = beampattern(&sol.w, &grid);
    match out {
        Some(p) => write_beampattern(p, &bp)?,
        None => write_beampattern_to(std::io::stdout().lock(), &bp)?,
    }
    Ok(())
}

fn plot(dir: &Path) -> Result<(), Failure> {
    if !dir.is_dir() {
        return Err(Failure::Config(anyhow::anyhow!("{} is not a directory", dir.display())));
    }
    let path = dir.join("plots.gp");
    std::fs::write(&path, gnuplot_script(dir)).map_err(|e| Failure::Other(e.into()))?;
    println!("{}", path.display());
    Ok(())
}

fn init_workers() -> Result<(), Failure> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::Config(anyhow::anyhow!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Other(e.into()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_workers()?;
    match cli.command {
        Command::Solve { scenario, out, n_rand, seed, link, blocks } => {
            solve(&scenario, out.as_deref(), n_rand, seed, link.as_deref(), blocks)
        }
        Command::Experiment { kind, runs, n_rand, sinr_db, seed, out, scenario } => {
            experiment(&kind, runs, n_rand, sinr_db.as_deref(), seed, &out, scenario.as_deref())
        }
        Command::Beampattern { solution, grid, out } => pattern(&solution, grid.as_deref(), out.as_deref()),
        Command::Plot { dir } => plot(&dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Infeasible(e)) => {
            eprintln!("infeasible: {e:#}");
            ExitCode::from(EXIT_INFEASIBLE)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
