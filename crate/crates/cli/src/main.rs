use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fairreg::experiments::{
    run_diagnostics, write_diagnose_csv, write_lower_bound_csv, LowerBoundConfig,
};
use fairreg::metrics::mc_excess_risk;
use fairreg::{
    analytic_excess_risk, build_fdp, fit, run_lower_bound_report, run_sweep, sample_dataset, unfairness,
    ComponentEstimates, Dataset, Error, GroupAffineRegressor, ModelParams, Result, SweepConfig,
    UnfairnessReport,
};

#[derive(Parser)]
#[command(name = "fairreg", version, about = "Fair linear regression under demographic parity")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset CSV from a parameter JSON file.
    Generate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the plugin estimator to a dataset CSV and write its JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Number of groups (inferred from the labels when omitted).
        #[arg(long = "M")]
        m: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a fitted regressor against known parameters.
    Evaluate {
        #[arg(long)]
        regressor: PathBuf,
        #[arg(long)]
        params: PathBuf,
        /// Monte Carlo samples for a cross-check of the risk; 0 disables it.
        #[arg(long, default_value_t = 0)]
        mc_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo sweep described by a config JSON file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fano lower bound next to estimator risk over an n grid.
    LowerBound {
        #[arg(long)]
        d: usize,
        #[arg(long = "M")]
        m: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        n_grid: Vec<usize>,
        #[arg(long = "B", default_value_t = 1.0)]
        b: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 4)]
        instances: usize,
        #[arg(long, default_value_t = 64)]
        code_budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Eigenvalue, W2 and KL oracle checks.
    Diagnose {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize, Deserialize)]
struct FitOutput {
    regressor: GroupAffineRegressor,
    estimates: ComponentEstimates,
}

#[derive(Serialize)]
struct Evaluation {
    excess_risk: f64,
    unfairness: UnfairnessReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    mc_risk: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mc_se: Option<f64>,
}

fn read_text(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_params(path: &Path) -> Result<ModelParams> {
    ModelParams::from_json(&read_text(path)?).map_err(|e| Error::Config(e.to_string()))
}

/// Accepts either the output of `fit` or a bare regressor.
fn load_regressor(path: &Path) -> Result<GroupAffineRegressor> {
    let text = read_text(path)?;
    if let Ok(out) = serde_json::from_str::<FitOutput>(&text) {
        return Ok(out.regressor);
    }
    serde_json::from_str::<GroupAffineRegressor>(&text).map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { params, n, seed, out } => {
            let params = load_params(&params)?;
            let data = sample_dataset(&params, n, seed)?;
            let mut w = sink(out.as_deref())?;
            data.write_csv(&mut w)?;
            w.flush()?;
        }
        Command::Fit { data, m, seed, out } => {
            let dataset = Dataset::read_csv(BufReader::new(File::open(&data)?), m)?;
            let (regressor, estimates) = fit(&dataset, dataset.d, dataset.m, seed)?;
            write_json(&FitOutput { regressor, estimates }, out.as_deref())?;
        }
        Command::Evaluate { regressor, params, mc_samples, seed, out } => {
            let f = load_regressor(&regressor)?;
            let params = load_params(&params)?;
            f.check_dims(params.d, params.m)?;
            let oracle = build_fdp(&params)?;
            let mc = if mc_samples > 0 {
                Some(mc_excess_risk(&f, &params, &oracle, mc_samples, seed)?)
            } else {
                None
            };
            let eval = Evaluation {
                excess_risk: analytic_excess_risk(&f, &oracle)?,
                unfairness: unfairness(&f, &params)?,
                mc_risk: mc.map(|m| m.0),
                mc_se: mc.map(|m| m.1),
            };
            write_json(&eval, out.as_deref())?;
        }
        Command::Sweep { config, seed, out } => {
            let mut cfg = SweepConfig::from_json(&read_text(&config)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let result = run_sweep(&cfg)?;
            let target = out.or(cfg.output.clone());
            let mut w = sink(target.as_deref())?;
            result.write_csv(&mut w)?;
            w.flush()?;
            for c in result.summaries(cfg.delta) {
                log::info!(
                    "n={} d={} M={} B={}: mean risk {:.3e} (se {:.1e}), unfairness q{:.2} {:.3e}{}",
                    c.n,
                    c.d,
                    c.m,
                    c.b,
                    c.mean_risk,
                    c.se_risk,
                    1.0 - cfg.delta,
                    c.unfairness_quantile,
                    if c.flagged { " [flagged]" } else { "" }
                );
            }
        }
        Command::LowerBound { d, m, n_grid, b, seed, trials, instances, code_budget, out } => {
            let mut cfg = LowerBoundConfig::new(d, m, n_grid, b, seed);
            cfg.trials = trials;
            cfg.instances = instances;
            cfg.code_budget = code_budget;
            let rows = run_lower_bound_report(&cfg)?;
            write_lower_bound_csv(&rows, sink(out.as_deref())?)?;
        }
        Command::Diagnose { seed, out } => {
            let rows = run_diagnostics(seed)?;
            let failed = rows.iter().filter(|r| !r.pass).count();
            write_diagnose_csv(&rows, sink(out.as_deref())?)?;
            if failed > 0 {
                log::warn!("{failed} diagnostic checks failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
