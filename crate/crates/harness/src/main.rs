use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use serde::Serialize;
use tri_core::channel::{self, ChannelState, ProfileName};
use tri_core::receiver::Checkpoint;
use tri_core::tri::TriReferences;
use tri_harness::bench::{self, RunOptions};
use tri_harness::trial::CalibrationSummary;
use tri_harness::{calibrate_source, plot, BenchMatrix, CalibrationCache, Result, ScenarioConfig};

#[derive(Parser)]
#[command(name = "tri", version, about = "Topological resilience index experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train and calibrate a receiver under one profile; write its references.
    Calibrate {
        #[arg(long)]
        profile: ProfileName,
        /// Scenario file supplying every other setting.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "refs.json")]
        out: PathBuf,
        /// Also save the calibrated receiver.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the trials of one scenario.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Overrides the scenario's trial count.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run a benchmark matrix and write the lead summary.
    Bench {
        /// Matrix file; the built-in ten-transition matrix when absent.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render SVG figures from a results directory.
    Plot {
        #[arg(long = "in", default_value = "results")]
        input: PathBuf,
        #[arg(long, default_value = "figs")]
        out: PathBuf,
    },
    /// Dump a stationary CIR trace of one profile as CSV.
    Cir {
        #[arg(long)]
        profile: ProfileName,
        #[arg(long, default_value_t = 200)]
        symbols: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "cir.csv")]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct CalibrationOutput<'a> {
    profile: ProfileName,
    refs: &'a TriReferences,
    summary: &'a CalibrationSummary,
}

fn write_summary(out: &Path, results: &[tri_harness::TrialResult]) -> Result<()> {
    let rows = bench::summarize(results);
    let path = out.join("summary.csv");
    bench::write_summary_csv(&path, &rows)?;
    for r in &rows {
        println!(
            "{:<32} tri lead {:>8} grad lead {:>8} post-adapt TRI {:>6} {}",
            r.scenario,
            r.tri_lead.mean.map_or("n/a".into(), |m| format!("{m:.1}")),
            r.grad_lead.mean.map_or("n/a".into(), |m| format!("{m:.1}")),
            r.post_adapt_tri.mean.map_or("n/a".into(), |m| format!("{m:.3}")),
            r.note
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate {
            profile,
            config,
            out,
            checkpoint,
        } => {
            let mut cfg = match config {
                Some(p) => ScenarioConfig::load(&p)?,
                None => ScenarioConfig::default(),
            };
            cfg.source = profile;
            let cal = calibrate_source(&cfg)?;
            let body = CalibrationOutput {
                profile,
                refs: &cal.refs,
                summary: &cal.summary,
            };
            fs::write(&out, serde_json::to_string_pretty(&body)?)?;
            if let Some(path) = checkpoint {
                fs::write(&path, Checkpoint::from_state(&cal.state).to_json()?)?;
            }
            println!("wrote {}", out.display());
        }
        Command::Run {
            config,
            out,
            trials,
            workers,
        } => {
            let cfg = ScenarioConfig::load(&config)?;
            let opts = RunOptions {
                trials: trials.unwrap_or(cfg.trials as u64),
                workers: workers.unwrap_or(cfg.workers),
                out: Some(out.clone()),
            };
            let results = bench::run_scenarios(std::slice::from_ref(&cfg), &opts, &CalibrationCache::new())?;
            write_summary(&out, &results)?;
        }
        Command::Bench {
            matrix,
            trials,
            seed,
            out,
            workers,
        } => {
            let mut m = match matrix {
                Some(p) => BenchMatrix::load(&p)?,
                None => BenchMatrix::default(),
            };
            m.base.seed = seed;
            let scenarios = m.scenarios()?;
            let opts = RunOptions {
                trials,
                workers: workers.unwrap_or(m.base.workers),
                out: Some(out.clone()),
            };
            let results = bench::run_scenarios(&scenarios, &opts, &CalibrationCache::new())?;
            write_summary(&out, &results)?;
        }
        Command::Plot { input, out } => {
            let results = bench::load_results(&input)?;
            for p in plot::plot_results(&results, &out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Cir {
            profile,
            symbols,
            seed,
            out,
        } => {
            let cfg = ScenarioConfig::default();
            let prof = Arc::new(cfg.profile(profile)?);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut s = ChannelState::stationary(prof, &mut rng);
            let mut states = Vec::with_capacity(symbols);
            for _ in 0..symbols {
                s = channel::evolve(&s, &mut rng);
                states.push(s.clone());
            }
            channel::write_cir_trace(std::io::BufWriter::new(fs::File::create(&out)?), &states)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
