//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors (help goes to
//! standard error), 2 on runtime failures, including a failed gradient check.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand};

use crate::config::{Objective, TrainConfig};
use crate::error::{Error, Result};
use crate::evalsuite;
use crate::gradcheck;
use crate::plot;
use crate::rng;
use crate::synthdata::{self, Dataset};
use crate::trainer::{synthetic_splits, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

const TAG_GEN_NOISE: u64 = 0x6E01;

#[derive(Debug, Parser)]
#[command(name = "mcd-lab", version, about = "Desk-scale language-image contrastive pretraining lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset, one JSON record per line.
    GenData {
        #[arg(long, default_value_t = 5000)]
        pairs: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one objective; writes metrics.csv, model.ckpt and config.txt into --out.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        objective: Option<Objective>,
        #[arg(long)]
        seed: Option<u64>,
        /// Training data from gen-data; defaults to the synthetic split for the seed.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from a checkpoint; its stored config is used and other config flags are rejected.
        #[arg(long, conflicts_with_all = ["config", "objective", "seed", "overrides"])]
        resume: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Config overrides as key=value.
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint and print a JSON summary.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluation data from gen-data; defaults to the clean split for the stored seed.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference check of every loss and of backprop.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_INSTANCES)]
        instances: usize,
    },
    /// Train several objectives over several seeds; writes comparison.csv and comparison.svg.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "clip,clip_aug,kl_distill,mcd")]
        objectives: Vec<Objective>,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
        overrides: Vec<String>,
    },
    /// Render a metrics or comparison CSV as SVG.
    Plot {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            eprintln!("{e}");
            eprintln!("{}", Cli::command().render_help());
            return EXIT_USAGE;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn build_config(path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::GenData {
            pairs,
            noise_rate,
            seed,
            out,
        } => {
            let clean = Dataset::generate(pairs, seed);
            let data = synthdata::inject_noise(&clean, noise_rate, rng::stream_seed(seed, &[TAG_GEN_NOISE]))
                .map_err(|e| Error::Config(e.to_string()))?;
            data.save(&out)?;
            println!("wrote {} pairs ({} noisy) to {}", data.len(), data.noisy_count(), out.display());
        }
        Command::Train {
            config,
            objective,
            seed,
            data,
            resume,
            out,
            overrides,
        } => {
            let mut trainer = match &resume {
                Some(path) => Trainer::load_checkpoint(path)?,
                None => {
                    let mut cfg = build_config(config.as_deref(), &overrides)?;
                    if let Some(o) = objective {
                        cfg.objective = o;
                    }
                    if let Some(s) = seed {
                        cfg.seed = s;
                    }
                    Trainer::new(&cfg)?
                }
            };
            let cfg = trainer.config().clone();
            let train = match &data {
                Some(p) => Dataset::load(p)?,
                None => synthetic_splits(&cfg)?.0,
            };
            fs::create_dir_all(&out)?;
            fs::write(out.join("config.txt"), cfg.to_file_string())?;
            let mut metrics = BufWriter::new(fs::File::create(out.join("metrics.csv"))?);
            let reports = trainer.train(&train, Some(&mut metrics), Some(&out.join("model.ckpt")))?;
            metrics.flush()?;
            match reports.last() {
                Some(r) => println!(
                    "{} steps of {}; final step {} loss_total {:.6}",
                    reports.len(),
                    cfg.objective,
                    r.step,
                    r.loss_total
                ),
                None => println!("nothing to do: checkpoint is already at step {}", cfg.total_steps),
            }
        }
        Command::Eval { checkpoint, data } => {
            let trainer = Trainer::load_checkpoint(&checkpoint)?;
            let eval = match &data {
                Some(p) => Dataset::load(p)?,
                None => synthetic_splits(trainer.config())?.1,
            };
            let summary = evalsuite::evaluate(&trainer, &eval)?;
            writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&summary)?)?;
        }
        Command::Gradcheck { seed, instances } => {
            let results = gradcheck::run_suite(seed, instances)?;
            let mut all = true;
            for r in &results {
                all &= r.passed();
                println!(
                    "{:<24} instances {:>3}  worst rel err {:.3e}  {}",
                    r.name,
                    r.instances,
                    r.worst_rel_err,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            if !all {
                eprintln!("gradient check failed");
                return Ok(EXIT_RUNTIME);
            }
        }
        Command::Compare {
            config,
            seeds,
            objectives,
            out,
            overrides,
        } => {
            let base = build_config(config.as_deref(), &overrides)?;
            let threads = evalsuite::threads_from_env().map_err(|e| Error::Config(e.to_string()))?;
            let cmp = evalsuite::compare_objectives(&base, &objectives, &seeds, threads)?;
            fs::create_dir_all(&out)?;
            let csv = cmp.to_csv();
            fs::write(out.join("comparison.csv"), &csv)?;
            fs::write(out.join("comparison.svg"), plot::render_csv(&csv)?.1)?;
            for o in &objectives {
                if let Some((mean, std)) = cmp.summary(*o) {
                    println!(
                        "{o:<10} recall@1 i2t {:.3}±{:.3}  t2i {:.3}±{:.3}  rho {:.3}±{:.3}",
                        mean[0], std[0], mean[1], std[1], mean[4], std[4]
                    );
                }
            }
        }
        Command::Plot { input, out } => {
            let text = fs::read_to_string(&input)?;
            let (_, svg) = plot::render_csv(&text)?;
            fs::write(&out, svg)?;
        }
    }
    Ok(EXIT_OK)
}
