use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use crl_harness::roles::{self, SamplerOptions, TrainerOptions};
use crl_harness::{
    aggregate_scores, evaluate, final_score, load_config_file, run_experiment, ExperimentConfig, HarnessError,
    RunOptions, ScoreTable,
};

/// Exit status after SIGINT, following the shell convention.
const INTERRUPTED: u8 = 130;

#[derive(Parser)]
#[command(name = "crl", version, about = "Distributed off-policy reinforcement learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides env.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides run.metrics.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train in-process: one environment, learner and buffer.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
        /// Start over even if a checkpoint of this run exists.
        #[arg(long)]
        fresh: bool,
    },
    /// Host the replay hub.
    Hub {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hub: Option<String>,
    },
    /// Collect experience for a hub.
    Sampler {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hub: Option<String>,
        #[arg(long, default_value_t = 1)]
        node_id: u64,
        /// Run noise-free evaluation episodes instead of training ones.
        #[arg(long)]
        eval: bool,
    },
    /// Learn from batches served by a hub.
    Trainer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hub: Option<String>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long, default_value_t = 1)]
        node_id: u64,
        /// Train without publishing weights to samplers.
        #[arg(long)]
        no_publish: bool,
    },
    /// Roll out a saved actor without exploration noise.
    Evaluate {
        /// A run directory or an actor `.crlw` file.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required_unless_present = "config")]
        env: Option<String>,
        /// Takes the environment name from this config when --env is absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Scale per-env final scores to [0,1] and average per config.
    Aggregate {
        /// CSV with columns config,env,score.
        #[arg(long)]
        scores: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = load_config_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.env.seed = seed;
    }
    if let Some(m) = &common.metrics {
        cfg.run.metrics = Some(m.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn install_stop() -> Arc<AtomicBool> {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || {
        if flag.swap(true, Ordering::SeqCst) {
            std::process::exit(i32::from(INTERRUPTED));
        }
        eprintln!("interrupt received, finishing the current step; press again to abort");
    }) {
        log::warn!("cannot install the interrupt handler: {e}");
    }
    stop
}

fn interrupted(stop: &AtomicBool) -> ExitCode {
    if stop.load(Ordering::SeqCst) {
        ExitCode::from(INTERRUPTED)
    } else {
        ExitCode::SUCCESS
    }
}

fn execute(cli: Cli) -> Result<ExitCode, HarnessError> {
    let stop = install_stop();
    match cli.command {
        Command::Run {
            common,
            checkpoint_dir,
            run_id,
            fresh,
        } => {
            let cfg = load(&common)?;
            let opts = RunOptions {
                checkpoint_dir: checkpoint_dir.or_else(|| cfg.run.checkpoint_dir.as_ref().map(PathBuf::from)),
                run_id,
                metrics: cfg.run.metrics.as_ref().map(PathBuf::from),
                resume: !fresh,
            };
            let out = run_experiment(&cfg, &opts, &stop)?;
            println!(
                "episodes {} env_steps {} updates {} checkpoints {}{}",
                out.episodes,
                out.env_steps,
                out.updates,
                out.checkpoints,
                if out.resumed { " (resumed)" } else { "" }
            );
            if !out.returns.is_empty() {
                println!("final_score {}", final_score(&out.returns)?);
            }
            if let Some(dir) = &out.run_dir {
                println!("checkpoint {}", dir.display());
            }
            Ok(if out.interrupted { ExitCode::from(INTERRUPTED) } else { ExitCode::SUCCESS })
        }
        Command::Hub { common, hub } => {
            let cfg = load(&common)?;
            let addr = hub.unwrap_or_else(|| cfg.distributed.hub.clone());
            let stats = roles::serve_hub(&cfg, &addr, &stop)?;
            println!(
                "stored {} pushed {} sampled {} weight_version {} protocol_errors {}",
                stats.size, stats.pushed_transitions, stats.sampled_transitions, stats.weight_version, stats.protocol_errors
            );
            Ok(interrupted(&stop))
        }
        Command::Sampler {
            common,
            hub,
            node_id,
            eval,
        } => {
            let cfg = load(&common)?;
            let opts = SamplerOptions {
                node_id,
                hub: hub.unwrap_or_else(|| cfg.distributed.hub.clone()),
                eval,
                metrics: cfg.run.metrics.as_ref().map(PathBuf::from),
            };
            let r = roles::run_sampler_role(&cfg, &opts, &stop)?;
            println!(
                "episodes {} pushed {} dropped {} rejected {} unsent {}",
                r.episodes_run, r.episodes_pushed, r.episodes_dropped, r.episodes_rejected, r.episodes_unsent
            );
            Ok(interrupted(&stop))
        }
        Command::Trainer {
            common,
            hub,
            checkpoint_dir,
            run_id,
            node_id,
            no_publish,
        } => {
            let cfg = load(&common)?;
            let opts = TrainerOptions {
                node_id,
                hub: hub.unwrap_or_else(|| cfg.distributed.hub.clone()),
                publisher: !no_publish,
                metrics: cfg.run.metrics.as_ref().map(PathBuf::from),
                checkpoint_dir: checkpoint_dir.or_else(|| cfg.run.checkpoint_dir.as_ref().map(PathBuf::from)),
                run_id,
            };
            let out = roles::run_trainer_role(&cfg, &opts, &stop)?;
            println!("updates {} weight_version {}", out.updates, out.weight_version);
            Ok(interrupted(&stop))
        }
        Command::Evaluate {
            checkpoint,
            env,
            config,
            episodes,
            seed,
        } => {
            let env = match (env, config) {
                (Some(e), _) => e,
                (None, Some(c)) => load_config_file(&c)?.env.name,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let r = evaluate(&checkpoint, &env, episodes, seed)?;
            println!("mean {} std {}", r.mean, r.std);
            for (i, ret) in r.returns.iter().enumerate() {
                println!("episode {i} return {ret}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Aggregate { scores } => {
            let table = ScoreTable::from_csv(std::fs::File::open(&scores)?)?;
            println!("config,aggregate");
            for (config, score) in aggregate_scores(&table)? {
                println!("{config},{score}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
