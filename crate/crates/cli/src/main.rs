//! `avnav`: dataset generation, training, evaluation and gradient checks.

mod config;
mod data;
mod error;
mod gradcheck;
mod run;

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Overrides;
use crate::data::{CategorySet, EpisodeArgs, SceneArgs};
use crate::error::{CliError, Result};
use crate::run::{EvalArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "avnav", version, about = "Audio-visual gridworld navigation lab")]
struct Cli {
    /// Run single-threaded. Every command already runs on one thread, so
    /// this only documents intent in scripts.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test scene sets.
    GenScenes {
        /// Output directory; receives train_scenes.txt and test_scenes.txt.
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        train: usize,
        #[arg(long, default_value_t = 8)]
        test: usize,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 16)]
        height: usize,
        #[arg(long, default_value_t = 3)]
        rooms: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overwrite existing files.
        #[arg(long)]
        force: bool,
    },
    /// Sample episodes for every scene in a scene file.
    GenEpisodes {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        per_scene: usize,
        /// Sound categories to draw from. Training scenes accept only `heard`.
        #[arg(long, value_enum, default_value_t = CategorySet::Heard)]
        categories: CategorySet,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Train a policy. Keys set in the config file take precedence over flags.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// full, no_ac, no_lp or none.
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        max_env_steps: Option<u64>,
        /// Continue from this checkpoint stem.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint greedily and write metrics and trajectories.
    Eval {
        /// Checkpoint stem, or a run directory to use its latest checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the config saved in the run directory.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the config's test scenes.
        #[arg(long)]
        scenes: Option<PathBuf>,
        /// Defaults to the config's test episodes.
        #[arg(long)]
        episodes: Option<PathBuf>,
        /// Audio signal-to-noise ratio in dB.
        #[arg(long, value_parser = ["20", "30", "40", "50"])]
        snr: Option<String>,
        /// Per-ray depth noise; the bare flag uses a standard deviation of 0.1.
        #[arg(long, num_args = 0..=1, default_missing_value = "0.1")]
        depth_noise: Option<f32>,
        /// Seed of the evaluation noise streams.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to <run>/eval.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Export SVGs for the first N episodes.
        #[arg(long, default_value_t = 0)]
        trajectories: usize,
        /// Also fit a category probe on the frozen audio features.
        #[arg(long)]
        probe: bool,
    },
    /// Finite-difference check of every differentiable component.
    Gradcheck {
        /// Swap in a reversal layer with a wrong gradient; the run must fail.
        #[arg(long)]
        inject_sign_bug: bool,
    },
    /// Merge training logs into one long-format learning-curve CSV.
    Curve {
        /// `label=path/to/train_log.csv`, repeatable.
        #[arg(required = true)]
        runs: Vec<String>,
        #[arg(long, default_value = "sr_rolling")]
        metric: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::GenScenes { out_dir, train, test, width, height, rooms, seed, force } => {
            data::gen_scenes(&SceneArgs { out_dir, train, test, width, height, rooms, seed, force })
        }
        Command::GenEpisodes { scenes, out, per_scene, categories, seed, force } => {
            data::gen_episodes(&EpisodeArgs { scenes, out, per_scene, categories, seed, force })
        }
        Command::Train { config, seed, ablation, out_dir, max_env_steps, resume } => {
            let mut flags = Overrides::default();
            if let Some(s) = seed {
                flags.set("seed", toml_int(s)?);
            }
            if let Some(a) = ablation {
                flags.set("ablation", a);
            }
            if let Some(d) = out_dir {
                flags.set("out_dir", d.display().to_string());
            }
            if let Some(m) = max_env_steps {
                flags.set("max_env_steps", toml_int(m)?);
            }
            run::cmd_train(TrainArgs { config, flags, resume })
        }
        Command::Eval { checkpoint, config, scenes, episodes, snr, depth_noise, seed, out_dir, trajectories, probe } => {
            let mut flags = Overrides::default();
            if let Some(s) = snr {
                flags.set("audio_snr_db", s.parse::<f64>().map_err(|e| CliError::Config(e.to_string()))?);
            }
            if let Some(d) = depth_noise {
                flags.set("depth_noise", f64::from(d));
            }
            if let Some(s) = seed {
                flags.set("seed", toml_int(s)?);
            }
            run::cmd_eval(EvalArgs { checkpoint, config, flags, scenes, episodes, out_dir, trajectories, probe })
        }
        Command::Gradcheck { inject_sign_bug } => {
            let results = gradcheck::run_suite(inject_sign_bug)?;
            let mut lines: Vec<String> = results
                .iter()
                .map(|r| {
                    let verdict = if r.passed { "ok" } else { "FAIL" };
                    format!("{:<28} checked={:<6} max_rel_err={:.3e} {verdict}", r.name, r.checked, r.max_rel_err)
                })
                .collect();
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
            if !failed.is_empty() {
                let _ = writeln!(std::io::stdout().lock(), "{}", lines.join("\n"));
                return Err(CliError::GradCheck(format!("failed: {}", failed.join(", "))));
            }
            lines.push(format!("all {} checks passed", results.len()));
            Ok(lines.join("\n"))
        }
        Command::Curve { runs, metric, out } => {
            let runs = runs
                .iter()
                .map(|r| {
                    r.split_once('=')
                        .map(|(l, p)| (l.to_string(), PathBuf::from(p)))
                        .ok_or_else(|| CliError::Config(format!("expected label=path, got {r:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            run::cmd_curve(&runs, &metric, out.as_deref())
        }
    }
}

fn toml_int(v: u64) -> Result<i64> {
    i64::try_from(v).map_err(|_| CliError::Config(format!("{v} exceeds the config integer range")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(report) => {
            if !report.is_empty() {
                let _ = writeln!(std::io::stdout().lock(), "{report}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
