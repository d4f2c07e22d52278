//! Training, evaluation and learning-curve commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use avnav::eval::{
    emit_learning_curve, evaluate, export_trajectory, probe_semantic_leakage, summaries_csv, write_results,
    PolicyAgent, ProbeConfig,
};
use avnav::trainer::{load_policy, train, TrainOptions};

use crate::config::{Overrides, RunConfig};
use crate::data::{load_pool, read_text};
use crate::error::{CliError, Result};

/// Keys describing evaluation conditions rather than the trained model; they
/// are left out of the config saved next to a run.
const EVAL_ONLY_KEYS: [&str; 2] = ["audio_snr_db", "depth_noise"];

pub const RUN_CONFIG: &str = "config.toml";

pub struct TrainArgs {
    pub config: PathBuf,
    pub flags: Overrides,
    pub resume: Option<PathBuf>,
}

pub fn cmd_train(args: TrainArgs) -> Result<String> {
    let cfg = RunConfig::load(Some(&args.config), args.flags)?;
    let pool = load_pool(&cfg.train_scenes, &cfg.train_episodes)?;
    let sigs = Arc::new(cfg.signatures()?);
    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;
    save_run_config(&cfg)?;
    let opts = TrainOptions {
        ppo: cfg.ppo(),
        ablation: cfg.ablation()?,
        policy: cfg.policy(),
        sensors: cfg.sensors(),
        out_dir: cfg.out_dir.clone(),
        checkpoint_every: cfg.checkpoint_every,
        max_env_steps: (cfg.max_env_steps > 0).then_some(cfg.max_env_steps),
        resume: args.resume,
    };
    let out = train(&opts, &pool, sigs)?;
    let last = out.checkpoints.last().map(|p| p.display().to_string()).unwrap_or_else(|| "-".into());
    Ok(format!(
        "trained {}: updates={} env_steps={} episodes={} lambda={:.4} rolling_sr={:.3} checkpoint={last}",
        cfg.ablation,
        out.state.updates,
        out.state.env_steps,
        out.state.n,
        out.state.lambda,
        out.state.rolling_success()
    ))
}

fn save_run_config(cfg: &RunConfig) -> Result<()> {
    let mut table: toml::Table = toml::from_str(&cfg.to_toml()).map_err(|e| CliError::Config(e.to_string()))?;
    for k in EVAL_ONLY_KEYS {
        table.remove(k);
    }
    let path = cfg.out_dir.join(RUN_CONFIG);
    fs::write(&path, table.to_string()).map_err(|e| CliError::io(&path, e))
}

/// A checkpoint stem, or a run directory meaning its latest checkpoint.
pub fn resolve_checkpoint(path: &Path) -> Result<(PathBuf, Option<PathBuf>)> {
    if !path.is_dir() {
        let run_dir = path.parent().and_then(Path::parent).map(Path::to_path_buf);
        return Ok((path.to_path_buf(), run_dir));
    }
    let dir = path.join("checkpoints");
    let entries = fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut stems: Vec<String> = entries
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter_map(|n| n.strip_suffix(".manifest").map(str::to_owned))
        .collect();
    stems.sort();
    let last = stems.pop().ok_or_else(|| CliError::Config(format!("no checkpoints in {}", dir.display())))?;
    Ok((dir.join(last), Some(path.to_path_buf())))
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub config: Option<PathBuf>,
    pub flags: Overrides,
    pub scenes: Option<PathBuf>,
    pub episodes: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub trajectories: usize,
    pub probe: bool,
}

pub fn cmd_eval(args: EvalArgs) -> Result<String> {
    let (stem, run_dir) = resolve_checkpoint(&args.checkpoint)?;
    let config = args.config.clone().or_else(|| {
        let p = run_dir.as_ref()?.join(RUN_CONFIG);
        p.exists().then_some(p)
    });
    let cfg = RunConfig::load(config.as_deref(), args.flags)?;
    let policy = load_policy(&stem, cfg.policy())?;
    let scenes = args.scenes.unwrap_or_else(|| cfg.test_scenes.clone());
    let episodes = args.episodes.unwrap_or_else(|| cfg.test_episodes.clone());
    let pool = load_pool(&scenes, &episodes)?;
    let sigs = Arc::new(cfg.signatures()?);
    let sensors = cfg.sensors();
    let report = evaluate(&mut PolicyAgent::new(&policy), &pool, &sigs, sensors, cfg.seed)?;

    let out_dir = args.out_dir.unwrap_or_else(|| run_dir.unwrap_or_else(|| ".".into()).join("eval"));
    fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    let write = |name: &str, text: &str| -> Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    };
    write("metrics.csv", &summaries_csv(&report.summaries()))?;
    write("episodes.txt", &write_results(&report.results))?;
    if args.trajectories > 0 {
        let dir = out_dir.join("trajectories");
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        for (i, r) in report.results.iter().take(args.trajectories).enumerate() {
            let scene = pool.scene(r.scene_id)?;
            export_trajectory(r, scene, &dir.join(format!("episode_{i:04}.svg")))?;
        }
    }

    let mut lines: Vec<String> = report
        .summaries()
        .iter()
        .map(|s| format!("{:<8} SR={:.4} SPL={:.4} SNA={:.4} n={}", s.split.as_str(), s.sr, s.spl, s.sna, s.episodes))
        .collect();
    if args.probe {
        let probe_cfg = ProbeConfig { seed: cfg.seed, ..ProbeConfig::default() };
        let p = probe_semantic_leakage(&policy, &pool, &sigs, &sensors, &probe_cfg)?;
        write(
            "probe.csv",
            &format!(
                "accuracy,train_accuracy,chance,train_samples,test_samples\n{:.6},{:.6},{:.6},{},{}\n",
                p.accuracy, p.train_accuracy, p.chance, p.train_samples, p.test_samples
            ),
        )?;
        lines.push(format!("probe    accuracy={:.4} chance={:.4}", p.accuracy, p.chance));
    }
    lines.push(format!("wrote {}", out_dir.display()));
    Ok(lines.join("\n"))
}

pub fn cmd_curve(runs: &[(String, PathBuf)], metric: &str, out: Option<&Path>) -> Result<String> {
    let logs = runs.iter().map(|(_, p)| read_text(p)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&str, &str)> = runs.iter().zip(&logs).map(|((n, _), l)| (n.as_str(), l.as_str())).collect();
    let csv = emit_learning_curve(&pairs, metric)?;
    match out {
        Some(p) => {
            fs::write(p, &csv).map_err(|e| CliError::io(p, e))?;
            Ok(format!("wrote {}", p.display()))
        }
        None => Ok(csv.trim_end().to_string()),
    }
}
