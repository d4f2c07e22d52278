//! Scene and episode set generation.

use std::fs;
use std::path::{Path, PathBuf};

use avnav::acoustics::{heard_categories, is_heard, unheard_categories, NUM_CATEGORIES};
use avnav::env::{generate_episodes, generate_scene, io, passes_filters, Episode, SceneGrid, Split};
use avnav::seed;
use avnav::trainer::EpisodePool;

use crate::error::{CliError, Result};

pub struct SceneArgs {
    pub out_dir: PathBuf,
    pub train: usize,
    pub test: usize,
    pub width: usize,
    pub height: usize,
    pub rooms: usize,
    pub seed: u64,
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum CategorySet {
    Heard,
    Unheard,
    All,
}

impl CategorySet {
    pub fn categories(self) -> Vec<usize> {
        match self {
            CategorySet::Heard => heard_categories(),
            CategorySet::Unheard => unheard_categories(),
            CategorySet::All => (0..NUM_CATEGORIES).collect(),
        }
    }
}

pub struct EpisodeArgs {
    pub scenes: PathBuf,
    pub out: PathBuf,
    pub per_scene: usize,
    pub categories: CategorySet,
    pub seed: u64,
    pub force: bool,
}

fn write_new(path: &Path, text: &str, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::PathConflict(path.to_path_buf()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn load_scenes(path: &Path) -> Result<Vec<SceneGrid>> {
    let scenes = io::read_scenes(&read_text(path)?)?;
    for s in &scenes {
        s.validate()?;
    }
    Ok(scenes)
}

pub fn load_pool(scenes: &Path, episodes: &Path) -> Result<EpisodePool> {
    let episodes = io::read_episodes(&read_text(episodes)?)?;
    Ok(EpisodePool::new(load_scenes(scenes)?, episodes)?)
}

pub fn scene_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("train_scenes.txt"), dir.join("test_scenes.txt"))
}

/// Train scenes take ids `0..train`, test scenes follow; each scene's seed is
/// drawn from the "scene" stream at its id.
pub fn generate_scene_sets(args: &SceneArgs) -> Result<(Vec<SceneGrid>, Vec<SceneGrid>)> {
    let make = |id: usize, split: Split| -> Result<SceneGrid> {
        let mut s = generate_scene(seed::derive(args.seed, "scene", id as u64), args.width, args.height, args.rooms)?;
        s.id = id as u32;
        s.split = split;
        s.validate()?;
        Ok(s)
    };
    let train = (0..args.train).map(|i| make(i, Split::Train)).collect::<Result<Vec<_>>>()?;
    let test = (args.train..args.train + args.test).map(|i| make(i, Split::Test)).collect::<Result<Vec<_>>>()?;
    Ok((train, test))
}

pub fn gen_scenes(args: &SceneArgs) -> Result<String> {
    let (train_path, test_path) = scene_paths(&args.out_dir);
    for p in [&train_path, &test_path] {
        if p.exists() && !args.force {
            return Err(CliError::PathConflict(p.clone()));
        }
    }
    let (train, test) = generate_scene_sets(args)?;
    write_new(&train_path, &io::write_scenes(&train), args.force)?;
    write_new(&test_path, &io::write_scenes(&test), args.force)?;
    Ok(format!(
        "wrote {} train scenes to {} and {} test scenes to {}",
        train.len(),
        train_path.display(),
        test.len(),
        test_path.display()
    ))
}

/// Episodes for every scene in the set. Training scenes only accept heard
/// categories, so unheard sounds never reach a training file.
pub fn generate_episode_set(scenes: &[SceneGrid], args: &EpisodeArgs) -> Result<Vec<Episode>> {
    let categories = args.categories.categories();
    if let Some(s) = scenes.iter().find(|s| s.split == Split::Train) {
        if categories.iter().any(|&c| !is_heard(c)) {
            return Err(CliError::Config(format!(
                "scene {} is a training scene; only heard categories may be used for it",
                s.id
            )));
        }
    }
    let mut out = Vec::with_capacity(scenes.len() * args.per_scene);
    for s in scenes {
        let eps = generate_episodes(s, args.per_scene, args.seed, &categories)?;
        for e in &eps {
            if !passes_filters(s, e.start.cell(), e.source)? {
                return Err(avnav::Error::EpisodeSampling(format!("episode in scene {} fails the filters", s.id)).into());
            }
        }
        out.extend(eps);
    }
    Ok(out)
}

pub fn gen_episodes(args: &EpisodeArgs) -> Result<String> {
    if args.out.exists() && !args.force {
        return Err(CliError::PathConflict(args.out.clone()));
    }
    let scenes = load_scenes(&args.scenes)?;
    let eps = generate_episode_set(&scenes, args)?;
    write_new(&args.out, &io::write_episodes(&eps), args.force)?;
    Ok(format!("wrote {} episodes for {} scenes to {}", eps.len(), scenes.len(), args.out.display()))
}
