use rand::Rng as _;

use super::dynamics::Heading;
use super::grid::{Cell, SceneGrid};
use crate::error::{Error, Result};
use crate::seed;

pub const MAX_STEPS: u32 = 150;
pub const MIN_GEODESIC: f64 = 4.0;
pub const MIN_RATIO: f64 = 1.1;
/// Source heights above the floor, drawn uniformly.
pub const ELEVATIONS: [f32; 3] = [0.0, 1.0, 2.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AgentPose {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
}

impl AgentPose {
    pub fn cell(self) -> Cell {
        Cell::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub scene_id: u32,
    pub start: AgentPose,
    pub source: Cell,
    pub source_elevation: f32,
    pub category: usize,
    pub max_steps: u32,
}

/// Whether a start/source pair is long enough and not almost a straight line.
pub fn passes_filters(scene: &SceneGrid, start: Cell, source: Cell) -> Result<bool> {
    if start == source {
        return Ok(false);
    }
    let geodesic = scene.geodesic(start, source)?;
    Ok(geodesic >= MIN_GEODESIC && geodesic / start.euclidean(source) >= MIN_RATIO)
}

/// Rejection-samples `count` episodes; categories are drawn uniformly from
/// `categories`.
pub fn generate_episodes(scene: &SceneGrid, count: usize, rng_seed: u64, categories: &[usize]) -> Result<Vec<Episode>> {
    if categories.is_empty() {
        return Err(Error::EmptyInput("category pool"));
    }
    let free = scene.free_cells();
    if free.len() < 2 {
        return Err(Error::EpisodeSampling(format!("scene {} has fewer than two free cells", scene.id)));
    }
    let mut rng = seed::stream(rng_seed, "episode", u64::from(scene.id));
    let max_draws = 1000 + 200 * count;
    let mut out = Vec::with_capacity(count);
    let mut draws = 0;
    while out.len() < count {
        if draws == max_draws {
            return Err(Error::EpisodeSampling(format!(
                "only {} of {count} valid episodes in scene {} after {max_draws} draws",
                out.len(),
                scene.id
            )));
        }
        draws += 1;
        let start = free[rng.random_range(0..free.len())];
        let source = free[rng.random_range(0..free.len())];
        let heading = Heading::from_index(rng.random_range(0..4));
        let elevation = ELEVATIONS[rng.random_range(0..ELEVATIONS.len())];
        let category = categories[rng.random_range(0..categories.len())];
        if passes_filters(scene, start, source)? {
            out.push(Episode {
                scene_id: scene.id,
                start: AgentPose { x: start.x, y: start.y, heading },
                source,
                source_elevation: elevation,
                category,
                max_steps: MAX_STEPS,
            });
        }
    }
    Ok(out)
}
