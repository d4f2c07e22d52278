//! Gridworld scenes, agent kinematics, rewards and episode sampling.
//!
//! Cells are addressed by integer `(x, y)`; `x` grows to the right and `y`
//! grows upward. Cell `(x, y)` covers the unit square centred on `(x, y)`.

mod depth;
mod dynamics;
mod episode;
mod grid;
pub mod io;

pub use depth::{depth_render, DepthConfig};
pub use dynamics::{relative_angles, step, step_with_field, Action, Heading, Transition};
pub use episode::{generate_episodes, passes_filters, AgentPose, Episode, ELEVATIONS, MAX_STEPS, MIN_GEODESIC, MIN_RATIO};
pub use grid::{generate_scene, Cell, DistanceField, SceneGrid, Split, SPACING};
