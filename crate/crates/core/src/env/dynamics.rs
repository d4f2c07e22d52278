use std::f64::consts::{FRAC_PI_2, PI};

use super::episode::{AgentPose, Episode};
use super::grid::{Cell, DistanceField, SceneGrid};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Heading {
    PosX,
    PosY,
    NegX,
    NegY,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::PosX, Heading::PosY, Heading::NegX, Heading::NegY];

    /// Counterclockwise angle from +x.
    pub fn angle(self) -> f64 {
        FRAC_PI_2 * self.index() as f64
    }

    pub fn index(self) -> usize {
        match self {
            Heading::PosX => 0,
            Heading::PosY => 1,
            Heading::NegX => 2,
            Heading::NegY => 3,
        }
    }

    pub fn from_index(i: usize) -> Heading {
        Heading::ALL[i % 4]
    }

    pub fn delta(self) -> (i64, i64) {
        match self {
            Heading::PosX => (1, 0),
            Heading::PosY => (0, 1),
            Heading::NegX => (-1, 0),
            Heading::NegY => (0, -1),
        }
    }

    pub fn left(self) -> Heading {
        Heading::from_index(self.index() + 1)
    }

    pub fn right(self) -> Heading {
        Heading::from_index(self.index() + 3)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Heading::PosX => "+x",
            Heading::PosY => "+y",
            Heading::NegX => "-x",
            Heading::NegY => "-y",
        }
    }

    pub fn parse(s: &str) -> Option<Heading> {
        Heading::ALL.into_iter().find(|h| h.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    MoveForward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Action {
    pub const COUNT: usize = 4;
    pub const ALL: [Action; 4] = [Action::MoveForward, Action::TurnLeft, Action::TurnRight, Action::Stop];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub reward: f32,
    pub done: bool,
    pub geodesic_to_source: f64,
    pub success: bool,
}

pub const TIME_PENALTY: f32 = -0.01;
pub const SUCCESS_REWARD: f32 = 10.0;

fn advance(scene: &SceneGrid, pose: AgentPose, action: Action) -> AgentPose {
    match action {
        Action::MoveForward => {
            let (dx, dy) = pose.heading.delta();
            let (x, y) = (pose.x as i64 + dx, pose.y as i64 + dy);
            if scene.is_blocked_at(x, y) {
                pose
            } else {
                AgentPose { x: x as usize, y: y as usize, ..pose }
            }
        }
        Action::TurnLeft => AgentPose { heading: pose.heading.left(), ..pose },
        Action::TurnRight => AgentPose { heading: pose.heading.right(), ..pose },
        Action::Stop => pose,
    }
}

/// One environment transition given a precomputed distance field rooted at
/// the episode's source.
pub fn step_with_field(
    scene: &SceneGrid,
    episode: &Episode,
    field: &DistanceField,
    pose: AgentPose,
    step_index: u32,
    action: Action,
) -> Result<(AgentPose, Transition)> {
    if step_index >= episode.max_steps {
        return Err(Error::EpisodeFinished);
    }
    if field.origin() != episode.source {
        return Err(Error::InvalidArgument("distance field is not rooted at the source".into()));
    }
    let before = field.distance(pose.cell())?;
    let next = advance(scene, pose, action);
    let after = field.distance(next.cell())?;

    let shaping = if after < before {
        1.0
    } else if after > before {
        -1.0
    } else {
        0.0
    };
    let success = action == Action::Stop && next.cell() == episode.source;
    let reward = shaping + TIME_PENALTY + if success { SUCCESS_REWARD } else { 0.0 };
    let done = action == Action::Stop || step_index + 1 >= episode.max_steps;
    Ok((next, Transition { reward, done, geodesic_to_source: after, success }))
}

/// One environment transition. Recomputes the source distance field; use
/// [`step_with_field`] in loops.
pub fn step(
    scene: &SceneGrid,
    episode: &Episode,
    pose: AgentPose,
    step_index: u32,
    action: Action,
) -> Result<(AgentPose, Transition)> {
    let field = scene.distance_field(episode.source)?;
    step_with_field(scene, episode, &field, pose, step_index, action)
}

/// Straight-line bearing `alpha` of the source in the agent frame
/// (counterclockwise positive, in (-pi, pi]) and elevation angle `beta`.
/// Both are zero when the agent stands on the source cell.
pub fn relative_angles(pose: AgentPose, episode: &Episode) -> (f64, f64) {
    let src: Cell = episode.source;
    if pose.cell() == src {
        return (0.0, 0.0);
    }
    let dx = src.x as f64 - pose.x as f64;
    let dy = src.y as f64 - pose.y as f64;
    let mut alpha = dy.atan2(dx) - pose.heading.angle();
    while alpha <= -PI {
        alpha += 2.0 * PI;
    }
    while alpha > PI {
        alpha -= 2.0 * PI;
    }
    let beta = f64::from(episode.source_elevation).atan2(dx.hypot(dy));
    (alpha, beta)
}
