use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::env::{Action, AgentPose, Cell, Heading, SceneGrid};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitLabel {
    Heard,
    Unheard,
    All,
}

impl SplitLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Heard => "heard",
            SplitLabel::Unheard => "unheard",
            SplitLabel::All => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub scene_id: u32,
    pub category: usize,
    pub success: bool,
    /// Distance travelled.
    pub path_length: f64,
    /// Oracle shortest path length.
    pub shortest_path: f64,
    /// Actions taken, including the final Stop.
    pub action_count: u32,
    /// Oracle minimum number of actions, including the final Stop.
    pub min_actions: u32,
    pub trajectory: Vec<AgentPose>,
    /// Oracle cell path from start to goal.
    pub oracle_path: Vec<Cell>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsSummary {
    pub split: SplitLabel,
    pub sr: f64,
    pub spl: f64,
    pub sna: f64,
    pub episodes: usize,
}

fn state_index(scene: &SceneGrid, c: Cell, h: Heading) -> usize {
    (c.y * scene.width + c.x) * 4 + h.index()
}

fn advance(scene: &SceneGrid, c: Cell, h: Heading, a: Action) -> (Cell, Heading) {
    match a {
        Action::MoveForward => {
            let (dx, dy) = h.delta();
            let (x, y) = (c.x as i64 + dx, c.y as i64 + dy);
            if scene.is_blocked_at(x, y) {
                (c, h)
            } else {
                (Cell::new(x as usize, y as usize), h)
            }
        }
        Action::TurnLeft => (c, h.left()),
        Action::TurnRight => (c, h.right()),
        Action::Stop => (c, h),
    }
}

/// Shortest path length to `goal` (breadth-first over cells) and the minimum
/// number of actions, found by breadth-first search over (cell, heading)
/// states plus the final Stop.
pub fn shortest_path_oracle(scene: &SceneGrid, start: AgentPose, goal: Cell) -> Result<(f64, u32)> {
    if !scene.is_free(goal) {
        return Err(Error::InvalidCell { x: goal.x, y: goal.y, reason: "goal is blocked" });
    }
    let length = scene.geodesic(start.cell(), goal)?;
    let mut dist = vec![u32::MAX; scene.width * scene.height * 4];
    dist[state_index(scene, start.cell(), start.heading)] = 0;
    let mut queue = VecDeque::from([(start.cell(), start.heading)]);
    while let Some((c, h)) = queue.pop_front() {
        let d = dist[state_index(scene, c, h)];
        if c == goal {
            return Ok((length, d + 1));
        }
        for a in [Action::MoveForward, Action::TurnLeft, Action::TurnRight] {
            let (nc, nh) = advance(scene, c, h, a);
            let i = state_index(scene, nc, nh);
            if dist[i] == u32::MAX {
                dist[i] = d + 1;
                queue.push_back((nc, nh));
            }
        }
    }
    Err(Error::Unreachable { x: goal.x, y: goal.y })
}

/// One shortest cell path from `start` to `goal`.
pub fn oracle_cell_path(scene: &SceneGrid, start: Cell, goal: Cell) -> Result<Vec<Cell>> {
    let field = scene.distance_field(goal)?;
    let mut path = vec![start];
    let mut c = start;
    let mut d = field.steps(c).ok_or(Error::Unreachable { x: c.x, y: c.y })?;
    while d > 0 {
        c = scene
            .neighbors(c)
            .find(|&n| field.steps(n) == Some(d - 1))
            .ok_or(Error::Unreachable { x: c.x, y: c.y })?;
        d -= 1;
        path.push(c);
    }
    Ok(path)
}

/// Greedy table of the fewest remaining actions (including Stop) from every
/// state to `goal`.
pub(crate) fn actions_to_goal(scene: &SceneGrid, goal: Cell) -> Vec<u32> {
    let n = scene.width * scene.height * 4;
    let mut dist = vec![u32::MAX; n];
    // Reverse breadth-first search: predecessors of (c, h) under each action.
    let mut queue = VecDeque::new();
    for h in Heading::ALL {
        dist[state_index(scene, goal, h)] = 1;
        queue.push_back((goal, h));
    }
    while let Some((c, h)) = queue.pop_front() {
        let d = dist[state_index(scene, c, h)];
        let mut preds = vec![(c, h.right()), (c, h.left())];
        let (dx, dy) = h.delta();
        let (px, py) = (c.x as i64 - dx, c.y as i64 - dy);
        if !scene.is_blocked_at(px, py) {
            preds.push((Cell::new(px as usize, py as usize), h));
        }
        for (pc, ph) in preds {
            let i = state_index(scene, pc, ph);
            if dist[i] == u32::MAX {
                dist[i] = d + 1;
                queue.push_back((pc, ph));
            }
        }
    }
    dist
}

pub(crate) fn table_lookup(scene: &SceneGrid, table: &[u32], pose: AgentPose) -> u32 {
    table[state_index(scene, pose.cell(), pose.heading)]
}

pub(crate) fn step_state(scene: &SceneGrid, pose: AgentPose, a: Action) -> AgentPose {
    let (c, h) = advance(scene, pose.cell(), pose.heading, a);
    AgentPose { x: c.x, y: c.y, heading: h }
}

/// Success rate, success weighted by path length, and success weighted by
/// action count.
pub fn compute_metrics(results: &[EpisodeResult], split: SplitLabel) -> Result<MetricsSummary> {
    if results.is_empty() {
        return Err(Error::EmptyInput("episode results"));
    }
    let n = results.len() as f64;
    let (mut sr, mut spl, mut sna) = (0.0, 0.0, 0.0);
    for r in results {
        if r.success {
            sr += 1.0;
            spl += r.shortest_path / r.path_length.max(r.shortest_path);
            sna += f64::from(r.min_actions) / f64::from(r.action_count.max(r.min_actions));
        }
    }
    Ok(MetricsSummary { split, sr: sr / n, spl: spl / n, sna: sna / n, episodes: results.len() })
}

/// `split,SR,SPL,SNA,n_episodes` with one row per summary.
pub fn summaries_csv(summaries: &[MetricsSummary]) -> String {
    let mut out = String::from("split,SR,SPL,SNA,n_episodes\n");
    for s in summaries {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6},{}", s.split.as_str(), s.sr, s.spl, s.sna, s.episodes);
    }
    out
}

/// One line per episode:
/// `result <scene> <category> <success> <path_length> <shortest> <actions> <min_actions> <x,y,heading;...>`.
pub fn write_results(results: &[EpisodeResult]) -> String {
    let mut out = String::new();
    for r in results {
        let traj: Vec<String> = r
            .trajectory
            .iter()
            .map(|p| format!("{},{},{}", p.x, p.y, p.heading.as_str()))
            .collect();
        let _ = writeln!(
            out,
            "result {} {} {} {} {} {} {} {}",
            r.scene_id,
            r.category,
            u8::from(r.success),
            r.path_length,
            r.shortest_path,
            r.action_count,
            r.min_actions,
            traj.join(";")
        );
    }
    out
}
