//! Line-delimited text formats for scenes and episodes.
//!
//! A scene set is a sequence of blocks, each a header followed by `height`
//! occupancy rows (`#` blocked, `.` free); row `y` of the block is grid row
//! `y`:
//!
//! ```text
//! scene <id> <width> <height> <seed> <train|test>
//! ```
//!
//! An episode set has one record per line:
//!
//! ```text
//! episode <scene_id> <start_x> <start_y> <heading> <source_x> <source_y> <elevation> <category> <max_steps>
//! ```
//!
//! with heading one of `+x`, `+y`, `-x`, `-y`. Blank lines are ignored.

use std::fmt::Write as _;
use std::str::FromStr;

use super::dynamics::Heading;
use super::episode::{AgentPose, Episode};
use super::grid::{Cell, SceneGrid, Split};
use crate::error::{Error, Result};

pub fn write_scenes(scenes: &[SceneGrid]) -> String {
    let mut out = String::new();
    for s in scenes {
        let _ = writeln!(out, "scene {} {} {} {} {}", s.id, s.width, s.height, s.seed, s.split.as_str());
        for row in s.occupancy().chunks(s.width) {
            out.extend(row.iter().map(|&b| if b { '#' } else { '.' }));
            out.push('\n');
        }
    }
    out
}

fn field<T: FromStr>(line: usize, name: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse { line, msg: format!("bad {name} {s:?}") })
}

pub fn read_scenes(text: &str) -> Result<Vec<SceneGrid>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut scenes = Vec::new();
    while let Some((n, header)) = lines.next() {
        let f: Vec<&str> = header.split_whitespace().collect();
        let ["scene", id, w, h, seed, split] = f.as_slice() else {
            return Err(Error::Parse { line: n, msg: format!("expected scene header, got {header:?}") });
        };
        let (width, height): (usize, usize) = (field(n, "width", w)?, field(n, "height", h)?);
        let split = Split::parse(split).ok_or_else(|| Error::Parse { line: n, msg: format!("bad split {split:?}") })?;
        let mut blocked = Vec::with_capacity(width * height);
        for _ in 0..height {
            let (rn, row) = lines.next().ok_or(Error::Parse { line: n, msg: "missing occupancy rows".into() })?;
            if row.len() != width {
                return Err(Error::Parse { line: rn, msg: format!("row has {} cells, expected {width}", row.len()) });
            }
            for ch in row.chars() {
                blocked.push(match ch {
                    '#' => true,
                    '.' => false,
                    _ => return Err(Error::Parse { line: rn, msg: format!("bad cell {ch:?}") }),
                });
            }
        }
        scenes.push(SceneGrid::from_occupancy(
            field(n, "id", id)?,
            width,
            height,
            field(n, "seed", seed)?,
            split,
            blocked,
        )?);
    }
    Ok(scenes)
}

pub fn write_episodes(episodes: &[Episode]) -> String {
    let mut out = String::new();
    for e in episodes {
        let _ = writeln!(
            out,
            "episode {} {} {} {} {} {} {} {} {}",
            e.scene_id,
            e.start.x,
            e.start.y,
            e.start.heading.as_str(),
            e.source.x,
            e.source.y,
            e.source_elevation,
            e.category,
            e.max_steps
        );
    }
    out
}

pub fn read_episodes(text: &str) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let ["episode", scene, sx, sy, heading, x, y, elev, cat, max] = f.as_slice() else {
            return Err(Error::Parse { line: n, msg: format!("expected episode record, got {line:?}") });
        };
        let heading = Heading::parse(heading).ok_or_else(|| Error::Parse { line: n, msg: format!("bad heading {heading:?}") })?;
        out.push(Episode {
            scene_id: field(n, "scene id", scene)?,
            start: AgentPose { x: field(n, "x", sx)?, y: field(n, "y", sy)?, heading },
            source: Cell::new(field(n, "source x", x)?, field(n, "source y", y)?),
            source_elevation: field(n, "elevation", elev)?,
            category: field(n, "category", cat)?,
            max_steps: field(n, "max steps", max)?,
        });
    }
    Ok(out)
}
