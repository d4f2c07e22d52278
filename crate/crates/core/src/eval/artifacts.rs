use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metrics::EpisodeResult;
use crate::env::{Cell, SceneGrid};
use crate::error::{Error, Result};

const CELL_PX: f64 = 20.0;

fn center(scene: &SceneGrid, x: usize, y: usize) -> (f64, f64) {
    // Grid y points up, SVG y points down.
    (
        (x as f64 + 0.5) * CELL_PX,
        ((scene.height - 1 - y) as f64 + 0.5) * CELL_PX,
    )
}

fn points(scene: &SceneGrid, cells: impl Iterator<Item = Cell>) -> String {
    cells
        .map(|c| {
            let (px, py) = center(scene, c.x, c.y);
            format!("{px:.1},{py:.1}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Standalone SVG document of one episode: occupancy, oracle path in green,
/// the agent path fading from light to dark, start in yellow, goal in red.
pub fn trajectory_svg(result: &EpisodeResult, scene: &SceneGrid) -> Result<String> {
    let start = result
        .trajectory
        .first()
        .ok_or(Error::EmptyInput("trajectory"))?;
    let goal = *result
        .oracle_path
        .last()
        .ok_or(Error::EmptyInput("oracle path"))?;
    let (w, h) = (scene.width as f64 * CELL_PX, scene.height as f64 * CELL_PX);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);

    let _ = writeln!(svg, r##"<g id="occupancy" fill="#404040">"##);
    for y in 0..scene.height {
        for x in 0..scene.width {
            if !scene.is_free(Cell::new(x, y)) {
                let (cx, cy) = center(scene, x, y);
                let _ = writeln!(
                    svg,
                    r#"<rect x="{:.1}" y="{:.1}" width="{CELL_PX}" height="{CELL_PX}"/>"#,
                    cx - CELL_PX / 2.0,
                    cy - CELL_PX / 2.0
                );
            }
        }
    }
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(
        svg,
        r#"<polyline id="oracle-path" points="{}" fill="none" stroke="green" stroke-width="3" stroke-opacity="0.6"/>"#,
        points(scene, result.oracle_path.iter().copied())
    );

    let _ = writeln!(svg, r#"<g id="agent-path">"#);
    let _ = writeln!(
        svg,
        r#"<polyline id="agent-polyline" points="{}" fill="none" stroke="blue" stroke-width="1" stroke-opacity="0.15"/>"#,
        points(scene, result.trajectory.iter().map(|p| p.cell()))
    );
    let n = result.trajectory.len();
    for (k, pair) in result.trajectory.windows(2).enumerate() {
        if pair[0].cell() == pair[1].cell() {
            continue;
        }
        let (x1, y1) = center(scene, pair[0].x, pair[0].y);
        let (x2, y2) = center(scene, pair[1].x, pair[1].y);
        let opacity = 0.2 + 0.8 * (k + 1) as f64 / (n - 1) as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="blue" stroke-width="3" stroke-opacity="{opacity:.3}"/>"#
        );
    }
    let (sx, sy) = center(scene, start.x, start.y);
    let _ = writeln!(svg, r#"<circle id="start" cx="{sx:.1}" cy="{sy:.1}" r="6" fill="yellow" stroke="black"/>"#);
    let _ = writeln!(svg, "</g>");

    let (gx, gy) = center(scene, goal.x, goal.y);
    let _ = writeln!(svg, r#"<circle id="goal" cx="{gx:.1}" cy="{gy:.1}" r="6" fill="red" stroke="black"/>"#);
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn export_trajectory(result: &EpisodeResult, scene: &SceneGrid, path: &Path) -> Result<()> {
    fs::write(path, trajectory_svg(result, scene)?)?;
    Ok(())
}

/// `(env_steps, value)` pairs of one column of a training log.
pub fn read_log_column(log: &str, column: &str) -> Result<Vec<(u64, f64)>> {
    let mut lines = log.lines().filter(|l| !l.trim().is_empty());
    let Some(header) = lines.next() else {
        return Ok(Vec::new());
    };
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        names.iter().position(|n| *n == name).ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("log has no column {name:?}"),
        })
    };
    let (steps_col, value_col) = (find("env_steps")?, find(column)?);
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            let bad = |msg: String| Error::Parse { line: i + 2, msg };
            let get = |j: usize| fields.get(j).map(|s| s.trim()).ok_or_else(|| bad(format!("missing field {j}")));
            let steps = get(steps_col)?.parse().map_err(|e| bad(format!("env_steps: {e}")))?;
            let value = get(value_col)?.parse().map_err(|e| bad(format!("{column}: {e}")))?;
            Ok((steps, value))
        })
        .collect()
}

/// Long-format curve data `run,env_steps,<metric>` with one series per
/// labelled log.
pub fn emit_learning_curve(runs: &[(&str, &str)], metric: &str) -> Result<String> {
    let mut out = format!("run,env_steps,{metric}\n");
    for (label, log) in runs {
        if label.contains(',') {
            return Err(Error::InvalidArgument(format!("run label {label:?} contains a comma")));
        }
        for (steps, value) in read_log_column(log, metric)? {
            let _ = writeln!(out, "{label},{steps},{value}");
        }
    }
    Ok(out)
}
