use super::episode::AgentPose;
use super::grid::SceneGrid;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthConfig {
    pub rays: usize,
    pub fov: f64,
    pub max_depth: f64,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            rays: 16,
            fov: std::f64::consts::FRAC_PI_2,
            max_depth: 10.0,
        }
    }
}

impl DepthConfig {
    /// Angular offset of ray `i` from the heading; ray 0 is leftmost.
    pub fn ray_offset(&self, i: usize) -> f64 {
        self.fov / 2.0 - self.fov * i as f64 / (self.rays - 1) as f64
    }
}

/// Depth along each ray to the first blocked cell, measured perpendicular to
/// the image plane and clipped to `max_depth`.
///
/// Rays start at the midpoint of the rear edge of the agent's cell, so a wall
/// directly in front of the agent's cell reads 1.0.
pub fn depth_render(scene: &SceneGrid, pose: AgentPose, cfg: &DepthConfig) -> Vec<f32> {
    let heading = pose.heading.angle();
    let (hx, hy) = (heading.cos(), heading.sin());
    // Coordinates shifted by +0.5 so that cell i spans [i, i + 1).
    let ox = pose.x as f64 + 0.5 - 0.5 * hx;
    let oy = pose.y as f64 + 0.5 - 0.5 * hy;
    (0..cfg.rays)
        .map(|i| {
            let offset = cfg.ray_offset(i);
            let theta = heading + offset;
            let reach = cfg.max_depth / offset.cos();
            let t = march(scene, (pose.x as i64, pose.y as i64), (ox, oy), (theta.cos(), theta.sin()), reach);
            (t * offset.cos()).min(cfg.max_depth) as f32
        })
        .collect()
}

/// Grid traversal from `origin` (inside `cell`) along unit `dir`; returns the
/// distance to the first blocked cell boundary, or at least `reach`.
fn march(scene: &SceneGrid, cell: (i64, i64), origin: (f64, f64), dir: (f64, f64), reach: f64) -> f64 {
    let (mut cx, mut cy) = cell;
    let axis = |p: f64, d: f64, c: i64| -> (i64, f64, f64) {
        if d > 1e-12 {
            (1, ((c + 1) as f64 - p) / d, 1.0 / d)
        } else if d < -1e-12 {
            (-1, (c as f64 - p) / d, -1.0 / d)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (sx, mut tx, dtx) = axis(origin.0, dir.0, cx);
    let (sy, mut ty, dty) = axis(origin.1, dir.1, cy);
    loop {
        let t = if tx < ty {
            cx += sx;
            let t = tx;
            tx += dtx;
            t
        } else {
            cy += sy;
            let t = ty;
            ty += dty;
            t
        };
        if t >= reach {
            return reach;
        }
        if scene.is_blocked_at(cx, cy) {
            return t;
        }
    }
}
