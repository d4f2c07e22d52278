use std::collections::VecDeque;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn euclidean(self, other: Cell) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        dx.hypot(dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneGrid {
    pub id: u32,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub split: Split,
    /// Row-major, `blocked[y * width + x]`.
    blocked: Vec<bool>,
}

/// Unit spacing between neighbouring cells.
pub const SPACING: f64 = 1.0;

impl SceneGrid {
    /// Border walls around a fully open interior.
    pub fn open(id: u32, width: usize, height: usize, seed: u64, split: Split) -> Self {
        let blocked = (0..height)
            .flat_map(|y| (0..width).map(move |x| x == 0 || y == 0 || x + 1 == width || y + 1 == height))
            .collect();
        Self { id, width, height, seed, split, blocked }
    }

    pub fn from_occupancy(
        id: u32,
        width: usize,
        height: usize,
        seed: u64,
        split: Split,
        blocked: Vec<bool>,
    ) -> Result<Self> {
        if blocked.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "occupancy has {} cells, expected {}x{}",
                blocked.len(),
                width,
                height
            )));
        }
        Ok(Self { id, width, height, seed, split, blocked })
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Out-of-bounds cells count as blocked.
    pub fn is_blocked_at(&self, x: i64, y: i64) -> bool {
        !self.contains(x, y) || self.blocked[y as usize * self.width + x as usize]
    }

    pub fn is_free(&self, c: Cell) -> bool {
        !self.is_blocked_at(c.x as i64, c.y as i64)
    }

    pub fn set_blocked(&mut self, c: Cell, blocked: bool) {
        let w = self.width;
        self.blocked[c.y * w + c.x] = blocked;
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.blocked
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| Cell::new(x, y)))
            .filter(|&c| self.is_free(c))
            .collect()
    }

    fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn neighbors(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
        DIRS.iter().filter_map(move |&(dx, dy)| {
            let (x, y) = (c.x as i64 + dx, c.y as i64 + dy);
            (!self.is_blocked_at(x, y)).then(|| Cell::new(x as usize, y as usize))
        })
    }

    /// Checks the blocked border and single connected free component.
    pub fn validate(&self) -> Result<()> {
        for x in 0..self.width {
            for y in [0, self.height - 1] {
                if self.is_free(Cell::new(x, y)) {
                    return Err(Error::InvalidCell { x, y, reason: "border cell is free" });
                }
            }
        }
        for y in 0..self.height {
            for x in [0, self.width - 1] {
                if self.is_free(Cell::new(x, y)) {
                    return Err(Error::InvalidCell { x, y, reason: "border cell is free" });
                }
            }
        }
        let free = self.free_cells();
        let Some(&first) = free.first() else {
            return Err(Error::EmptyInput("scene has no free cells"));
        };
        let field = self.distance_field(first)?;
        match free.iter().find(|&&c| field.steps(c).is_none()) {
            Some(c) => Err(Error::Unreachable { x: c.x, y: c.y }),
            None => Ok(()),
        }
    }

    /// Breadth-first step counts from `origin` to every free cell.
    pub fn distance_field(&self, origin: Cell) -> Result<DistanceField> {
        if !self.is_free(origin) {
            return Err(Error::InvalidCell { x: origin.x, y: origin.y, reason: "cell is blocked" });
        }
        let mut steps = vec![u32::MAX; self.width * self.height];
        let mut queue = VecDeque::from([origin]);
        steps[self.index(origin)] = 0;
        while let Some(c) = queue.pop_front() {
            let d = steps[self.index(c)];
            for n in self.neighbors(c) {
                let i = self.index(n);
                if steps[i] == u32::MAX {
                    steps[i] = d + 1;
                    queue.push_back(n);
                }
            }
        }
        Ok(DistanceField { origin, width: self.width, steps })
    }

    /// Shortest 4-connected path length between free cells.
    pub fn geodesic(&self, a: Cell, b: Cell) -> Result<f64> {
        if !self.is_free(b) {
            return Err(Error::InvalidCell { x: b.x, y: b.y, reason: "cell is blocked" });
        }
        self.distance_field(a)?.distance(b)
    }
}

#[derive(Clone, Debug)]
pub struct DistanceField {
    origin: Cell,
    width: usize,
    steps: Vec<u32>,
}

impl DistanceField {
    pub fn origin(&self) -> Cell {
        self.origin
    }

    pub fn steps(&self, c: Cell) -> Option<u32> {
        self.steps
            .get(c.y * self.width + c.x)
            .copied()
            .filter(|&s| c.x < self.width && s != u32::MAX)
    }

    pub fn distance(&self, c: Cell) -> Result<f64> {
        self.steps(c)
            .map(|s| f64::from(s) * SPACING)
            .ok_or(Error::Unreachable { x: c.x, y: c.y })
    }
}

/// Axis-aligned room rectangle, inclusive-exclusive, in cell coordinates.
#[derive(Clone, Copy, Debug)]
struct Room {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Room {
    fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Smallest room side left after a split.
const MIN_ROOM_SIDE: usize = 2;
const MAX_ATTEMPTS: u64 = 64;

/// Procedural scene: border walls, then binary space partitioning of the
/// interior into `room_count` rooms, each dividing wall pierced by a one-cell
/// door. Deterministic in `scene_seed`.
pub fn generate_scene(scene_seed: u64, width: usize, height: usize, room_count: usize) -> Result<SceneGrid> {
    if width < 8 || height < 8 {
        return Err(Error::InvalidArgument(format!("scene must be at least 8x8, got {width}x{height}")));
    }
    if room_count == 0 {
        return Err(Error::InvalidArgument("room_count must be at least 1".into()));
    }
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seed::stream(scene_seed, "scene", attempt);
        match partition(&mut rng, scene_seed, width, height, room_count) {
            Ok(scene) => match scene.validate() {
                Ok(()) => return Ok(scene),
                Err(e) => last = e.to_string(),
            },
            Err(reason) => last = reason,
        }
    }
    Err(Error::Generation { seed: scene_seed, reason: format!("{last} after {MAX_ATTEMPTS} attempts") })
}

fn partition(
    rng: &mut seed::Rng,
    scene_seed: u64,
    width: usize,
    height: usize,
    room_count: usize,
) -> std::result::Result<SceneGrid, String> {
    let mut scene = SceneGrid::open(0, width, height, scene_seed, Split::Train);
    let mut rooms = vec![Room { x0: 1, y0: 1, x1: width - 1, y1: height - 1 }];
    while rooms.len() < room_count {
        // Split the largest room that still admits a wall.
        let mut order: Vec<usize> = (0..rooms.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(rooms[i].area()));
        let split = order.into_iter().find_map(|i| {
            let options = wall_options(&scene, rooms[i]);
            (!options.is_empty()).then_some((i, options))
        });
        let Some((i, options)) = split else {
            return Err(format!("cannot fit {room_count} rooms"));
        };
        let room = rooms.swap_remove(i);
        let (vertical, at) = options[rng.random_range(0..options.len())];
        if vertical {
            let door = rng.random_range(room.y0..room.y1);
            for y in room.y0..room.y1 {
                scene.set_blocked(Cell::new(at, y), y != door);
            }
            rooms.push(Room { x1: at, ..room });
            rooms.push(Room { x0: at + 1, ..room });
        } else {
            let door = rng.random_range(room.x0..room.x1);
            for x in room.x0..room.x1 {
                scene.set_blocked(Cell::new(x, at), x != door);
            }
            rooms.push(Room { y1: at, ..room });
            rooms.push(Room { y0: at + 1, ..room });
        }
    }
    Ok(scene)
}

/// Candidate walls `(vertical, coordinate)` inside `room`. A wall may not end
/// against an existing door, since that would seal the door.
fn wall_options(scene: &SceneGrid, room: Room) -> Vec<(bool, usize)> {
    let w = room.x1 - room.x0;
    let h = room.y1 - room.y0;
    let mut out = Vec::new();
    if w >= 2 * MIN_ROOM_SIDE + 1 && w >= h {
        for x in room.x0 + MIN_ROOM_SIDE..room.x1 - MIN_ROOM_SIDE {
            let ends_blocked = scene.is_blocked_at(x as i64, room.y0 as i64 - 1)
                && scene.is_blocked_at(x as i64, room.y1 as i64);
            if ends_blocked {
                out.push((true, x));
            }
        }
    }
    if h >= 2 * MIN_ROOM_SIDE + 1 && h >= w {
        for y in room.y0 + MIN_ROOM_SIDE..room.y1 - MIN_ROOM_SIDE {
            let ends_blocked = scene.is_blocked_at(room.x0 as i64 - 1, y as i64)
                && scene.is_blocked_at(room.x1 as i64, y as i64);
            if ends_blocked {
                out.push((false, y));
            }
        }
    }
    out
}
