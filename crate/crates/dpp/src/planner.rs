//! Classical grid planning: A* expert/baseline, a brute-force Dijkstra
//! oracle, and geodesic distance fields.
//!
//! Moves are 8-connected with unit cost for straight steps and sqrt(2) for
//! diagonals; diagonal moves squeezing between two touching obstacle corners
//! are forbidden. Costs are tracked exactly as (straight, diagonal) step-count
//! pairs so that two optimal planners agree bit-for-bit: since sqrt(2) is
//! irrational, the optimal pair for a cost value is unique.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::grid::{Cell, GridPose, OccupancyMap};
use crate::traj::Trajectory;

/// Exact 8-connected travel cost: `straight + diag * sqrt(2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PathCost {
    pub straight: u32,
    pub diag: u32,
}

impl PathCost {
    pub const ZERO: PathCost = PathCost { straight: 0, diag: 0 };

    pub fn value(&self) -> f64 {
        self.straight as f64 + self.diag as f64 * std::f64::consts::SQRT_2
    }

    fn plus_step(&self, diagonal: bool) -> PathCost {
        if diagonal {
            PathCost { straight: self.straight, diag: self.diag + 1 }
        } else {
            PathCost { straight: self.straight + 1, diag: self.diag }
        }
    }
}

/// Octile distance between two poses, the admissible heuristic for this move
/// set, expressed as an exact cost pair.
pub fn octile(a: GridPose, b: GridPose) -> PathCost {
    let dx = (a.x - b.x).unsigned_abs();
    let dy = (a.y - b.y).unsigned_abs();
    PathCost { straight: dx.abs_diff(dy), diag: dx.min(dy) }
}

const DIRS: [(i32, i32); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// True when the move from (x, y) by (dx, dy) is traversable: target free,
/// and for diagonals both orthogonal neighbors free (no corner cutting).
fn can_move(map: &OccupancyMap, x: i32, y: i32, dx: i32, dy: i32) -> bool {
    if !map.is_free(x + dx, y + dy) {
        return false;
    }
    if dx != 0 && dy != 0 {
        map.is_free(x + dx, y) && map.is_free(x, y + dy)
    } else {
        true
    }
}

/// Search effort counters for the timing/scaling benchmark.
#[derive(Debug, Clone, Copy, Default)]
pub struct SearchStats {
    /// Nodes popped from the open list and expanded.
    pub expanded: usize,
}

struct OpenEntry {
    f: f64,
    g: f64,
    seq: u64,
    node: usize,
}

// Min-heap on f; ties broken by larger g (goal-ward bias), then insertion
// order, for deterministic output.
impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key(other) == Ordering::Equal
    }
}
impl Eq for OpenEntry {}
impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the "greatest" entry is the one
        // we want to pop first.
        self.cmp_key(other).reverse()
    }
}
impl OpenEntry {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.f
            .total_cmp(&other.f)
            .then_with(|| other.g.total_cmp(&self.g))
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

fn check_endpoints(map: &OccupancyMap, start: GridPose, goal: GridPose) -> Result<()> {
    for (name, p) in [("start", start), ("goal", goal)] {
        if !map.in_bounds(p.x, p.y) {
            return Err(Error::InvalidQuery(format!("{name} ({}, {}) out of bounds", p.x, p.y)));
        }
        if map.cell(p.x, p.y) == Cell::Obstacle {
            return Err(Error::InvalidQuery(format!("{name} ({}, {}) on obstacle", p.x, p.y)));
        }
    }
    Ok(())
}

/// A* shortest path from `start` to `goal`. Returns the waypoint sequence
/// (first point = start, last = goal) and its exact cost.
pub fn astar(map: &OccupancyMap, start: GridPose, goal: GridPose) -> Result<(Trajectory, PathCost)> {
    astar_with_stats(map, start, goal).map(|(t, c, _)| (t, c))
}

/// A* with node-expansion statistics.
pub fn astar_with_stats(
    map: &OccupancyMap,
    start: GridPose,
    goal: GridPose,
) -> Result<(Trajectory, PathCost, SearchStats)> {
    check_endpoints(map, start, goal)?;
    let (w, h) = (map.width(), map.height());
    let idx = |p: GridPose| p.y as usize * w + p.x as usize;

    let mut best: Vec<Option<PathCost>> = vec![None; w * h];
    let mut parent: Vec<u32> = vec![u32::MAX; w * h];
    let mut closed = vec![false; w * h];
    let mut open = BinaryHeap::new();
    let mut stats = SearchStats::default();
    let mut seq = 0u64;

    let start_idx = idx(start);
    let goal_idx = idx(goal);
    best[start_idx] = Some(PathCost::ZERO);
    open.push(OpenEntry { f: octile(start, goal).value(), g: 0.0, seq, node: start_idx });

    while let Some(entry) = open.pop() {
        let node = entry.node;
        if closed[node] {
            continue;
        }
        closed[node] = true;
        stats.expanded += 1;
        if node == goal_idx {
            let mut rev = vec![node];
            let mut cur = node;
            while cur != start_idx {
                cur = parent[cur] as usize;
                rev.push(cur);
            }
            let points = rev
                .iter()
                .rev()
                .map(|&i| [(i % w) as f64, (i / w) as f64])
                .collect();
            return Ok((Trajectory::new(points), best[node].unwrap(), stats));
        }
        let g = best[node].unwrap();
        let (x, y) = ((node % w) as i32, (node / w) as i32);
        for (dx, dy) in DIRS {
            if !can_move(map, x, y, dx, dy) {
                continue;
            }
            let njdx = (y + dy) as usize * w + (x + dx) as usize;
            if closed[njdx] {
                continue;
            }
            let ng = g.plus_step(dx != 0 && dy != 0);
            if best[njdx].is_none_or(|old| ng.value() < old.value()) {
                best[njdx] = Some(ng);
                parent[njdx] = node as u32;
                let hpose = GridPose::new(x + dx, y + dy);
                seq += 1;
                open.push(OpenEntry {
                    f: ng.value() + octile(hpose, goal).value(),
                    g: ng.value(),
                    seq,
                    node: njdx,
                });
            }
        }
    }
    Err(Error::NoPath)
}

/// Brute-force Dijkstra over the full grid, the optimality oracle for A*.
/// No heuristic, no tie-breaking policy; relaxes until the queue drains.
pub fn dijkstra_cost(map: &OccupancyMap, start: GridPose, goal: GridPose) -> Result<PathCost> {
    check_endpoints(map, start, goal)?;
    let field = geodesic_field(map, start)?;
    field.cost(goal.x, goal.y).ok_or(Error::NoPath)
}

/// Per-cell minimal travel cost from a source; obstacle and unreachable cells
/// are infinite (`None`).
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: usize,
    height: usize,
    cost: Vec<Option<PathCost>>,
}

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Exact cost pair at (x, y), `None` when unreachable or off-map.
    pub fn cost(&self, x: i32, y: i32) -> Option<PathCost> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return None;
        }
        self.cost[y as usize * self.width + x as usize]
    }

    /// Distance as f64, infinity when unreachable.
    pub fn distance(&self, x: i32, y: i32) -> f64 {
        self.cost(x, y).map_or(f64::INFINITY, |c| c.value())
    }
}

struct FloodEntry {
    d: f64,
    node: usize,
}
impl PartialEq for FloodEntry {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.node == other.node
    }
}
impl Eq for FloodEntry {}
impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for FloodEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d.total_cmp(&other.d).then_with(|| self.node.cmp(&other.node)).reverse()
    }
}

/// Dijkstra flood fill of minimal 8-connected travel cost from `source`.
pub fn geodesic_field(map: &OccupancyMap, source: GridPose) -> Result<DistanceField> {
    check_endpoints(map, source, source)?;
    let (w, h) = (map.width(), map.height());
    let mut cost: Vec<Option<PathCost>> = vec![None; w * h];
    let mut done = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    let src = source.y as usize * w + source.x as usize;
    cost[src] = Some(PathCost::ZERO);
    heap.push(FloodEntry { d: 0.0, node: src });

    while let Some(FloodEntry { node, .. }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        let c = cost[node].unwrap();
        let (x, y) = ((node % w) as i32, (node / w) as i32);
        for (dx, dy) in DIRS {
            if !can_move(map, x, y, dx, dy) {
                continue;
            }
            let nidx = (y + dy) as usize * w + (x + dx) as usize;
            if done[nidx] {
                continue;
            }
            let nc = c.plus_step(dx != 0 && dy != 0);
            if cost[nidx].is_none_or(|old| nc.value() < old.value()) {
                cost[nidx] = Some(nc);
                heap.push(FloodEntry { d: nc.value(), node: nidx });
            }
        }
    }
    Ok(DistanceField { width: w, height: h, cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{generate_maze, MazeSpec};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn free_map(w: usize, h: usize) -> OccupancyMap {
        OccupancyMap::filled(w, h, Cell::Free)
    }

    #[test]
    fn start_equals_goal() {
        let map = free_map(3, 3);
        let (t, c) = astar(&map, GridPose::new(1, 1), GridPose::new(1, 1)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(c, PathCost::ZERO);
    }

    #[test]
    fn diagonal_across_open_square() {
        let map = free_map(3, 3);
        let (t, c) = astar(&map, GridPose::new(0, 0), GridPose::new(2, 2)).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(c, PathCost { straight: 0, diag: 2 });
        assert!((c.value() - 2.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
        let oracle = dijkstra_cost(&map, GridPose::new(0, 0), GridPose::new(2, 2)).unwrap();
        assert_eq!(c, oracle);
    }

    #[test]
    fn endpoints_on_obstacle_rejected() {
        let mut map = free_map(3, 3);
        map.set_cell(0, 0, Cell::Obstacle);
        let err = astar(&map, GridPose::new(0, 0), GridPose::new(2, 2)).unwrap_err();
        assert!(matches!(err, Error::InvalidQuery(_)));
    }

    #[test]
    fn no_path_reported() {
        let mut map = free_map(3, 1);
        map.set_cell(1, 0, Cell::Obstacle);
        let err = astar(&map, GridPose::new(0, 0), GridPose::new(2, 0)).unwrap_err();
        assert!(matches!(err, Error::NoPath));
    }

    #[test]
    fn no_corner_cutting() {
        // Obstacles at (1,0) and (0,1) must block the (0,0)->(1,1) diagonal.
        let mut map = free_map(2, 2);
        map.set_cell(1, 0, Cell::Obstacle);
        map.set_cell(0, 1, Cell::Obstacle);
        let err = astar(&map, GridPose::new(0, 0), GridPose::new(1, 1)).unwrap_err();
        assert!(matches!(err, Error::NoPath));
    }

    #[test]
    fn corridor_distances() {
        let map = free_map(5, 1);
        let field = geodesic_field(&map, GridPose::new(0, 0)).unwrap();
        for x in 0..5 {
            assert!((field.distance(x, 0) - x as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn field_matches_astar_on_maze() {
        let map = generate_maze(&MazeSpec::new(10, 10, 5, 21)).unwrap();
        let start = GridPose::new(1, 1);
        let goal = GridPose::new(19, 19);
        let (_, cost) = astar(&map, start, goal).unwrap();
        let field = geodesic_field(&map, start).unwrap();
        assert_eq!(field.cost(goal.x, goal.y).unwrap(), cost);
    }

    #[test]
    fn random_triples_match_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for trial in 0..40 {
            let map = generate_maze(&MazeSpec::new(8, 8, trial, 17)).unwrap();
            let free = map.free_cells();
            let start = free[rng.random_range(0..free.len())];
            let goal = free[rng.random_range(0..free.len())];
            let astar_cost = astar(&map, start, goal).unwrap().1;
            let oracle = dijkstra_cost(&map, start, goal).unwrap();
            assert_eq!(astar_cost, oracle);
        }
    }

    #[test]
    fn path_waypoints_all_free_and_adjacent() {
        let map = generate_maze(&MazeSpec::new(12, 12, 77, 25)).unwrap();
        let free = map.free_cells();
        let (t, _) = astar(&map, free[0], free[free.len() - 1]).unwrap();
        for w in t.points.windows(2) {
            let dx = (w[1][0] - w[0][0]).abs();
            let dy = (w[1][1] - w[0][1]).abs();
            assert!(dx <= 1.0 && dy <= 1.0 && (dx + dy) > 0.0);
        }
        for p in &t.points {
            assert!(map.is_free(p[0] as i32, p[1] as i32));
        }
    }

    #[test]
    fn heuristic_admissible_on_small_map() {
        let map = generate_maze(&MazeSpec::new(5, 5, 11, 11)).unwrap();
        let goal = GridPose::new(9, 9);
        let field = geodesic_field(&map, goal).unwrap();
        for p in map.free_cells() {
            let h = octile(p, goal).value();
            let true_cost = field.distance(p.x, p.y);
            assert!(h <= true_cost + 1e-9, "heuristic {h} exceeds true cost {true_cost}");
        }
    }
}
