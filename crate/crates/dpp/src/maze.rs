//! Random perfect-maze generation via Kruskal's minimum spanning tree.
//!
//! Cells are graph nodes, candidate passages are edges with random weights
//! drawn from a seeded generator; the MST carves exactly `cells - 1`
//! passages, so every pair of cells is connected by a unique route. The
//! raster places cells at odd (row, col) coordinates with obstacle borders,
//! then pads with obstacle rows/columns at the bottom/right up to the target
//! side length.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::grid::{Cell, OccupancyMap};

/// Parameters for one maze: cell-grid dimensions, seed, and the output raster
/// side length after padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MazeSpec {
    pub cells_w: usize,
    pub cells_h: usize,
    pub seed: u64,
    pub target_size: usize,
}

impl MazeSpec {
    pub fn new(cells_w: usize, cells_h: usize, seed: u64, target_size: usize) -> Self {
        Self { cells_w, cells_h, seed, target_size }
    }

    /// Raster dimensions before padding.
    pub fn raster_size(&self) -> (usize, usize) {
        (2 * self.cells_w + 1, 2 * self.cells_h + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells_w == 0 || self.cells_h == 0 {
            return Err(Error::InvalidSpec("maze must have at least one cell per axis".into()));
        }
        let needed = 2 * self.cells_w.max(self.cells_h) + 1;
        if self.target_size < needed {
            return Err(Error::InvalidSpec(format!(
                "target_size {} too small for {}x{} cells (needs >= {})",
                self.target_size, self.cells_w, self.cells_h, needed
            )));
        }
        Ok(())
    }
}

/// Disjoint-set forest with path compression and union by size.
struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Candidate passage between two orthogonally adjacent cells.
#[derive(Clone, Copy)]
struct Edge {
    a: usize,
    b: usize,
    /// Wall pixel between the two cell pixels.
    wall: (usize, usize),
}

/// Generates a perfect maze as an occupancy grid, deterministic in the seed.
///
/// The result is `target_size` x `target_size`; the free region is connected
/// and contains exactly `cells_w * cells_h` cell pixels plus `cells - 1`
/// carved passage pixels.
pub fn generate_maze(spec: &MazeSpec) -> Result<OccupancyMap> {
    spec.validate()?;
    let (w, h) = (spec.cells_w, spec.cells_h);
    let cell_id = |cx: usize, cy: usize| cy * w + cx;

    // Edges in a fixed scan order; the seeded shuffle is the random weight
    // assignment (sorting distinct random weights == random permutation).
    let mut edges = Vec::with_capacity(2 * w * h);
    for cy in 0..h {
        for cx in 0..w {
            if cx + 1 < w {
                edges.push(Edge {
                    a: cell_id(cx, cy),
                    b: cell_id(cx + 1, cy),
                    wall: (2 * cx + 2, 2 * cy + 1),
                });
            }
            if cy + 1 < h {
                edges.push(Edge {
                    a: cell_id(cx, cy),
                    b: cell_id(cx, cy + 1),
                    wall: (2 * cx + 1, 2 * cy + 2),
                });
            }
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    edges.shuffle(&mut rng);

    let (rw, rh) = spec.raster_size();
    let side = spec.target_size;
    let mut map = OccupancyMap::filled(side, side, Cell::Obstacle);
    for cy in 0..h {
        for cx in 0..w {
            map.set_cell((2 * cx + 1) as i32, (2 * cy + 1) as i32, Cell::Free);
        }
    }

    let mut uf = UnionFind::new(w * h);
    let mut carved = 0usize;
    for edge in &edges {
        if uf.union(edge.a, edge.b) {
            map.set_cell(edge.wall.0 as i32, edge.wall.1 as i32, Cell::Free);
            carved += 1;
            if carved == w * h - 1 {
                break;
            }
        }
    }
    debug_assert_eq!(carved, w * h - 1);
    debug_assert!(rw <= side && rh <= side);
    Ok(map)
}

/// Number of carved passage pixels (free pixels at even row or even column),
/// i.e. the spanning-tree edge count of the maze raster.
pub fn passage_count(map: &OccupancyMap) -> usize {
    let mut n = 0;
    for y in 0..map.height() as i32 {
        for x in 0..map.width() as i32 {
            if map.cell(x, y) == Cell::Free && (x % 2 == 0 || y % 2 == 0) {
                n += 1;
            }
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_cell_maze() {
        let map = generate_maze(&MazeSpec::new(1, 1, 0, 3)).unwrap();
        assert_eq!(map.width(), 3);
        assert_eq!(map.height(), 3);
        assert_eq!(map.free_count(), 1);
        assert_eq!(map.cell(1, 1), Cell::Free);
        assert_eq!(passage_count(&map), 0);
    }

    #[test]
    fn two_by_two_spanning_tree() {
        let map = generate_maze(&MazeSpec::new(2, 2, 7, 5)).unwrap();
        // 4 cell pixels and exactly 3 carved walls, all connected.
        let cell_pixels = [(1, 1), (3, 1), (1, 3), (3, 3)];
        for (x, y) in cell_pixels {
            assert_eq!(map.cell(x, y), Cell::Free);
        }
        assert_eq!(passage_count(&map), 3);
        assert_eq!(map.free_count(), 4 + 3);
        assert!(map.free_region_connected());
    }

    #[test]
    fn paper_scale_raster_connected() {
        let map = generate_maze(&MazeSpec::new(49, 49, 42, 100)).unwrap();
        assert_eq!(map.width(), 100);
        assert_eq!(map.height(), 100);
        assert!(map.free_region_connected());
        assert_eq!(passage_count(&map), 49 * 49 - 1);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = MazeSpec::new(12, 9, 1234, 25);
        assert_eq!(generate_maze(&spec).unwrap(), generate_maze(&spec).unwrap());
        let other = MazeSpec::new(12, 9, 1235, 25);
        assert_ne!(generate_maze(&spec).unwrap(), generate_maze(&other).unwrap());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_maze(&MazeSpec::new(0, 3, 0, 9)).is_err());
        assert!(generate_maze(&MazeSpec::new(4, 4, 0, 8)).is_err());
    }

    #[test]
    fn padding_only_adds_obstacles() {
        let tight = generate_maze(&MazeSpec::new(5, 5, 3, 11)).unwrap();
        let padded = generate_maze(&MazeSpec::new(5, 5, 3, 16)).unwrap();
        assert_eq!(tight.free_count(), padded.free_count());
        for y in 0..11 {
            for x in 0..11 {
                assert_eq!(tight.cell(x, y), padded.cell(x, y));
            }
        }
    }

    proptest! {
        #[test]
        fn spanning_tree_properties(
            cells_w in 1usize..12,
            cells_h in 1usize..12,
            seed in any::<u64>(),
            pad in 0usize..4,
        ) {
            let target = 2 * cells_w.max(cells_h) + 1 + pad;
            let spec = MazeSpec::new(cells_w, cells_h, seed, target);
            let map = generate_maze(&spec).unwrap();
            prop_assert_eq!(passage_count(&map), cells_w * cells_h - 1);
            prop_assert_eq!(map.free_count(), 2 * cells_w * cells_h - 1);
            prop_assert!(map.free_region_connected());
        }
    }
}
