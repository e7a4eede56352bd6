//! Training-corpus construction: maze maps plus per-map A* demonstrations,
//! trajectory resampling to a fixed horizon, and coordinate normalization.
//!
//! Directory layout: `out_dir/manifest.json`, `out_dir/maps/{index:05}.png`,
//! `out_dir/trajs/{map_index:05}/{traj_index:03}.csv`.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridPose, OccupancyMap};
use crate::maze::{generate_maze, MazeSpec};
use crate::planner::astar;
use crate::traj::Trajectory;

pub const FORMAT_VERSION: u32 = 1;

/// Minimum A* waypoint count for a demonstration to be kept.
const MIN_DEMO_LEN: usize = 10;
/// Attempts to find a usable start/goal pair before giving up on a map.
const MAX_SAMPLE_ATTEMPTS: usize = 1000;

/// Top-level description of a generated corpus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DatasetManifest {
    pub n_maps: usize,
    pub trajs_per_map: usize,
    pub map_size: usize,
    pub seed: u64,
    pub horizon: usize,
    pub format_version: u32,
}

impl DatasetManifest {
    pub fn map_path(&self, root: &Path, map_idx: usize) -> PathBuf {
        root.join("maps").join(format!("{map_idx:05}.png"))
    }

    pub fn traj_path(&self, root: &Path, map_idx: usize, traj_idx: usize) -> PathBuf {
        root.join("trajs").join(format!("{map_idx:05}")).join(format!("{traj_idx:03}.csv"))
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let file = std::fs::File::create(root.join("manifest.json"))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let file = std::fs::File::open(root.join("manifest.json"))?;
        let manifest: Self = serde_json::from_reader(std::io::BufReader::new(file))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset format version {}",
                manifest.format_version
            )));
        }
        if manifest.horizon < 2 {
            return Err(Error::Format("manifest horizon must be >= 2".into()));
        }
        Ok(manifest)
    }
}

/// Maps a pixel coordinate into [-1, 1] per axis: 2x/(w-1) - 1.
pub fn normalize(point: [f64; 2], map: &OccupancyMap) -> [f64; 2] {
    let wx = (map.width() - 1).max(1) as f64;
    let wy = (map.height() - 1).max(1) as f64;
    [2.0 * point[0] / wx - 1.0, 2.0 * point[1] / wy - 1.0]
}

/// Inverse of [`normalize`]. Returns the pixel point and whether it had to be
/// clamped back into map bounds.
pub fn denormalize(point: [f64; 2], map: &OccupancyMap) -> ([f64; 2], bool) {
    let wx = (map.width() - 1).max(1) as f64;
    let wy = (map.height() - 1).max(1) as f64;
    let x = (point[0] + 1.0) * wx / 2.0;
    let y = (point[1] + 1.0) * wy / 2.0;
    let cx = x.clamp(0.0, wx);
    let cy = y.clamp(0.0, wy);
    ([cx, cy], cx != x || cy != y)
}

/// Arc-length resampling to exactly `n` points with endpoints preserved.
///
/// Inputs that already contain exactly `n` points are returned unchanged,
/// which makes repeated resampling idempotent.
pub fn resample_trajectory(traj: &Trajectory, n: usize) -> Result<Trajectory> {
    if traj.len() < 2 {
        return Err(Error::InvalidInput("resampling needs at least two points".into()));
    }
    if n < 2 {
        return Err(Error::InvalidInput("resampling target must be at least two points".into()));
    }
    if traj.len() == n {
        return Ok(traj.clone());
    }
    // Cumulative arc length per vertex.
    let mut cum = Vec::with_capacity(traj.len());
    cum.push(0.0f64);
    for w in traj.points.windows(2) {
        let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();

    let mut out = Vec::with_capacity(n);
    out.push(traj.points[0]);
    let mut seg = 0usize;
    for i in 1..n - 1 {
        let target = total * i as f64 / (n - 1) as f64;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let t = if seg_len > 0.0 { (target - cum[seg]) / seg_len } else { 0.0 };
        let a = traj.points[seg];
        let b = traj.points[seg + 1];
        out.push([a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]);
    }
    out.push(*traj.points.last().unwrap());
    Ok(Trajectory::new(out))
}

/// One normalized training example: a map reference plus a fixed-horizon
/// action whose first/last rows are the normalized start/goal.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub map_idx: usize,
    pub start: GridPose,
    pub goal: GridPose,
    /// (horizon, 2) in [-1, 1].
    pub action: Array2<f32>,
}

/// Fully loaded corpus ready for training.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub manifest: DatasetManifest,
    pub maps: Vec<OccupancyMap>,
    pub samples: Vec<TrainingSample>,
}

fn derive_map_rng(seed: u64, map_idx: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(1 + map_idx as u64);
    rng
}

fn generate_one_map(
    seed: u64,
    map_idx: usize,
    map_size: usize,
    trajs_per_map: usize,
) -> Result<(OccupancyMap, Vec<Trajectory>)> {
    let mut rng = derive_map_rng(seed, map_idx);
    let cells = (map_size - 1) / 2;
    let maze_seed: u64 = rng.random();
    let map = generate_maze(&MazeSpec::new(cells, cells, maze_seed, map_size))?;
    let free = map.free_cells();
    let mut trajs = Vec::with_capacity(trajs_per_map);
    for t in 0..trajs_per_map {
        let mut found = None;
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            let start = free[rng.random_range(0..free.len())];
            let goal = free[rng.random_range(0..free.len())];
            if start == goal {
                continue;
            }
            let (traj, _) = astar(&map, start, goal)?;
            if traj.len() >= MIN_DEMO_LEN {
                found = Some(traj);
                break;
            }
        }
        match found {
            Some(traj) => trajs.push(traj),
            None => {
                return Err(Error::Generation(format!(
                    "map {map_idx}: no valid start/goal pair after {MAX_SAMPLE_ATTEMPTS} attempts \
                     (trajectory {t})"
                )))
            }
        }
    }
    Ok((map, trajs))
}

/// Generates `n_maps` mazes with `trajs_per_map` A* demonstrations each and
/// writes the corpus (maps, trajectories, manifest) under `out_dir`.
///
/// Deterministic in `(seed, parameters)`: per-map RNG streams make the result
/// independent of thread scheduling.
pub fn build_dataset(
    n_maps: usize,
    trajs_per_map: usize,
    map_size: usize,
    horizon: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n_maps == 0 || trajs_per_map == 0 {
        return Err(Error::InvalidInput("n_maps and trajs_per_map must be positive".into()));
    }
    if map_size < 3 {
        return Err(Error::InvalidInput("map_size must be at least 3".into()));
    }
    if horizon < 2 {
        return Err(Error::InvalidInput("horizon must be at least 2".into()));
    }
    std::fs::create_dir_all(out_dir.join("maps"))?;
    std::fs::create_dir_all(out_dir.join("trajs"))?;

    let manifest = DatasetManifest {
        n_maps,
        trajs_per_map,
        map_size,
        seed,
        horizon,
        format_version: FORMAT_VERSION,
    };

    (0..n_maps)
        .into_par_iter()
        .try_for_each(|map_idx| -> Result<()> {
            let (map, trajs) = generate_one_map(seed, map_idx, map_size, trajs_per_map)?;
            map.save_png(&manifest.map_path(out_dir, map_idx))?;
            let traj_dir = out_dir.join("trajs").join(format!("{map_idx:05}"));
            std::fs::create_dir_all(&traj_dir)?;
            for (t, traj) in trajs.iter().enumerate() {
                traj.save_csv(&manifest.traj_path(out_dir, map_idx, t))?;
            }
            Ok(())
        })?;

    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Result of a full corpus re-validation pass.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub maps_checked: usize,
    pub trajs_checked: usize,
    pub infeasible: usize,
    pub endpoint_mismatches: usize,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.infeasible == 0 && self.endpoint_mismatches == 0
    }
}

/// Re-checks every stored trajectory against its map: all waypoints are
/// integer free cells, consecutive waypoints are 8-neighbors without corner
/// cutting, and the endpoints are free cells.
pub fn validate_dataset(root: &Path) -> Result<ValidationReport> {
    let manifest = DatasetManifest::load(root)?;
    let mut report = ValidationReport {
        maps_checked: 0,
        trajs_checked: 0,
        infeasible: 0,
        endpoint_mismatches: 0,
    };
    for map_idx in 0..manifest.n_maps {
        let map = OccupancyMap::load_png(&manifest.map_path(root, map_idx))?;
        if map.width() != manifest.map_size || map.height() != manifest.map_size {
            return Err(Error::Format(format!("map {map_idx} has unexpected size")));
        }
        report.maps_checked += 1;
        for t in 0..manifest.trajs_per_map {
            let traj = Trajectory::load_csv(&manifest.traj_path(root, map_idx, t))?;
            report.trajs_checked += 1;
            if !trajectory_feasible(&map, &traj) {
                report.infeasible += 1;
            }
            let first = traj.points[0];
            let last = traj.points[traj.len() - 1];
            let endpoints_ok = map.is_free(first[0] as i32, first[1] as i32)
                && map.is_free(last[0] as i32, last[1] as i32)
                && traj.len() >= MIN_DEMO_LEN;
            if !endpoints_ok {
                report.endpoint_mismatches += 1;
            }
        }
    }
    Ok(report)
}

/// Feasibility for stored grid demonstrations: integer waypoints on free
/// cells, consecutive points 8-adjacent, diagonals not cutting corners.
fn trajectory_feasible(map: &OccupancyMap, traj: &Trajectory) -> bool {
    for p in &traj.points {
        if p[0].fract() != 0.0 || p[1].fract() != 0.0 || !map.is_free(p[0] as i32, p[1] as i32) {
            return false;
        }
    }
    for w in traj.points.windows(2) {
        let (x, y) = (w[0][0] as i32, w[0][1] as i32);
        let (dx, dy) = ((w[1][0] - w[0][0]) as i32, (w[1][1] - w[0][1]) as i32);
        if dx.abs() > 1 || dy.abs() > 1 || (dx == 0 && dy == 0) {
            return false;
        }
        if dx != 0 && dy != 0 && !(map.is_free(x + dx, y) && map.is_free(x, y + dy)) {
            return false;
        }
    }
    true
}

/// Loads the whole corpus into memory, resampling every demonstration to the
/// manifest horizon and normalizing coordinates to [-1, 1].
pub fn load_training_set(root: &Path) -> Result<TrainingSet> {
    let manifest = DatasetManifest::load(root)?;
    let maps: Vec<OccupancyMap> = (0..manifest.n_maps)
        .map(|i| OccupancyMap::load_png(&manifest.map_path(root, i)))
        .collect::<Result<_>>()?;
    let mut samples = Vec::with_capacity(manifest.n_maps * manifest.trajs_per_map);
    for (map_idx, map) in maps.iter().enumerate() {
        for t in 0..manifest.trajs_per_map {
            let traj = Trajectory::load_csv(&manifest.traj_path(root, map_idx, t))?;
            samples.push(make_training_sample(map_idx, map, &traj, manifest.horizon)?);
        }
    }
    Ok(TrainingSet { manifest, maps, samples })
}

/// Builds one normalized fixed-horizon sample from a raw demonstration.
pub fn make_training_sample(
    map_idx: usize,
    map: &OccupancyMap,
    traj: &Trajectory,
    horizon: usize,
) -> Result<TrainingSample> {
    let resampled = resample_trajectory(traj, horizon)?;
    let mut action = Array2::<f32>::zeros((horizon, 2));
    for (i, p) in resampled.points.iter().enumerate() {
        let n = normalize(*p, map);
        action[[i, 0]] = n[0] as f32;
        action[[i, 1]] = n[1] as f32;
    }
    let first = traj.points[0];
    let last = traj.points[traj.len() - 1];
    Ok(TrainingSample {
        map_idx,
        start: GridPose::new(first[0] as i32, first[1] as i32),
        goal: GridPose::new(last[0] as i32, last[1] as i32),
        action,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use tempfile::tempdir;

    #[test]
    fn normalize_corners() {
        let map = OccupancyMap::filled(100, 100, crate::grid::Cell::Free);
        assert_eq!(normalize([0.0, 0.0], &map), [-1.0, -1.0]);
        assert_eq!(normalize([99.0, 99.0], &map), [1.0, 1.0]);
    }

    #[test]
    fn normalize_round_trip() {
        let map = OccupancyMap::filled(64, 48, crate::grid::Cell::Free);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let p = [rng.random_range(0.0..63.0), rng.random_range(0.0..47.0)];
            let n = normalize(p, &map);
            let (back, clamped) = denormalize(n, &map);
            assert!(!clamped);
            assert_abs_diff_eq!(back[0], p[0], epsilon = 1e-12);
            assert_abs_diff_eq!(back[1], p[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn denormalize_clamps_out_of_range() {
        let map = OccupancyMap::filled(10, 10, crate::grid::Cell::Free);
        let (p, clamped) = denormalize([1.5, -2.0], &map);
        assert!(clamped);
        assert_eq!(p, [9.0, 0.0]);
    }

    #[test]
    fn resample_straight_segment_endpoints_only() {
        let t = Trajectory::new((0..=10).map(|i| [i as f64, 0.0]).collect());
        let r = resample_trajectory(&t, 2).unwrap();
        assert_eq!(r.points, vec![[0.0, 0.0], [10.0, 0.0]]);
    }

    #[test]
    fn resample_straight_segment_uniform() {
        let t = Trajectory::new((0..=10).map(|i| [i as f64, 0.0]).collect());
        let r = resample_trajectory(&t, 6).unwrap();
        let xs: Vec<f64> = r.points.iter().map(|p| p[0]).collect();
        for (got, want) in xs.iter().zip([0.0, 2.0, 4.0, 6.0, 8.0, 10.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        // Straight inputs preserve arc length exactly.
        assert_abs_diff_eq!(r.arc_length(), t.arc_length(), epsilon = 1e-9);
    }

    #[test]
    fn resample_idempotent() {
        let t = Trajectory::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [2.0, 1.0], [2.0, 3.0]]);
        let once = resample_trajectory(&t, 37).unwrap();
        let twice = resample_trajectory(&once, 37).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn resample_rejects_degenerate_input() {
        let t = Trajectory::new(vec![[0.0, 0.0]]);
        assert!(resample_trajectory(&t, 5).is_err());
        let t2 = Trajectory::new(vec![[0.0, 0.0], [1.0, 0.0]]);
        assert!(resample_trajectory(&t2, 1).is_err());
    }

    #[test]
    fn small_corpus_bookkeeping() {
        let dir = tempdir().unwrap();
        let manifest = build_dataset(2, 3, 33, 60, 1, dir.path()).unwrap();
        assert_eq!(manifest.n_maps, 2);
        for i in 0..2 {
            assert!(manifest.map_path(dir.path(), i).exists());
            for t in 0..3 {
                assert!(manifest.traj_path(dir.path(), i, t).exists());
            }
        }
        let report = validate_dataset(dir.path()).unwrap();
        assert_eq!(report.maps_checked, 2);
        assert_eq!(report.trajs_checked, 6);
        assert!(report.all_ok());
    }

    #[test]
    fn corpus_deterministic() {
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        build_dataset(2, 2, 17, 24, 9, d1.path()).unwrap();
        build_dataset(2, 2, 17, 24, 9, d2.path()).unwrap();
        for i in 0..2 {
            let a = std::fs::read(d1.path().join("maps").join(format!("{i:05}.png"))).unwrap();
            let b = std::fs::read(d2.path().join("maps").join(format!("{i:05}.png"))).unwrap();
            assert_eq!(a, b);
            for t in 0..2 {
                let rel = format!("trajs/{i:05}/{t:03}.csv");
                let a = std::fs::read(d1.path().join(&rel)).unwrap();
                let b = std::fs::read(d2.path().join(&rel)).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn training_set_invariants() {
        let dir = tempdir().unwrap();
        build_dataset(2, 3, 33, 40, 2, dir.path()).unwrap();
        let set = load_training_set(dir.path()).unwrap();
        assert_eq!(set.samples.len(), 6);
        for s in &set.samples {
            let map = &set.maps[s.map_idx];
            assert_eq!(s.action.nrows(), 40);
            let sn = normalize([s.start.x as f64, s.start.y as f64], map);
            let gn = normalize([s.goal.x as f64, s.goal.y as f64], map);
            assert_abs_diff_eq!(s.action[[0, 0]] as f64, sn[0], epsilon = 1e-6);
            assert_abs_diff_eq!(s.action[[0, 1]] as f64, sn[1], epsilon = 1e-6);
            assert_abs_diff_eq!(s.action[[39, 0]] as f64, gn[0], epsilon = 1e-6);
            assert_abs_diff_eq!(s.action[[39, 1]] as f64, gn[1], epsilon = 1e-6);
            for v in s.action.iter() {
                assert!(*v >= -1.0 && *v <= 1.0);
            }
        }
    }
}
