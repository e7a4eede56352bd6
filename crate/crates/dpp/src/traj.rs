//! Trajectories: ordered waypoint sequences in pixel coordinates.
//!
//! On disk a trajectory is a text file with one `x,y` row per waypoint,
//! ordered start to goal.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Ordered sequence of 2D waypoints, `[x, y]` in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total polyline length.
    pub fn arc_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                let dx = w[1][0] - w[0][0];
                let dy = w[1][1] - w[0][1];
                (dx * dx + dy * dy).sqrt()
            })
            .sum()
    }

    /// Writes `x,y` rows, one waypoint per row.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for p in &self.points {
            writeln!(file, "{},{}", p[0], p[1])?;
        }
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = BufReader::new(std::fs::File::open(path)?);
        let mut points = Vec::new();
        for (i, line) in file.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::Format(format!("row {i}: missing coordinate")))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {i}: {e}")))
            };
            let x = parse(it.next())?;
            let y = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Format(format!("row {i}: expected two columns")));
            }
            points.push([x, y]);
        }
        if points.is_empty() {
            return Err(Error::Format("empty trajectory file".into()));
        }
        Ok(Self { points })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn csv_round_trip() {
        let t = Trajectory::new(vec![[0.0, 0.0], [1.5, 2.25], [3.0, 3.0]]);
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.save_csv(&path).unwrap();
        assert_eq!(Trajectory::load_csv(&path).unwrap(), t);
    }

    #[test]
    fn arc_length_of_l_shape() {
        let t = Trajectory::new(vec![[0.0, 0.0], [3.0, 0.0], [3.0, 4.0]]);
        assert!((t.arc_length() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_rows_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2\n3\n").unwrap();
        assert!(Trajectory::load_csv(&path).is_err());
    }
}
