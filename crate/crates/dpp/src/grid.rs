//! Occupancy grids: the 2D free/obstacle maps every other module works on.
//!
//! Maps are stored row-major and round-trip to 8-bit single-channel PNG with
//! the convention pixel 255 = free, pixel 0 = obstacle. Any other pixel value
//! is rejected by the strict loader; [`OccupancyMap::ingest_image`] is the
//! lenient entry point for out-of-distribution imagery.

use std::path::Path;

use image::{GrayImage, ImageReader, Luma};

use crate::error::{Error, Result};

/// State of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Free,
    Obstacle,
}

/// Integer pixel position on a map: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridPose {
    pub x: i32,
    pub y: i32,
}

impl GridPose {
    pub fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }
}

/// 2D grid of free/obstacle cells plus its raster-image form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyMap {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

impl OccupancyMap {
    /// Builds a map from row-major cells. `cells.len()` must be `width * height`.
    pub fn from_cells(width: usize, height: usize, cells: Vec<Cell>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidSpec("map dimensions must be positive".into()));
        }
        if cells.len() != width * height {
            return Err(Error::InvalidSpec(format!(
                "cell count {} does not match {}x{}",
                cells.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, cells })
    }

    /// All-free map, mostly useful in tests.
    pub fn filled(width: usize, height: usize, cell: Cell) -> Self {
        Self { width, height, cells: vec![cell; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Cell at (x, y). Panics if out of bounds; use `in_bounds` first.
    pub fn cell(&self, x: i32, y: i32) -> Cell {
        debug_assert!(self.in_bounds(x, y));
        self.cells[y as usize * self.width + x as usize]
    }

    pub fn set_cell(&mut self, x: i32, y: i32, cell: Cell) {
        debug_assert!(self.in_bounds(x, y));
        self.cells[y as usize * self.width + x as usize] = cell;
    }

    /// True when (x, y) is inside the map and free.
    pub fn is_free(&self, x: i32, y: i32) -> bool {
        self.in_bounds(x, y) && self.cell(x, y) == Cell::Free
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn free_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == Cell::Free).count()
    }

    /// All free positions in row-major order.
    pub fn free_cells(&self) -> Vec<GridPose> {
        let mut out = Vec::new();
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                if self.cell(x, y) == Cell::Free {
                    out.push(GridPose::new(x, y));
                }
            }
        }
        out
    }

    /// True when every free cell is reachable from every other free cell
    /// under 8-connectivity. Vacuously true for maps without free cells.
    pub fn free_region_connected(&self) -> bool {
        let Some(start) = self.cells.iter().position(|c| *c == Cell::Free) else {
            return true;
        };
        let mut seen = vec![false; self.cells.len()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut visited = 0usize;
        while let Some(idx) = stack.pop() {
            visited += 1;
            let x = (idx % self.width) as i32;
            let y = (idx / self.width) as i32;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if self.is_free(nx, ny) {
                        let nidx = ny as usize * self.width + nx as usize;
                        if !seen[nidx] {
                            seen[nidx] = true;
                            stack.push(nidx);
                        }
                    }
                }
            }
        }
        visited == self.free_count()
    }

    /// Renders the map as an 8-bit grayscale image (255 free, 0 obstacle).
    pub fn to_image(&self) -> GrayImage {
        let mut img = GrayImage::new(self.width as u32, self.height as u32);
        for (i, cell) in self.cells.iter().enumerate() {
            let v = match cell {
                Cell::Free => 255u8,
                Cell::Obstacle => 0u8,
            };
            img.put_pixel((i % self.width) as u32, (i / self.width) as u32, Luma([v]));
        }
        img
    }

    /// Strict construction from a grayscale raster: only pixel values 0 and
    /// 255 are accepted.
    pub fn from_image(img: &GrayImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut cells = Vec::with_capacity(w * h);
        for y in 0..img.height() {
            for x in 0..img.width() {
                match img.get_pixel(x, y).0[0] {
                    255 => cells.push(Cell::Free),
                    0 => cells.push(Cell::Obstacle),
                    other => {
                        return Err(Error::Format(format!(
                            "pixel ({x},{y}) has value {other}; expected 0 or 255"
                        )))
                    }
                }
            }
        }
        Self::from_cells(w, h, cells)
    }

    /// Writes the map as a lossless 8-bit single-channel PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image().save(path)?;
        Ok(())
    }

    /// Loads a map written by [`save_png`](Self::save_png). The image must be
    /// single-channel 8-bit with values in {0, 255}.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = ImageReader::open(path)?.decode()?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(Error::Format(format!(
                    "expected 8-bit grayscale map image, got {:?}",
                    other.color()
                )))
            }
        };
        Self::from_image(&gray)
    }

    /// Lenient ingestion of arbitrary imagery: converts to grayscale,
    /// thresholds at mid-level (>=128 free), and keeps the original size.
    pub fn ingest_image(path: &Path) -> Result<Self> {
        let img = ImageReader::open(path)?.decode()?.to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut cells = Vec::with_capacity(w * h);
        for y in 0..img.height() {
            for x in 0..img.width() {
                cells.push(if img.get_pixel(x, y).0[0] >= 128 { Cell::Free } else { Cell::Obstacle });
            }
        }
        Self::from_cells(w, h, cells)
    }

    /// Nearest-neighbor resample to `side`x`side`, preserving the binary
    /// free/obstacle values. Used to feed arbitrary-size maps to the fixed
    /// input resolution of the visual encoder.
    pub fn resize_nearest(&self, side: usize) -> Self {
        if side == self.width && side == self.height {
            return self.clone();
        }
        let mut cells = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                let sx = ((x as f64 + 0.5) * self.width as f64 / side as f64).floor() as i32;
                let sy = ((y as f64 + 0.5) * self.height as f64 / side as f64).floor() as i32;
                let sx = sx.clamp(0, self.width as i32 - 1);
                let sy = sy.clamp(0, self.height as i32 - 1);
                cells.push(self.cell(sx, sy));
            }
        }
        Self { width: side, height: side, cells }
    }
}
