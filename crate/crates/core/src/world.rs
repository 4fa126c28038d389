//! Occupancy-grid world model and the geometric queries built on it.
//!
//! The grid stores cells row-major with row 0 at the origin corner (minimum
//! y in the grid frame). Every ray query walks cells exactly with an
//! Amanatides-Woo DDA; nothing here samples along a ray.
//!
//! Unknown cells are opaque to rays and line of sight, and blocking for
//! navigation, but they are never seeds for [`OccupancyGrid::inflate`].

use alloc::vec;
use alloc::vec::Vec;

use crate::geom::{Point2, Pose2D};

/// Distances returned by [`OccupancyGrid::raycast`] never drop below this.
pub const MIN_RAY_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

impl Cell {
    /// Occupied and Unknown both stop rays and robots.
    pub fn is_blocking(self) -> bool {
        !matches!(self, Cell::Free)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub col: usize,
    pub row: usize,
}

impl CellIndex {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("grid must have at least one cell (got {width}x{height})")]
    EmptyGrid { width: usize, height: usize },
    #[error("resolution must be positive, got {0}")]
    NonPositiveResolution(f64),
    #[error("expected {expected} cells for the given dimensions, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("point ({x:.3}, {y:.3}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("ray origin ({x:.3}, {y:.3}) lies inside a blocked cell")]
    OriginBlocked { x: f64, y: f64 },
    #[error("thresholds must satisfy 0 <= free_thresh < occupied_thresh <= 1")]
    BadThresholds,
}

/// Pixel classification rule for image-backed maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub occupied: f64,
    pub free: f64,
    /// When set, bright pixels are occupied instead of dark ones.
    pub negate: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { occupied: 0.65, free: 0.196, negate: false }
    }
}

impl Thresholds {
    pub fn classify(&self, pixel: u8) -> Cell {
        let v = f64::from(pixel) / 255.0;
        let occ = if self.negate { v } else { 1.0 - v };
        if occ >= self.occupied {
            Cell::Occupied
        } else if occ <= self.free {
            Cell::Free
        } else {
            Cell::Unknown
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Pose2D,
    cells: Vec<Cell>,
}

impl OccupancyGrid {
    /// A grid filled with `fill`.
    pub fn new(width: usize, height: usize, resolution: f64, origin: Pose2D, fill: Cell) -> Result<Self, WorldError> {
        Self::from_cells(width, height, resolution, origin, vec![fill; width * height])
    }

    pub fn from_cells(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Pose2D,
        cells: Vec<Cell>,
    ) -> Result<Self, WorldError> {
        if width == 0 || height == 0 {
            return Err(WorldError::EmptyGrid { width, height });
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(WorldError::NonPositiveResolution(resolution));
        }
        let expected = width * height;
        if cells.len() != expected {
            return Err(WorldError::DimensionMismatch { expected, actual: cells.len() });
        }
        Ok(Self { width, height, resolution, origin, cells })
    }

    /// Builds a grid from grayscale pixels in image order (row 0 is the top
    /// of the picture, which becomes the max-y row of the grid).
    pub fn from_image(
        width: usize,
        height: usize,
        pixels: &[u8],
        resolution: f64,
        origin: Pose2D,
        thresholds: &Thresholds,
    ) -> Result<Self, WorldError> {
        if !(0.0..=1.0).contains(&thresholds.free)
            || !(0.0..=1.0).contains(&thresholds.occupied)
            || thresholds.free >= thresholds.occupied
        {
            return Err(WorldError::BadThresholds);
        }
        if pixels.len() != width * height {
            return Err(WorldError::DimensionMismatch { expected: width * height, actual: pixels.len() });
        }
        let mut cells = Vec::with_capacity(pixels.len());
        for row in 0..height {
            let image_row = height - 1 - row;
            let line = &pixels[image_row * width..(image_row + 1) * width];
            cells.extend(line.iter().map(|&p| thresholds.classify(p)));
        }
        Self::from_cells(width, height, resolution, origin, cells)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Pose2D {
        self.origin
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index_of(&self, c: CellIndex) -> usize {
        c.row * self.width + c.col
    }

    pub fn cell_at_index(&self, index: usize) -> CellIndex {
        CellIndex::new(index % self.width, index / self.width)
    }

    pub fn get(&self, c: CellIndex) -> Option<Cell> {
        (c.col < self.width && c.row < self.height).then(|| self.cells[self.index_of(c)])
    }

    pub fn set(&mut self, c: CellIndex, value: Cell) {
        let i = self.index_of(c);
        self.cells[i] = value;
    }

    /// Marks every cell whose center lies inside the axis-aligned world
    /// rectangle `[min, max]`.
    pub fn fill_rect(&mut self, min: Point2, max: Point2, value: Cell) {
        for row in 0..self.height {
            for col in 0..self.width {
                let c = self.cell_center(CellIndex::new(col, row));
                if c.x >= min.x && c.x <= max.x && c.y >= min.y && c.y <= max.y {
                    self.set(CellIndex::new(col, row), value);
                }
            }
        }
    }

    /// World point to continuous grid coordinates, in cells.
    pub fn to_grid_frame(&self, p: Point2) -> (f64, f64) {
        let local = self.origin.inverse_transform_point(p);
        (local.x / self.resolution, local.y / self.resolution)
    }

    fn from_grid_frame(&self, u: f64, v: f64) -> Point2 {
        self.origin.transform_point(Point2::new(u * self.resolution, v * self.resolution))
    }

    pub fn world_to_cell(&self, p: Point2) -> Option<CellIndex> {
        let (u, v) = self.to_grid_frame(p);
        let (col, row) = (libm::floor(u), libm::floor(v));
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some(CellIndex::new(col as usize, row as usize))
    }

    pub fn cell_center(&self, c: CellIndex) -> Point2 {
        self.from_grid_frame(c.col as f64 + 0.5, c.row as f64 + 0.5)
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.world_to_cell(p).is_some()
    }

    pub fn cell_at(&self, p: Point2) -> Option<Cell> {
        self.world_to_cell(p).and_then(|c| self.get(c))
    }

    /// True when `p` is inside the grid and its cell is Free.
    pub fn is_free(&self, p: Point2) -> bool {
        matches!(self.cell_at(p), Some(Cell::Free))
    }

    fn checked_cell(&self, p: Point2) -> Result<CellIndex, WorldError> {
        self.world_to_cell(p).ok_or(WorldError::OutOfBounds { x: p.x, y: p.y })
    }

    /// Cells crossed by the ray from `origin` at world `angle`, with the
    /// distance (meters) at which each one is entered. The origin cell is
    /// not yielded. The walk is unbounded; callers stop it.
    pub fn ray(&self, origin: Point2, angle: f64) -> GridRay {
        let (u, v) = self.to_grid_frame(origin);
        let (dy, dx) = libm::sincos(angle - self.origin.theta());
        GridRay::new(u, v, dx, dy, self.resolution)
    }

    /// Distance from `origin` to the first blocked cell boundary along
    /// `angle`, or `max_range` when nothing is hit first.
    pub fn raycast(&self, origin: Point2, angle: f64, max_range: f64) -> Result<f64, WorldError> {
        let start = self.checked_cell(origin)?;
        if self.cells[self.index_of(start)].is_blocking() {
            return Err(WorldError::OriginBlocked { x: origin.x, y: origin.y });
        }
        for step in self.ray(origin, angle) {
            if step.distance >= max_range {
                break;
            }
            match step.in_bounds(self.width, self.height) {
                Some(c) if self.cells[self.index_of(c)].is_blocking() => {
                    return Ok(step.distance.max(MIN_RAY_DISTANCE));
                }
                Some(_) => {}
                None => break,
            }
        }
        Ok(max_range)
    }

    /// True iff no blocked cell lies strictly between the cells of `a` and
    /// `b`. The endpoint cells themselves are not tested, so a lit wall cell
    /// is visible from a lamp when it is the first thing the ray hits.
    pub fn line_of_sight(&self, a: Point2, b: Point2) -> Result<bool, WorldError> {
        let ca = self.checked_cell(a)?;
        let cb = self.checked_cell(b)?;
        if ca == cb {
            return Ok(true);
        }
        let length = a.distance(b);
        for step in self.ray(a, a.angle_to(b)) {
            if step.distance > length {
                return Ok(true);
            }
            let Some(c) = step.in_bounds(self.width, self.height) else {
                return Ok(true);
            };
            if c == cb {
                return Ok(true);
            }
            if self.cells[self.index_of(c)].is_blocking() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Grows Occupied cells by `radius` meters (center-to-center Euclidean).
    pub fn inflate(&self, radius: f64) -> OccupancyGrid {
        let mut out = self.clone();
        if !(radius > 0.0) {
            return out;
        }
        let reach = libm::floor(radius / self.resolution + 1e-9) as isize;
        let limit = radius * radius + 1e-12;
        let res2 = self.resolution * self.resolution;
        let mut offsets = Vec::new();
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if (dx * dx + dy * dy) as f64 * res2 <= limit {
                    offsets.push((dx, dy));
                }
            }
        }
        let (w, h) = (self.width as isize, self.height as isize);
        for (i, cell) in self.cells.iter().enumerate() {
            if *cell != Cell::Occupied {
                continue;
            }
            let (col, row) = ((i % self.width) as isize, (i / self.width) as isize);
            for &(dx, dy) in &offsets {
                let (c, r) = (col + dx, row + dy);
                if c >= 0 && r >= 0 && c < w && r < h {
                    out.cells[(r * w + c) as usize] = Cell::Occupied;
                }
            }
        }
        out
    }
}

/// One cell entered by a [`GridRay`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayStep {
    pub col: i64,
    pub row: i64,
    /// Distance in meters from the ray origin to the entry boundary.
    pub distance: f64,
}

impl RayStep {
    pub fn in_bounds(&self, width: usize, height: usize) -> Option<CellIndex> {
        (self.col >= 0 && self.row >= 0 && (self.col as usize) < width && (self.row as usize) < height)
            .then(|| CellIndex::new(self.col as usize, self.row as usize))
    }
}

/// Amanatides-Woo cell walk in grid coordinates.
#[derive(Debug, Clone)]
pub struct GridRay {
    col: i64,
    row: i64,
    step_col: i64,
    step_row: i64,
    t_max_col: f64,
    t_max_row: f64,
    t_delta_col: f64,
    t_delta_row: f64,
    scale: f64,
}

impl GridRay {
    fn new(u: f64, v: f64, dx: f64, dy: f64, scale: f64) -> Self {
        let col = libm::floor(u);
        let row = libm::floor(v);
        let axis = |pos: f64, cell: f64, d: f64| -> (i64, f64, f64) {
            if d > 0.0 {
                (1, (cell + 1.0 - pos) / d, 1.0 / d)
            } else if d < 0.0 {
                (-1, (pos - cell) / -d, -1.0 / d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (step_col, t_max_col, t_delta_col) = axis(u, col, dx);
        let (step_row, t_max_row, t_delta_row) = axis(v, row, dy);
        Self {
            col: col as i64,
            row: row as i64,
            step_col,
            step_row,
            t_max_col,
            t_max_row,
            t_delta_col,
            t_delta_row,
            scale,
        }
    }
}

impl Iterator for GridRay {
    type Item = RayStep;

    fn next(&mut self) -> Option<RayStep> {
        let t = if self.t_max_col < self.t_max_row {
            self.col += self.step_col;
            let t = self.t_max_col;
            self.t_max_col += self.t_delta_col;
            t
        } else {
            if !self.t_max_row.is_finite() {
                return None;
            }
            self.row += self.step_row;
            let t = self.t_max_row;
            self.t_max_row += self.t_delta_row;
            t
        };
        Some(RayStep { col: self.col, row: self.row, distance: t * self.scale })
    }
}
