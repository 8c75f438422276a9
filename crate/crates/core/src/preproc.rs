//! Occupancy-grid encoding of a LIDAR cloud with BS and vehicle markers.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{invalid_err, config_err, Result};
use crate::io;
use crate::sim::{DatasetRecord, Point3};

pub const OCCUPIED: i8 = 1;
pub const FREE: i8 = 0;
pub const BS_MARK: i8 = -1;
pub const VEHICLE_MARK: i8 = -2;

/// Rows run along the street (`x`), columns across it (`y`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub cell: [f64; 2],
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            origin: [0.0, 0.0],
            cell: [1.0, 2.0],
            rows: 200,
            cols: 20,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell[0] > 0.0 && self.cell[1] > 0.0) {
            return Err(config_err!("grid cell sizes must be positive, got {:?}", self.cell));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(config_err!("grid extents must be positive, got {}×{}", self.rows, self.cols));
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(config_err!("grid origin must be finite"));
        }
        Ok(())
    }

    /// Physical `[x, y]` size covered by the grid.
    pub fn extent(&self) -> [f64; 2] {
        [self.rows as f64 * self.cell[0], self.cols as f64 * self.cell[1]]
    }

    /// Half-open binning: cell `(r, c)` covers `[r·dx, (r+1)·dx) × [c·dy, (c+1)·dy)`
    /// relative to the origin. `None` means outside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin[0]) / self.cell[0]).floor();
        let fy = ((y - self.origin[1]) / self.cell[1]).floor();
        if !(fx >= 0.0 && fy >= 0.0 && fx < self.rows as f64 && fy < self.cols as f64) {
            return None;
        }
        Some((fx as usize, fy as usize))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i8>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid { rows, cols, data: vec![FREE; rows * cols] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: i8) {
        self.data[r * self.cols + c] = v;
    }

    pub fn count(&self, v: i8) -> usize {
        self.data.iter().filter(|&&x| x == v).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

pub fn preprocess_cloud(cloud: &[Point3], bs: Point3, veh: Point3, spec: &GridSpec) -> Result<Grid> {
    spec.validate()?;
    let bs_cell = spec
        .cell_of(bs[0], bs[1])
        .ok_or_else(|| invalid_err!("BS at ({}, {}) lies outside the grid", bs[0], bs[1]))?;
    let veh_cell = spec
        .cell_of(veh[0], veh[1])
        .ok_or_else(|| invalid_err!("vehicle at ({}, {}) lies outside the grid", veh[0], veh[1]))?;
    let mut grid = Grid::zeros(spec.rows, spec.cols);
    for p in cloud {
        if let Some((r, c)) = spec.cell_of(p[0], p[1]) {
            grid.set(r, c, OCCUPIED);
        }
    }
    grid.set(bs_cell.0, bs_cell.1, BS_MARK);
    grid.set(veh_cell.0, veh_cell.1, VEHICLE_MARK);
    Ok(grid)
}

pub fn preprocess_record(record: &DatasetRecord, spec: &GridSpec) -> Result<Grid> {
    preprocess_cloud(&record.cloud, record.bs, record.veh, spec)
        .map_err(|e| invalid_err!("record {}: {e}", record.id))
}

/// One line of the grid cache file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub id: u64,
    pub rows: usize,
    pub cols: usize,
    pub grid: Vec<i8>,
}

impl GridEntry {
    pub fn new(id: u64, g: &Grid) -> Self {
        GridEntry { id, rows: g.rows, cols: g.cols, grid: g.data.clone() }
    }

    pub fn into_grid(self) -> Result<Grid> {
        if self.grid.len() != self.rows * self.cols {
            return Err(invalid_err!("cached grid {} has {} cells, expected {}", self.id, self.grid.len(), self.rows * self.cols));
        }
        if self.grid.iter().any(|v| !(-2..=1).contains(v)) {
            return Err(invalid_err!("cached grid {} holds values outside {{-2,-1,0,1}}", self.id));
        }
        Ok(Grid { rows: self.rows, cols: self.cols, data: self.grid })
    }
}

pub fn write_grid_cache(path: &Path, entries: &[GridEntry]) -> Result<()> {
    io::write_jsonl(path, entries)
}

pub fn read_grid_cache(path: &Path) -> Result<Vec<GridEntry>> {
    io::read_jsonl(path)
}
