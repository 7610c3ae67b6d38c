//! The three 2D lidar representations: the range ("lidar") image indexed by
//! elevation channel and azimuth bin, the sparse depth image in the camera
//! plane, and the dense depth image obtained by neighborhood averaging over
//! summed-area tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{planar_range, project_in_view, CameraIntrinsics, Extrinsics, PointCloud};

/// In-memory marker for "no lidar return".
pub const SENTINEL: f32 = f32::INFINITY;

/// Row-major grid of planar ranges in meters. Cells are finite positive or
/// [`SENTINEL`].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn empty(width: usize, height: usize) -> Self {
        DepthImage {
            width,
            height,
            data: vec![SENTINEL; width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }

    /// Writes `v` unless the cell already holds a nearer return.
    #[inline]
    fn set_nearest(&mut self, row: usize, col: usize, v: f32) {
        let cell = &mut self.data[row * self.width + col];
        if v < *cell {
            *cell = v;
        }
    }

    pub fn finite_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_finite()).count()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Angular layout of a range image.
///
/// Raw indices are `c = ⌊asin(z/‖p‖)/Δφ⌋` and `r = ⌊atan2(y, x)/ΔΘ⌋`; grid row
/// is `top_channel - c` and grid column is `left_bin - r`, so the top-left cell
/// is the highest elevation and the leftmost azimuth (lidar y points left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeGeometry {
    pub delta_phi: f64,
    pub delta_theta: f64,
    pub rows: usize,
    pub cols: usize,
    pub top_channel: i64,
    pub left_bin: i64,
}

impl RangeGeometry {
    /// Velodyne-64-like layout cropped to a forward camera's field of view:
    /// +2° to about -25.5° elevation, ±46° azimuth.
    pub fn velodyne64() -> Self {
        RangeGeometry {
            delta_phi: 0.43_f64.to_radians(),
            delta_theta: 0.18_f64.to_radians(),
            rows: 64,
            cols: 512,
            top_channel: 4,
            left_bin: 255,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_phi > 0.0 && self.delta_theta > 0.0) {
            return Err(Error::InvalidConfig("range image resolutions must be positive".into()));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidConfig("range image must have at least one cell".into()));
        }
        Ok(())
    }

    /// Raw (channel, bin) indices of a point, before the grid offset.
    pub fn raw_cell(&self, x: f64, y: f64, z: f64) -> Option<(i64, i64)> {
        let planar = (x * x + y * y).sqrt();
        if planar == 0.0 && z == 0.0 {
            return None;
        }
        // atan2 form of asin(z/‖p‖): exact at 45° where asin rounds low
        let c = (z.atan2(planar) / self.delta_phi).floor() as i64;
        let r = (y.atan2(x) / self.delta_theta).floor() as i64;
        Some((c, r))
    }

    pub fn grid_cell(&self, x: f64, y: f64, z: f64) -> Option<(usize, usize)> {
        let (c, r) = self.raw_cell(x, y, z)?;
        let row = self.top_channel - c;
        let col = self.left_bin - r;
        let inside = (0..self.rows as i64).contains(&row) && (0..self.cols as i64).contains(&col);
        inside.then_some((row as usize, col as usize))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub grid: DepthImage,
    pub geometry: RangeGeometry,
}

pub fn build_lidar_image(cloud: &PointCloud, geometry: &RangeGeometry) -> Result<RangeImage> {
    geometry.validate()?;
    let mut grid = DepthImage::empty(geometry.cols, geometry.rows);
    for p in &cloud.points {
        let d = planar_range(p) as f32;
        if !(d > 0.0 && d.is_finite()) {
            continue;
        }
        if let Some((row, col)) = geometry.grid_cell(p.x, p.y, p.z) {
            grid.set_nearest(row, col, d);
        }
    }
    Ok(RangeImage {
        grid,
        geometry: *geometry,
    })
}

/// Projects a lidar-frame cloud into the camera image. Points outside the
/// field of view are dropped here, so pre-filtering is optional.
pub fn build_sparse_depth(cloud: &PointCloud, intr: &CameraIntrinsics, ext: &Extrinsics) -> DepthImage {
    let mut img = DepthImage::empty(intr.width, intr.height);
    for p in &cloud.points {
        let d = planar_range(p) as f32;
        if !(d > 0.0 && d.is_finite()) {
            continue;
        }
        if let Some((u, v)) = project_in_view(p, intr, ext) {
            img.set_nearest(v.floor() as usize, u.floor() as usize, d);
        }
    }
    img
}

/// Summed-area tables over the finite cells of a [`DepthImage`]. Both tables
/// are `(height + 1) × (width + 1)` with a zero first row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralPair {
    pub width: usize,
    pub height: usize,
    pub sum_table: Vec<f64>,
    pub count_table: Vec<u32>,
}

impl IntegralPair {
    #[inline]
    fn idx(&self, row: usize, col: usize) -> usize {
        row * (self.width + 1) + col
    }

    pub fn sum_at(&self, row: usize, col: usize) -> f64 {
        self.sum_table[self.idx(row, col)]
    }

    pub fn count_at(&self, row: usize, col: usize) -> u32 {
        self.count_table[self.idx(row, col)]
    }

    /// Sum and count over rows `r0..r1`, columns `c0..c1` (half-open).
    #[inline]
    pub fn rect(&self, r0: usize, c0: usize, r1: usize, c1: usize) -> (f64, u32) {
        let (a, b, c, d) = (self.idx(r0, c0), self.idx(r0, c1), self.idx(r1, c0), self.idx(r1, c1));
        let s = self.sum_table[d] - self.sum_table[b] - self.sum_table[c] + self.sum_table[a];
        let n = self.count_table[d] + self.count_table[a] - self.count_table[b] - self.count_table[c];
        (s, n)
    }
}

pub fn integral_image(img: &DepthImage) -> IntegralPair {
    let (w, h) = (img.width, img.height);
    let stride = w + 1;
    let mut sum_table = vec![0.0f64; (h + 1) * stride];
    let mut count_table = vec![0u32; (h + 1) * stride];
    for row in 0..h {
        let mut row_sum = 0.0f64;
        let mut row_count = 0u32;
        let src = &img.data[row * w..(row + 1) * w];
        let (above, below) = sum_table.split_at_mut((row + 1) * stride);
        let (above_n, below_n) = count_table.split_at_mut((row + 1) * stride);
        let prev = &above[row * stride..];
        let prev_n = &above_n[row * stride..];
        for col in 0..w {
            let v = src[col];
            if v.is_finite() {
                row_sum += v as f64;
                row_count += 1;
            }
            below[col + 1] = prev[col + 1] + row_sum;
            below_n[col + 1] = prev_n[col + 1] + row_count;
        }
    }
    IntegralPair {
        width: w,
        height: h,
        sum_table,
        count_table,
    }
}

/// Fills empty pixels with the mean of the finite values in the `k × k`
/// window centered on them (clipped at the borders). Pixels that already hold
/// a return keep it; pixels whose window is empty stay [`SENTINEL`].
///
/// Runs in `O(width · height)` regardless of `k`.
pub fn densify(img: &DepthImage, k: usize) -> Result<DepthImage> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::InvalidWindow(k));
    }
    let half = k / 2;
    let table = integral_image(img);
    let (w, h) = (img.width, img.height);
    let mut out = img.clone();
    for row in 0..h {
        let r0 = row.saturating_sub(half);
        let r1 = (row + half + 1).min(h);
        for col in 0..w {
            let i = row * w + col;
            if img.data[i].is_finite() {
                continue;
            }
            let c0 = col.saturating_sub(half);
            let c1 = (col + half + 1).min(w);
            let (s, n) = table.rect(r0, c0, r1, c1);
            if n > 0 {
                out.data[i] = (s / n as f64) as f32;
            }
        }
    }
    Ok(out)
}
