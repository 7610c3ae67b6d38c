//! Rigid transforms, the distorted pinhole projection, and camera field-of-view
//! filtering of lidar point clouds.
//!
//! Camera frame convention: the projection normalizes with `x_n = -x / z`,
//! `y_n = -y / z`, so a point is in front of the camera when `z > 0` and the
//! camera x axis points left, y axis up. [`in_front_of_camera`] is the single
//! place this convention is decided; KITTI calibrations (x right, y down) are
//! rotated into it by [`crate::dataset::kitti::read_calibration`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer than this to the camera plane cannot be projected.
pub const MIN_DEPTH: f64 = 1e-9;

/// Tolerance for `RᵀR = I` and `det R = 1`.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn sub(&self, o: &Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn scale(&self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Lidar returns with their reflectance. `intensity` is carried through
/// filtering and serialization but not used by the pipeline.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub intensity: Vec<f32>,
}

impl PointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<Point3>) -> Self {
        let intensity = vec![0.0; points.len()];
        PointCloud { points, intensity }
    }

    pub fn push(&mut self, p: Point3, intensity: f32) {
        self.points.push(p);
        self.intensity.push(intensity);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn retain_by(&self, mut keep: impl FnMut(&Point3) -> bool) -> PointCloud {
        let mut out = PointCloud::new();
        for (p, &i) in self.points.iter().zip(&self.intensity) {
            if keep(p) {
                out.push(*p, i);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub ox: f64,
    pub oy: f64,
    pub skew: f64,
    /// κ1..κ3 radial, κ4 and κ5 tangential.
    pub kappa: [f64; 5],
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        ox: f64,
        oy: f64,
        skew: f64,
        kappa: [f64; 5],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let intr = CameraIntrinsics {
            fx,
            fy,
            ox,
            oy,
            skew,
            kappa,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be at least 1x1");
        }
        if !(0.0..self.width as f64).contains(&self.ox) || !(0.0..self.height as f64).contains(&self.oy) {
            return bad("optical center outside the image");
        }
        if !self.skew.is_finite() || self.kappa.iter().any(|k| !k.is_finite()) {
            return bad("non-finite skew or distortion");
        }
        Ok(())
    }

    /// Applies radial and tangential distortion to normalized coordinates.
    pub fn distort(&self, xn: f64, yn: f64) -> (f64, f64) {
        let [k1, k2, k3, k4, k5] = self.kappa;
        let r2 = xn * xn + yn * yn;
        let radial = 1.0 + k1 * r2 + k2 * r2 * r2 + k3 * r2 * r2 * r2;
        let mx = radial * xn + 2.0 * k4 * xn * yn + k5 * (r2 + 2.0 * xn * xn);
        let my = radial * yn + 2.0 * k5 * xn * yn + k4 * (r2 + 2.0 * yn * yn);
        (mx, my)
    }

    /// Inverse of [`distort`](Self::distort) by fixed-point iteration. Converges
    /// for the mild distortions found in automotive cameras.
    pub fn undistort(&self, mx: f64, my: f64) -> (f64, f64) {
        let (mut xn, mut yn) = (mx, my);
        for _ in 0..200 {
            let (dx, dy) = self.distort(xn, yn);
            let (ex, ey) = (dx - mx, dy - my);
            xn -= ex;
            yn -= ey;
            if ex.abs().max(ey.abs()) < 1e-15 {
                break;
            }
        }
        (xn, yn)
    }

    /// Pixel coordinates to the undistorted normalized plane.
    pub fn unproject(&self, u: f64, v: f64) -> (f64, f64) {
        let my = (v - self.oy) / self.fy;
        let mx = (u - self.ox - self.skew * my) / self.fx;
        self.undistort(mx, my)
    }
}

/// Rigid transform from the lidar frame into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Extrinsics {
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let ext = Extrinsics {
            rotation,
            translation,
        };
        ext.validate()?;
        Ok(ext)
    }

    pub fn identity() -> Self {
        Extrinsics {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter().flatten().chain(&self.translation).any(|v| !v.is_finite()) {
            return Err(Error::InvalidExtrinsics("non-finite entry".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > ORTHONORMAL_TOL {
                    return Err(Error::InvalidExtrinsics(format!(
                        "rotation is not orthonormal (RᵀR[{i}][{j}] = {dot})"
                    )));
                }
            }
        }
        let det = det3(r);
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidExtrinsics(format!("det(R) = {det}")));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let r = &self.rotation;
        let t = &self.translation;
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z + t[0],
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z + t[1],
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z + t[2],
        )
    }

    /// Camera frame back to the lidar frame: `Rᵀ (p - t)`.
    pub fn apply_inverse(&self, p: &Point3) -> Point3 {
        let r = &self.rotation;
        let q = p.sub(&Point3::new(self.translation[0], self.translation[1], self.translation[2]));
        Point3::new(
            r[0][0] * q.x + r[1][0] * q.y + r[2][0] * q.z,
            r[0][1] * q.x + r[1][1] * q.y + r[2][1] * q.z,
            r[0][2] * q.x + r[1][2] * q.y + r[2][2] * q.z,
        )
    }
}

pub(crate) fn det3(r: &[[f64; 3]; 3]) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

pub fn transform_to_camera_frame(cloud: &PointCloud, ext: &Extrinsics) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| ext.apply(p)).collect(),
        intensity: cloud.intensity.clone(),
    }
}

/// Positive-depth test for camera-frame points.
#[inline]
pub fn in_front_of_camera(p: &Point3) -> bool {
    p.z > 0.0
}

/// Projects a camera-frame point to real-valued pixel coordinates `(u, v)`.
pub fn project_point(p: &Point3, intr: &CameraIntrinsics) -> Result<(f64, f64)> {
    if p.z.abs() < MIN_DEPTH {
        return Err(Error::DegenerateDepth { z: p.z });
    }
    let xn = -p.x / p.z;
    let yn = -p.y / p.z;
    let (mx, my) = intr.distort(xn, yn);
    let u = intr.fx * mx + intr.skew * my + intr.ox;
    let v = intr.fy * my + intr.oy;
    Ok((u, v))
}

/// Range in the lidar's horizontal plane; elevation is ignored.
#[inline]
pub fn planar_range(p: &Point3) -> f64 {
    (p.x * p.x + p.y * p.y).sqrt()
}

/// Camera-frame point and its in-bounds pixel, or `None` when the lidar point
/// is behind the camera or projects outside the image.
pub(crate) fn project_in_view(p: &Point3, intr: &CameraIntrinsics, ext: &Extrinsics) -> Option<(f64, f64)> {
    let pc = ext.apply(p);
    if !in_front_of_camera(&pc) {
        return None;
    }
    let (u, v) = project_point(&pc, intr).ok()?;
    let inside = u >= 0.0 && u < intr.width as f64 && v >= 0.0 && v < intr.height as f64;
    inside.then_some((u, v))
}

/// Keeps the lidar-frame points that land inside the camera image.
pub fn fov_filter(cloud: &PointCloud, intr: &CameraIntrinsics, ext: &Extrinsics) -> PointCloud {
    cloud.retain_by(|p| project_in_view(p, intr, ext).is_some())
}
