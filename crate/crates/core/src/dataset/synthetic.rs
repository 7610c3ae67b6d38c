//! Deterministic desk-scale scenes: class-colored rectangles standing on a
//! ground plane under a sky, seen by one camera and one lidar that share a
//! calibration.
//!
//! Every object surface sits at a constant planar range from the lidar, so
//! the dense ground-truth depth of an object is a single value. Lidar points
//! are emitted through pixel centers on a regular subset of rows and
//! columns, which makes the projected sparse depth image reproducible
//! pixel-for-pixel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adverse::frame_rng;
use crate::detect::BBox;
use crate::error::{Error, Result};
use crate::frame::RgbImage;
use crate::geometry::{planar_range, CameraIntrinsics, Extrinsics, Point3, PointCloud};
use crate::lidar_repr::{DepthImage, RangeGeometry};

/// Pixel-size and color prior of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pub color: [u8; 3],
    pub width: (usize, usize),
    pub height: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Inclusive object count range.
    pub object_count: (usize, usize),
    /// Planar range of object surfaces, meters.
    pub depth_range: (f64, f64),
    /// One prior per class, indexed by class id.
    pub priors: Vec<ClassPrior>,
    /// Lidar mounting height above the ground plane, meters.
    pub lidar_height: f64,
    /// Lidar points are emitted on every `row_step`-th row and
    /// `col_step`-th column.
    pub row_step: usize,
    pub col_step: usize,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        let prior = |color, width, height| ClassPrior { color, width, height };
        SyntheticSceneSpec {
            seed: 0,
            width: 192,
            height: 64,
            object_count: (1, 3),
            depth_range: (5.0, 40.0),
            priors: vec![
                prior([220, 40, 40], (36, 56), (18, 26)),   // car
                prior([40, 170, 40], (44, 64), (30, 40)),   // truck
                prior([230, 200, 30], (60, 84), (24, 32)),  // tram
                prior([40, 60, 220], (16, 20), (30, 44)),   // pedestrian
                prior([200, 60, 200], (20, 28), (24, 34)),  // cyclist
                prior([30, 200, 210], (30, 42), (26, 34)),  // van
            ],
            lidar_height: 1.7,
            row_step: 4,
            col_step: 2,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("scene spec: {m}")));
        if self.width < 16 || self.height < 16 {
            return bad("image must be at least 16x16");
        }
        if self.object_count.0 > self.object_count.1 {
            return bad("object count range is empty");
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 1.0 && lo <= hi && hi.is_finite()) {
            return bad("depth range must satisfy 1 < min <= max");
        }
        if self.priors.is_empty() {
            return bad("no class priors");
        }
        for p in &self.priors {
            let ok = |(a, b): (usize, usize), lim: usize| a >= 1 && a <= b && b <= lim;
            if !ok(p.width, self.width) || !ok(p.height, self.height) {
                return bad("class size prior does not fit the image");
            }
        }
        if self.row_step == 0 || self.col_step == 0 || !(self.lidar_height > 0.0) {
            return bad("lidar sampling steps and height must be positive");
        }
        Ok(())
    }

    /// Camera for this image size: 120 px focal length, optical center on the
    /// middle column, 3/8 down, and mild distortion.
    pub fn intrinsics(&self) -> CameraIntrinsics {
        let f = 120.0 * self.width as f64 / 192.0;
        CameraIntrinsics::new(
            f,
            f,
            self.width as f64 / 2.0,
            self.height as f64 * 0.375,
            0.0,
            [0.01, -0.002, 0.0, 0.0005, -0.0005],
            self.width,
            self.height,
        )
        .expect("synthetic intrinsics are valid")
    }

    /// Lidar x forward, y left, z up; camera x left, y up, z forward; the
    /// camera sits slightly ahead of and below the lidar.
    pub fn extrinsics(&self) -> Extrinsics {
        Extrinsics::new([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], [0.02, 0.08, -0.27])
            .expect("synthetic extrinsics are valid")
    }

    /// Range-image layout covering the synthetic camera's field of view.
    pub fn range_geometry(&self) -> RangeGeometry {
        RangeGeometry {
            delta_phi: 1.0f64.to_radians(),
            delta_theta: 0.625f64.to_radians(),
            rows: 32,
            cols: 128,
            top_channel: 15,
            left_bin: 63,
        }
    }
}

/// A rendered scene with all of its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub index: u64,
    pub rgb: RgbImage,
    /// Dense ground-truth planar range; sky is [`crate::lidar_repr::SENTINEL`].
    pub depth: DepthImage,
    /// Lidar-frame points.
    pub cloud: PointCloud,
    /// Depth image of `cloud` at the pixels its points were emitted through.
    pub sparse: DepthImage,
    pub boxes: Vec<BBox>,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: Extrinsics,
}

struct Ray {
    origin: Point3,
    dir: Point3,
}

impl Ray {
    fn through_pixel(u: f64, v: f64, intr: &CameraIntrinsics, ext: &Extrinsics) -> Ray {
        let (xn, yn) = intr.unproject(u, v);
        let cam_origin = ext.apply_inverse(&Point3::new(0.0, 0.0, 0.0));
        let far = ext.apply_inverse(&Point3::new(-xn, -yn, 1.0));
        Ray {
            origin: cam_origin,
            dir: far.sub(&cam_origin),
        }
    }

    fn at(&self, s: f64) -> Point3 {
        Point3::new(
            self.origin.x + s * self.dir.x,
            self.origin.y + s * self.dir.y,
            self.origin.z + s * self.dir.z,
        )
    }

    /// First point at planar range `d` (the ray starts inside that cylinder).
    fn hit_cylinder(&self, d: f64) -> Option<Point3> {
        let (o, r) = (&self.origin, &self.dir);
        let a = r.x * r.x + r.y * r.y;
        let b = 2.0 * (o.x * r.x + o.y * r.y);
        let c = o.x * o.x + o.y * o.y - d * d;
        let disc = b * b - 4.0 * a * c;
        if a == 0.0 || disc < 0.0 {
            return None;
        }
        let s = (-b + disc.sqrt()) / (2.0 * a);
        (s > 0.0).then(|| self.at(s))
    }

    fn hit_ground(&self, height: f64) -> Option<Point3> {
        if self.dir.z >= 0.0 {
            return None;
        }
        let s = (-height - self.origin.z) / self.dir.z;
        (s > 0.0).then(|| self.at(s))
    }
}

fn shade(color: [u8; 3], depth: f64, (near, far): (f64, f64)) -> [u8; 3] {
    let t = ((depth - near) / (far - near).max(1e-9)).clamp(0.0, 1.0);
    let k = 1.0 - 0.4 * t;
    color.map(|c| (c as f64 * k).round() as u8)
}

/// Image row where the ground plane reaches planar range `d`.
fn ground_row(d: f64, spec: &SyntheticSceneSpec, intr: &CameraIntrinsics, ext: &Extrinsics) -> f64 {
    let p = ext.apply(&Point3::new(d, 0.0, -spec.lidar_height));
    intr.fy * (-p.y / p.z) + intr.oy
}

fn place_objects<R: Rng>(spec: &SyntheticSceneSpec, rng: &mut R) -> Vec<(BBox, f64)> {
    let intr = spec.intrinsics();
    let ext = spec.extrinsics();
    let n = rng.gen_range(spec.object_count.0..=spec.object_count.1);
    let mut placed: Vec<(BBox, f64)> = Vec::with_capacity(n);
    for _ in 0..n {
        let class_id = rng.gen_range(0..spec.priors.len());
        let prior = &spec.priors[class_id];
        let w = rng.gen_range(prior.width.0..=prior.width.1);
        let h = rng.gen_range(prior.height.0..=prior.height.1);
        for _attempt in 0..20 {
            let d = rng.gen_range(spec.depth_range.0..=spec.depth_range.1);
            let x = rng.gen_range(0..=spec.width - w);
            let contact = ground_row(d, spec, &intr, &ext).round();
            let bottom = (contact.max(h as f64) as usize).min(spec.height);
            let y = bottom - h;
            let b = BBox::new(x as f64, y as f64, (x + w) as f64, bottom as f64, class_id);
            let overlaps = placed.iter().any(|(o, _)| o.x1 < b.x2 && b.x1 < o.x2 && o.y1 < b.y2 && b.y1 < o.y2);
            if !overlaps {
                placed.push((b, d));
                break;
            }
        }
    }
    placed
}

const SKY: [u8; 3] = [120, 170, 220];
const GROUND: [u8; 3] = [110, 105, 100];

/// Renders frame `index` of the scene family described by `spec`.
pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec, index: u64) -> Result<SyntheticFrame> {
    spec.validate()?;
    // offset keeps scene draws independent of a corruption run sharing the seed
    let mut rng = frame_rng(spec.seed ^ 0x5ce7_e5ce_7e5c_e7e5, index);
    let intr = spec.intrinsics();
    let ext = spec.extrinsics();
    let objects = place_objects(spec, &mut rng);
    let (w, h) = (spec.width, spec.height);

    let mut rgb = RgbImage::filled(w, h, SKY);
    let mut depth = DepthImage::empty(w, h);
    let far_ground = spec.depth_range.1 * 2.0;
    for row in 0..h {
        for col in 0..w {
            let ray = Ray::through_pixel(col as f64 + 0.5, row as f64 + 0.5, &intr, &ext);
            let object = objects
                .iter()
                .find(|(b, _)| b.contains_point(col as f64 + 0.5, row as f64 + 0.5));
            let (color, d) = match object {
                Some((b, d)) => (shade(spec.priors[b.class_id].color, *d, spec.depth_range), Some(*d)),
                None => match ray.hit_ground(spec.lidar_height) {
                    Some(p) => {
                        let d = planar_range(&p);
                        (shade(GROUND, d, (0.0, far_ground)), Some(d))
                    }
                    None => (SKY, None),
                },
            };
            let noise: i16 = rng.gen_range(-6..=6);
            rgb.put(row, col, color.map(|c| (c as i16 + noise).clamp(0, 255) as u8));
            if let Some(d) = d {
                depth.set(row, col, d as f32);
            }
        }
    }

    let mut cloud = PointCloud::new();
    let mut sparse = DepthImage::empty(w, h);
    let row_offset = spec.row_step / 2;
    for row in (row_offset..h).step_by(spec.row_step) {
        for col in (0..w).step_by(spec.col_step) {
            let d = depth.get(row, col);
            if !d.is_finite() {
                continue;
            }
            let ray = Ray::through_pixel(col as f64 + 0.5, row as f64 + 0.5, &intr, &ext);
            let on_object = objects
                .iter()
                .any(|(b, _)| b.contains_point(col as f64 + 0.5, row as f64 + 0.5));
            let p = if on_object {
                ray.hit_cylinder(d as f64)
            } else {
                ray.hit_ground(spec.lidar_height)
            };
            if let Some(p) = p {
                let intensity = if on_object { 0.6 } else { 0.2 };
                cloud.push(p, intensity);
                sparse.set(row, col, planar_range(&p) as f32);
            }
        }
    }

    Ok(SyntheticFrame {
        index,
        rgb,
        depth,
        cloud,
        sparse,
        boxes: objects.into_iter().map(|(b, _)| b).collect(),
        intrinsics: intr,
        extrinsics: ext,
    })
}
