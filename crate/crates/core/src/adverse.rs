//! Adverse-condition dataset synthesis: white-patch occlusion of camera and
//! lidar, full sensor failure, and the clean / partial / failed mix.
//!
//! Every random draw for frame `i` comes from a ChaCha8 generator keyed by
//! `(seed, i)` (seed as key, frame index as stream id), so a frame's
//! corruption does not depend on which other frames are processed or in what
//! order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{RgbImage, SensorFrame};
use crate::lidar_repr::{DepthImage, SENTINEL};
use rand::SeedableRng;

/// Camera pixels inside a patch or of a failed camera.
pub const WHITE: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub seed: u64,
    /// Relative weights of (clean, partial, failed).
    pub weights: [f64; 3],
    /// Inclusive range of patches per modality.
    pub patch_count_range: (usize, usize),
    /// Per-patch area as a fraction of the frame.
    pub patch_area_range: (f64, f64),
    /// Probability that a failed frame loses the camera rather than the lidar.
    pub failure_split: f64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            seed: 0,
            weights: [1.0, 2.0, 4.0],
            patch_count_range: (1, 5),
            patch_area_range: (0.01, 0.15),
            failure_split: 0.5,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("corruption spec: {m}")));
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return bad("weights must be non-negative with a positive sum");
        }
        let (lo, hi) = self.patch_count_range;
        if lo > hi {
            return bad("patch count range is empty");
        }
        let (alo, ahi) = self.patch_area_range;
        if !(alo > 0.0 && alo <= ahi && ahi <= 1.0) {
            return bad("patch area range must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.failure_split) {
            return bad("failure split must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Clean,
    Partial,
    CameraFailed,
    LidarFailed,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Clean => "clean",
            Category::Partial => "partial",
            Category::CameraFailed => "camera_failed",
            Category::LidarFailed => "lidar_failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Camera,
    Lidar,
}

/// Axis-aligned pixel rectangle, half-open: columns `x..x+w`, rows `y..y+h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        col >= self.x && col < self.x + self.w && row >= self.y && row < self.y + self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub modality: Modality,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionTag {
    pub category: Category,
    pub patches: Vec<Patch>,
}

impl CorruptionTag {
    pub fn clean() -> Self {
        CorruptionTag {
            category: Category::Clean,
            patches: Vec::new(),
        }
    }
}

impl Default for CorruptionTag {
    fn default() -> Self {
        Self::clean()
    }
}

/// Counter-based generator for frame `index`.
pub fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn sample_category<R: Rng + ?Sized>(spec: &CorruptionSpec, rng: &mut R) -> Category {
    let [clean, partial, failed] = spec.weights;
    let u = rng.gen::<f64>() * (clean + partial + failed);
    // always draw the failure coin so the stream position is category-independent
    let camera = rng.gen::<f64>() < spec.failure_split;
    if u < clean {
        Category::Clean
    } else if u < clean + partial {
        Category::Partial
    } else if camera {
        Category::CameraFailed
    } else {
        Category::LidarFailed
    }
}

/// Category of frame `index` under `spec`.
pub fn category_for(spec: &CorruptionSpec, index: u64) -> Category {
    sample_category(spec, &mut frame_rng(spec.seed, index))
}

fn draw_rects<R: Rng + ?Sized>(spec: &CorruptionSpec, width: usize, height: usize, rng: &mut R) -> Vec<Rect> {
    let (lo, hi) = spec.patch_count_range;
    let n = rng.gen_range(lo..=hi);
    let (alo, ahi) = spec.patch_area_range;
    (0..n)
        .map(|_| {
            let area = if alo == ahi { alo } else { rng.gen_range(alo..=ahi) };
            let aspect = rng.gen_range(-1.0f64..=1.0).exp2();
            let (mut sx, mut sy) = ((area * aspect).sqrt(), (area / aspect).sqrt());
            if sx > 1.0 {
                sx = 1.0;
                sy = area;
            } else if sy > 1.0 {
                sy = 1.0;
                sx = area;
            }
            let w = ((sx * width as f64).round() as usize).clamp(1, width);
            let h = ((sy * height as f64).round() as usize).clamp(1, height);
            let x = rng.gen_range(0..=width - w);
            let y = rng.gen_range(0..=height - h);
            Rect { x, y, w, h }
        })
        .collect()
}

fn whiten(rgb: &mut RgbImage, r: &Rect) {
    for row in r.y..r.y + r.h {
        for col in r.x..r.x + r.w {
            rgb.put(row, col, WHITE);
        }
    }
}

fn blank(depth: &mut DepthImage, r: &Rect) {
    for row in r.y..r.y + r.h {
        depth.data[row * depth.width + r.x..row * depth.width + r.x + r.w].fill(SENTINEL);
    }
}

/// Draws and applies camera patches; returns the rectangles.
pub fn patch_camera<R: Rng + ?Sized>(rgb: &mut RgbImage, spec: &CorruptionSpec, rng: &mut R) -> Vec<Patch> {
    let rects = draw_rects(spec, rgb.width, rgb.height, rng);
    rects.iter().for_each(|r| whiten(rgb, r));
    rects.into_iter().map(|rect| Patch { modality: Modality::Camera, rect }).collect()
}

/// Draws and applies lidar patches in the depth grid's own dimensions.
pub fn patch_depth<R: Rng + ?Sized>(depth: &mut DepthImage, spec: &CorruptionSpec, rng: &mut R) -> Vec<Patch> {
    let rects = draw_rects(spec, depth.width, depth.height, rng);
    rects.iter().for_each(|r| blank(depth, r));
    rects.into_iter().map(|rect| Patch { modality: Modality::Lidar, rect }).collect()
}

/// White patches in the camera image and no-return patches in the depth
/// image, drawn independently per modality.
pub fn apply_white_patches<R: Rng + ?Sized>(
    rgb: &RgbImage,
    depth: &DepthImage,
    spec: &CorruptionSpec,
    rng: &mut R,
) -> Result<(RgbImage, DepthImage, Vec<Patch>)> {
    if rgb.dims() != depth.dims() {
        return Err(Error::DimensionMismatch {
            camera: rgb.dims(),
            depth: depth.dims(),
        });
    }
    let mut rgb = rgb.clone();
    let mut depth = depth.clone();
    let mut patches = patch_camera(&mut rgb, spec, rng);
    patches.extend(patch_depth(&mut depth, spec, rng));
    Ok((rgb, depth, patches))
}

/// Replaces one stream with its failure value: white camera or all-sentinel
/// lidar. Annotations are untouched.
pub fn fail_sensor(frame: &SensorFrame, which: Modality) -> SensorFrame {
    let mut out = frame.clone();
    match which {
        Modality::Camera => out.rgb.data.fill(255),
        Modality::Lidar => out.lidar.data.fill(SENTINEL),
    }
    out
}

/// Corrupts one frame as frame number `index` of a dataset built with `spec`.
pub fn corrupt_frame(frame: &SensorFrame, spec: &CorruptionSpec, index: u64) -> SensorFrame {
    let mut rng = frame_rng(spec.seed, index);
    let category = sample_category(spec, &mut rng);
    let mut out = match category {
        Category::Clean => frame.clone(),
        Category::Partial => {
            let mut f = frame.clone();
            let mut patches = patch_camera(&mut f.rgb, spec, &mut rng);
            patches.extend(patch_depth(&mut f.lidar, spec, &mut rng));
            f.tag.patches = patches;
            f
        }
        Category::CameraFailed => fail_sensor(frame, Modality::Camera),
        Category::LidarFailed => fail_sensor(frame, Modality::Lidar),
    };
    out.tag.category = category;
    if category != Category::Partial {
        out.tag.patches.clear();
    }
    out
}

pub fn synthesize_adverse_dataset(frames: &[SensorFrame], spec: &CorruptionSpec) -> Result<Vec<SensorFrame>> {
    spec.validate()?;
    Ok(frames
        .iter()
        .enumerate()
        .map(|(i, f)| corrupt_frame(f, spec, i as u64))
        .collect())
}
