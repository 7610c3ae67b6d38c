//! On-disk dataset directory:
//!
//! ```text
//! dataset.json          DatasetMeta
//! manifest.jsonl        one ManifestRecord per frame
//! image_2/NNNNNN.png    camera image (after corruption)
//! lidar/NNNNNN.png      lidar representation, 16-bit depth PNG
//! label_2/NNNNNN.txt    KITTI label lines
//! velodyne/NNNNNN.bin   clean point cloud (optional)
//! calib/NNNNNN.txt      KITTI calibration (optional)
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::kitti::{read_labels, write_calibration, write_labels, write_point_cloud};
use super::png::{read_depth_png, read_rgb_png, write_depth_png, write_rgb_png};
use super::synthetic::SyntheticSceneSpec;
use crate::adverse::{Category, CorruptionSpec, CorruptionTag, Patch};
use crate::detect::ClassSet;
use crate::error::{Error, Result};
use crate::frame::{LidarKind, SensorFrame};
use crate::geometry::{CameraIntrinsics, Extrinsics, PointCloud};
use crate::lidar_repr::RangeGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub frames: usize,
    pub lidar_kind: LidarKind,
    pub classes: Vec<String>,
    pub densify_window: usize,
    pub range_geometry: RangeGeometry,
    pub scene: Option<SyntheticSceneSpec>,
    pub corruption: Option<CorruptionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub id: String,
    pub category: Category,
    pub patches: Vec<Patch>,
    /// Corruption seed, when the frame went through corruption.
    pub seed: Option<u64>,
}

/// Sensor data that only some datasets carry.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameExtras {
    pub cloud: PointCloud,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: Extrinsics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub frames: Vec<SensorFrame>,
}

impl Dataset {
    pub fn classes(&self) -> Result<ClassSet> {
        ClassSet::new(self.meta.classes.clone())
    }
}

pub fn frame_id(index: usize) -> String {
    format!("{index:06}")
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, bytes).map_err(|e| Error::io(p, e))
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::io(p, e))
}

pub fn write_dataset(dir: &Path, meta: &DatasetMeta, frames: &[SensorFrame], extras: Option<&[FrameExtras]>) -> Result<()> {
    if meta.frames != frames.len() || extras.is_some_and(|x| x.len() != frames.len()) {
        return Err(Error::InvalidConfig("dataset metadata and frame count disagree".into()));
    }
    let classes = ClassSet::new(meta.classes.clone())?;
    for sub in ["image_2", "lidar", "label_2"] {
        mkdir(&dir.join(sub))?;
    }
    if extras.is_some() {
        mkdir(&dir.join("velodyne"))?;
        mkdir(&dir.join("calib"))?;
    }
    write(&dir.join("dataset.json"), serde_json::to_string_pretty(meta)? + "\n")?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut manifest = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let seed = meta.corruption.as_ref().map(|c| c.seed);
    for (i, f) in frames.iter().enumerate() {
        let id = frame_id(i);
        write_rgb_png(&dir.join("image_2").join(format!("{id}.png")), &f.rgb)?;
        write_depth_png(&dir.join("lidar").join(format!("{id}.png")), &f.lidar)?;
        write(&dir.join("label_2").join(format!("{id}.txt")), write_labels(&f.boxes, &classes, false))?;
        if let Some(x) = extras {
            write(&dir.join("velodyne").join(format!("{id}.bin")), write_point_cloud(&x[i].cloud))?;
            write(
                &dir.join("calib").join(format!("{id}.txt")),
                write_calibration(&x[i].intrinsics, &x[i].extrinsics),
            )?;
        }
        let rec = ManifestRecord {
            index: i,
            id,
            category: f.tag.category,
            patches: f.tag.patches.clone(),
            seed,
        };
        writeln!(manifest, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&manifest_path, e))?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedLine {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = serde_json::from_str(&read_text(&dir.join("dataset.json"))?)?;
    let classes = ClassSet::new(meta.classes.clone())?;
    let manifest = read_manifest(&dir.join("manifest.jsonl"))?;
    if manifest.len() != meta.frames {
        return Err(Error::InvalidConfig(format!(
            "manifest lists {} frames, dataset.json {}",
            manifest.len(),
            meta.frames
        )));
    }
    let mut frames = Vec::with_capacity(meta.frames);
    for rec in &manifest {
        let path = |sub: &str, ext: &str| -> PathBuf { dir.join(sub).join(format!("{}.{ext}", rec.id)) };
        let labels = read_labels(&read_text(&path("label_2", "txt"))?, &classes)?;
        frames.push(SensorFrame {
            rgb: read_rgb_png(&path("image_2", "png"))?,
            lidar: read_depth_png(&path("lidar", "png"))?,
            lidar_kind: meta.lidar_kind,
            boxes: labels.iter().filter_map(|l| l.object().copied()).collect(),
            tag: CorruptionTag {
                category: rec.category,
                patches: rec.patches.clone(),
            },
        });
    }
    Ok(Dataset { meta, frames })
}
