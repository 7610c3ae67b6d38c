//! Dataset ingestion and generation: KITTI formats, depth PNGs, the
//! order-based split, synthetic scenes and the dataset directory layout.

pub mod kitti;
pub mod layout;
pub mod png;
pub mod split;
pub mod synthetic;

pub use kitti::{read_calibration, read_labels, read_point_cloud, write_calibration, write_labels, write_point_cloud, Label};
pub use layout::{read_dataset, write_dataset, Dataset, DatasetMeta, FrameExtras, ManifestRecord};
pub use png::{read_depth_png, read_rgb_png, write_depth_png, write_rgb_png};
pub use split::{apply_split, SplitSpec};
pub use synthetic::{generate_synthetic_scene, ClassPrior, SyntheticFrame, SyntheticSceneSpec};

use crate::adverse::CorruptionTag;
use crate::error::Result;
use crate::frame::{LidarKind, SensorFrame};
use crate::geometry::{CameraIntrinsics, Extrinsics, PointCloud};
use crate::lidar_repr::{build_lidar_image, build_sparse_depth, densify, DepthImage, RangeGeometry};

/// Default neighborhood side for dense depth.
pub const DENSIFY_WINDOW: usize = 9;

/// Builds one lidar representation from a lidar-frame cloud.
pub fn lidar_representation(
    cloud: &PointCloud,
    kind: LidarKind,
    intr: &CameraIntrinsics,
    ext: &Extrinsics,
    geometry: &RangeGeometry,
    window: usize,
) -> Result<DepthImage> {
    match kind {
        LidarKind::Range => Ok(build_lidar_image(cloud, geometry)?.grid),
        LidarKind::Sparse => Ok(build_sparse_depth(cloud, intr, ext)),
        LidarKind::Dense => densify(&build_sparse_depth(cloud, intr, ext), window),
    }
}

impl SyntheticFrame {
    pub fn sensor_frame(&self, kind: LidarKind, geometry: &RangeGeometry, window: usize) -> Result<SensorFrame> {
        let lidar = match kind {
            LidarKind::Range => build_lidar_image(&self.cloud, geometry)?.grid,
            LidarKind::Sparse => self.sparse.clone(),
            LidarKind::Dense => densify(&self.sparse, window)?,
        };
        Ok(SensorFrame {
            rgb: self.rgb.clone(),
            lidar,
            lidar_kind: kind,
            boxes: self.boxes.clone(),
            tag: CorruptionTag::clean(),
        })
    }

    pub fn extras(&self) -> FrameExtras {
        FrameExtras {
            cloud: self.cloud.clone(),
            intrinsics: self.intrinsics,
            extrinsics: self.extrinsics,
        }
    }
}

/// Frames `0..count` of a synthetic scene family as sensor frames.
pub fn synthetic_frames(spec: &SyntheticSceneSpec, count: usize, kind: LidarKind, window: usize) -> Result<Vec<SensorFrame>> {
    let geometry = spec.range_geometry();
    (0..count as u64)
        .map(|i| generate_synthetic_scene(spec, i)?.sensor_frame(kind, &geometry, window))
        .collect()
}
