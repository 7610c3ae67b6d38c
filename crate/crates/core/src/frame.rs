use serde::{Deserialize, Serialize};

use crate::adverse::CorruptionTag;
use crate::detect::BBox;
use crate::lidar_repr::DepthImage;

/// 8-bit interleaved RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        RgbImage { width, height, data }
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Which 2D lidar representation a frame carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LidarKind {
    Range,
    Sparse,
    Dense,
}

impl LidarKind {
    pub const ALL: [LidarKind; 3] = [LidarKind::Range, LidarKind::Sparse, LidarKind::Dense];

    pub fn name(self) -> &'static str {
        match self {
            LidarKind::Range => "range",
            LidarKind::Sparse => "sparse",
            LidarKind::Dense => "dense",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Sparse and dense depth share the camera's pixel grid; the range image
    /// has its own.
    pub fn is_camera_aligned(self) -> bool {
        !matches!(self, LidarKind::Range)
    }
}

/// Paired camera image, lidar representation and annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub rgb: RgbImage,
    pub lidar: DepthImage,
    pub lidar_kind: LidarKind,
    pub boxes: Vec<BBox>,
    pub tag: CorruptionTag,
}
