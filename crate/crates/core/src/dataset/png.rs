//! PNG codecs for RGB frames and 16-bit depth maps (1/256 m units, 0 = no
//! return).

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::frame::RgbImage;
use crate::lidar_repr::{DepthImage, SENTINEL};

pub const DEPTH_SCALE: f32 = 256.0;

/// Stored 16-bit value of a depth in meters.
pub fn depth_code(d: f32) -> u16 {
    if !d.is_finite() {
        0
    } else {
        (d * DEPTH_SCALE).round().clamp(1.0, 65535.0) as u16
    }
}

pub fn depth_from_code(c: u16) -> f32 {
    if c == 0 {
        SENTINEL
    } else {
        c as f32 / DEPTH_SCALE
    }
}

fn encode(img: DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn encode_depth_png(img: &DepthImage) -> Result<Vec<u8>> {
    let codes: Vec<u16> = img.data.iter().map(|&d| depth_code(d)).collect();
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(img.width as u32, img.height as u32, codes)
        .ok_or_else(|| Error::ShapeMismatch("depth buffer size".into()))?;
    encode(DynamicImage::ImageLuma16(buf))
}

pub fn decode_depth_png(bytes: &[u8]) -> Result<DepthImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::InvalidConfig("depth PNG must be 16-bit grayscale".into()));
    };
    let (w, h) = buf.dimensions();
    Ok(DepthImage {
        width: w as usize,
        height: h as usize,
        data: buf.into_raw().into_iter().map(depth_from_code).collect(),
    })
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .ok_or_else(|| Error::ShapeMismatch("rgb buffer size".into()))?;
    encode(DynamicImage::ImageRgb8(buf))
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage {
        width: w as usize,
        height: h as usize,
        data: img.into_raw(),
    })
}

pub fn write_depth_png(path: &Path, img: &DepthImage) -> Result<()> {
    std::fs::write(path, encode_depth_png(img)?).map_err(|e| Error::io(path, e))
}

pub fn read_depth_png(path: &Path) -> Result<DepthImage> {
    decode_depth_png(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_rgb_png(img)?).map_err(|e| Error::io(path, e))
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    decode_rgb_png(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        assert_eq!(depth_code(10.0), 2560);
        assert_eq!(depth_code(SENTINEL), 0);
        assert_eq!(depth_code(0.0001), 1);
        assert_eq!(depth_code(1e6), 65535);
    }

    #[test]
    fn sentinel_image_is_all_zero() {
        let img = DepthImage::empty(5, 3);
        let back = decode_depth_png(&encode_depth_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
        let raw = image::load_from_memory(&encode_depth_png(&img).unwrap()).unwrap().to_luma16();
        assert!(raw.into_raw().iter().all(|&c| c == 0));
    }

    #[test]
    fn rgb_roundtrip() {
        let mut img = RgbImage::filled(4, 2, [1, 2, 3]);
        img.put(1, 3, [200, 100, 50]);
        assert_eq!(decode_rgb_png(&encode_rgb_png(&img).unwrap()).unwrap(), img);
    }
}
