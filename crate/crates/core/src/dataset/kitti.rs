//! KITTI object-benchmark file formats: velodyne `.bin`, `calib/*.txt`,
//! `label_2/*.txt`.

use std::collections::HashMap;

use crate::detect::{BBox, ClassSet};
use crate::error::{Error, Result};
use crate::geometry::{det3, CameraIntrinsics, Extrinsics, Point3, PointCloud};

const RECORD: usize = 16;

/// Parses packed little-endian `(x, y, z, intensity)` f32 quadruples.
pub fn read_point_cloud(blob: &[u8]) -> Result<PointCloud> {
    if blob.len() % RECORD != 0 {
        return Err(Error::TruncatedRecord { len: blob.len() });
    }
    let mut cloud = PointCloud::new();
    for rec in blob.chunks_exact(RECORD) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap());
        cloud.push(Point3::new(f(0) as f64, f(1) as f64, f(2) as f64), f(3));
    }
    Ok(cloud)
}

/// Inverse of [`read_point_cloud`]. Coordinates are narrowed to f32.
pub fn write_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD);
    for (p, &i) in cloud.points.iter().zip(&cloud.intensity) {
        for v in [p.x as f32, p.y as f32, p.z as f32, i] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

type Mat3 = [[f64; 3]; 3];

/// KITTI camera axes (x right, y down) to ours (x left, y up).
const FLIP: Mat3 = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn matvec(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| (0..3).map(|k| a[i][k] * v[k]).sum())
}

fn inverse_transpose(m: &Mat3) -> Option<Mat3> {
    let d = det3(m);
    if d.abs() < 1e-12 {
        return None;
    }
    // cofactor matrix divided by det is the inverse transpose
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    Some([
        [c(1, 2, 1, 2) / d, -c(1, 2, 0, 2) / d, c(1, 2, 0, 1) / d],
        [-c(0, 2, 1, 2) / d, c(0, 2, 0, 2) / d, -c(0, 2, 0, 1) / d],
        [c(0, 1, 1, 2) / d, -c(0, 1, 0, 2) / d, c(0, 1, 0, 1) / d],
    ])
}

/// Nearest rotation by polar iteration `R ← (R + R⁻ᵀ) / 2`. Calibration files
/// store six-digit decimals, so their rotations are orthonormal only to ~1e-6.
pub(crate) fn orthonormalize(mut r: Mat3) -> Option<Mat3> {
    for _ in 0..30 {
        let it = inverse_transpose(&r)?;
        let next: Mat3 = std::array::from_fn(|i| std::array::from_fn(|j| 0.5 * (r[i][j] + it[i][j])));
        let delta = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (next[i][j] - r[i][j]).abs())
            .fold(0.0, f64::max);
        r = next;
        if delta < 1e-15 {
            break;
        }
    }
    Some(r)
}

fn parse_keys(text: &str) -> Result<HashMap<String, Vec<f64>>> {
    let mut map = HashMap::new();
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim().to_string();
        let values = rest
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::MalformedMatrix {
                    key: key.clone(),
                    reason: format!("`{t}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        map.insert(key, values);
    }
    Ok(map)
}

fn take<'a>(map: &'a HashMap<String, Vec<f64>>, key: &str, len: usize) -> Result<&'a [f64]> {
    let v = map.get(key).ok_or_else(|| Error::MissingKey(key.to_string()))?;
    if v.len() != len {
        return Err(Error::MalformedMatrix {
            key: key.to_string(),
            reason: format!("expected {len} values, found {}", v.len()),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::MalformedMatrix {
            key: key.to_string(),
            reason: "non-finite entry".into(),
        });
    }
    Ok(v)
}

fn rows3(v: &[f64], stride: usize) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| v[i * stride + j]))
}

/// Reads a KITTI calibration for the left color camera (`P2`).
pub fn read_calibration(text: &str, width: usize, height: usize) -> Result<(CameraIntrinsics, Extrinsics)> {
    read_calibration_for(text, "P2", width, height)
}

/// Maps `P`, `R0_rect` and `Tr_velo_to_cam` onto intrinsics plus a rigid
/// lidar-to-camera transform in this crate's camera axes. An optional `D` key
/// carries five distortion coefficients; rectified KITTI data has none.
pub fn read_calibration_for(text: &str, camera_key: &str, width: usize, height: usize) -> Result<(CameraIntrinsics, Extrinsics)> {
    let map = parse_keys(text)?;
    let p = take(&map, camera_key, 12)?;
    let r0 = rows3(take(&map, "R0_rect", 9)?, 3);
    let tr = take(&map, "Tr_velo_to_cam", 12)?;
    let kappa = match map.get("D") {
        Some(_) => take(&map, "D", 5)?.try_into().unwrap(),
        None => [0.0; 5],
    };
    let (fx, skew, ox) = (p[0], p[1], p[2]);
    let (fy, oy) = (p[5], p[6]);
    if p[4] != 0.0 || p[8] != 0.0 || p[9] != 0.0 || p[10] != 1.0 {
        return Err(Error::MalformedMatrix {
            key: camera_key.to_string(),
            reason: "left 3x3 block is not upper triangular with unit corner".into(),
        });
    }
    let intr = CameraIntrinsics::new(fx, fy, ox, oy, skew, kappa, width, height)?;

    // P = K [I | b]: recover the rectified-camera offset b
    let bz = p[11];
    let by = (p[7] - oy * bz) / fy;
    let bx = (p[3] - ox * bz - skew * by) / fx;
    let rv = rows3(tr, 4);
    let tv = [tr[3], tr[7], tr[11]];

    let r = matmul(&FLIP, &matmul(&r0, &rv));
    let t0 = matvec(&r0, &tv);
    let t = matvec(&FLIP, &[t0[0] + bx, t0[1] + by, t0[2] + bz]);
    let r = orthonormalize(r).ok_or_else(|| Error::MalformedMatrix {
        key: "Tr_velo_to_cam".into(),
        reason: "singular rotation".into(),
    })?;
    let ext = Extrinsics::new(r, t)?;
    Ok((intr, ext))
}

fn fmt_row(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.12e}")).collect::<Vec<_>>().join(" ")
}

/// Writes a calibration that [`read_calibration`] maps back to the inputs:
/// `P2 = K [I | 0]`, identity rectification, and the transform in KITTI axes.
pub fn write_calibration(intr: &CameraIntrinsics, ext: &Extrinsics) -> String {
    let p2 = [intr.fx, intr.skew, intr.ox, 0.0, 0.0, intr.fy, intr.oy, 0.0, 0.0, 0.0, 1.0, 0.0];
    let r = matmul(&FLIP, &ext.rotation);
    let t = matvec(&FLIP, &ext.translation);
    let tr = [r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2]];
    let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let mut s = String::new();
    s.push_str(&format!("P2: {}\n", fmt_row(&p2)));
    s.push_str(&format!("R0_rect: {}\n", fmt_row(&id)));
    s.push_str(&format!("Tr_velo_to_cam: {}\n", fmt_row(&tr)));
    if intr.kappa.iter().any(|&k| k != 0.0) {
        s.push_str(&format!("D: {}\n", fmt_row(&intr.kappa)));
    }
    s
}

/// One parsed label line.
#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Object(BBox),
    /// A type outside the class set (`DontCare`, `Misc`, ...).
    Ignore { kind: String, bbox: [f64; 4] },
}

impl Label {
    pub fn object(&self) -> Option<&BBox> {
        match self {
            Label::Object(b) => Some(b),
            Label::Ignore { .. } => None,
        }
    }
}

/// Parses KITTI label lines (15 fields, or 16 with a score). Only the type
/// and 2D box are kept.
pub fn read_labels(text: &str, classes: &ClassSet) -> Result<Vec<Label>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 15 && fields.len() != 16 {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: format!("expected 15 or 16 fields, found {}", fields.len()),
            });
        }
        let mut nums = [0.0f64; 4];
        for (k, f) in fields[4..8].iter().enumerate() {
            nums[k] = f.parse().map_err(|_| Error::MalformedLine {
                line: line_no,
                reason: format!("box coordinate `{f}` is not a number"),
            })?;
        }
        for f in &fields[1..] {
            if f.parse::<f64>().is_err() {
                return Err(Error::MalformedLine {
                    line: line_no,
                    reason: format!("field `{f}` is not a number"),
                });
            }
        }
        let [x1, y1, x2, y2] = nums;
        match classes.id(fields[0]) {
            Some(id) => {
                let mut b = BBox::new(x1, y1, x2, y2, id);
                if fields.len() == 16 {
                    b.score = fields[15].parse().unwrap();
                }
                if !b.is_valid() {
                    return Err(Error::MalformedLine {
                        line: line_no,
                        reason: "box has non-positive extent".into(),
                    });
                }
                out.push(Label::Object(b));
            }
            None => out.push(Label::Ignore {
                kind: fields[0].to_string(),
                bbox: nums,
            }),
        }
    }
    Ok(out)
}

fn kitti_type(name: &str) -> String {
    let mut c = name.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Writes boxes as label lines with placeholder 3D fields. Predictions
/// (`with_score`) get the 16th score column.
pub fn write_labels(boxes: &[BBox], classes: &ClassSet, with_score: bool) -> String {
    let mut s = String::new();
    for b in boxes {
        let name = kitti_type(classes.name(b.class_id).unwrap_or("DontCare"));
        s.push_str(&format!(
            "{name} 0.00 0 0.00 {:.2} {:.2} {:.2} {:.2} -1 -1 -1 -1000 -1000 -1000 -10",
            b.x1, b.y1, b.x2, b.y2
        ));
        if with_score {
            s.push_str(&format!(" {:.6}", b.score));
        }
        s.push('\n');
    }
    s
}
