use serde::{Deserialize, Serialize};

use super::{iou, BBox, ClassSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub num_gt: usize,
    pub num_det: usize,
    /// Set when the class has no ground truth and `ap` was defined as 0.
    pub no_ground_truth: bool,
}

/// 11-point interpolated AP of one class over a single image.
pub fn average_precision(dets: &[BBox], gts: &[BBox], iou_threshold: f64, class: usize) -> ApResult {
    average_precision_frames(&[(dets.to_vec(), gts.to_vec())], iou_threshold, class)
}

/// 11-point interpolated AP of one class over `(detections, ground truth)`
/// pairs. Detections are ranked globally; matching stays within a frame.
pub fn average_precision_frames(frames: &[(Vec<BBox>, Vec<BBox>)], iou_threshold: f64, class: usize) -> ApResult {
    let mut ranked: Vec<(usize, &BBox)> = frames
        .iter()
        .enumerate()
        .flat_map(|(f, (d, _))| d.iter().filter(|b| b.class_id == class).map(move |b| (f, b)))
        .collect();
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
    let gts: Vec<Vec<&BBox>> = frames
        .iter()
        .map(|(_, g)| g.iter().filter(|b| b.class_id == class).collect())
        .collect();
    let num_gt: usize = gts.iter().map(Vec::len).sum();
    let num_det = ranked.len();
    if num_gt == 0 {
        return ApResult {
            ap: 0.0,
            num_gt,
            num_det,
            no_ground_truth: true,
        };
    }

    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(num_det);
    for (k, (f, det)) in ranked.iter().enumerate() {
        let best = gts[*f]
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*f][*j])
            .map(|(j, g)| (j, iou(det, g)))
            .filter(|&(_, o)| o >= iou_threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, _)) = best {
            used[*f][j] = true;
            tp += 1;
        }
        curve.push((tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64));
    }

    let ap = (0..=10)
        .map(|i| {
            let t = i as f64 / 10.0;
            curve
                .iter()
                .filter(|(r, _)| *r >= t - 1e-12)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0;
    ApResult {
        ap,
        num_gt,
        num_det,
        no_ground_truth: false,
    }
}

/// Arithmetic mean; 0 for an empty list.
pub fn mean_ap(per_class: &[f64]) -> f64 {
    if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub classes: Vec<String>,
    pub per_class: Vec<ApResult>,
    pub map: f64,
    pub iou_threshold: f64,
}

impl MapReport {
    pub fn ap(&self, class: &str) -> Option<f64> {
        self.classes.iter().position(|c| c == class).map(|i| self.per_class[i].ap)
    }

    /// Header and one data row: class columns followed by `mAP`.
    pub fn to_csv(&self, label: &str) -> String {
        let mut s = String::from("config");
        for c in &self.classes {
            s.push(',');
            s.push_str(c);
        }
        s.push_str(",mAP\n");
        s.push_str(label);
        for r in &self.per_class {
            s.push_str(&format!(",{:.3}", r.ap));
        }
        s.push_str(&format!(",{:.3}\n", self.map));
        s
    }
}

pub fn evaluate_map(frames: &[(Vec<BBox>, Vec<BBox>)], classes: &ClassSet, iou_threshold: f64) -> MapReport {
    let per_class: Vec<ApResult> = (0..classes.len())
        .map(|c| average_precision_frames(frames, iou_threshold, c))
        .collect();
    let aps: Vec<f64> = per_class.iter().map(|r| r.ap).collect();
    MapReport {
        classes: classes.names().to_vec(),
        map: mean_ap(&aps),
        per_class,
        iou_threshold,
    }
}
