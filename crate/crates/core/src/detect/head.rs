use serde::{Deserialize, Serialize};

use super::{nms, BBox};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvSpec, Scalar, Tensor};

/// Grid stride and the single base anchor every cell regresses from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorGeometry {
    pub stride: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for AnchorGeometry {
    fn default() -> Self {
        AnchorGeometry {
            stride: 16.0,
            width: 32.0,
            height: 32.0,
        }
    }
}

impl AnchorGeometry {
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        ((col as f64 + 0.5) * self.stride, (row as f64 + 0.5) * self.stride)
    }

    /// `(dx, dy, log w, log h)` of `b` relative to the anchor at a cell.
    pub fn encode(&self, b: &BBox, row: usize, col: usize) -> [f64; 4] {
        let (cx, cy) = self.cell_center(row, col);
        [
            ((b.x1 + b.x2) / 2.0 - cx) / self.width,
            ((b.y1 + b.y2) / 2.0 - cy) / self.height,
            (b.width() / self.width).ln(),
            (b.height() / self.height).ln(),
        ]
    }

    pub fn decode(&self, t: [f64; 4], row: usize, col: usize) -> (f64, f64, f64, f64) {
        let (cx, cy) = self.cell_center(row, col);
        let x = cx + t[0] * self.width;
        let y = cy + t[1] * self.height;
        // clamp keeps exp finite for untrained heads
        let w = self.width * t[2].clamp(-10.0, 10.0).exp();
        let h = self.height * t[3].clamp(-10.0, 10.0).exp();
        (x - w / 2.0, y - h / 2.0, x + w / 2.0, y + h / 2.0)
    }
}

/// Raw head activations: channel 0 objectness logit, channels `1..=K` class
/// logits, last four channels box offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput<T> {
    pub tensor: Tensor<T>,
    pub num_classes: usize,
}

impl<T: Scalar> HeadOutput<T> {
    pub fn new(tensor: Tensor<T>, num_classes: usize) -> Result<Self> {
        if tensor.channels() != 1 + num_classes + 4 {
            return Err(Error::ShapeMismatch(format!(
                "head output has {} channels, expected {}",
                tensor.channels(),
                num_classes + 5
            )));
        }
        Ok(HeadOutput { tensor, num_classes })
    }

    fn value(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.tensor.at(b, c, y, x).to_f64().unwrap_or(f64::NAN)
    }

    pub fn objectness(&self, b: usize, y: usize, x: usize) -> f64 {
        self.value(b, 0, y, x)
    }

    pub fn class_logits(&self, b: usize, y: usize, x: usize) -> Vec<f64> {
        (0..self.num_classes).map(|k| self.value(b, 1 + k, y, x)).collect()
    }

    pub fn offsets(&self, b: usize, y: usize, x: usize) -> [f64; 4] {
        let base = 1 + self.num_classes;
        std::array::from_fn(|i| self.value(b, base + i, y, x))
    }
}

/// One 1×1 convolution from the fused feature map to `1 + K + 4` channels.
#[derive(Debug, Clone)]
pub struct DetectionHead<T> {
    pub conv: Conv2d<T>,
    pub num_classes: usize,
    pub anchors: AnchorGeometry,
}

impl<T: Scalar> DetectionHead<T> {
    pub fn new(in_channels: usize, num_classes: usize, anchors: AnchorGeometry) -> Self {
        DetectionHead {
            conv: Conv2d::new(ConvSpec::new(in_channels, 1 + num_classes + 4, 1, 1, 0)),
            num_classes,
            anchors,
        }
    }

    pub fn forward(&mut self, feat: Tensor<T>) -> Result<HeadOutput<T>> {
        HeadOutput::new(self.conv.forward(feat)?, self.num_classes)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        self.conv.backward(grad)
    }
}

/// Uncached head evaluation.
pub fn head_forward<T: Scalar>(head: &DetectionHead<T>, feat: &Tensor<T>) -> Result<HeadOutput<T>> {
    HeadOutput::new(head.conv.infer(feat)?, head.num_classes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub total: f64,
    pub objectness: f64,
    pub class: f64,
    pub boxes: f64,
    /// Gradient of `total` with respect to the head output.
    pub grad: Tensor<T>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn bce_with_logit(x: f64, target: f64) -> f64 {
    x.max(0.0) - x * target + (-x.abs()).exp().ln_1p()
}

fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Ground truth assigned to a cell: the smallest box containing its center.
pub(crate) fn assign_cell<'a>(gts: &'a [BBox], anchors: &AnchorGeometry, row: usize, col: usize) -> Option<&'a BBox> {
    let (cx, cy) = anchors.cell_center(row, col);
    gts.iter()
        .filter(|g| g.contains_point(cx, cy))
        .fold(None, |best: Option<&BBox>, g| match best {
            Some(b) if b.area() <= g.area() => Some(b),
            _ => Some(g),
        })
}

/// Per frame: objectness BCE summed over all cells, class cross-entropy and
/// box smooth-L1 summed over positive cells, each divided by the positive
/// count (at least 1). The batch loss is the mean
/// over frames.
pub fn detection_loss<T: Scalar>(pred: &HeadOutput<T>, gts: &[Vec<BBox>], anchors: &AnchorGeometry) -> Result<LossOutput<T>> {
    let [n, _, h, w] = pred.tensor.shape();
    if gts.len() != n {
        return Err(Error::ShapeMismatch(format!("{} annotation lists for a batch of {n}", gts.len())));
    }
    let k = pred.num_classes;
    let mut grad = vec![0.0f64; pred.tensor.data().len()];
    let (mut obj_sum, mut cls_sum, mut box_sum) = (0.0, 0.0, 0.0);
    let inv_n = 1.0 / n as f64;
    for (b, frame_gts) in gts.iter().enumerate() {
        let positives: Vec<(usize, usize, &BBox)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .filter_map(|(y, x)| assign_cell(frame_gts, anchors, y, x).map(|g| (y, x, g)))
            .collect();
        let norm = inv_n / positives.len().max(1) as f64;
        let mut target = vec![0.0; h * w];
        for &(y, x, _) in &positives {
            target[y * w + x] = 1.0;
        }
        for y in 0..h {
            for x in 0..w {
                let logit = pred.objectness(b, y, x);
                let t = target[y * w + x];
                obj_sum += bce_with_logit(logit, t) * norm;
                grad[pred.tensor.index(b, 0, y, x)] = (sigmoid(logit) - t) * norm;
            }
        }
        if positives.is_empty() {
            continue;
        }
        for &(y, x, g) in &positives {
            let p = softmax(&pred.class_logits(b, y, x));
            cls_sum += -p[g.class_id].max(1e-300).ln() * norm;
            for (c, pc) in p.iter().enumerate() {
                let t = if c == g.class_id { 1.0 } else { 0.0 };
                grad[pred.tensor.index(b, 1 + c, y, x)] = (pc - t) * norm;
            }
            let want = anchors.encode(g, y, x);
            let have = pred.offsets(b, y, x);
            for i in 0..4 {
                let (l, d) = smooth_l1(have[i] - want[i]);
                box_sum += l * norm;
                grad[pred.tensor.index(b, 1 + k + i, y, x)] = d * norm;
            }
        }
    }
    let grad = Tensor::new(
        pred.tensor.shape(),
        grad.into_iter().map(T::from_f64_lossy).collect(),
    )?;
    Ok(LossOutput {
        total: obj_sum + cls_sum + box_sum,
        objectness: obj_sum,
        class: cls_sum,
        boxes: box_sum,
        grad,
    })
}

/// Decodes batch item `item` into scored boxes clipped to the image, drops
/// those under `score_threshold` and applies per-class NMS.
pub fn decode_and_nms<T: Scalar>(
    pred: &HeadOutput<T>,
    item: usize,
    anchors: &AnchorGeometry,
    image_size: (f64, f64),
    score_threshold: f64,
    iou_threshold: f64,
) -> Vec<BBox> {
    let [_, _, h, w] = pred.tensor.shape();
    let (img_w, img_h) = image_size;
    let mut boxes = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = softmax(&pred.class_logits(item, y, x));
            let (class_id, pc) = p
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best });
            let score = sigmoid(pred.objectness(item, y, x)) * pc;
            if !(score >= score_threshold) {
                continue;
            }
            let (x1, y1, x2, y2) = anchors.decode(pred.offsets(item, y, x), y, x);
            let b = BBox {
                x1: x1.clamp(0.0, img_w),
                y1: y1.clamp(0.0, img_h),
                x2: x2.clamp(0.0, img_w),
                y2: y2.clamp(0.0, img_h),
                class_id,
                score,
            };
            if b.is_valid() {
                boxes.push(b);
            }
        }
    }
    nms(boxes, iou_threshold)
}
