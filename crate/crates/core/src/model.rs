//! Encoder graph plus detection head, checkpoint I/O and the inference timer.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{decode_and_nms, detection_loss, AnchorGeometry, BBox, ClassSet, DetectionHead, HeadOutput, LossOutput};
use crate::error::{Error, Result};
use crate::frame::SensorFrame;
use crate::fusion::{build_encoder, preprocess_frame, ArchConfig, EncoderGraph, FusionVariant, NetInput, PreparedInput, Preprocessor};
use crate::nn::{gaussian_fill, Param, Parameterized, Scalar, Tensor};

/// Decoding thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub score_threshold: f64,
    pub iou_threshold: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            score_threshold: 0.05,
            iou_threshold: 0.5,
        }
    }
}

pub const HEAD_SIGMA: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct Detector<T: Scalar = f32> {
    pub config: ArchConfig,
    pub classes: ClassSet,
    pub anchors: AnchorGeometry,
    pub preprocessor: Preprocessor,
    pub graph: EncoderGraph<T>,
    pub head: DetectionHead<T>,
}

impl<T: Scalar> Detector<T> {
    /// Builds the network with zero parameters.
    pub fn build(config: ArchConfig, classes: ClassSet, anchors: AnchorGeometry, preprocessor: Preprocessor) -> Result<Self> {
        config.validate()?;
        let graph = build_encoder(config.arch(), &config.encoder_config()?)?;
        let head = DetectionHead::new(graph.out_channels(), classes.len(), anchors);
        Ok(Detector {
            config,
            classes,
            anchors,
            preprocessor,
            graph,
            head,
        })
    }

    /// Builds and randomly initializes. The head uses `N(0, HEAD_SIGMA²)` so
    /// initial logits and offsets stay near zero.
    pub fn new(config: ArchConfig, classes: ClassSet, anchors: AnchorGeometry, preprocessor: Preprocessor, seed: u64) -> Result<Self> {
        let mut d = Self::build(config, classes, anchors, preprocessor)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        d.graph.init_parameters(&mut rng);
        gaussian_fill(&mut d.head.conv.weight.value, HEAD_SIGMA, &mut rng);
        Ok(d)
    }

    pub fn uses_lidar(&self) -> bool {
        self.config.fusion != FusionVariant::None
    }

    pub fn forward(&mut self, input: &NetInput<T>) -> Result<HeadOutput<T>> {
        let feat = self.graph.forward(input)?;
        self.head.forward(feat)
    }

    /// Backpropagates a head-output gradient into parameter gradients.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<()> {
        let g = self.head.backward(grad)?;
        self.graph.backward(g)?;
        Ok(())
    }

    pub fn infer(&self, input: &NetInput<T>) -> Result<HeadOutput<T>> {
        let feat = self.graph.infer(input)?;
        crate::detect::head_forward(&self.head, &feat)
    }

    /// Forward, loss and backward for one batch. `gts` are in network-input
    /// pixel coordinates.
    pub fn train_step(&mut self, input: &NetInput<T>, gts: &[Vec<BBox>]) -> Result<LossOutput<T>> {
        let out = self.forward(input)?;
        let loss = detection_loss(&out, gts, &self.anchors)?;
        self.backward(&loss.grad)?;
        Ok(loss)
    }

    pub fn prepare(&self, frame: &SensorFrame) -> PreparedInput {
        let lidar = self.uses_lidar().then_some((&frame.lidar, frame.lidar_kind));
        preprocess_frame(&frame.rgb, lidar, &self.preprocessor)
    }

    /// Creates a copy in another scalar type with the same parameters.
    pub fn cast<U: Scalar>(&self) -> Detector<U> {
        let mut out = Detector::<U>::build(self.config.clone(), self.classes.clone(), self.anchors, self.preprocessor)
            .expect("configuration was validated when self was built");
        let mut values: Vec<Vec<U>> = Vec::new();
        self.visit_params(&mut |_, p| values.push(p.value.iter().map(|v| U::from_f64_lossy(v.to_f64().unwrap())).collect()));
        let mut it = values.into_iter();
        out.visit_params_mut(&mut |_, p| p.value = it.next().expect("same layout"));
        out
    }
}

impl Detector<f32> {
    /// Full detection for one frame: preprocessing, network, decoding and
    /// NMS. Boxes are in the frame's own pixel coordinates.
    pub fn detect(&self, frame: &SensorFrame, decode: &DecodeParams) -> Result<Vec<BBox>> {
        let prep = self.prepare(frame);
        let out = self.infer(&prep.input)?;
        let (h, w) = (self.preprocessor.target_height as f64, self.preprocessor.target_width as f64);
        let boxes = decode_and_nms(&out, 0, &self.anchors, (w, h), decode.score_threshold, decode.iou_threshold);
        Ok(boxes.into_iter().map(|b| b.scaled(1.0 / prep.scale)).collect())
    }
}

impl<T: Scalar> Parameterized<T> for Detector<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.graph.visit_params(f);
        f("head.weight", &self.head.conv.weight);
        f("head.bias", &self.head.conv.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.graph.visit_params_mut(f);
        f("head.weight", &mut self.head.conv.weight);
        f("head.bias", &mut self.head.conv.bias);
    }
}

const MAGIC: &str = "fusiondet-checkpoint 1";
const END: &str = "end";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ArchConfig,
    classes: ClassSet,
    anchors: AnchorGeometry,
    preprocessor: Preprocessor,
}

/// Text header (one JSON line with the configuration, one line per parameter
/// block: name, shape, offset, length), an `end` line, then the parameters as
/// little-endian f32.
pub fn encode_checkpoint(d: &Detector<f32>) -> Result<Vec<u8>> {
    let header = Header {
        config: d.config.clone(),
        classes: d.classes.clone(),
        anchors: d.anchors,
        preprocessor: d.preprocessor,
    };
    let mut text = format!("{MAGIC}\n{}\n", serde_json::to_string(&header)?);
    let mut payload = Vec::new();
    let mut offset = 0;
    d.visit_params(&mut |name, p| {
        let shape: Vec<String> = p.shape.iter().map(|s| s.to_string()).collect();
        text.push_str(&format!("param {name} {} {offset} {}\n", shape.join("x"), p.len()));
        offset += p.len();
        for v in &p.value {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    });
    text.push_str(END);
    text.push('\n');
    let mut out = text.into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

fn ckpt_err(m: impl Into<String>) -> Error {
    Error::Checkpoint(m.into())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Detector<f32>> {
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| ckpt_err("header is not terminated"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| ckpt_err("header is not UTF-8"))?;
        pos += nl + 1;
        if line == END {
            break;
        }
        lines.push(line);
    }
    if lines.first() != Some(&MAGIC) {
        return Err(ckpt_err("not a checkpoint (bad magic line)"));
    }
    let header: Header = serde_json::from_str(lines.get(1).ok_or_else(|| ckpt_err("missing configuration line"))?)?;
    let mut d = Detector::<f32>::build(header.config, header.classes, header.anchors, header.preprocessor)?;
    let payload = &bytes[pos..];
    let records = &lines[2..];
    let mut index = 0;
    let mut failure: Option<Error> = None;
    d.visit_params_mut(&mut |name, p| {
        if failure.is_some() {
            return;
        }
        let Some(rec) = records.get(index) else {
            failure = Some(ckpt_err(format!("no record for parameter {name}")));
            return;
        };
        index += 1;
        let f: Vec<&str> = rec.split(' ').collect();
        let shape: Vec<String> = p.shape.iter().map(|s| s.to_string()).collect();
        if f.len() != 5 || f[0] != "param" || f[1] != name || f[2] != shape.join("x") {
            failure = Some(ckpt_err(format!("record `{rec}` does not match parameter {name}")));
            return;
        }
        let (Ok(off), Ok(len)) = (f[3].parse::<usize>(), f[4].parse::<usize>()) else {
            failure = Some(ckpt_err(format!("bad offset or length in `{rec}`")));
            return;
        };
        let range = off * 4..(off + len) * 4;
        if len != p.len() || range.end > payload.len() {
            failure = Some(ckpt_err(format!("parameter {name} is truncated")));
            return;
        }
        for (v, chunk) in p.value.iter_mut().zip(payload[range].chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if index != records.len() {
        return Err(ckpt_err("checkpoint has extra parameter records"));
    }
    let total: usize = d.param_count();
    if payload.len() != total * 4 {
        return Err(ckpt_err(format!("payload holds {} bytes, expected {}", payload.len(), total * 4)));
    }
    Ok(d)
}

pub fn save_checkpoint(path: &Path, d: &Detector<f32>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(d)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Detector<f32>> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub repetitions: usize,
    pub median_ms: f64,
    pub p90_ms: f64,
}

/// Wall-clock time of preprocessing, network, decoding and NMS for one
/// frame. `warmup` runs are discarded.
pub fn bench_inference(d: &Detector<f32>, frame: &SensorFrame, repetitions: usize, warmup: usize) -> Result<BenchStats> {
    if repetitions == 0 {
        return Err(Error::InvalidConfig("at least one repetition is needed".into()));
    }
    let decode = DecodeParams::default();
    for _ in 0..warmup {
        d.detect(frame, &decode)?;
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        std::hint::black_box(d.detect(frame, &decode)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let q = |p: f64| times[((times.len() - 1) as f64 * p).round() as usize];
    Ok(BenchStats {
        repetitions,
        median_ms: q(0.5),
        p90_ms: q(0.9),
    })
}
