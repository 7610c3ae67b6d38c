//! Mini-batch SGD training loop with a line-delimited JSON log.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{detection_loss, evaluate_map, BBox, MapReport};
use crate::error::{Error, Result};
use crate::frame::SensorFrame;
use crate::fusion::NetInput;
use crate::model::{DecodeParams, Detector};
use crate::nn::{clip_grad_norm, grad_norm, LrSchedule, Parameterized, Sgd};

/// Stop when the validation loss has not improved for `patience`
/// consecutive checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub every: usize,
    pub patience: usize,
}

/// Default gradient-norm bound. Healthy runs stay mostly below it; it only
/// catches the early spikes that random initialization can produce.
pub const DEFAULT_CLIP_NORM: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub log_every: usize,
    pub early_stop: Option<EarlyStop>,
    /// Upper bound on the global gradient norm; larger gradients are rescaled.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 4,
            momentum: 0.9,
            schedule: LrSchedule::default(),
            seed: 0,
            log_every: 10,
            early_stop: None,
            clip_norm: Some(DEFAULT_CLIP_NORM),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.log_every == 0 || self.schedule.step == 0 {
            return Err(Error::InvalidConfig("batch size, log interval and lr step must be positive".into()));
        }
        if !(self.schedule.base > 0.0 && self.schedule.base.is_finite()) {
            return Err(Error::InvalidConfig("base learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidConfig("gradient clip norm must be positive".into()));
        }
        if let Some(e) = self.early_stop {
            if e.every == 0 || e.patience == 0 {
                return Err(Error::InvalidConfig("early-stop interval and patience must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub loss: f64,
    pub objectness: f64,
    pub class: f64,
    pub boxes: f64,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub final_loss: f64,
    pub stopped_early: bool,
}

/// A preprocessed frame with ground truth in network coordinates.
struct Sample {
    input: NetInput<f32>,
    gts: Vec<BBox>,
}

fn prepare(d: &Detector, frames: &[SensorFrame]) -> Vec<Sample> {
    frames
        .iter()
        .map(|f| {
            let p = d.prepare(f);
            Sample {
                gts: f.boxes.iter().map(|b| b.scaled(p.scale)).collect(),
                input: p.input,
            }
        })
        .collect()
}

fn batch(samples: &[Sample], idx: &[usize]) -> Result<(NetInput<f32>, Vec<Vec<BBox>>)> {
    let inputs: Vec<&NetInput<f32>> = idx.iter().map(|&i| &samples[i].input).collect();
    Ok((NetInput::stack(&inputs)?, idx.iter().map(|&i| samples[i].gts.clone()).collect()))
}

fn mean_loss(d: &Detector, samples: &[Sample], batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size) {
        let (input, gts) = batch(samples, chunk)?;
        total += detection_loss(&d.infer(&input)?, &gts, &d.anchors)?.total * chunk.len() as f64;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Trains in place. Batches are drawn without replacement from a seeded
/// shuffle that is renewed each epoch.
pub fn train(
    d: &mut Detector,
    frames: &[SensorFrame],
    val: &[SensorFrame],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidConfig("no training frames".into()));
    }
    let samples = prepare(d, frames);
    let val_samples = prepare(d, val);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut sgd = Sgd::new(cfg.schedule.base, cfg.momentum)?;
    let mut best_val = f64::INFINITY;
    let mut stale = 0;
    let mut last = f64::NAN;
    for it in 0..cfg.iterations {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size.min(samples.len()) {
            if cursor == order.len() {
                order = (0..samples.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let (input, gts) = batch(&samples, &idx)?;
        d.zero_grad();
        let loss = d.train_step(&input, &gts)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        let norm = match cfg.clip_norm {
            Some(max) => clip_grad_norm(d, max),
            None => grad_norm(d),
        };
        sgd.lr = cfg.schedule.lr(it);
        sgd.step(d);
        last = loss.total;

        let mut val_loss = None;
        let mut stop = false;
        if let Some(es) = cfg.early_stop {
            if !val_samples.is_empty() && (it + 1) % es.every == 0 {
                let v = mean_loss(d, &val_samples, cfg.batch_size)?;
                val_loss = Some(v);
                if v < best_val {
                    best_val = v;
                    stale = 0;
                } else {
                    stale += 1;
                    stop = stale >= es.patience;
                }
            }
        }
        if let Some(w) = log.as_deref_mut() {
            if it % cfg.log_every == 0 || it + 1 == cfg.iterations || val_loss.is_some() {
                let rec = LogRecord {
                    iteration: it,
                    loss: loss.total,
                    objectness: loss.objectness,
                    class: loss.class,
                    boxes: loss.boxes,
                    lr: sgd.lr,
                    grad_norm: norm,
                    val_loss,
                };
                writeln!(w, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io("training log", e))?;
            }
        }
        if stop {
            return Ok(TrainSummary {
                iterations: it + 1,
                final_loss: last,
                stopped_early: true,
            });
        }
    }
    Ok(TrainSummary {
        iterations: cfg.iterations,
        final_loss: last,
        stopped_early: false,
    })
}

/// Runs the detector over frames and scores it against their boxes.
pub fn evaluate(d: &Detector, frames: &[SensorFrame], decode: &DecodeParams, iou_threshold: f64) -> Result<MapReport> {
    let pairs = frames
        .iter()
        .map(|f| Ok((d.detect(f, decode)?, f.boxes.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate_map(&pairs, &d.classes, iou_threshold))
}

/// Seed of repeat `r` derived from a base seed.
pub fn repeat_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add((r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}
