//! Independent oracles and gradient-check objectives shared by the
//! integration test targets.
#![allow(dead_code)]

use fusiondet::detect::{detection_loss, AnchorGeometry, BBox, ClassSet, HeadOutput};
use fusiondet::frame::LidarKind;
use fusiondet::fusion::{ArchConfig, EncoderFamily, FusionVariant, NetInput, Preprocessor};
use fusiondet::geometry::CameraIntrinsics;
use fusiondet::lidar_repr::{DepthImage, SENTINEL};
use fusiondet::model::Detector;
use fusiondet::nn::{
    concat_channels_backward, concat_channels_forward, conv2d_backward, conv2d_forward, maxpool_backward,
    maxpool_forward, relu_backward, relu_forward, resample_nearest_backward, resample_nearest_forward, ConvSpec,
    Objective, Parameterized, PoolSpec, Tensor,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Pixel coordinates of a camera-frame point, written out term by term as a
/// homogeneous product `K · m_d`.
pub fn project_oracle(p: [f64; 3], intr: &CameraIntrinsics) -> (f64, f64) {
    let xn = -p[0] / p[2];
    let yn = -p[1] / p[2];
    let r2 = xn.powi(2) + yn.powi(2);
    let [k1, k2, k3, k4, k5] = intr.kappa;
    let f = 1.0 + k1 * r2 + k2 * r2.powi(2) + k3 * r2.powi(3);
    let md = [
        f * xn + 2.0 * k4 * xn * yn + k5 * (r2 + 2.0 * xn.powi(2)),
        f * yn + 2.0 * k5 * xn * yn + k4 * (r2 + 2.0 * yn.powi(2)),
        1.0,
    ];
    let k = [[intr.fx, intr.skew, intr.ox], [0.0, intr.fy, intr.oy], [0.0, 0.0, 1.0]];
    let ph: Vec<f64> = k.iter().map(|row| row.iter().zip(&md).map(|(a, b)| a * b).sum()).collect();
    (ph[0] / ph[2], ph[1] / ph[2])
}

/// Direct neighborhood average over every empty pixel, 64-bit sums.
pub fn densify_naive(img: &DepthImage, k: usize) -> DepthImage {
    let half = (k / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let mut out = img.clone();
    for r in 0..h {
        for c in 0..w {
            if img.get(r as usize, c as usize).is_finite() {
                continue;
            }
            let (mut s, mut n) = (0.0f64, 0u32);
            for rr in (r - half).max(0)..(r + half + 1).min(h) {
                for cc in (c - half).max(0)..(c + half + 1).min(w) {
                    let v = img.get(rr as usize, cc as usize);
                    if v.is_finite() {
                        s += v as f64;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                out.set(r as usize, c as usize, (s / n as f64) as f32);
            }
        }
    }
    out
}

/// A sparse map with roughly `density` of its pixels holding a return.
pub fn random_sparse(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> DepthImage {
    let mut img = DepthImage::empty(w, h);
    for v in img.data.iter_mut() {
        if rng.gen_bool(density) {
            *v = rng.gen_range(1.0..80.0);
        }
    }
    img
}

pub fn max_rel_diff(a: &DepthImage, b: &DepthImage) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            if x == SENTINEL || y == SENTINEL {
                if x == y {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                ((x - y).abs() / x.abs().max(y.abs()).max(1e-12)) as f64
            }
        })
        .fold(0.0, f64::max)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    let normal = Normal::new(0.0, 1.0).unwrap();
    Tensor::new(shape, (0..n).map(|_| normal.sample(rng)).collect()).unwrap()
}

/// A layer or loss under test; the objective is `Σ probe ⊙ output` for
/// layers and the detection loss itself for the head loss.
#[derive(Debug, Clone)]
pub enum Op {
    Conv { spec: ConvSpec, weight: Vec<f64>, bias: Vec<f64> },
    MaxPool(PoolSpec),
    Relu,
    Concat,
    Resample { height: usize, width: usize },
    DetectionLoss { classes: usize, gts: Vec<Vec<BBox>> },
}

pub struct OpObjective {
    pub op: Op,
    pub inputs: Vec<Tensor<f64>>,
    probe: Vec<f64>,
    grads: Vec<Vec<f64>>,
}

impl OpObjective {
    pub fn name(&self) -> &'static str {
        match self.op {
            Op::Conv { .. } => "conv",
            Op::MaxPool(_) => "maxpool",
            Op::Relu => "relu",
            Op::Concat => "concat",
            Op::Resample { .. } => "resample",
            Op::DetectionLoss { .. } => "detection-loss",
        }
    }

    /// A random instance of a layer kind.
    pub fn random(kind: &str, rng: &mut ChaCha8Rng) -> Self {
        let n = rng.gen_range(1..=2);
        let c = rng.gen_range(1..=4);
        let h = rng.gen_range(3..=9);
        let w = rng.gen_range(3..=9);
        let (op, inputs) = match kind {
            "conv" => {
                let k = *[1, 3, 5].iter().nth(rng.gen_range(0..3)).unwrap();
                let stride = rng.gen_range(1..=2);
                let pad = rng.gen_range(0..=k / 2);
                let oc = rng.gen_range(1..=4);
                let (h, w) = (h.max(k), w.max(k));
                let spec = ConvSpec::new(c, oc, k, stride, pad);
                let weight = random_tensor(rng, [1, 1, 1, spec.weight_len()]).into_data();
                let bias = random_tensor(rng, [1, 1, 1, oc]).into_data();
                (Op::Conv { spec, weight, bias }, vec![random_tensor(rng, [n, c, h, w])])
            }
            "maxpool" => {
                let window = rng.gen_range(2..=3);
                let stride = rng.gen_range(1..=window);
                let (h, w) = (h.max(window), w.max(window));
                (Op::MaxPool(PoolSpec { window, stride }), vec![random_tensor(rng, [n, c, h, w])])
            }
            "relu" => (Op::Relu, vec![random_tensor(rng, [n, c, h, w])]),
            "concat" => {
                let c2 = rng.gen_range(1..=4);
                (Op::Concat, vec![random_tensor(rng, [n, c, h, w]), random_tensor(rng, [n, c2, h, w])])
            }
            "resample" => {
                let op = Op::Resample {
                    height: rng.gen_range(1..=12),
                    width: rng.gen_range(1..=12),
                };
                (op, vec![random_tensor(rng, [n, c, h, w])])
            }
            "detection-loss" => {
                let classes = rng.gen_range(1..=6);
                let (gh, gw) = (rng.gen_range(1..=4), rng.gen_range(1..=5));
                let gts = (0..n)
                    .map(|_| {
                        (0..rng.gen_range(0..=3))
                            .map(|_| {
                                let x1 = rng.gen_range(0.0..(gw * 16) as f64 - 4.0);
                                let y1 = rng.gen_range(0.0..(gh * 16) as f64 - 4.0);
                                let bw = rng.gen_range(4.0..40.0);
                                let bh = rng.gen_range(4.0..40.0);
                                BBox::new(x1, y1, x1 + bw, y1 + bh, rng.gen_range(0..classes))
                            })
                            .collect()
                    })
                    .collect();
                let t = random_tensor(rng, [n, 5 + classes, gh, gw]);
                (Op::DetectionLoss { classes, gts }, vec![t])
            }
            other => panic!("unknown layer kind {other}"),
        };
        let mut o = OpObjective {
            op,
            inputs,
            probe: Vec::new(),
            grads: Vec::new(),
        };
        if let Some(y) = o.forward() {
            o.probe = random_tensor(rng, [1, 1, 1, y.data().len()]).into_data();
        }
        o
    }

    /// Layer output, or `None` for the loss.
    fn forward(&self) -> Option<Tensor<f64>> {
        let x = &self.inputs[0];
        match &self.op {
            Op::Conv { spec, weight, bias } => Some(conv2d_forward(x, weight, bias, spec).unwrap()),
            Op::MaxPool(spec) => Some(maxpool_forward(x, spec).unwrap().0),
            Op::Relu => Some(relu_forward(x)),
            Op::Concat => Some(concat_channels_forward(x, &self.inputs[1]).unwrap()),
            Op::Resample { height, width } => Some(resample_nearest_forward(x, *height, *width)),
            Op::DetectionLoss { .. } => None,
        }
    }

    fn param_blocks(&self) -> usize {
        match self.op {
            Op::Conv { .. } => 2,
            _ => 0,
        }
    }
}

impl Objective for OpObjective {
    fn loss(&mut self, with_grad: bool) -> f64 {
        if let Op::DetectionLoss { classes, gts } = &self.op {
            let pred = HeadOutput::new(self.inputs[0].clone(), *classes).unwrap();
            let out = detection_loss(&pred, gts, &AnchorGeometry::default()).unwrap();
            if with_grad {
                self.grads = vec![out.grad.into_data()];
            }
            return out.total;
        }
        let y = self.forward().unwrap();
        let value = y.data().iter().zip(&self.probe).map(|(a, b)| a * b).sum();
        if with_grad {
            let g = Tensor::new(y.shape(), self.probe.clone()).unwrap();
            let x = &self.inputs[0];
            self.grads = match &self.op {
                Op::Conv { spec, weight, .. } => {
                    let cg = conv2d_backward(x, weight, &g, spec).unwrap();
                    vec![cg.input.into_data(), cg.weight, cg.bias]
                }
                Op::MaxPool(spec) => {
                    let (_, argmax) = maxpool_forward(x, spec).unwrap();
                    vec![maxpool_backward(x.shape(), &argmax, &g).unwrap().into_data()]
                }
                Op::Relu => vec![relu_backward(&y, &g).unwrap().into_data()],
                Op::Concat => {
                    let (a, b) = concat_channels_backward(&g, x.channels()).unwrap();
                    vec![a.into_data(), b.into_data()]
                }
                Op::Resample { .. } => vec![resample_nearest_backward(x.shape(), &g).into_data()],
                Op::DetectionLoss { .. } => unreachable!(),
            };
        }
        value
    }

    fn blocks(&self) -> Vec<(String, usize)> {
        let mut b: Vec<(String, usize)> = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("input{i}"), t.data().len()))
            .collect();
        if let Op::Conv { weight, bias, .. } = &self.op {
            b.push(("weight".into(), weight.len()));
            b.push(("bias".into(), bias.len()));
        }
        debug_assert_eq!(b.len(), self.inputs.len() + self.param_blocks());
        b
    }

    fn get(&self, block: usize, i: usize) -> f64 {
        match (&self.op, block.checked_sub(self.inputs.len())) {
            (_, None) => self.inputs[block].data()[i],
            (Op::Conv { weight, .. }, Some(0)) => weight[i],
            (Op::Conv { bias, .. }, Some(1)) => bias[i],
            _ => unreachable!(),
        }
    }

    fn set(&mut self, block: usize, i: usize, v: f64) {
        let n = self.inputs.len();
        match (&mut self.op, block.checked_sub(n)) {
            (_, None) => self.inputs[block].data_mut()[i] = v,
            (Op::Conv { weight, .. }, Some(0)) => weight[i] = v,
            (Op::Conv { bias, .. }, Some(1)) => bias[i] = v,
            _ => unreachable!(),
        }
    }

    fn grad(&self, block: usize, i: usize) -> f64 {
        self.grads[block][i]
    }
}

/// The full encoder graph plus detection head and loss, in 64-bit.
pub struct ModelObjective {
    pub detector: Detector<f64>,
    pub input: NetInput<f64>,
    pub gts: Vec<Vec<BBox>>,
    names: Vec<String>,
}

impl ModelObjective {
    /// Random μ configuration, input size and annotations. Parameters are
    /// redrawn with `2 / fan_in` variance so activations keep their scale
    /// through the ReLU stack and every layer carries signal.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        loop {
            let family = if rng.gen_bool(0.5) { EncoderFamily::Vgg16m } else { EncoderFamily::Vgg16 };
            let fusion = FusionVariant::ALL[rng.gen_range(0..4)];
            let repr = LidarKind::ALL[rng.gen_range(0..3)];
            let (h, w) = (16 * rng.gen_range(2..=3), 16 * rng.gen_range(2..=4));
            let cfg = ArchConfig {
                input_size: [h, w],
                ..ArchConfig::mu(family, fusion, repr)
            };
            if cfg.validate().is_err() {
                continue;
            }
            let pre = Preprocessor::new(cfg.input_size, [0.0; 3]);
            let mut detector =
                Detector::<f64>::new(cfg, ClassSet::default(), AnchorGeometry::default(), pre, rng.gen()).unwrap();
            detector.visit_params_mut(&mut |name, p| {
                let fan_in = if p.shape.len() == 4 { p.shape[1..].iter().product::<usize>() } else { 1 };
                let sigma = if name.ends_with("bias") { 0.1 } else { (2.0 / fan_in as f64).sqrt() };
                let normal = Normal::new(0.0, sigma).unwrap();
                for v in p.value.iter_mut() {
                    *v = normal.sample(rng);
                }
            });
            let n = rng.gen_range(1..=2);
            let rgb = random_tensor(rng, [n, 3, h, w]);
            let depth = match (fusion, repr) {
                (FusionVariant::None, _) => None,
                (_, LidarKind::Range) => {
                    let (rh, rw) = (16 * rng.gen_range(1..=2), 16 * rng.gen_range(2..=5));
                    Some(random_tensor(rng, [n, 1, rh, rw]))
                }
                _ => Some(random_tensor(rng, [n, 1, h, w])),
            };
            let gts = (0..n)
                .map(|_| {
                    (0..rng.gen_range(0..=2))
                        .map(|_| {
                            let x1 = rng.gen_range(0.0..w as f64 - 8.0);
                            let y1 = rng.gen_range(0.0..h as f64 - 8.0);
                            BBox::new(x1, y1, x1 + rng.gen_range(8.0..40.0), y1 + rng.gen_range(8.0..30.0), rng.gen_range(0..6))
                        })
                        .collect()
                })
                .collect();
            let mut names = Vec::new();
            detector.visit_params(&mut |name, _| names.push(name.to_string()));
            return ModelObjective {
                detector,
                input: NetInput { rgb, depth },
                gts,
                names,
            };
        }
    }

    pub fn describe(&self) -> String {
        let c = &self.detector.config;
        format!("{:?}/{}/{} {:?}", c.encoder, c.fusion.name(), c.repr.name(), c.input_size)
    }

    fn with_param<R>(&self, block: usize, f: impl FnOnce(&fusiondet::nn::Param<f64>) -> R) -> R {
        let mut k = 0;
        let mut f = Some(f);
        let mut out = None;
        self.detector.visit_params(&mut |_, p| {
            if k == block {
                out = Some((f.take().unwrap())(p));
            }
            k += 1;
        });
        out.unwrap()
    }
}

impl Objective for ModelObjective {
    fn loss(&mut self, with_grad: bool) -> f64 {
        if with_grad {
            self.detector.zero_grad();
            self.detector.train_step(&self.input, &self.gts).unwrap().total
        } else {
            let out = self.detector.infer(&self.input).unwrap();
            detection_loss(&out, &self.gts, &self.detector.anchors).unwrap().total
        }
    }

    fn blocks(&self) -> Vec<(String, usize)> {
        let mut b = Vec::new();
        self.detector.visit_params(&mut |name, p| b.push((name.to_string(), p.len())));
        b
    }

    fn get(&self, block: usize, i: usize) -> f64 {
        self.with_param(block, |p| p.value[i])
    }

    fn set(&mut self, block: usize, i: usize, v: f64) {
        let mut k = 0;
        self.detector.visit_params_mut(&mut |_, p| {
            if k == block {
                p.value[i] = v;
            }
            k += 1;
        });
    }

    fn grad(&self, block: usize, i: usize) -> f64 {
        self.with_param(block, |p| p.grad[i])
    }
}

impl ModelObjective {
    pub fn param_names(&self) -> &[String] {
        &self.names
    }
}

pub const LAYER_KINDS: [&str; 6] = ["conv", "maxpool", "relu", "concat", "resample", "detection-loss"];
