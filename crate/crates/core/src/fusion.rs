//! Encoder topologies for camera-only, early, middle and late fusion.
//!
//! Every topology reduces the camera input by 16× so one detection head fits
//! all of them:
//!
//! * **none**: a single RGB encoder.
//! * **early**: RGB and the depth channel are concatenated at the input and
//!   share one encoder.
//! * **middle**: separate RGB and lidar encoders through block 3, channel
//!   concatenation, then shared blocks 4 and 5.
//! * **late**: two complete encoders whose final feature maps are
//!   concatenated.
//!
//! Range images keep their own resolution; in middle and late fusion their
//! feature map is resampled (nearest neighbor) to the camera feature-map size
//! before concatenation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{LidarKind, RgbImage};
use crate::lidar_repr::DepthImage;
use crate::nn::{
    concat_channels_backward, concat_channels_forward, gaussian_fill, resample_nearest_backward,
    resample_nearest_forward, LayerSpec, Param, Parameterized, Scalar, Sequential, Tensor,
};

/// Total spatial reduction of every encoder.
pub const DOWNSAMPLING: usize = 16;

/// Channel divisor of the desk-scale ("μ") encoder variants.
pub const MU_SCALE: usize = 8;

/// Standard deviation of the randomly initialized first convolution of each
/// input stream.
pub const FIRST_CONV_SIGMA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderFamily {
    Vgg16m,
    Vgg16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub family: EncoderFamily,
    pub scale: usize,
    /// Five blocks, each a layer list.
    pub blocks: Vec<Vec<LayerSpec>>,
}

fn conv(kernel: usize, channels: usize, stride: usize, scale: usize) -> [LayerSpec; 2] {
    [
        LayerSpec::Conv {
            kernel,
            out_channels: (channels / scale).max(1),
            stride,
            padding: kernel / 2,
        },
        LayerSpec::Relu,
    ]
}

const POOL: LayerSpec = LayerSpec::MaxPool { window: 2, stride: 2 };

impl EncoderConfig {
    pub fn new(family: EncoderFamily, scale: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::InvalidConfig("channel scale must be >= 1".into()));
        }
        let s = scale;
        let blocks: Vec<Vec<LayerSpec>> = match family {
            EncoderFamily::Vgg16m => vec![
                [&conv(7, 96, 2, s)[..], &[POOL]].concat(),
                [&conv(5, 256, 2, s)[..], &[POOL]].concat(),
                conv(3, 516, 1, s).to_vec(),
                conv(3, 516, 1, s).to_vec(),
                conv(3, 516, 1, s).to_vec(),
            ],
            EncoderFamily::Vgg16 => {
                let block = |n: usize, ch: usize, pool: bool| {
                    let mut v: Vec<LayerSpec> = (0..n).flat_map(|_| conv(3, ch, 1, s)).collect();
                    if pool {
                        v.push(POOL);
                    }
                    v
                };
                vec![
                    block(2, 64, true),
                    block(2, 128, true),
                    block(3, 256, true),
                    block(3, 516, true),
                    block(3, 516, false),
                ]
            }
        };
        let cfg = EncoderConfig { family, scale, blocks };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The channel-reduced desk-scale variant of a family.
    pub fn mu(family: EncoderFamily) -> Self {
        Self::new(family, MU_SCALE).expect("built-in config is valid")
    }

    /// Spatial output size of blocks `0..n_blocks` for an `h × w` input.
    pub fn output_dims(&self, n_blocks: usize, mut h: usize, mut w: usize) -> Result<(usize, usize)> {
        for spec in self.blocks.iter().take(n_blocks).flatten() {
            match *spec {
                LayerSpec::Conv {
                    kernel, stride, padding, ..
                } => {
                    let cs = crate::nn::ConvSpec::new(1, 1, kernel, stride, padding);
                    (h, w) = cs.output_dims(h, w)?;
                }
                LayerSpec::MaxPool { window, stride } => {
                    (h, w) = crate::nn::PoolSpec { window, stride }.output_dims(h, w)?;
                }
                _ => {}
            }
        }
        Ok((h, w))
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.len() != 5 {
            return Err(Error::InvalidConfig("encoders have exactly five blocks".into()));
        }
        for probe in [8usize, 16] {
            let n = probe * DOWNSAMPLING;
            if self.output_dims(5, n, n)? != (probe, probe) {
                return Err(Error::InvalidConfig("encoder does not reduce its input exactly 16x".into()));
            }
        }
        Ok(())
    }

    pub fn channels_after(&self, n_blocks: usize) -> usize {
        self.blocks
            .iter()
            .take(n_blocks)
            .flatten()
            .filter_map(|s| match s {
                LayerSpec::Conv { out_channels, .. } => Some(*out_channels),
                _ => None,
            })
            .last()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionVariant {
    None,
    Early,
    Middle,
    Late,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 4] = [
        FusionVariant::None,
        FusionVariant::Early,
        FusionVariant::Middle,
        FusionVariant::Late,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionVariant::None => "none",
            FusionVariant::Early => "early",
            FusionVariant::Middle => "middle",
            FusionVariant::Late => "late",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FusionArch {
    pub variant: FusionVariant,
    pub lidar: LidarKind,
}

impl FusionArch {
    pub fn new(variant: FusionVariant, lidar: LidarKind) -> Self {
        FusionArch { variant, lidar }
    }

    /// Rejects the two combinations that cannot be built.
    pub fn validate(&self, family: EncoderFamily) -> Result<()> {
        match (self.variant, self.lidar, family) {
            (FusionVariant::Early, LidarKind::Range, _) => Err(Error::IncompatibleCombination(
                "early fusion needs a common input tensor, but the range image does not share the camera image size",
            )),
            (FusionVariant::Middle, LidarKind::Range, EncoderFamily::Vgg16) => Err(Error::IncompatibleCombination(
                "middle fusion with VGG16 concatenates block-3 feature maps, whose sizes differ for the range image",
            )),
            _ => Ok(()),
        }
    }

    pub fn input_arity(&self) -> usize {
        match self.variant {
            FusionVariant::None | FusionVariant::Early => 1,
            FusionVariant::Middle | FusionVariant::Late => 2,
        }
    }

    pub fn merge_point(&self) -> MergePoint {
        match self.variant {
            FusionVariant::None => MergePoint::None,
            FusionVariant::Early => MergePoint::Input,
            FusionVariant::Middle => MergePoint::AfterBlock3,
            FusionVariant::Late => MergePoint::AfterBlock5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MergePoint {
    None,
    Input,
    AfterBlock3,
    AfterBlock5,
}

/// Declarative architecture description, as stored in JSON config files and
/// checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub encoder: EncoderFamily,
    #[serde(default = "default_scale")]
    pub scale: usize,
    pub fusion: FusionVariant,
    pub repr: LidarKind,
    /// Network input `[height, width]` of the camera stream.
    pub input_size: [usize; 2],
}

fn default_scale() -> usize {
    MU_SCALE
}

impl ArchConfig {
    pub fn mu(encoder: EncoderFamily, fusion: FusionVariant, repr: LidarKind) -> Self {
        ArchConfig {
            encoder,
            scale: MU_SCALE,
            fusion,
            repr,
            input_size: [64, 192],
        }
    }

    pub fn arch(&self) -> FusionArch {
        FusionArch::new(self.fusion, self.repr)
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        EncoderConfig::new(self.encoder, self.scale)
    }

    /// Parses `vgg16m-mu`, `vgg16-mu`, `vgg16m`, `vgg16` into (family, scale).
    pub fn parse_encoder(name: &str) -> Option<(EncoderFamily, usize)> {
        match name {
            "vgg16m-mu" => Some((EncoderFamily::Vgg16m, MU_SCALE)),
            "vgg16-mu" => Some((EncoderFamily::Vgg16, MU_SCALE)),
            "vgg16m" => Some((EncoderFamily::Vgg16m, 1)),
            "vgg16" => Some((EncoderFamily::Vgg16, 1)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.input_size;
        if h == 0 || w == 0 || h % DOWNSAMPLING != 0 || w % DOWNSAMPLING != 0 {
            return Err(Error::InvalidConfig(format!(
                "input size {h}x{w} must be a positive multiple of {DOWNSAMPLING}"
            )));
        }
        self.encoder_config()?;
        self.arch().validate(self.encoder)
    }
}

/// Network-ready streams: `rgb` is `(n, 3, h, w)`, `depth` is `(n, 1, h', w')`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput<T> {
    pub rgb: Tensor<T>,
    pub depth: Option<Tensor<T>>,
}

impl<T: Scalar> NetInput<T> {
    pub fn cast<U: Scalar>(&self) -> NetInput<U> {
        NetInput {
            rgb: self.rgb.cast(),
            depth: self.depth.as_ref().map(|d| d.cast()),
        }
    }

    pub fn stack(items: &[&NetInput<T>]) -> Result<Self> {
        let rgb = Tensor::stack(&items.iter().map(|i| i.rgb.clone()).collect::<Vec<_>>())?;
        let depth = if items.iter().all(|i| i.depth.is_some()) {
            Some(Tensor::stack(
                &items.iter().map(|i| i.depth.clone().expect("checked")).collect::<Vec<_>>(),
            )?)
        } else {
            None
        };
        Ok(NetInput { rgb, depth })
    }
}

#[derive(Debug, Clone)]
struct MergeCache {
    camera_channels: usize,
    /// Lidar feature shape before resampling, when it was resampled.
    resampled_from: Option<[usize; 4]>,
}

/// A built fusion encoder.
#[derive(Debug, Clone)]
pub struct EncoderGraph<T> {
    pub arch: FusionArch,
    pub config: EncoderConfig,
    /// First stream: RGB, or RGB+depth for early fusion.
    pub camera: Sequential<T>,
    pub lidar: Option<Sequential<T>>,
    /// Post-merge blocks (middle fusion only).
    pub shared: Sequential<T>,
    cache: Option<MergeCache>,
}

fn build_stream<T: Scalar>(cfg: &EncoderConfig, in_channels: usize, blocks: std::ops::Range<usize>) -> Result<Sequential<T>> {
    let mut seq = Sequential::new(in_channels);
    for b in blocks {
        let (mut convs, mut relus) = (0, 0);
        for spec in &cfg.blocks[b] {
            let name = match spec {
                LayerSpec::Conv { .. } => {
                    convs += 1;
                    format!("b{}.conv{}", b + 1, convs)
                }
                LayerSpec::Relu => {
                    relus += 1;
                    format!("b{}.relu{}", b + 1, relus)
                }
                LayerSpec::MaxPool { .. } => format!("b{}.pool", b + 1),
                LayerSpec::Concat => return Err(Error::InvalidConfig("concat inside a block".into())),
            };
            seq.push(name, spec)?;
        }
    }
    Ok(seq)
}

pub fn build_encoder<T: Scalar>(arch: FusionArch, cfg: &EncoderConfig) -> Result<EncoderGraph<T>> {
    cfg.validate()?;
    arch.validate(cfg.family)?;
    let (camera, lidar, shared) = match arch.variant {
        FusionVariant::None => (build_stream(cfg, 3, 0..5)?, None, Sequential::new(cfg.channels_after(5))),
        FusionVariant::Early => (build_stream(cfg, 4, 0..5)?, None, Sequential::new(cfg.channels_after(5))),
        FusionVariant::Middle => {
            let shared = build_stream(cfg, 2 * cfg.channels_after(3), 3..5)?;
            (build_stream(cfg, 3, 0..3)?, Some(build_stream(cfg, 1, 0..3)?), shared)
        }
        FusionVariant::Late => (
            build_stream(cfg, 3, 0..5)?,
            Some(build_stream(cfg, 1, 0..5)?),
            Sequential::new(2 * cfg.channels_after(5)),
        ),
    };
    Ok(EncoderGraph {
        arch,
        config: cfg.clone(),
        camera,
        lidar,
        shared,
        cache: None,
    })
}

impl<T: Scalar> EncoderGraph<T> {
    pub fn stream_names(&self) -> (&'static str, &'static str) {
        match self.arch.variant {
            FusionVariant::Early => ("early", "lidar"),
            _ => ("rgb", "lidar"),
        }
    }

    /// Channels of the final feature map.
    pub fn out_channels(&self) -> usize {
        match self.arch.variant {
            FusionVariant::None | FusionVariant::Early => self.camera.out_channels,
            FusionVariant::Middle => self.shared.out_channels,
            FusionVariant::Late => self.shared.out_channels,
        }
    }

    pub fn concat_count(&self) -> usize {
        match self.arch.variant {
            FusionVariant::None => 0,
            _ => 1,
        }
    }

    fn depth<'a>(&self, input: &'a NetInput<T>) -> Result<&'a Tensor<T>> {
        input
            .depth
            .as_ref()
            .ok_or_else(|| Error::ShapeMismatch("this architecture needs a lidar stream".into()))
    }

    /// Brings the lidar feature map to the camera feature-map size.
    fn align(&self, lidar: Tensor<T>, camera: &Tensor<T>) -> Result<(Tensor<T>, Option<[usize; 4]>)> {
        let (ch, cw) = (camera.height(), camera.width());
        if (lidar.height(), lidar.width()) == (ch, cw) || self.arch.lidar != LidarKind::Range {
            return Ok((lidar, None));
        }
        let from = lidar.shape();
        Ok((resample_nearest_forward(&lidar, ch, cw), Some(from)))
    }

    fn check_camera(&self, input: &NetInput<T>) -> Result<()> {
        if input.rgb.channels() != 3 {
            return Err(Error::ShapeMismatch(format!("rgb stream has {} channels", input.rgb.channels())));
        }
        Ok(())
    }

    pub fn forward(&mut self, input: &NetInput<T>) -> Result<Tensor<T>> {
        self.check_camera(input)?;
        let camera_channels;
        let mut resampled_from = None;
        let out = match self.arch.variant {
            FusionVariant::None => {
                camera_channels = 3;
                self.camera.forward(input.rgb.clone())?
            }
            FusionVariant::Early => {
                camera_channels = 3;
                let x = concat_channels_forward(&input.rgb, self.depth(input)?)?;
                self.camera.forward(x)?
            }
            FusionVariant::Middle | FusionVariant::Late => {
                let depth = self.depth(input)?.clone();
                let a = self.camera.forward(input.rgb.clone())?;
                let b = self.lidar.as_mut().expect("two-stream graph").forward(depth)?;
                let (b, from) = self.align(b, &a)?;
                resampled_from = from;
                camera_channels = a.channels();
                let merged = concat_channels_forward(&a, &b)?;
                if self.arch.variant == FusionVariant::Middle {
                    self.shared.forward(merged)?
                } else {
                    merged
                }
            }
        };
        self.cache = Some(MergeCache {
            camera_channels,
            resampled_from,
        });
        Ok(out)
    }

    /// Uncached forward pass.
    pub fn infer(&self, input: &NetInput<T>) -> Result<Tensor<T>> {
        self.check_camera(input)?;
        match self.arch.variant {
            FusionVariant::None => self.camera.infer(input.rgb.clone()),
            FusionVariant::Early => self.camera.infer(concat_channels_forward(&input.rgb, self.depth(input)?)?),
            FusionVariant::Middle | FusionVariant::Late => {
                let a = self.camera.infer(input.rgb.clone())?;
                let b = self.lidar.as_ref().expect("two-stream graph").infer(self.depth(input)?.clone())?;
                let (b, _) = self.align(b, &a)?;
                let merged = concat_channels_forward(&a, &b)?;
                if self.arch.variant == FusionVariant::Middle {
                    self.shared.infer(merged)
                } else {
                    Ok(merged)
                }
            }
        }
    }

    /// Pre-concatenation feature maps of the two streams (two-stream graphs).
    pub fn stream_features(&self, input: &NetInput<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        match self.arch.variant {
            FusionVariant::None | FusionVariant::Early => Ok((self.infer(input)?, None)),
            _ => {
                let a = self.camera.infer(input.rgb.clone())?;
                let b = self.lidar.as_ref().expect("two-stream graph").infer(self.depth(input)?.clone())?;
                Ok((a, Some(b)))
            }
        }
    }

    /// Backpropagates through the graph, accumulating parameter gradients.
    /// Returns the gradients of the RGB and depth inputs.
    pub fn backward(&mut self, grad: Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::ShapeMismatch("encoder backward without forward".into()))?;
        match self.arch.variant {
            FusionVariant::None => Ok((self.camera.backward(grad)?, None)),
            FusionVariant::Early => {
                let g = self.camera.backward(grad)?;
                let (gr, gd) = concat_channels_backward(&g, cache.camera_channels)?;
                Ok((gr, Some(gd)))
            }
            FusionVariant::Middle | FusionVariant::Late => {
                let g = if self.arch.variant == FusionVariant::Middle {
                    self.shared.backward(grad)?
                } else {
                    grad
                };
                let (ga, gb) = concat_channels_backward(&g, cache.camera_channels)?;
                let gb = match cache.resampled_from {
                    Some(shape) => resample_nearest_backward(shape, &gb),
                    None => gb,
                };
                let gr = self.camera.backward(ga)?;
                let gd = self.lidar.as_mut().expect("two-stream graph").backward(gb)?;
                Ok((gr, Some(gd)))
            }
        }
    }

    /// First stream layers get `N(0, 0.01²)`; later convolutions get
    /// `N(0, 2/fan_in)`; biases start at zero.
    pub fn init_parameters<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let init_stream = |seq: &mut Sequential<T>, is_input: bool, rng: &mut R| {
            for (i, (_, conv)) in seq.convs_mut().enumerate() {
                let sigma = if is_input && i == 0 {
                    FIRST_CONV_SIGMA
                } else {
                    (2.0 / conv.spec.patch_len() as f64).sqrt()
                };
                gaussian_fill(&mut conv.weight.value, sigma, rng);
                conv.bias.value.fill(T::zero());
            }
        };
        init_stream(&mut self.camera, true, rng);
        if let Some(l) = self.lidar.as_mut() {
            init_stream(l, true, rng);
        }
        init_stream(&mut self.shared, false, rng);
    }
}

impl<T: Scalar> Parameterized<T> for EncoderGraph<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        let (first, second) = self.stream_names();
        let streams = [(first, Some(&self.camera)), (second, self.lidar.as_ref()), ("fused", Some(&self.shared))];
        for (prefix, seq) in streams {
            for (name, conv) in seq.into_iter().flat_map(|s| s.convs()) {
                f(&format!("{prefix}.{name}.weight"), &conv.weight);
                f(&format!("{prefix}.{name}.bias"), &conv.bias);
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        let (first, second) = self.stream_names();
        let streams = [
            (first, Some(&mut self.camera)),
            (second, self.lidar.as_mut()),
            ("fused", Some(&mut self.shared)),
        ];
        for (prefix, seq) in streams {
            for (name, conv) in seq.into_iter().flat_map(|s| s.convs_mut()) {
                f(&format!("{prefix}.{name}.weight"), &mut conv.weight);
                f(&format!("{prefix}.{name}.bias"), &mut conv.bias);
            }
        }
    }
}

/// Maps a planar range to the network's depth channel: `255 · clamp(1/d, 0, 1)`,
/// with "no return" at 0.
#[inline]
pub fn encode_depth(d: f32) -> f32 {
    if d.is_finite() && d > 0.0 {
        255.0 * (1.0 / d).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Camera-stream normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub target_height: usize,
    pub target_width: usize,
    /// Per-channel dataset mean, 0–255 units.
    pub rgb_mean: [f32; 3],
}

impl Preprocessor {
    pub fn new(input_size: [usize; 2], rgb_mean: [f32; 3]) -> Self {
        Preprocessor {
            target_height: input_size[0],
            target_width: input_size[1],
            rgb_mean,
        }
    }

    /// Scale factor and resized dims that fit `w × h` into the target while
    /// keeping the aspect ratio.
    pub fn fit(&self, w: usize, h: usize) -> (f64, usize, usize) {
        let (tw, th) = (self.target_width, self.target_height);
        if (w, h) == (tw, th) {
            return (1.0, w, h);
        }
        let scale = (tw as f64 / w as f64).min(th as f64 / h as f64);
        let nw = ((w as f64 * scale).round() as usize).clamp(1, tw);
        let nh = ((h as f64 * scale).round() as usize).clamp(1, th);
        (scale, nw, nh)
    }
}

/// Network input for one frame, plus the factor applied to image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInput {
    pub input: NetInput<f32>,
    pub scale: f64,
}

fn resize_rgb(rgb: &RgbImage, nw: usize, nh: usize) -> RgbImage {
    if (rgb.width, rgb.height) == (nw, nh) {
        return rgb.clone();
    }
    let buf = image::RgbImage::from_raw(rgb.width as u32, rgb.height as u32, rgb.data.clone())
        .expect("buffer length matches dims");
    let out = image::imageops::resize(&buf, nw as u32, nh as u32, image::imageops::FilterType::Triangle);
    RgbImage {
        width: nw,
        height: nh,
        data: out.into_raw(),
    }
}

fn resize_depth_nearest(d: &DepthImage, nw: usize, nh: usize) -> DepthImage {
    if (d.width, d.height) == (nw, nh) {
        return d.clone();
    }
    let mut out = DepthImage::empty(nw, nh);
    for y in 0..nh {
        let sy = (y * d.height / nh).min(d.height - 1);
        for x in 0..nw {
            let sx = (x * d.width / nw).min(d.width - 1);
            out.set(y, x, d.get(sy, sx));
        }
    }
    out
}

fn depth_tensor(d: &DepthImage, h: usize, w: usize) -> Tensor<f32> {
    let mut t = Tensor::zeros([1, 1, h, w]);
    for y in 0..d.height.min(h) {
        for x in 0..d.width.min(w) {
            t.data_mut()[y * w + x] = encode_depth(d.get(y, x));
        }
    }
    t
}

fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Resizes (aspect preserved, zero-padded bottom/right), subtracts the RGB
/// mean and encodes depth. Camera-aligned depth follows the RGB resize with
/// nearest-neighbor sampling; range images keep their resolution and are
/// padded to a multiple of 16.
pub fn preprocess_frame(rgb: &RgbImage, lidar: Option<(&DepthImage, LidarKind)>, pre: &Preprocessor) -> PreparedInput {
    let (th, tw) = (pre.target_height, pre.target_width);
    let (scale, nw, nh) = pre.fit(rgb.width, rgb.height);
    let resized = resize_rgb(rgb, nw, nh);
    let mut t = Tensor::zeros([1, 3, th, tw]);
    let plane = th * tw;
    for y in 0..nh {
        for x in 0..nw {
            let px = resized.pixel(y, x);
            for c in 0..3 {
                t.data_mut()[c * plane + y * tw + x] = px[c] as f32 - pre.rgb_mean[c];
            }
        }
    }
    let depth = lidar.map(|(d, kind)| {
        if kind.is_camera_aligned() {
            depth_tensor(&resize_depth_nearest(d, nw, nh), th, tw)
        } else {
            depth_tensor(d, round_up(d.height, DOWNSAMPLING), round_up(d.width, DOWNSAMPLING))
        }
    });
    PreparedInput {
        input: NetInput { rgb: t, depth },
        scale,
    }
}

/// Mean of each RGB channel over a set of images.
pub fn rgb_mean<'a>(images: impl IntoIterator<Item = &'a RgbImage>) -> [f32; 3] {
    let mut sum = [0f64; 3];
    let mut n = 0u64;
    for img in images {
        for px in img.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c] as f64;
            }
        }
        n += (img.width * img.height) as u64;
    }
    if n == 0 {
        return [0.0; 3];
    }
    sum.map(|s| (s / n as f64) as f32)
}
