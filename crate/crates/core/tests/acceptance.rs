//! Acceptance suite. Each test prints one `PASS`/`FAIL` line before
//! asserting. Tests share a lock so the timing criteria never compete for
//! the CPU with the training criteria.

mod common;

use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use fusiondet::adverse::{category_for, fail_sensor, synthesize_adverse_dataset, Category, CorruptionSpec, Modality};
use fusiondet::dataset::png::{decode_depth_png, encode_depth_png};
use fusiondet::dataset::{read_point_cloud, synthetic_frames, write_point_cloud, SyntheticSceneSpec, DENSIFY_WINDOW};
use fusiondet::detect::{mean_ap, AnchorGeometry, ClassSet};
use fusiondet::frame::{LidarKind, RgbImage, SensorFrame};
use fusiondet::fusion::{rgb_mean, ArchConfig, EncoderFamily, FusionVariant, NetInput, Preprocessor};
use fusiondet::geometry::{project_point, CameraIntrinsics, Point3, PointCloud};
use fusiondet::lidar_repr::{densify, DepthImage};
use fusiondet::model::{bench_inference, decode_checkpoint, encode_checkpoint, DecodeParams, Detector};
use fusiondet::nn::{grad_check, GradCheckOptions, LrSchedule, Tensor};
use fusiondet::train::{evaluate, train, TrainConfig};
use fusiondet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{densify_naive, max_rel_diff, project_oracle, random_sparse, ModelObjective, OpObjective, LAYER_KINDS};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    // straight to stderr so the line shows even when the harness captures output
    let _ = writeln!(std::io::stderr(), "acceptance {id:>2} [{verdict}] {name}: {detail}");
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn criterion_01_projection_oracle() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let (w, h) = (rng.gen_range(100..2000), rng.gen_range(100..1000));
        let intr = CameraIntrinsics::new(
            rng.gen_range(100.0..2000.0),
            rng.gen_range(100.0..2000.0),
            rng.gen_range(0.0..w as f64),
            rng.gen_range(0.0..h as f64),
            rng.gen_range(-1.0..1.0),
            [
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.01..0.01),
                rng.gen_range(-0.01..0.01),
                rng.gen_range(-0.01..0.01),
            ],
            w,
            h,
        )
        .unwrap();
        let z = rng.gen_range(0.5..100.0);
        let p = [z * rng.gen_range(-1.0..1.0), z * rng.gen_range(-1.0..1.0), z];
        let (u, v) = project_point(&Point3::new(p[0], p[1], p[2]), &intr).unwrap();
        let (ou, ov) = project_oracle(p, &intr);
        worst = worst.max((u - ou).abs()).max((v - ov).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-6 && secs < 10.0;
    report(1, "projection oracle", pass, &format!("max |Δ| = {worst:.2e} px over 1e5 samples in {secs:.2} s"));
    assert!(pass);
}

#[test]
fn criterion_02_densify_oracle_and_speed() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let maps: Vec<DepthImage> = (0..100)
        .map(|_| {
            let density = rng.gen_range(0.01..0.3);
            random_sparse(&mut rng, 192, 64, density)
        })
        .collect();
    let mut worst = 0.0f64;
    for k in [3, 5, 9] {
        for m in &maps {
            worst = worst.max(max_rel_diff(&densify(m, k).unwrap(), &densify_naive(m, k)));
        }
    }
    let t = Instant::now();
    for m in &maps {
        std::hint::black_box(densify_naive(m, 9));
    }
    let naive = t.elapsed().as_secs_f64();
    let t = Instant::now();
    for m in &maps {
        std::hint::black_box(densify(m, 9).unwrap());
    }
    let fast = t.elapsed().as_secs_f64();
    let speedup = naive / fast;
    let pass = worst <= 1e-4 && speedup >= 10.0;
    report(
        2,
        "densify oracle",
        pass,
        &format!("max rel diff {worst:.2e} for k in 3/5/9; integral {:.1}x faster at k = 9", speedup),
    );
    assert!(pass);
}

#[test]
fn criterion_03_gradient_suite() {
    let _g = serial();
    let opts = GradCheckOptions {
        max_coords: 24,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for kind in LAYER_KINDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300);
        let mut kind_worst = 0.0f64;
        for _ in 0..20 {
            let mut obj = OpObjective::random(kind, &mut rng);
            let r = grad_check(&mut obj, &opts);
            // an unchecked instance counts as a failure
            let e = if r.blocks.iter().any(|b| b.checked > 0) { r.max_rel_error() } else { f64::INFINITY };
            kind_worst = kind_worst.max(e);
        }
        lines.push(format!("{kind} {kind_worst:.1e}"));
        worst = worst.max(kind_worst);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let mut model_worst = 0.0f64;
    // a bias of an early layer moves every downstream activation; a smaller
    // step crosses fewer ReLU kinks
    let model_opts = GradCheckOptions {
        max_coords: 8,
        eps: 1e-6,
        ..opts
    };
    for _ in 0..20 {
        let mut obj = ModelObjective::random(&mut rng);
        let r = grad_check(&mut obj, &model_opts);
        if r.max_rel_error() >= 1e-5 {
            println!("  {} failed: {:?}", obj.describe(), r.blocks.iter().filter(|b| b.max_rel_error >= 1e-5).collect::<Vec<_>>());
        }
        model_worst = model_worst.max(r.max_rel_error());
    }
    lines.push(format!("encoder+head {model_worst:.1e}"));
    worst = worst.max(model_worst);
    let pass = worst < 1e-4;
    report(3, "gradient suite", pass, &format!("max rel error per kind: {}", lines.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_04_shapes_and_rejections() {
    let _g = serial();
    let range_geometry = SyntheticSceneSpec::default().range_geometry();
    let mut built = 0;
    let mut rejected = Vec::new();
    let mut failures = Vec::new();
    for family in [EncoderFamily::Vgg16m, EncoderFamily::Vgg16] {
        for fusion in FusionVariant::ALL {
            for repr in LidarKind::ALL {
                let cfg = ArchConfig::mu(family, fusion, repr);
                let pre = Preprocessor::new(cfg.input_size, [0.0; 3]);
                match Detector::<f32>::build(cfg, ClassSet::default(), AnchorGeometry::default(), pre) {
                    Err(Error::IncompatibleCombination(_)) => rejected.push((family, fusion, repr)),
                    Err(e) => failures.push(format!("{family:?}/{fusion:?}/{repr:?}: {e}")),
                    Ok(d) => {
                        let depth = match repr {
                            LidarKind::Range => [1, 1, range_geometry.rows, range_geometry.cols],
                            _ => [1, 1, 64, 192],
                        };
                        let input = NetInput {
                            rgb: Tensor::zeros([1, 3, 64, 192]),
                            depth: Some(Tensor::filled(depth, 0.5)),
                        };
                        let feat = d.graph.infer(&input).unwrap();
                        if (feat.height(), feat.width()) != (4, 12) {
                            failures.push(format!("{family:?}/{fusion:?}/{repr:?}: {:?}", feat.shape()));
                        }
                        built += 1;
                    }
                }
            }
        }
    }
    let expected_rejections = vec![
        (EncoderFamily::Vgg16m, FusionVariant::Early, LidarKind::Range),
        (EncoderFamily::Vgg16, FusionVariant::Early, LidarKind::Range),
        (EncoderFamily::Vgg16, FusionVariant::Middle, LidarKind::Range),
    ];
    let pass = failures.is_empty() && rejected == expected_rejections;
    report(
        4,
        "shape invariant",
        pass,
        &format!("{built} configurations give 4x12 maps; rejected {rejected:?}; problems {failures:?}"),
    );
    assert!(pass);
}

/// Printed per-class APs (car, truck, tram, pedestrian, cyclist, van) and
/// mAP of every published result row.
const PUBLISHED_ROWS: &[(&str, [f64; 6], f64)] = &[
    ("vgg16m good none/rgb", [0.741, 0.817, 0.678, 0.417, 0.587, 0.672], 0.651),
    ("vgg16m good early/sparse", [0.751, 0.842, 0.725, 0.433, 0.593, 0.690], 0.672),
    ("vgg16m good early/dense", [0.746, 0.850, 0.740, 0.426, 0.566, 0.702], 0.673),
    ("vgg16m good middle/range", [0.740, 0.735, 0.641, 0.419, 0.579, 0.642], 0.626),
    ("vgg16m good middle/sparse", [0.750, 0.822, 0.733, 0.479, 0.595, 0.665], 0.674),
    ("vgg16m good middle/dense", [0.751, 0.831, 0.751, 0.442, 0.611, 0.697], 0.680),
    ("vgg16m good late/range", [0.745, 0.765, 0.736, 0.419, 0.570, 0.638], 0.646),
    ("vgg16m good late/sparse", [0.745, 0.829, 0.737, 0.445, 0.548, 0.658], 0.660),
    ("vgg16m good late/dense", [0.746, 0.836, 0.760, 0.432, 0.565, 0.711], 0.675),
    ("vgg16 good none/rgb", [0.782, 0.883, 0.878, 0.505, 0.693, 0.780], 0.753),
    ("vgg16 good early/sparse", [0.784, 0.888, 0.800, 0.558, 0.709, 0.785], 0.757),
    ("vgg16 good early/dense", [0.776, 0.912, 0.871, 0.509, 0.729, 0.778], 0.762),
    ("vgg16 good middle/sparse", [0.781, 0.899, 0.872, 0.517, 0.699, 0.767], 0.756),
    ("vgg16 good middle/dense", [0.780, 0.908, 0.849, 0.511, 0.714, 0.774], 0.756),
    ("vgg16 good late/range", [0.780, 0.899, 0.881, 0.514, 0.687, 0.778], 0.756),
    ("vgg16 good late/sparse", [0.776, 0.876, 0.864, 0.512, 0.708, 0.766], 0.754),
    ("vgg16 good late/dense", [0.777, 0.885, 0.861, 0.516, 0.712, 0.782], 0.758),
    ("vgg16m clean-trained adverse early", [0.524, 0.451, 0.410, 0.271, 0.333, 0.408], 0.407),
    ("vgg16m clean-trained adverse middle", [0.545, 0.528, 0.418, 0.272, 0.328, 0.440], 0.422),
    ("vgg16m clean-trained adverse late", [0.547, 0.538, 0.415, 0.279, 0.370, 0.455], 0.434),
    ("vgg16 clean-trained adverse early", [0.610, 0.671, 0.592, 0.381, 0.505, 0.575], 0.556),
    ("vgg16 clean-trained adverse middle", [0.609, 0.668, 0.590, 0.400, 0.516, 0.568], 0.559),
    ("vgg16 clean-trained adverse late", [0.607, 0.673, 0.632, 0.395, 0.538, 0.583], 0.571),
    ("vgg16m adverse-trained early kitti", [0.732, 0.784, 0.588, 0.390, 0.535, 0.621], 0.609),
    ("vgg16m adverse-trained early adverse", [0.689, 0.657, 0.433, 0.343, 0.413, 0.522], 0.510),
    ("vgg16m adverse-trained middle kitti", [0.738, 0.775, 0.606, 0.414, 0.541, 0.628], 0.617),
    ("vgg16m adverse-trained middle adverse", [0.697, 0.667, 0.474, 0.363, 0.431, 0.539], 0.529),
    ("vgg16m adverse-trained late kitti", [0.736, 0.765, 0.681, 0.425, 0.519, 0.644], 0.628),
    ("vgg16m adverse-trained late adverse", [0.698, 0.663, 0.488, 0.372, 0.408, 0.547], 0.529),
    ("vgg16 adverse-trained early kitti", [0.795, 0.899, 0.888, 0.538, 0.752, 0.806], 0.780),
    ("vgg16 adverse-trained early adverse", [0.766, 0.826, 0.745, 0.498, 0.679, 0.719], 0.707),
    ("vgg16 adverse-trained middle kitti", [0.801, 0.922, 0.915, 0.522, 0.794, 0.817], 0.795),
    ("vgg16 adverse-trained middle adverse", [0.772, 0.856, 0.778, 0.495, 0.705, 0.732], 0.723),
    ("vgg16 adverse-trained late kitti", [0.798, 0.907, 0.962, 0.556, 0.758, 0.839], 0.805),
    ("vgg16 adverse-trained late adverse", [0.766, 0.851, 0.801, 0.506, 0.690, 0.758], 0.729),
];

#[test]
fn criterion_05_map_aggregation_matches_published_rows() {
    let _g = serial();
    let mut off = Vec::new();
    let mut worst_ok = 0.0f64;
    for (label, aps, printed) in PUBLISHED_ROWS {
        let diff = (mean_ap(aps) - printed).abs();
        if diff > 0.005 {
            off.push(format!("{label}: mean {:.4} vs printed {printed:.3}", mean_ap(aps)));
        } else {
            worst_ok = worst_ok.max(diff);
        }
    }
    let pass = off.is_empty();
    report(
        5,
        "mAP aggregation",
        pass,
        &format!(
            "{}/{} rows within 0.005 (largest passing gap {worst_ok:.4}); outside: {off:?}",
            PUBLISHED_ROWS.len() - off.len(),
            PUBLISHED_ROWS.len()
        ),
    );
    assert!(pass, "rows whose class mean disagrees with the printed mAP: {off:?}");
}

fn tiny_frame(i: usize) -> SensorFrame {
    let mut lidar = DepthImage::empty(24, 8);
    lidar.data.iter_mut().enumerate().for_each(|(j, v)| *v = 2.0 + ((i + j) % 13) as f32);
    SensorFrame {
        rgb: RgbImage::filled(24, 8, [(i % 200) as u8, 40, 90]),
        lidar,
        lidar_kind: LidarKind::Dense,
        boxes: vec![],
        tag: Default::default(),
    }
}

#[test]
fn criterion_06_corruption_ratio() {
    let _g = serial();
    let base: Vec<SensorFrame> = (0..7000).map(tiny_frame).collect();
    let spec = CorruptionSpec {
        seed: 6,
        ..Default::default()
    };
    let a = synthesize_adverse_dataset(&base, &spec).unwrap();
    let b = synthesize_adverse_dataset(&base, &spec).unwrap();
    let mut counts = [0usize; 3];
    for (i, f) in a.iter().enumerate() {
        assert_eq!(f.tag.category, category_for(&spec, i as u64));
        counts[match f.tag.category {
            Category::Clean => 0,
            Category::Partial => 1,
            Category::CameraFailed | Category::LidarFailed => 2,
        }] += 1;
    }
    let fractions = counts.map(|c| c as f64 / 7000.0);
    let target = [1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0];
    let within = fractions.iter().zip(&target).all(|(f, t)| (f - t).abs() <= 0.02);
    let reproducible = a == b;
    let pass = within && reproducible;
    report(
        6,
        "corruption ratio",
        pass,
        &format!("clean/partial/failed = {:.4}/{:.4}/{:.4}; rerun identical: {reproducible}", fractions[0], fractions[1], fractions[2]),
    );
    assert!(pass);
}

fn mu_detector(fusion: FusionVariant, frames: &[SensorFrame], seed: u64) -> Detector {
    let cfg = ArchConfig::mu(EncoderFamily::Vgg16m, fusion, LidarKind::Dense);
    let pre = Preprocessor::new(cfg.input_size, rgb_mean(frames.iter().map(|f| &f.rgb)));
    Detector::new(cfg, ClassSet::default(), AnchorGeometry::default(), pre, seed).unwrap()
}

#[test]
fn criterion_07_overfit_sanity() {
    let _g = serial();
    let spec = SyntheticSceneSpec::default();
    let frames = synthetic_frames(&spec, 16, LidarKind::Dense, DENSIFY_WINDOW).unwrap();
    let mut present = [false; 6];
    frames.iter().flat_map(|f| &f.boxes).for_each(|b| present[b.class_id] = true);
    assert!(present.iter().all(|&p| p), "every class must occur in the overfit set");
    let cfg = TrainConfig {
        iterations: 2000,
        batch_size: 4,
        momentum: 0.9,
        schedule: LrSchedule { base: 0.001, step: 500 },
        seed: 0,
        ..Default::default()
    };
    let mut results = Vec::new();
    let mut pass = true;
    for fusion in FusionVariant::ALL {
        let mut d = mu_detector(fusion, &frames, 0);
        let t = Instant::now();
        train(&mut d, &frames, &[], &cfg, None).unwrap();
        let secs = t.elapsed().as_secs_f64();
        let map = evaluate(&d, &frames, &DecodeParams::default(), 0.5).unwrap().map;
        pass &= map >= 0.9 && secs < 600.0;
        results.push(format!("{} mAP {map:.3} in {secs:.0} s", fusion.name()));
    }
    report(7, "overfit sanity", pass, &results.join("; "));
    assert!(pass);
}

#[test]
fn criterion_08_robustness_trend() {
    let _g = serial();
    let spec = SyntheticSceneSpec::default();
    let clean = synthetic_frames(&spec, 500, LidarKind::Dense, DENSIFY_WINDOW).unwrap();
    let adverse = synthesize_adverse_dataset(
        &clean,
        &CorruptionSpec {
            seed: 11,
            ..Default::default()
        },
    )
    .unwrap();
    let eval_spec = SyntheticSceneSpec {
        seed: 999,
        ..Default::default()
    };
    let failed: Vec<SensorFrame> = synthetic_frames(&eval_spec, 100, LidarKind::Dense, DENSIFY_WINDOW)
        .unwrap()
        .iter()
        .map(|f| fail_sensor(f, Modality::Lidar))
        .collect();
    let run = |fusion: FusionVariant, set: &[SensorFrame], seed: u64| -> f64 {
        let mut d = mu_detector(fusion, set, seed);
        let cfg = TrainConfig {
            iterations: 2000,
            schedule: LrSchedule { base: 0.001, step: 1000 },
            seed,
            ..Default::default()
        };
        train(&mut d, set, &[], &cfg, None).unwrap();
        evaluate(&d, &failed, &DecodeParams::default(), 0.5).unwrap().map
    };
    let seeds = [0u64, 1, 2];
    let mut med = Vec::new();
    let mut detail = Vec::new();
    for fusion in [FusionVariant::Early, FusionVariant::Middle, FusionVariant::Late] {
        let mut maps: Vec<f64> = seeds.iter().map(|&s| run(fusion, &adverse, s)).collect();
        detail.push(format!("{} {:.3?}", fusion.name(), maps));
        med.push(median(&mut maps));
    }
    let mut clean_late: Vec<f64> = seeds.iter().map(|&s| run(FusionVariant::Late, &clean, s)).collect();
    detail.push(format!("late clean-trained {clean_late:.3?}"));
    let clean_med = median(&mut clean_late);
    let (early, middle, late) = (med[0], med[1], med[2]);
    let ordered = late >= middle && middle >= early;
    let gain = late - clean_med;
    let pass = ordered && gain >= 0.10;
    report(
        8,
        "robustness trend",
        pass,
        &format!(
            "lidar-failed median mAP early {early:.3} <= middle {middle:.3} <= late {late:.3}: {ordered}; late gain over clean-trained {:+.1} pts [{}]",
            100.0 * gain,
            detail.join("; ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_timing_ordering() {
    let _g = serial();
    let spec = SyntheticSceneSpec::default();
    let frame = synthetic_frames(&spec, 1, LidarKind::Dense, DENSIFY_WINDOW).unwrap().remove(0);
    let time = |fusion| {
        let d = mu_detector(fusion, std::slice::from_ref(&frame), 0);
        bench_inference(&d, &frame, 100, 5).unwrap().median_ms
    };
    let none = time(FusionVariant::None);
    let early = time(FusionVariant::Early);
    let late = time(FusionVariant::Late);
    let pass = none < late && early < late;
    report(
        9,
        "timing ordering",
        pass,
        &format!("median ms: none {none:.3}, early {early:.3}, late {late:.3}"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_format_round_trips() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut checked = [0usize; 3];
    let mut broken = Vec::new();
    for _ in 0..20 {
        let mut cloud = PointCloud::new();
        for _ in 0..rng.gen_range(0..500) {
            let p = Point3::new(
                rng.gen_range(-80.0f32..80.0) as f64,
                rng.gen_range(-80.0f32..80.0) as f64,
                rng.gen_range(-3.0f32..3.0) as f64,
            );
            cloud.push(p, rng.gen());
        }
        let bytes = write_point_cloud(&cloud);
        if write_point_cloud(&read_point_cloud(&bytes).unwrap()) != bytes {
            broken.push(format!("point cloud of {} points", cloud.len()));
        }
        checked[0] += 1;

        let (w, h) = (rng.gen_range(1..120), rng.gen_range(1..60));
        let density = rng.gen_range(0.0..1.0);
        let depth = random_sparse(&mut rng, w, h, density);
        let png = encode_depth_png(&depth).unwrap();
        if encode_depth_png(&decode_depth_png(&png).unwrap()).unwrap() != png {
            broken.push(format!("{w}x{h} depth PNG"));
        }
        checked[1] += 1;
    }
    for fusion in FusionVariant::ALL {
        for repr in LidarKind::ALL {
            for family in [EncoderFamily::Vgg16m, EncoderFamily::Vgg16] {
                let cfg = ArchConfig::mu(family, fusion, repr);
                if cfg.validate().is_err() {
                    continue;
                }
                let pre = Preprocessor::new(cfg.input_size, [rng.gen(), rng.gen(), rng.gen()]);
                let d = Detector::new(cfg, ClassSet::default(), AnchorGeometry::default(), pre, rng.gen()).unwrap();
                let bytes = encode_checkpoint(&d).unwrap();
                if encode_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap() != bytes {
                    broken.push(format!("{family:?}/{fusion:?}/{repr:?} checkpoint"));
                }
                checked[2] += 1;
            }
        }
    }
    let pass = broken.is_empty();
    report(
        10,
        "format round-trips",
        pass,
        &format!(
            "{} point clouds, {} depth PNGs, {} checkpoints; not byte-identical: {broken:?}",
            checked[0], checked[1], checked[2]
        ),
    );
    assert!(pass);
}
