use fusiondet::adverse::{synthesize_adverse_dataset, CorruptionSpec};
use fusiondet::dataset::png::{decode_rgb_png, encode_rgb_png, DEPTH_SCALE};
use fusiondet::dataset::{
    generate_synthetic_scene, read_calibration, read_dataset, read_labels, read_point_cloud, write_calibration,
    write_dataset, write_labels, DatasetMeta, Label, SyntheticSceneSpec, DENSIFY_WINDOW,
};
use fusiondet::detect::{BBox, ClassSet};
use fusiondet::frame::{LidarKind, RgbImage};
use fusiondet::geometry::{project_point, CameraIntrinsics, Extrinsics, Point3};
use fusiondet::Error;

// Rectified KITTI calibration for training frame 000000.
const KITTI_000000: &str = "\
P0: 7.070493000000e+02 0.000000000000e+00 6.040814000000e+02 0.000000000000e+00 0.000000000000e+00 7.070493000000e+02 1.805066000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P1: 7.070493000000e+02 0.000000000000e+00 6.040814000000e+02 -3.797842000000e+02 0.000000000000e+00 7.070493000000e+02 1.805066000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P2: 7.070493000000e+02 0.000000000000e+00 6.040814000000e+02 4.575831000000e+01 0.000000000000e+00 7.070493000000e+02 1.805066000000e+02 -3.454157000000e-01 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 4.981016000000e-03
P3: 7.070493000000e+02 0.000000000000e+00 6.040814000000e+02 -3.341081000000e+02 0.000000000000e+00 7.070493000000e+02 1.805066000000e+02 2.330660000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 3.201153000000e-03
R0_rect: 9.999128000000e-01 1.009263000000e-02 -8.511932000000e-03 -1.012729000000e-02 9.999406000000e-01 -4.037671000000e-03 8.470675000000e-03 4.123522000000e-03 9.999556000000e-01
Tr_velo_to_cam: 6.927964000000e-03 -9.999722000000e-01 -2.757829000000e-03 -2.457729000000e-02 -1.162982000000e-03 2.749836000000e-03 -9.999955000000e-01 -6.127237000000e-02 9.999753000000e-01 6.931141000000e-03 -1.143899000000e-03 -3.321029000000e-01
Tr_imu_to_velo: 9.999976000000e-01 7.553071000000e-04 -2.035826000000e-03 -8.086759000000e-01 -7.854027000000e-04 9.998898000000e-01 -1.482298000000e-02 3.195559000000e-01 2.024406000000e-03 1.482454000000e-02 9.998881000000e-01 -7.997231000000e-01
";

fn classes() -> ClassSet {
    ClassSet::new(["car", "truck", "tram", "pedestrian", "cyclist", "van"].map(String::from).to_vec()).unwrap()
}

/// KITTI's own projection `P2 · R0 · Tr · [x; 1]`, in its x-right, y-down axes.
fn kitti_pixel(text: &str, p: [f64; 3]) -> (f64, f64) {
    let row = |key: &str| -> Vec<f64> {
        let line = text.lines().find(|l| l.starts_with(&format!("{key}:"))).unwrap();
        line[key.len() + 1..].split_whitespace().map(|t| t.parse().unwrap()).collect()
    };
    let (p2, r0, tr) = (row("P2"), row("R0_rect"), row("Tr_velo_to_cam"));
    let velo = [p[0], p[1], p[2], 1.0];
    let cam: Vec<f64> = (0..3).map(|i| (0..4).map(|k| tr[i * 4 + k] * velo[k]).sum()).collect();
    let rect: Vec<f64> = (0..3).map(|i| (0..3).map(|k| r0[i * 3 + k] * cam[k]).sum::<f64>()).chain([1.0]).collect();
    let img: Vec<f64> = (0..3).map(|i| (0..4).map(|k| p2[i * 4 + k] * rect[k]).sum()).collect();
    (img[0] / img[2], img[1] / img[2])
}

#[test]
fn kitti_calibration_reproduces_the_reference_projection() {
    let (intr, ext) = read_calibration(KITTI_000000, 1242, 375).unwrap();
    for p in [[10.0, 2.0, -1.0], [25.0, -4.0, 0.5], [6.0, 0.3, -1.6], [60.0, 12.0, 2.0]] {
        let (u, v) = project_point(&ext.apply(&Point3::new(p[0], p[1], p[2])), &intr).unwrap();
        let (ku, kv) = kitti_pixel(KITTI_000000, p);
        // the file's rotation is orthonormal to ~1e-6 only; the reader snaps it
        assert!((u - ku).abs() < 0.02 && (v - kv).abs() < 0.02, "{p:?}: ({u}, {v}) vs ({ku}, {kv})");
    }
}

#[test]
fn written_calibration_reads_back() {
    let intr = CameraIntrinsics::new(700.0, 690.0, 610.0, 180.0, 0.5, [-0.1, 0.02, 0.0, 1e-3, -2e-3], 1242, 375).unwrap();
    let (c, s) = (0.3f64.cos(), 0.3f64.sin());
    let ext = Extrinsics::new([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], [0.1, -0.2, 0.3]).unwrap();
    let (i2, e2) = read_calibration(&write_calibration(&intr, &ext), 1242, 375).unwrap();
    assert_eq!(i2.width, 1242);
    for (a, b) in [intr.fx, intr.fy, intr.ox, intr.oy, intr.skew].iter().zip([i2.fx, i2.fy, i2.ox, i2.oy, i2.skew]) {
        assert!((a - b).abs() < 1e-9);
    }
    for (a, b) in intr.kappa.iter().zip(i2.kappa) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in ext.rotation.iter().flatten().zip(e2.rotation.iter().flatten()) {
        assert!((a - b).abs() < 1e-11);
    }
    for (a, b) in ext.translation.iter().zip(e2.translation) {
        assert!((a - b).abs() < 1e-11);
    }
}

#[test]
fn malformed_calibrations_are_rejected() {
    let drop_key = KITTI_000000.lines().filter(|l| !l.starts_with("R0_rect")).collect::<Vec<_>>().join("\n");
    assert!(matches!(read_calibration(&drop_key, 1242, 375), Err(Error::MissingKey(k)) if k == "R0_rect"));
    let short = KITTI_000000.replace("P2: 7.070493000000e+02 ", "P2: ");
    assert!(matches!(read_calibration(&short, 1242, 375), Err(Error::MalformedMatrix { .. })));
    let garbage = KITTI_000000.replace("R0_rect: 9.999128000000e-01", "R0_rect: nine");
    assert!(matches!(read_calibration(&garbage, 1242, 375), Err(Error::MalformedMatrix { .. })));
    // optical center outside a tiny image
    assert!(read_calibration(KITTI_000000, 100, 100).is_err());
}

#[test]
fn labels_round_trip_and_keep_unknown_types_aside() {
    let classes = classes();
    let boxes = vec![BBox::new(712.4, 143.0, 810.73, 307.92, 3), BBox::new(0.0, 180.5, 140.25, 370.0, 0)];
    let text = write_labels(&boxes, &classes, false)
        + "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n";
    let labels = read_labels(&text, &classes).unwrap();
    assert_eq!(labels.len(), 3);
    assert_eq!(labels[0], Label::Object(boxes[0]));
    assert_eq!(labels[1], Label::Object(boxes[1]));
    assert!(matches!(&labels[2], Label::Ignore { kind, .. } if kind == "DontCare"));

    let scored = write_labels(&[boxes[0].with_score(0.8125)], &classes, true);
    let back = read_labels(&scored, &classes).unwrap();
    assert_eq!(back[0].object().unwrap().score, 0.8125);
}

#[test]
fn malformed_labels_name_the_line() {
    let classes = classes();
    let good = write_labels(&[BBox::new(1.0, 2.0, 3.0, 4.0, 0)], &classes, false);
    let bad = format!("{good}Car 0.00 0 0.00 1 2 3\n");
    assert!(matches!(read_labels(&bad, &classes), Err(Error::MalformedLine { line: 2, .. })));
    let inverted = "Car 0.00 0 0.00 30 2 10 4 -1 -1 -1 -1000 -1000 -1000 -10\n";
    assert!(matches!(read_labels(inverted, &classes), Err(Error::MalformedLine { line: 1, .. })));
}

#[test]
fn point_cloud_blobs_must_hold_whole_records() {
    assert!(matches!(read_point_cloud(&[0u8; 17]), Err(Error::TruncatedRecord { len: 17 })));
}

#[test]
fn rgb_png_round_trip_is_exact() {
    let mut img = RgbImage::filled(13, 7, [0, 0, 0]);
    for (i, b) in img.data.iter_mut().enumerate() {
        *b = (i * 37 % 256) as u8;
    }
    assert_eq!(decode_rgb_png(&encode_rgb_png(&img).unwrap()).unwrap(), img);
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SyntheticSceneSpec::default();
    let kind = LidarKind::Sparse;
    let geometry = scene.range_geometry();
    let synth: Vec<_> = (0..6).map(|i| generate_synthetic_scene(&scene, i).unwrap()).collect();
    let clean: Vec<_> = synth
        .iter()
        .map(|s| s.sensor_frame(kind, &geometry, DENSIFY_WINDOW).unwrap())
        .collect();
    let corruption = CorruptionSpec {
        seed: 3,
        ..Default::default()
    };
    let frames = synthesize_adverse_dataset(&clean, &corruption).unwrap();
    let extras: Vec<_> = synth.iter().map(|s| s.extras()).collect();
    let meta = DatasetMeta {
        frames: frames.len(),
        lidar_kind: kind,
        classes: classes().names().to_vec(),
        densify_window: DENSIFY_WINDOW,
        range_geometry: geometry,
        scene: Some(scene.clone()),
        corruption: Some(corruption),
    };
    write_dataset(dir.path(), &meta, &frames, Some(&extras)).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.meta, meta);
    assert_eq!(back.frames.len(), frames.len());
    for (a, b) in frames.iter().zip(&back.frames) {
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.tag, b.tag);
        assert_eq!(a.lidar_kind, b.lidar_kind);
        assert_eq!(a.boxes.len(), b.boxes.len());
        for (x, y) in a.boxes.iter().zip(&b.boxes) {
            // labels carry two decimals
            assert_eq!(x.class_id, y.class_id);
            assert!([x.x1 - y.x1, x.y1 - y.y1, x.x2 - y.x2, x.y2 - y.y2].iter().all(|d| d.abs() <= 0.005 + 1e-9));
        }
        for (x, y) in a.lidar.data.iter().zip(&b.lidar.data) {
            assert_eq!(x.is_finite(), y.is_finite());
            if x.is_finite() {
                assert!((x - y).abs() <= 0.5 / DEPTH_SCALE + 1e-6);
            }
        }
    }
    for (i, x) in extras.iter().enumerate() {
        let id = format!("{i:06}");
        let cloud = read_point_cloud(&std::fs::read(dir.path().join("velodyne").join(format!("{id}.bin"))).unwrap()).unwrap();
        assert_eq!(cloud.len(), x.cloud.len());
        let calib = std::fs::read_to_string(dir.path().join("calib").join(format!("{id}.txt"))).unwrap();
        let (intr, _) = read_calibration(&calib, scene.width, scene.height).unwrap();
        assert!((intr.fx - x.intrinsics.fx).abs() < 1e-9);
    }
}

#[test]
fn dataset_with_a_missing_frame_fails() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SyntheticSceneSpec::default();
    let frames = fusiondet::dataset::synthetic_frames(&scene, 2, LidarKind::Dense, DENSIFY_WINDOW).unwrap();
    let meta = DatasetMeta {
        frames: 2,
        lidar_kind: LidarKind::Dense,
        classes: classes().names().to_vec(),
        densify_window: DENSIFY_WINDOW,
        range_geometry: scene.range_geometry(),
        scene: Some(scene.clone()),
        corruption: None,
    };
    write_dataset(dir.path(), &meta, &frames, None).unwrap();
    std::fs::remove_file(dir.path().join("image_2").join("000001.png")).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Io { .. })));
}
