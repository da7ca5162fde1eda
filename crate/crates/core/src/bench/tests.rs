use super::*;
use crate::search::mask_overlap;

fn rect_truth(h: usize, w: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> LabelMask {
    let mut m = LabelMask::zeros(h, w);
    for y in y0..y1 {
        for x in x0..x1 {
            m.set(y, x, 1);
        }
    }
    m
}

#[test]
fn occlusion_pct_constructed_cases() {
    // 40 object pixels, 10 of them covered
    let truth = rect_truth(10, 10, 0, 0, 8, 5);
    let mut occ = BinaryMap::new(10, 10);
    assert_eq!(occlusion_pct(&truth, &occ).unwrap(), 0.0);
    occ.fill_rect(0, 0, 2, 5);
    assert_eq!(occlusion_pct(&truth, &occ).unwrap(), 25.0);
    occ.fill_rect(0, 0, 10, 10);
    assert_eq!(occlusion_pct(&truth, &occ).unwrap(), 100.0);
    assert_eq!(occlusion_pct(&LabelMask::zeros(10, 10), &occ).unwrap(), 0.0);
    assert!(occlusion_pct(&truth, &BinaryMap::new(3, 3)).is_err());
}

#[test]
fn corrupt_mask_cases() {
    let truth = rect_truth(8, 8, 1, 1, 7, 7);
    let empty = BinaryMap::new(8, 8);
    assert_eq!(corrupt_mask(&truth, &empty, &Corruption::EraseOccluded), truth);
    let mut full = BinaryMap::new(8, 8);
    full.fill_rect(0, 0, 8, 8);
    assert!(corrupt_mask(&truth, &full, &Corruption::EraseOccluded).is_background());
    // 9 of 36 object pixels erased: 25% occlusion
    let mut quarter = BinaryMap::new(8, 8);
    quarter.fill_rect(1, 1, 4, 4);
    assert_eq!(occlusion_pct(&truth, &quarter).unwrap(), 25.0);
    let c = corrupt_mask(&truth, &quarter, &Corruption::EraseOccluded);
    assert_eq!(mask_overlap(&truth, &c).unwrap(), 1.0 - 2.0 * 9.0 / 64.0);
    let noisy = Corruption::EraseSaltNoise { fraction: 0.25, seed: 3 };
    let a = corrupt_mask(&truth, &empty, &noisy);
    assert_eq!(a, corrupt_mask(&truth, &empty, &noisy));
    let flipped = a.data().iter().zip(truth.data()).filter(|(x, y)| x != y).count();
    assert!(flipped > 4 && flipped < 30, "{flipped}");
    assert!(a.labels().iter().all(|&l| l <= 1));
}

#[test]
fn pose_error_cases() {
    let a = PoseVector::new([0.1, 0.2, 2.0], [0.1, 0.2, 0.3], vec![]);
    assert_eq!(pose_error(&a, &a), PoseError::default());
    let b = PoseVector::new([0.1, 0.2, 2.03], [0.1, 0.2, 0.3], vec![]);
    let e = pose_error(&b, &a);
    assert!((e.depth_cm - 3.0).abs() < 1e-9 && e.in_plane_cm == 0.0 && (e.position_cm - 3.0).abs() < 1e-9);
    let y1 = PoseVector::new([0.0; 3], [0.0, 0.0, 359f64.to_radians()], vec![]);
    let y2 = PoseVector::new([0.0; 3], [0.0, 0.0, 1f64.to_radians()], vec![]);
    assert!((pose_error(&y1, &y2).attitude_deg[2] - 2.0).abs() < 1e-9);
    let c = PoseVector::new([0.13, 0.24, 2.0], [0.1, 0.2, 0.3], vec![]);
    assert!((pose_error(&c, &a).in_plane_cm - 5.0).abs() < 1e-9);
}

#[test]
fn single_frame_sequence_is_consistent() {
    let mut cfg = SceneConfig::forearm(64, 2.0);
    cfg.length = 1;
    let s = generate_sequence(&cfg, 9).unwrap();
    assert_eq!((s.frames.len(), s.masks.len(), s.poses.len(), s.occluders.len()), (1, 1, 1, 1));
    let rendered = crate::render::render_mask(&cfg.model, &cfg.camera, &s.poses[0]).unwrap();
    assert_eq!(rendered, s.masks[0]);
    assert_eq!(s.frames[0].shape(), &[1, 1, 64, 64]);
}

#[test]
fn generation_is_deterministic_and_labels_match_visible_links() {
    let cfg = SceneConfig::forearm(64, 2.0);
    let a = generate_sequence(&cfg, 17).unwrap();
    assert_eq!(a, generate_sequence(&cfg, 17).unwrap());
    assert_ne!(a.poses, generate_sequence(&cfg, 18).unwrap().poses);
    for (m, p) in a.masks.iter().zip(&a.poses) {
        // each link rendered alone tells which labels can be visible
        let mut visible = std::collections::BTreeSet::from([0u8]);
        let t = crate::render::forward_kinematics(&cfg.model, p).unwrap();
        assert_eq!(t.len(), cfg.model.links().len());
        for l in m.labels() {
            visible.insert(l);
        }
        let model_labels: std::collections::BTreeSet<u8> =
            cfg.model.links().iter().filter(|k| !k.mesh.is_empty()).map(|k| k.label).collect();
        assert!(visible.iter().all(|l| *l == 0 || model_labels.contains(l)));
        assert!(m.object_pixels() >= cfg.min_object_pixels);
    }
    // poses move smoothly
    for w in a.poses.windows(2) {
        let e = pose_error(&w[1], &w[0]);
        assert!(e.position_cm < 10.0, "{e:?}");
    }
}

#[test]
fn frames_show_object_brighter_than_background() {
    let cfg = SceneConfig::moving_rectangle(32);
    let s = generate_sequence(&cfg, 4).unwrap();
    for (f, m) in s.frames.iter().zip(&s.masks) {
        for (&v, &l) in f.data().iter().zip(m.data()) {
            if l == 1 {
                assert!(v > 0.9);
            } else {
                assert!(v < 0.4);
            }
        }
    }
}

#[test]
fn impossible_frustum_is_reported() {
    let mut cfg = SceneConfig::moving_rectangle(32);
    cfg.distance = 0.3; // object fills and overflows the image
    cfg.depth_jitter = 0.0;
    cfg.retries = 3;
    assert!(matches!(generate_sequence(&cfg, 1), Err(Error::InvalidConfiguration(_))));
    cfg.length = 0;
    assert!(generate_sequence(&cfg, 1).is_err());
}

#[test]
fn occlusion_targets_are_met() {
    let cfg = SceneConfig::forearm(64, 1.5);
    let clean = generate_sequence(&cfg, 5).unwrap();
    let mut zero = clean.clone();
    inject_occlusion(&mut zero, 0.0, 1).unwrap();
    assert_eq!(zero.frames, clean.frames);
    assert!(zero.occlusion.iter().all(|&p| p == 0.0));

    let mut full = clean.clone();
    inject_occlusion(&mut full, 100.0, 1).unwrap();
    assert!(full.occlusion.iter().all(|&p| p == 100.0));
    for (f, m) in full.frames.iter().zip(&full.masks) {
        for (&v, &l) in f.data().iter().zip(m.data()) {
            if l != 0 {
                assert_eq!(v, 0.0);
            }
        }
    }
    assert_eq!(full.occlusion_bin, OcclusionBin::Heavy);

    let mut half = clean.clone();
    let out = inject_occlusion(&mut half, 50.0, 2).unwrap();
    assert!(!out.warning);
    assert_eq!(half.masks, clean.masks);
    assert_eq!(half.poses, clean.poses);
    for (k, &p) in half.occlusion.iter().enumerate() {
        assert!((45.0..=55.0).contains(&p), "{p}");
        assert_eq!(p, occlusion_pct(&half.masks[k], &half.occluders[k]).unwrap());
    }
    assert_eq!(half.occlusion_bin, OcclusionBin::Medium);
    assert!(inject_occlusion(&mut half, 101.0, 0).is_err());
}

#[test]
fn dataset_roundtrip_on_disk() {
    let spec = DatasetSpec {
        scene: SceneConfig { length: 3, ..SceneConfig::moving_rectangle(32) },
        sequences: 2,
        distances: vec![],
        occlusion_targets: vec![0.0, 30.0],
        bins: DistanceBins::default(),
        seed: 42,
    };
    let data = generate_dataset(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &data).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.masks, b.masks);
        assert_eq!(a.occluders, b.occluders);
        assert_eq!(a.occlusion, b.occlusion);
        assert_eq!(a.poses, b.poses);
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert!(fa.max_abs_diff(fb) <= 0.5 / 255.0 + 1e-6);
        }
    }
    assert!(dir.path().join("seq_0001/mask_0002.pgm").exists());
    let other = tempfile::tempdir().unwrap();
    write_dataset(other.path(), &generate_dataset(&spec).unwrap()).unwrap();
    for f in ["meta.json", "poses.jsonl", "frame_0001.pgm"] {
        let p = format!("seq_0001/{f}");
        assert_eq!(std::fs::read(dir.path().join(&p)).unwrap(), std::fs::read(other.path().join(&p)).unwrap());
    }
}

fn frame(seq: usize, d: DistanceBin, o: OcclusionBin, pos: f64, converged: bool) -> FrameError {
    FrameError {
        sequence: seq,
        frame: 0,
        distance: d,
        occlusion: o,
        converged,
        error: PoseError { position_cm: pos, in_plane_cm: pos / 2.0, depth_cm: pos / 3.0, attitude_deg: [pos; 3] },
    }
}

#[test]
fn report_aggregation_and_layout() {
    use DistanceBin as D;
    use OcclusionBin as O;
    let frames = vec![
        frame(0, D::Short, O::Light, 1.0, true),
        frame(0, D::Short, O::Light, 2.0, true),
        frame(1, D::Medium, O::Heavy, 6.0, true),
        frame(2, D::Large, O::Heavy, 50.0, false),
    ];
    let r = BenchmarkReport::from_frames(frames, DistanceBins::default());
    assert_eq!(r.records.len(), 2);
    let weighted: f64 = r.records.iter().map(|x| x.stats.position_cm * x.stats.count as f64).sum::<f64>()
        / r.records.iter().map(|x| x.stats.count as f64).sum::<f64>();
    assert!((weighted - r.average.position_cm).abs() < 1e-9);
    assert_eq!(r.average.count, 3);
    let table = r.to_table();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 12);
    assert!(lines[2].contains("Average"));
    assert!(lines[11].contains("Heavy") && lines[11].contains("--"));
    assert!(lines[3].starts_with("Short (0-1.5m)"));
    assert_eq!(r.to_csv().lines().count(), 3);
}
