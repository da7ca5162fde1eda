use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;

use super::*;
use crate::mask::LabelMask;

fn cam(size: usize, f: f64) -> CameraModel {
    CameraModel { fx: f, fy: f, ..CameraModel::preset(size) }
}

fn square_at(z: f64) -> PoseVector {
    PoseVector::new([0.0, 0.0, z], [0.0; 3], vec![])
}

fn bbox(mask: &LabelMask) -> Option<(usize, usize, usize, usize)> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) != 0 {
                b = Some(match b {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    b
}

fn centroid(mask: &LabelMask) -> (f64, f64) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) != 0 {
                sx += x as f64;
                sy += y as f64;
                n += 1.0;
            }
        }
    }
    (sx / n, sy / n)
}

// 4x4 row-major homogeneous matrices, written out longhand.
type M4 = [[f64; 4]; 4];

fn mul(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

fn trans(x: f64, y: f64, z: f64) -> M4 {
    [[1.0, 0.0, 0.0, x], [0.0, 1.0, 0.0, y], [0.0, 0.0, 1.0, z], [0.0, 0.0, 0.0, 1.0]]
}

fn rot_x(a: f64) -> M4 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0, 0.0], [0.0, c, -s, 0.0], [0.0, s, c, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

fn rot_y(a: f64) -> M4 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s, 0.0], [0.0, 1.0, 0.0, 0.0], [-s, 0.0, c, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

fn rot_z(a: f64) -> M4 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0, 0.0], [s, c, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

fn apply(m: &M4, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
    }
    out
}

#[test]
fn euler_order_is_z_y_x() {
    let pose = PoseVector::new([0.0; 3], [0.3, -0.7, 1.1], vec![]);
    let oracle = mul(&mul(&rot_z(1.1), &rot_y(-0.7)), &rot_x(0.3));
    let r = pose.rotation();
    for i in 0..3 {
        for j in 0..3 {
            assert!((r[(i, j)] - oracle[i][j]).abs() < 1e-12);
        }
    }
    let back = PoseVector::attitude_of(&r);
    for (a, b) in back.iter().zip([0.3, -0.7, 1.1]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attitude_is_normalized() {
    let p = PoseVector::new([0.0; 3], [-std::f64::consts::PI, 4.0, -4.0], vec![]);
    assert_eq!(p.attitude[0], std::f64::consts::PI);
    assert!((p.attitude[1] - (4.0 - 2.0 * std::f64::consts::PI)).abs() < 1e-12);
    assert!((p.attitude[2] - (2.0 * std::f64::consts::PI - 4.0)).abs() < 1e-12);
}

#[test]
fn zero_pose_gives_identity_transforms() {
    let model = ArticulatedModel::forearm();
    let t = forward_kinematics(&model, &PoseVector::new([0.0; 3], [0.0; 3], vec![0.0; 3])).unwrap();
    assert_eq!(t.len(), 4);
    let p = [0.1, -0.2, 0.3];
    // the forearm link is offset by its joint origin, the rest are identity
    for (i, tr) in t.iter().enumerate() {
        let q = model::transform_point(tr, &p);
        let expect = if i == 3 { [0.42, -0.2, 0.3] } else { p };
        for k in 0..3 {
            assert!((q[k] - expect[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn base_translation_moves_all_links_equally() {
    let model = ArticulatedModel::forearm();
    let q = vec![0.2, -0.4, 0.9];
    let a = forward_kinematics(&model, &PoseVector::new([0.0; 3], [0.1, 0.2, 0.3], q.clone())).unwrap();
    let b = forward_kinematics(&model, &PoseVector::new([0.5, -1.0, 2.0], [0.1, 0.2, 0.3], q)).unwrap();
    for (ta, tb) in a.iter().zip(&b) {
        let d = tb.translation.vector - ta.translation.vector;
        assert!((d - nalgebra::Vector3::new(0.5, -1.0, 2.0)).norm() < 1e-12);
        assert!(ta.rotation.angle_to(&tb.rotation) < 1e-12);
    }
}

#[test]
fn elbow_tip_matches_matrix_chain() {
    let model = ArticulatedModel::forearm();
    let (pos, att, q) = ([0.1, 0.05, 2.0], [0.2, -0.3, 0.4], [0.25, -0.15, FRAC_PI_2]);
    let t = forward_kinematics(&model, &PoseVector::new(pos, att, q.to_vec())).unwrap();
    let base = mul(&trans(pos[0], pos[1], pos[2]), &mul(&mul(&rot_z(att[2]), &rot_y(att[1])), &rot_x(att[0])));
    let chain = mul(&mul(&mul(&base, &rot_y(q[0])), &rot_z(q[1])), &mul(&trans(0.32, 0.0, 0.0), &rot_z(q[2])));
    let tip = [0.28, 0.0, 0.0];
    let expect = apply(&chain, tip);
    let got = model::transform_point(&t[3], &tip);
    for k in 0..3 {
        assert!((got[k] - expect[k]).abs() < 1e-12, "{got:?} vs {expect:?}");
    }
}

#[test]
fn joint_count_mismatch_is_rejected() {
    let model = ArticulatedModel::forearm();
    let err = forward_kinematics(&model, &PoseVector::new([0.0; 3], [0.0; 3], vec![0.0; 2])).unwrap_err();
    assert!(matches!(err, crate::Error::InvalidArgument(_)));
}

#[test]
fn empty_model_renders_nothing() {
    let model = ArticulatedModel::new(vec![]).unwrap();
    let m = render_mask(&model, &CameraModel::preset(32), &square_at(2.0)).unwrap();
    assert!(m.is_background());
}

#[test]
fn unit_square_is_fifty_pixels_wide() {
    let model = ArticulatedModel::rectangle(1.0, 1.0, 1);
    let m = render_mask(&model, &cam(64, 100.0), &square_at(2.0)).unwrap();
    assert_eq!(bbox(&m), Some((7, 7, 56, 56)));
    assert_eq!(silhouette_area(&m, 1), 2500);
}

#[test]
fn rectangle_coverage_matches_pixel_center_count() {
    // Axis-aligned rectangle: the fill rule includes centers on the left and
    // top edges and excludes the right and bottom ones.
    let c = cam(64, 100.0);
    let model = ArticulatedModel::rectangle(0.6, 0.4, 1);
    for (i, &(x, y)) in [(0.0, 0.0), (0.013, -0.021), (0.005, 0.005), (-0.117, 0.2)].iter().enumerate() {
        let z = 2.0;
        let m = render_mask(&model, &c, &PoseVector::new([x, y, z], [0.0; 3], vec![])).unwrap();
        let (l, r) = (c.fx * (x - 0.3) / z + c.cx, c.fx * (x + 0.3) / z + c.cx);
        let (t, b) = (c.fy * (y - 0.2) / z + c.cy, c.fy * (y + 0.2) / z + c.cy);
        let cols = (0..64).filter(|&i| l <= i as f64 + 0.5 && (i as f64 + 0.5) < r).count();
        let rows = (0..64).filter(|&i| t <= i as f64 + 0.5 && (i as f64 + 0.5) < b).count();
        assert_eq!(silhouette_area(&m, 1), cols * rows, "case {i}");
    }
}

#[test]
fn tilted_square_area_within_perimeter_bound() {
    let model = ArticulatedModel::rectangle(1.0, 1.0, 1);
    let m = render_mask(&model, &cam(64, 100.0), &PoseVector::new([0.011, -0.007, 2.0], [0.0, 0.0, 0.3], vec![]))
        .unwrap();
    let area = silhouette_area(&m, 1) as f64;
    assert!((area - 2500.0).abs() <= 200.0, "area {area}");
}

#[test]
fn nearer_part_wins_and_ties_keep_lower_link() {
    let plate = |name: &str, label, z| Link {
        name: name.into(),
        mesh: Mesh::rectangle(0.5, 0.5),
        label,
        parent: None,
        origin: [0.0, 0.0, z],
        axis: None,
    };
    let c = cam(32, 40.0);
    let far_first = ArticulatedModel::new(vec![plate("far", 1, 0.3), plate("near", 2, 0.0)]).unwrap();
    let m = render_mask(&far_first, &c, &square_at(2.0)).unwrap();
    assert_eq!(m.get(16, 16), 2);
    assert_eq!(silhouette_area(&m, 1), 0);
    let tie = ArticulatedModel::new(vec![plate("a", 3, 0.0), plate("b", 2, 0.0)]).unwrap();
    let m = render_mask(&tie, &c, &square_at(2.0)).unwrap();
    assert_eq!(silhouette_area(&m, 2), 0);
    assert_eq!(silhouette_area(&m, 3), 100);
}

#[test]
fn behind_camera_is_empty() {
    let model = ArticulatedModel::forearm();
    let m = render_mask(&model, &CameraModel::preset(64), &PoseVector::new([0.0, 0.0, -2.0], [0.0; 3], vec![0.0; 3]))
        .unwrap();
    assert!(m.is_background());
}

#[test]
fn near_plane_crossing_is_clipped() {
    // A long box reaching from behind the camera to z = 1 m.
    let model = ArticulatedModel::rigid("bar", Mesh::cuboid([0.1, 0.1, 2.0], [0.0, 0.0, 0.0]), 1);
    let c = CameraModel::preset(64);
    let r = render(&model, &c, &PoseVector::new([0.0; 3], [0.0; 3], vec![])).unwrap();
    assert!(r.depth.iter().all(|&d| d.is_infinite() || d >= c.near - 1e-12));
    // the camera sits inside the bar: the walls fill the view without cracks
    // and the far cap closes it at z = 1
    assert_eq!(silhouette_area(&r.mask, 1), 64 * 64);
    assert!((r.depth[32 * 64 + 32] - 1.0).abs() < 1e-12);
}

#[test]
fn depth_of_facing_plane_is_constant() {
    let model = ArticulatedModel::rectangle(1.0, 1.0, 1);
    let r = render(&model, &cam(64, 100.0), &square_at(2.0)).unwrap();
    for (d, &l) in r.depth.iter().zip(r.mask.data()) {
        if l != 0 {
            assert!((d - 2.0).abs() < 1e-12);
        } else {
            assert!(d.is_infinite());
        }
    }
}

#[test]
fn depth_interpolation_is_perspective_correct() {
    // Plane tilted about y; depth along the center row must match the ray/plane
    // intersection z = z0 / (1 - tan(a) * u / f) for u = x - cx.
    let a: f64 = 0.5;
    let model = ArticulatedModel::rectangle(1.0, 1.0, 1);
    let c = cam(64, 60.0);
    let r = render(&model, &c, &PoseVector::new([0.0, 0.0, 2.0], [0.0, a, 0.0], vec![])).unwrap();
    let y = 32;
    for x in 0..64 {
        let d = r.depth[y * 64 + x];
        if d.is_finite() {
            let u = x as f64 + 0.5 - c.cx;
            let expect = 2.0 / (1.0 + a.tan() * u / c.fx);
            assert!((d - expect).abs() < 1e-9, "x {x}: {d} vs {expect}");
        }
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let model = ArticulatedModel::rectangle(1.0, 1.0, 1);
    let bad = PoseVector::new([f64::NAN, 0.0, 2.0], [0.0; 3], vec![]);
    assert!(render_mask(&model, &CameraModel::preset(16), &bad).is_err());
    let c = CameraModel { near: 2.0, far: 1.0, ..CameraModel::preset(16) };
    assert!(render_mask(&model, &c, &square_at(2.0)).is_err());
    assert!(ArticulatedModel::new(vec![Link {
        name: "x".into(),
        mesh: Mesh::default(),
        label: 0,
        parent: None,
        origin: [0.0; 3],
        axis: None
    }])
    .is_err());
    assert!(ArticulatedModel::new(vec![Link {
        name: "x".into(),
        mesh: Mesh::default(),
        label: 1,
        parent: Some(0),
        origin: [0.0; 3],
        axis: None
    }])
    .is_err());
}

#[test]
fn full_frame_and_empty_areas() {
    assert_eq!(silhouette_area(&LabelMask::zeros(5, 7), 1), 0);
    let m = LabelMask::new(5, 7, vec![2; 35]).unwrap();
    assert_eq!(silhouette_area(&m, 2), 35);
}

#[test]
fn model_text_roundtrip() {
    let model = ArticulatedModel::forearm();
    let text = model.to_text();
    let back = ArticulatedModel::parse(&text).unwrap();
    assert_eq!(back, model);
    let boxed = ArticulatedModel::parse("# comment\nlink a label 1 parent -\nbox 1 1 1 0 0 0\n").unwrap();
    assert_eq!(boxed.links()[0].mesh, Mesh::cuboid([1.0; 3], [0.0; 3]));
}

#[test]
fn model_text_errors() {
    for bad in [
        "v 0 0 0\n",
        "link a label 1 parent b\n",
        "link a label x parent -\n",
        "link a label 1 parent - spin 0 0 1\n",
        "link a label 1 parent -\nf 0 1 2\n",
        "link a label 1 parent -\nv 0 0\n",
        "wat\n",
    ] {
        assert!(matches!(ArticulatedModel::parse(bad), Err(crate::Error::Parse(_))), "{bad:?}");
    }
}

#[test]
fn translation_moves_centroid() {
    let model = ArticulatedModel::forearm();
    let c = CameraModel::preset(128);
    let q = vec![0.3, -0.2, 0.8];
    let att = [0.2, 0.4, -0.3];
    let a = render_mask(&model, &c, &PoseVector::new([0.0, 0.0, 2.0], att, q.clone())).unwrap();
    let b = render_mask(&model, &c, &PoseVector::new([0.04, 0.0, 2.0], att, q)).unwrap();
    let shift = centroid(&b).0 - centroid(&a).0;
    let expect = c.fx * 0.04 / 2.0;
    assert!((shift - expect).abs() < 1.0, "{shift} vs {expect}");
}

#[test]
fn doubling_depth_halves_extent() {
    let model = ArticulatedModel::rectangle(0.8, 0.5, 1);
    let c = CameraModel::preset(128);
    let a = bbox(&render_mask(&model, &c, &square_at(1.5)).unwrap()).unwrap();
    let b = bbox(&render_mask(&model, &c, &square_at(3.0)).unwrap()).unwrap();
    let (wa, ha) = ((a.2 - a.0 + 1) as f64, (a.3 - a.1 + 1) as f64);
    let (wb, hb) = ((b.2 - b.0 + 1) as f64, (b.3 - b.1 + 1) as f64);
    assert!((wa / 2.0 - wb).abs() <= 1.0 && (ha / 2.0 - hb).abs() <= 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn render_is_deterministic_and_labels_are_known(
        x in -0.4f64..0.4, y in -0.4f64..0.4, z in 0.6f64..4.0,
        r in -3.1f64..3.1, p in -1.5f64..1.5, w in -3.1f64..3.1,
        q0 in -1.0f64..1.0, q1 in -1.0f64..1.0, q2 in 0.0f64..2.0,
    ) {
        let model = ArticulatedModel::forearm();
        let c = CameraModel::preset(64);
        let pose = PoseVector::new([x, y, z], [r, p, w], vec![q0, q1, q2]);
        let a = render(&model, &c, &pose).unwrap();
        let b = render(&model, &c, &pose).unwrap();
        prop_assert_eq!(&a, &b);
        for l in a.mask.labels() {
            prop_assert!(l == 0 || model.links().iter().any(|k| k.label == l && !k.mesh.is_empty()));
        }
    }
}
