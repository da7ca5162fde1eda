use nalgebra::Point3;

use super::model::transform_point;
use super::{forward_kinematics, ArticulatedModel, CameraModel, PoseVector};
use crate::error::{invalid_arg, Result};
use crate::mask::LabelMask;

/// Label mask plus per-pixel camera depth (`f64::INFINITY` where empty).
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub mask: LabelMask,
    pub depth: Vec<f64>,
}

pub fn render_mask(model: &ArticulatedModel, camera: &CameraModel, pose: &PoseVector) -> Result<LabelMask> {
    Ok(render(model, camera, pose)?.mask)
}

pub fn render(model: &ArticulatedModel, camera: &CameraModel, pose: &PoseVector) -> Result<Rendered> {
    camera.validate()?;
    if !pose.is_finite() {
        return Err(invalid_arg("pose has non-finite components"));
    }
    let transforms = forward_kinematics(model, pose)?;
    let mut target = Rendered {
        mask: LabelMask::zeros(camera.height, camera.width),
        depth: vec![f64::INFINITY; camera.height * camera.width],
    };
    for (link, t) in model.links().iter().zip(&transforms) {
        let cam: Vec<Point3<f64>> = link.mesh.vertices.iter().map(|v| transform_point(t, v)).collect();
        for tri in &link.mesh.triangles {
            let poly = clip(&[cam[tri[0]], cam[tri[1]], cam[tri[2]]], camera.near, camera.far);
            for i in 1..poly.len().saturating_sub(1) {
                raster_triangle(&mut target, camera, [poly[0], poly[i], poly[i + 1]], link.label);
            }
        }
    }
    Ok(target)
}

/// Pixels carrying `label`.
pub fn silhouette_area(mask: &LabelMask, label: u8) -> usize {
    mask.count(label)
}

// Sutherland-Hodgman against z >= near and z <= far.
fn clip(tri: &[Point3<f64>; 3], near: f64, far: f64) -> Vec<Point3<f64>> {
    let mut poly = tri.to_vec();
    if tri.iter().all(|p| p.z >= near && p.z <= far) {
        return poly;
    }
    for (plane, keep_above) in [(near, true), (far, false)] {
        let inside = |p: &Point3<f64>| if keep_above { p.z >= plane } else { p.z <= plane };
        let mut out = Vec::with_capacity(poly.len() + 2);
        for i in 0..poly.len() {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            let (ia, ib) = (inside(&a), inside(&b));
            if ia {
                out.push(a);
            }
            if ia != ib {
                // interpolate from the inside end so both triangles sharing
                // this edge produce the identical point
                let (a, b) = if ia { (a, b) } else { (b, a) };
                let s = (plane - a.z) / (b.z - a.z);
                let mut p = a + (b - a) * s;
                p.z = plane;
                out.push(p);
            }
        }
        poly = out;
        if poly.len() < 3 {
            return Vec::new();
        }
    }
    poly
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

// Edge function evaluated in a fixed vertex order, so that a shared edge seen
// from either triangle gives exactly opposite values and leaves no cracks.
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    if (a.1, a.0) <= (b.1, b.0) {
        orient(a, b, p)
    } else {
        -orient(b, a, p)
    }
}

// With positive orientation in y-down image coordinates, an edge is a top
// edge when it runs horizontally to the right and a left edge when it runs up.
fn top_left(a: (f64, f64), b: (f64, f64)) -> bool {
    (a.1 == b.1 && b.0 > a.0) || b.1 < a.1
}

fn raster_triangle(target: &mut Rendered, camera: &CameraModel, tri: [Point3<f64>; 3], label: u8) {
    let mut s = tri.map(|p| camera.project(&p));
    let mut inv_z = tri.map(|p| 1.0 / p.z);
    let mut area = orient(s[0], s[1], s[2]);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        s.swap(1, 2);
        inv_z.swap(1, 2);
        area = -area;
    }
    let (w, h) = (camera.width, camera.height);
    let min_x = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if max_x < 0.0 || max_y < 0.0 || min_x > w as f64 || min_y > h as f64 {
        return;
    }
    let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
    let x1 = ((max_x - 0.5).floor().min(w as f64 - 1.0)).max(-1.0);
    let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
    let y1 = ((max_y - 0.5).floor().min(h as f64 - 1.0)).max(-1.0);
    if x1 < 0.0 || y1 < 0.0 {
        return;
    }
    let (x1, y1) = (x1 as usize, y1 as usize);
    let edges = [(1, 2), (2, 0), (0, 1)];
    let owned = edges.map(|(i, j)| top_left(s[i], s[j]));
    for py in y0..=y1 {
        let cy = py as f64 + 0.5;
        'pixel: for px in x0..=x1 {
            let p = (px as f64 + 0.5, cy);
            let mut bary = [0.0; 3];
            for (k, &(i, j)) in edges.iter().enumerate() {
                let e = edge(s[i], s[j], p);
                if e < 0.0 || (e == 0.0 && !owned[k]) {
                    continue 'pixel;
                }
                bary[k] = e / area;
            }
            let iz = bary[0] * inv_z[0] + bary[1] * inv_z[1] + bary[2] * inv_z[2];
            let z = 1.0 / iz;
            let idx = py * w + px;
            if z < target.depth[idx] {
                target.depth[idx] = z;
                target.mask.data_mut()[idx] = label;
            }
        }
    }
}
