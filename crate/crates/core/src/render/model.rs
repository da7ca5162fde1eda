use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{vec3, PoseVector};
use crate::error::{ensure, invalid_arg, Error, Result};

/// Triangle mesh in link-local coordinates (metres).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    /// Axis-aligned box with extents `size` centred on `center`, 12 triangles.
    pub fn cuboid(size: [f64; 3], center: [f64; 3]) -> Mesh {
        let mut mesh = Mesh::default();
        mesh.add_cuboid(size, center);
        mesh
    }

    pub fn add_cuboid(&mut self, size: [f64; 3], center: [f64; 3]) {
        let base = self.vertices.len();
        for i in 0..8 {
            let sx = if i & 1 == 0 { -0.5 } else { 0.5 };
            let sy = if i & 2 == 0 { -0.5 } else { 0.5 };
            let sz = if i & 4 == 0 { -0.5 } else { 0.5 };
            self.vertices.push([
                center[0] + sx * size[0],
                center[1] + sy * size[1],
                center[2] + sz * size[2],
            ]);
        }
        const FACES: [[usize; 4]; 6] = [
            [0, 1, 3, 2],
            [4, 6, 7, 5],
            [0, 4, 5, 1],
            [2, 3, 7, 6],
            [0, 2, 6, 4],
            [1, 5, 7, 3],
        ];
        for f in FACES {
            self.triangles.push([base + f[0], base + f[1], base + f[2]]);
            self.triangles.push([base + f[0], base + f[2], base + f[3]]);
        }
    }

    /// Flat rectangle in the local z = 0 plane.
    pub fn rectangle(width: f64, height: f64) -> Mesh {
        let (w, h) = (width / 2.0, height / 2.0);
        Mesh {
            vertices: vec![[-w, -h, 0.0], [w, -h, 0.0], [w, h, 0.0], [-w, h, 0.0]],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }
}

/// One rigid part of an articulated model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    pub mesh: Mesh,
    /// class label written into masks, >= 1
    pub label: u8,
    /// index of the parent link; `None` for links attached to the base frame
    pub parent: Option<usize>,
    /// joint origin in the parent frame
    pub origin: [f64; 3],
    /// revolute joint axis in the parent frame, `None` for a fixed link
    pub axis: Option<[f64; 3]>,
}

/// Ordered kinematic tree. Parents always precede their children.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedModel {
    links: Vec<Link>,
}

impl ArticulatedModel {
    pub fn new(links: Vec<Link>) -> Result<Self> {
        for (i, link) in links.iter().enumerate() {
            ensure(link.label >= 1, || format!("link '{}' has label 0, which is reserved for background", link.name))?;
            if let Some(p) = link.parent {
                ensure(p < i, || format!("link '{}' must come after its parent (index {p})", link.name))?;
            }
            if let Some(a) = link.axis {
                let n = vec3(a).norm();
                ensure(n.is_finite() && n > 1e-12, || format!("link '{}' has a degenerate joint axis", link.name))?;
            }
            for t in &link.mesh.triangles {
                ensure(t.iter().all(|&v| v < link.mesh.vertices.len()), || {
                    format!("link '{}' has a triangle index out of range", link.name)
                })?;
            }
        }
        Ok(ArticulatedModel { links })
    }

    /// A single fixed flat rectangle facing the camera at zero attitude.
    pub fn rectangle(width: f64, height: f64, label: u8) -> Self {
        Self::rigid("plate", Mesh::rectangle(width, height), label)
    }

    pub fn rigid(name: &str, mesh: Mesh, label: u8) -> Self {
        ArticulatedModel::new(vec![Link {
            name: name.to_string(),
            mesh,
            label,
            parent: None,
            origin: [0.0; 3],
            axis: None,
        }])
        .expect("valid rigid model")
    }

    /// Shoulder block with two shoulder joints (pitch about y, yaw about z)
    /// and an elbow about z. Labels: shoulder 1, upper arm 2, forearm 3.
    pub fn forearm() -> Self {
        let link = |name: &str, mesh: Mesh, label, parent, origin, axis| Link {
            name: name.to_string(),
            mesh,
            label,
            parent,
            origin,
            axis,
        };
        let links = vec![
            link("shoulder", Mesh::cuboid([0.12, 0.12, 0.12], [0.0; 3]), 1, None, [0.0; 3], None),
            link("shoulder_pitch", Mesh::default(), 2, Some(0), [0.0; 3], Some([0.0, 1.0, 0.0])),
            link(
                "upper_arm",
                Mesh::cuboid([0.28, 0.07, 0.07], [0.18, 0.0, 0.0]),
                2,
                Some(1),
                [0.0; 3],
                Some([0.0, 0.0, 1.0]),
            ),
            link(
                "forearm",
                Mesh::cuboid([0.28, 0.055, 0.05], [0.14, 0.0, 0.0]),
                3,
                Some(2),
                [0.32, 0.0, 0.0],
                Some([0.0, 0.0, 1.0]),
            ),
        ];
        ArticulatedModel::new(links).expect("valid forearm model")
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn is_empty(&self) -> bool {
        self.links.iter().all(|l| l.mesh.is_empty())
    }

    pub fn num_joints(&self) -> usize {
        self.links.iter().filter(|l| l.axis.is_some()).count()
    }

    /// Largest label in the model; a segmentation needs `max_label + 1` classes.
    pub fn max_label(&self) -> u8 {
        self.links.iter().filter(|l| !l.mesh.is_empty()).map(|l| l.label).max().unwrap_or(0)
    }

    /// Parses the plain-text model format (see [`to_text`](Self::to_text)).
    pub fn parse(text: &str) -> Result<Self> {
        let mut links: Vec<Link> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse(format!("line {}: {msg}", lineno + 1));
            let words: Vec<&str> = line.split_whitespace().collect();
            let nums = |ws: &[&str], n: usize| -> Result<Vec<f64>> {
                if ws.len() != n {
                    return Err(err(format!("expected {n} numbers after '{}'", words[0])));
                }
                ws.iter().map(|w| w.parse::<f64>().map_err(|_| err(format!("bad number '{w}'")))).collect()
            };
            match words[0] {
                "link" => {
                    if words.len() < 6 || words[2] != "label" || words[4] != "parent" {
                        return Err(err("expected 'link NAME label N parent NAME|-'".into()));
                    }
                    let label = words[3].parse::<u8>().map_err(|_| err(format!("bad label '{}'", words[3])))?;
                    let parent = match words[5] {
                        "-" => None,
                        p => Some(
                            links
                                .iter()
                                .position(|l| l.name == p)
                                .ok_or_else(|| err(format!("unknown parent '{p}'")))?,
                        ),
                    };
                    let mut link = Link {
                        name: words[1].to_string(),
                        mesh: Mesh::default(),
                        label,
                        parent,
                        origin: [0.0; 3],
                        axis: None,
                    };
                    let mut rest = &words[6..];
                    while !rest.is_empty() {
                        if rest.len() < 4 {
                            return Err(err("truncated link attribute".into()));
                        }
                        let v = nums(&rest[1..4], 3)?;
                        match rest[0] {
                            "origin" => link.origin = [v[0], v[1], v[2]],
                            "axis" => link.axis = Some([v[0], v[1], v[2]]),
                            other => return Err(err(format!("unknown link attribute '{other}'"))),
                        }
                        rest = &rest[4..];
                    }
                    links.push(link);
                }
                "v" | "f" | "box" => {
                    let link = links.last_mut().ok_or_else(|| err(format!("'{}' before any link", words[0])))?;
                    match words[0] {
                        "v" => {
                            let v = nums(&words[1..], 3)?;
                            link.mesh.vertices.push([v[0], v[1], v[2]]);
                        }
                        "f" => {
                            if words.len() != 4 {
                                return Err(err("expected 3 vertex indices".into()));
                            }
                            let mut t = [0usize; 3];
                            for (k, w) in words[1..].iter().enumerate() {
                                t[k] = w.parse().map_err(|_| err(format!("bad index '{w}'")))?;
                            }
                            link.mesh.triangles.push(t);
                        }
                        _ => {
                            let v = nums(&words[1..], 6)?;
                            link.mesh.add_cuboid([v[0], v[1], v[2]], [v[3], v[4], v[5]]);
                        }
                    }
                }
                other => return Err(err(format!("unknown directive '{other}'"))),
            }
        }
        ArticulatedModel::new(links).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for link in &self.links {
            let parent = link.parent.map_or("-".to_string(), |p| self.links[p].name.clone());
            let _ = write!(s, "link {} label {} parent {}", link.name, link.label, parent);
            let [x, y, z] = link.origin;
            let _ = write!(s, " origin {x} {y} {z}");
            if let Some([x, y, z]) = link.axis {
                let _ = write!(s, " axis {x} {y} {z}");
            }
            s.push('\n');
            for [x, y, z] in &link.mesh.vertices {
                let _ = writeln!(s, "v {x} {y} {z}");
            }
            for [a, b, c] in &link.mesh.triangles {
                let _ = writeln!(s, "f {a} {b} {c}");
            }
        }
        s
    }
}

/// Camera-frame transform of every link. Joint angles are consumed in link
/// order by the links that have an axis.
pub fn forward_kinematics(model: &ArticulatedModel, pose: &PoseVector) -> Result<Vec<Isometry3<f64>>> {
    let joints = model.num_joints();
    if pose.joints.len() != joints {
        return Err(invalid_arg(format!(
            "pose has {} joint angles but the model has {joints} joints",
            pose.joints.len()
        )));
    }
    let base = pose.isometry();
    let mut out: Vec<Isometry3<f64>> = Vec::with_capacity(model.links.len());
    let mut q = pose.joints.iter();
    for link in &model.links {
        let parent = link.parent.map_or(base, |p| out[p]);
        let mut local = Isometry3::from_parts(Translation3::from(vec3(link.origin)), UnitQuaternion::identity());
        if let Some(axis) = link.axis {
            let angle = *q.next().expect("joint count checked");
            let axis = Unit::new_normalize(vec3(axis));
            local.rotation = UnitQuaternion::from_axis_angle(&axis, angle);
        }
        out.push(parent * local);
    }
    Ok(out)
}

pub(crate) fn transform_point(t: &Isometry3<f64>, p: &[f64; 3]) -> Point3<f64> {
    t * Point3::from(Vector3::new(p[0], p[1], p[2]))
}
