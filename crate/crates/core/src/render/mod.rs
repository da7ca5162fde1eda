//! Deterministic software rasterizer: posed articulated meshes to label masks.

mod model;
mod raster;

pub use model::{forward_kinematics, ArticulatedModel, Link, Mesh};
pub use raster::{render, render_mask, silhouette_area, Rendered};

use std::f64::consts::PI;

use nalgebra::{Isometry3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Pinhole camera looking down +z, with x right and y down in the image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl CameraModel {
    /// Square preset: focal length `0.9 * size`, centered principal point.
    pub fn preset(size: usize) -> Self {
        let f = 0.9 * size as f64;
        CameraModel {
            fx: f,
            fy: f,
            cx: size as f64 / 2.0,
            cy: size as f64 / 2.0,
            width: size,
            height: size,
            near: 0.05,
            far: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.fx > 0.0 && self.fy > 0.0, || format!("focal lengths must be positive: {} {}", self.fx, self.fy))?;
        ensure(self.near > 0.0 && self.near < self.far, || format!("need 0 < near < far, got {} {}", self.near, self.far))?;
        ensure(self.width > 0 && self.height > 0, || "image size must be positive".to_string())
    }

    /// Image coordinates (pixel units, pixel centers at `+0.5`).
    pub fn project(&self, p: &Point3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Object pose relative to the camera at time `time`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseVector {
    /// position in metres, camera frame
    pub position: [f64; 3],
    /// roll, pitch, yaw in radians
    pub attitude: [f64; 3],
    /// joint angles in radians, in link order
    pub joints: Vec<f64>,
    /// seconds
    pub time: f64,
}

impl PoseVector {
    pub fn new(position: [f64; 3], attitude: [f64; 3], joints: Vec<f64>) -> Self {
        PoseVector { position, attitude: attitude.map(normalize_angle), joints, time: 0.0 }
    }

    pub fn at(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    /// `R_z(yaw) R_y(pitch) R_x(roll)`.
    pub fn rotation(&self) -> Rotation3<f64> {
        let [roll, pitch, yaw] = self.attitude;
        Rotation3::from_euler_angles(roll, pitch, yaw)
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        let [x, y, z] = self.position;
        Isometry3::from_parts(Translation3::new(x, y, z), UnitQuaternion::from_rotation_matrix(&self.rotation()))
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(&self.attitude).chain(&self.joints).all(|v| v.is_finite())
    }

    /// Search coordinates: position, attitude and optionally joints.
    pub fn to_search_vec(&self, with_joints: bool) -> Vec<f64> {
        let mut v: Vec<f64> = self.position.iter().chain(&self.attitude).copied().collect();
        if with_joints {
            v.extend_from_slice(&self.joints);
        }
        v
    }

    /// Inverse of [`to_search_vec`](Self::to_search_vec); attitude is re-normalized.
    pub fn from_search_vec(&self, v: &[f64]) -> PoseVector {
        let mut out = self.clone();
        out.position.copy_from_slice(&v[0..3]);
        for i in 0..3 {
            out.attitude[i] = normalize_angle(v[3 + i]);
        }
        if v.len() > 6 {
            out.joints.copy_from_slice(&v[6..]);
        }
        out
    }

    /// Extracts roll/pitch/yaw from a rotation matrix.
    pub fn attitude_of(r: &Rotation3<f64>) -> [f64; 3] {
        let (roll, pitch, yaw) = r.euler_angles();
        [roll, pitch, yaw].map(normalize_angle)
    }
}

pub(crate) fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

#[cfg(test)]
mod tests;
