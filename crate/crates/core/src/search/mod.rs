//! Render-and-compare pose estimation: mask overlap, numerical Jacobian,
//! gradient ascent with warm start, coarse global search and tracking.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::mask::LabelMask;
use crate::render::{render_mask, ArticulatedModel, CameraModel, PoseVector};

/// Per-pixel agreement in `[-1, 1]`: `(agreeing - disagreeing) / (w h)`.
///
/// For binary masks this is the mean of `4 (m - 1/2) (m' - 1/2)`.
pub fn mask_overlap(m: &LabelMask, other: &LabelMask) -> Result<f64> {
    ensure(m.height() == other.height() && m.width() == other.width(), || {
        format!("mask sizes differ: {}x{} vs {}x{}", m.height(), m.width(), other.height(), other.width())
    })?;
    let total = m.data().len();
    ensure(total > 0, || "masks are empty".to_string())?;
    let agree = m.data().iter().zip(other.data()).filter(|(a, b)| a == b).count();
    Ok((2.0 * agree as f64 - total as f64) / total as f64)
}

/// Overlap between `m` and the render of `pose`.
pub fn score(m: &LabelMask, model: &ArticulatedModel, camera: &CameraModel, pose: &PoseVector) -> Result<f64> {
    mask_overlap(m, &render_mask(model, camera, pose)?)
}

/// Coarse sampling used by [`global_search`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalGrid {
    /// candidate distances along the optical axis (m)
    pub depths: Vec<f64>,
    /// lateral candidates per image axis at each depth
    pub lateral: usize,
    /// candidate values tried for every joint
    pub joint_values: Vec<f64>,
    /// use the 24 rotations of the cube as attitude candidates (else identity only)
    pub cube_rotations: bool,
    /// number of best grid points refined by ascent
    pub top_k: usize,
}

impl Default for GlobalGrid {
    fn default() -> Self {
        GlobalGrid { depths: vec![1.0, 2.0, 3.0], lateral: 5, joint_values: vec![0.0], cube_rotations: true, top_k: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub delta_pos: f64,
    pub delta_ang: f64,
    pub delta_joint: f64,
    pub max_iterations: usize,
    /// minimum accepted improvement of the overlap score
    pub tolerance: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// first line-search step, in multiples of the difference steps
    pub initial_step: f64,
    /// largest line-search step, in multiples of the difference steps
    pub max_step: f64,
    /// include joint angles in the search vector
    pub search_joints: bool,
    /// evaluate Jacobian samples on the rayon pool
    pub parallel: bool,
    pub grid: GlobalGrid,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            delta_pos: 0.005,
            delta_ang: 0.0087,
            delta_joint: 0.0087,
            max_iterations: 50,
            tolerance: 1e-5,
            shrink: 0.5,
            max_backtracks: 8,
            initial_step: 4.0,
            max_step: 16.0,
            search_joints: true,
            parallel: false,
            grid: GlobalGrid::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Error::InvalidConfiguration(msg);
        for (name, v) in [
            ("delta_pos", self.delta_pos),
            ("delta_ang", self.delta_ang),
            ("delta_joint", self.delta_joint),
            ("tolerance", self.tolerance),
            ("initial_step", self.initial_step),
            ("max_step", self.max_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(cfg(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(cfg(format!("shrink must lie in (0, 1), got {}", self.shrink)));
        }
        Ok(())
    }

    /// Difference step for every coordinate of the search vector.
    pub fn deltas(&self, joints: usize) -> Vec<f64> {
        let mut d = vec![self.delta_pos; 3];
        d.extend([self.delta_ang; 3]);
        if self.search_joints {
            d.extend(std::iter::repeat_n(self.delta_joint, joints));
        }
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: PoseVector,
    pub score: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central differences of `f` at `p`, plus every sampled point and value in
/// the order `p + d_0 e_0, p - d_0 e_0, p + d_1 e_1, ...`.
pub fn central_difference<F>(f: F, p: &[f64], deltas: &[f64], parallel: bool) -> Result<(Vec<f64>, Vec<(Vec<f64>, f64)>)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    ensure(p.len() == deltas.len(), || format!("{} coordinates but {} steps", p.len(), deltas.len()))?;
    ensure(deltas.iter().all(|&d| d > 0.0), || "difference steps must be positive".to_string())?;
    let points: Vec<Vec<f64>> = (0..2 * p.len())
        .map(|k| {
            let mut q = p.to_vec();
            let i = k / 2;
            if k % 2 == 0 {
                q[i] += deltas[i];
            } else {
                q[i] -= deltas[i];
            }
            q
        })
        .collect();
    let values: Vec<Result<f64>> =
        if parallel { points.par_iter().map(|q| f(q)).collect() } else { points.iter().map(|q| f(q)).collect() };
    let mut samples = Vec::with_capacity(points.len());
    for (q, v) in points.into_iter().zip(values) {
        let v = v?;
        if !v.is_finite() {
            return Err(Error::NumericFailure(format!("non-finite score {v} during differencing")));
        }
        samples.push((q, v));
    }
    let grad = (0..p.len()).map(|i| (samples[2 * i].1 - samples[2 * i + 1].1) / (2.0 * deltas[i])).collect();
    Ok((grad, samples))
}

struct Objective<'a> {
    m: &'a LabelMask,
    model: &'a ArticulatedModel,
    camera: &'a CameraModel,
    template: &'a PoseVector,
    with_joints: bool,
}

impl Objective<'_> {
    fn eval(&self, v: &[f64]) -> Result<f64> {
        score(self.m, self.model, self.camera, &self.template.from_search_vec(v))
    }
}

/// Gradient of the overlap score over position, attitude and (optionally) joints.
pub fn numerical_jacobian(
    m: &LabelMask,
    model: &ArticulatedModel,
    camera: &CameraModel,
    pose: &PoseVector,
    config: &SearchConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let obj = Objective { m, model, camera, template: pose, with_joints: config.search_joints };
    let p = pose.to_search_vec(obj.with_joints);
    let (grad, _) = central_difference(|v| obj.eval(v), &p, &config.deltas(pose.joints.len()), config.parallel)?;
    Ok(grad)
}

/// Gradient ascent on the overlap score from `init`, keeping the best pose seen.
///
/// Steps are taken along the gradient in coordinates scaled by the difference
/// steps, normalized so the largest coordinate moves `initial_step` steps,
/// with backtracking. When the gradient vanishes or the line search fails the
/// best Jacobian sample is taken if it improves; failing that the difference
/// steps are enlarged once by 4 before convergence is declared.
pub fn ascend(
    m: &LabelMask,
    model: &ArticulatedModel,
    camera: &CameraModel,
    init: &PoseVector,
    config: &SearchConfig,
) -> Result<PoseEstimate> {
    config.validate()?;
    let obj = Objective { m, model, camera, template: init, with_joints: config.search_joints };
    let mut best = init.to_search_vec(obj.with_joints);
    let mut best_score = obj.eval(&best)?;
    if !best_score.is_finite() {
        return Err(Error::NumericFailure(format!("non-finite initial score {best_score}")));
    }
    let done = |v: &[f64], s, iterations, converged| PoseEstimate {
        pose: init.from_search_vec(v),
        score: s,
        iterations,
        converged,
    };
    if m.is_background() {
        return Ok(done(&best, best_score, 0, false));
    }
    if best_score >= 1.0 {
        return Ok(done(&best, best_score, 0, true));
    }
    let base = config.deltas(init.joints.len());
    let mut deltas = base.clone();
    let mut enlarged = false;
    let mut step = config.initial_step;
    for it in 1..=config.max_iterations {
        let (grad, samples) = central_difference(|v| obj.eval(v), &best, &deltas, config.parallel)?;
        let scaled: Vec<f64> = grad.iter().zip(&deltas).map(|(g, d)| g * d).collect();
        let norm = scaled.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        let mut moved = false;
        if norm > 0.0 {
            let mut eta = step;
            for attempt in 0..=config.max_backtracks {
                let cand: Vec<f64> =
                    best.iter().zip(&scaled).zip(&deltas).map(|((p, g), d)| p + eta * g / norm * d).collect();
                let s = obj.eval(&cand)?;
                if s >= best_score + config.tolerance {
                    best = cand;
                    best_score = s;
                    moved = true;
                    step = if attempt == 0 { (eta * 2.0).min(config.max_step) } else { eta };
                    break;
                }
                eta *= config.shrink;
            }
        }
        if !moved {
            // first maximum in sample order
            let (q, s) = samples.iter().fold((None, best_score), |(bq, bs), (q, s)| {
                if *s > bs {
                    (Some(q), *s)
                } else {
                    (bq, bs)
                }
            });
            if let Some(q) = q.filter(|_| s >= best_score + config.tolerance) {
                best = q.clone();
                best_score = s;
                moved = true;
            }
        }
        if best_score >= 1.0 {
            return Ok(done(&best, best_score, it, true));
        }
        if moved {
            if enlarged {
                deltas.clone_from(&base);
                enlarged = false;
            }
        } else if !enlarged {
            deltas.iter_mut().for_each(|d| *d *= 4.0);
            enlarged = true;
            step = config.initial_step;
        } else {
            return Ok(done(&best, best_score, it, true));
        }
    }
    Ok(done(&best, best_score, config.max_iterations, false))
}

/// The 24 proper rotations mapping the coordinate axes onto themselves, as
/// roll/pitch/yaw triples.
pub fn cube_rotations() -> Vec<[f64; 3]> {
    use nalgebra::{Matrix3, Rotation3};
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in perms {
        for signs in 0..8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 0 { 1.0 } else { -1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(PoseVector::attitude_of(&Rotation3::from_matrix_unchecked(m)));
            }
        }
    }
    out
}

/// Grid search over the camera frustum, orientation samples and joint values,
/// followed by ascent from the `top_k` best grid points.
pub fn global_search(
    m: &LabelMask,
    model: &ArticulatedModel,
    camera: &CameraModel,
    config: &SearchConfig,
) -> Result<PoseEstimate> {
    config.validate()?;
    let grid = &config.grid;
    let joints = model.num_joints();
    let mut joint_sets: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..joints {
        joint_sets = joint_sets
            .iter()
            .flat_map(|prefix| {
                grid.joint_values.iter().map(move |&v| {
                    let mut q = prefix.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    let attitudes = if grid.cube_rotations { cube_rotations() } else { vec![[0.0; 3]] };
    let mut candidates = Vec::new();
    for &z in &grid.depths {
        if !(z > camera.near && z < camera.far) {
            continue;
        }
        for gy in 0..grid.lateral {
            for gx in 0..grid.lateral {
                let u = (gx as f64 + 0.5) / grid.lateral as f64 * camera.width as f64;
                let v = (gy as f64 + 0.5) / grid.lateral as f64 * camera.height as f64;
                let pos = [(u - camera.cx) * z / camera.fx, (v - camera.cy) * z / camera.fy, z];
                for att in &attitudes {
                    for q in &joint_sets {
                        candidates.push(PoseVector::new(pos, *att, q.clone()));
                    }
                }
            }
        }
    }
    if candidates.is_empty() || grid.top_k == 0 {
        return Err(Error::InvalidConfiguration("global search grid is empty".into()));
    }
    let scores: Vec<Result<f64>> = if config.parallel {
        candidates.par_iter().map(|p| score(m, model, camera, p)).collect()
    } else {
        candidates.iter().map(|p| score(m, model, camera, p)).collect()
    };
    let mut ranked: Vec<(usize, f64)> = Vec::with_capacity(scores.len());
    for (i, s) in scores.into_iter().enumerate() {
        ranked.push((i, s?));
    }
    // stable: equal scores keep grid order
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut best: Option<PoseEstimate> = None;
    for &(i, _) in ranked.iter().take(grid.top_k) {
        let est = ascend(m, model, camera, &candidates[i], config)?;
        if best.as_ref().is_none_or(|b| est.score > b.score) {
            best = Some(est);
        }
    }
    Ok(best.expect("top_k > 0"))
}

/// Frame-by-frame tracking. Frame 0 starts from `init` (or a global search);
/// later frames warm-start at the previous estimate. Frames whose mask is
/// empty carry the previous pose forward with `converged = false`.
pub fn track(
    masks: &[LabelMask],
    model: &ArticulatedModel,
    camera: &CameraModel,
    init: Option<&PoseVector>,
    dt: f64,
    config: &SearchConfig,
) -> Result<Vec<PoseEstimate>> {
    ensure(!masks.is_empty(), || "tracking needs at least one mask".to_string())?;
    let mut out: Vec<PoseEstimate> = Vec::with_capacity(masks.len());
    for (k, m) in masks.iter().enumerate() {
        let t = k as f64 * dt;
        let mut est = match (out.last(), init) {
            (Some(prev), _) if m.is_background() => PoseEstimate {
                pose: prev.pose.clone(),
                score: score(m, model, camera, &prev.pose)?,
                iterations: 0,
                converged: false,
            },
            (Some(prev), _) => ascend(m, model, camera, &prev.pose, config)?,
            (None, Some(p)) => ascend(m, model, camera, p, config)?,
            (None, None) => global_search(m, model, camera, config)?,
        };
        est.pose.time = t;
        out.push(est);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct TrajectoryLine {
    frame: usize,
    t: f64,
    x: [f64; 3],
    omega: [f64; 3],
    q: Vec<f64>,
    score: f64,
    converged: bool,
    iterations: usize,
}

/// One JSON object per frame.
pub fn write_trajectory(out: &mut impl Write, estimates: &[PoseEstimate]) -> Result<()> {
    for (frame, e) in estimates.iter().enumerate() {
        let line = TrajectoryLine {
            frame,
            t: e.pose.time,
            x: e.pose.position,
            omega: e.pose.attitude,
            q: e.pose.joints.clone(),
            score: e.score,
            converged: e.converged,
            iterations: e.iterations,
        };
        let text = serde_json::to_string(&line).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(out, "{text}")?;
    }
    Ok(())
}

pub fn read_trajectory(text: &str) -> Result<Vec<PoseEstimate>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let t: TrajectoryLine = serde_json::from_str(l).map_err(|e| Error::Parse(e.to_string()))?;
            Ok(PoseEstimate {
                pose: PoseVector::new(t.x, t.omega, t.q).at(t.t),
                score: t.score,
                iterations: t.iterations,
                converged: t.converged,
            })
        })
        .collect()
}
