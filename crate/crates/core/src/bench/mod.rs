//! Synthetic scenes, occlusion injection, segmentation corruption, pose-error
//! metrics and the distance x occlusion benchmark.

mod dataset;
mod metrics;
mod occlusion;

pub use dataset::{read_dataset, read_sequence, write_dataset, write_sequence};
pub use metrics::{
    benchmark, pose_error, source_masks, BenchmarkConfig, BenchmarkRecord, BenchmarkReport, ErrorStats, FrameError, MaskSource,
    PoseError,
};
pub use occlusion::{
    corrupt_mask, inject_occlusion, inject_occlusion_frames, occlusion_pct, Corruption, OcclusionOutcome,
};

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMap, LabelMask};
use crate::render::{render, ArticulatedModel, CameraModel, Mesh, PoseVector};
use crate::tensor::Tensor;

/// Camera-distance class of a sequence, by mean depth along the optical axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DistanceBin {
    Short,
    Medium,
    Large,
}

impl DistanceBin {
    pub const ALL: [DistanceBin; 3] = [DistanceBin::Short, DistanceBin::Medium, DistanceBin::Large];

    pub fn name(self) -> &'static str {
        match self {
            DistanceBin::Short => "short",
            DistanceBin::Medium => "medium",
            DistanceBin::Large => "large",
        }
    }
}

/// Level of occlusion by mean occlusion percentage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OcclusionBin {
    Light,
    Medium,
    Heavy,
}

impl OcclusionBin {
    pub const ALL: [OcclusionBin; 3] = [OcclusionBin::Light, OcclusionBin::Medium, OcclusionBin::Heavy];

    pub fn of(pct: f64) -> Self {
        if pct < 100.0 / 3.0 {
            OcclusionBin::Light
        } else if pct < 200.0 / 3.0 {
            OcclusionBin::Medium
        } else {
            OcclusionBin::Heavy
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OcclusionBin::Light => "light",
            OcclusionBin::Medium => "medium",
            OcclusionBin::Heavy => "heavy",
        }
    }

    pub fn range(self) -> &'static str {
        match self {
            OcclusionBin::Light => "0-33%",
            OcclusionBin::Medium => "33-66%",
            OcclusionBin::Heavy => "66-100%",
        }
    }
}

/// Upper edges (m) of the short and medium distance bins, and the far limit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBins {
    pub short_max: f64,
    pub medium_max: f64,
    pub large_max: f64,
}

impl Default for DistanceBins {
    fn default() -> Self {
        DistanceBins { short_max: 1.5, medium_max: 3.0, large_max: 5.0 }
    }
}

impl DistanceBins {
    pub fn of(&self, depth: f64) -> DistanceBin {
        if depth < self.short_max {
            DistanceBin::Short
        } else if depth < self.medium_max {
            DistanceBin::Medium
        } else {
            DistanceBin::Large
        }
    }

    pub fn range(&self, bin: DistanceBin) -> String {
        let (lo, hi) = match bin {
            DistanceBin::Short => (0.0, self.short_max),
            DistanceBin::Medium => (self.short_max, self.medium_max),
            DistanceBin::Large => (self.medium_max, self.large_max),
        };
        format!("{lo}-{hi}m")
    }
}

impl fmt::Display for DistanceBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for OcclusionBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Band-limited random motion around a per-sequence mean pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    /// peak excursion per position axis (m)
    pub position_amplitude: [f64; 3],
    /// peak excursion per attitude angle (rad)
    pub attitude_amplitude: f64,
    /// peak excursion per joint (rad)
    pub joint_amplitude: f64,
    /// highest sinusoid frequency (Hz)
    pub max_frequency: f64,
    /// sinusoids summed per coordinate
    pub harmonics: usize,
}

impl Default for MotionSpec {
    fn default() -> Self {
        MotionSpec {
            position_amplitude: [0.08, 0.06, 0.1],
            attitude_amplitude: 0.15,
            joint_amplitude: 0.3,
            max_frequency: 0.5,
            harmonics: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub camera: CameraModel,
    pub model: ArticulatedModel,
    /// frames per sequence
    pub length: usize,
    /// frame interval (s)
    pub dt: f64,
    /// nominal camera-to-object distance along the optical axis (m)
    pub distance: f64,
    /// uniform spread of the mean depth around `distance` (m)
    pub depth_jitter: f64,
    /// mean lateral position, as a fraction of the half field of view
    pub lateral_extent: f64,
    /// mean attitude drawn uniformly in `+-attitude_range` per axis (rad)
    pub attitude_range: [f64; 3],
    /// mean joint angles drawn uniformly in this interval (rad)
    pub joint_range: (f64, f64),
    pub motion: MotionSpec,
    /// static background boxes drawn behind the object
    pub distractors: usize,
    pub background: f64,
    pub distractor_intensity: f64,
    /// uniform per-pixel noise amplitude
    pub noise: f64,
    /// every frame must show at least this many object pixels
    pub min_object_pixels: usize,
    /// trajectory draws before giving up
    pub retries: usize,
}

impl SceneConfig {
    /// Forearm scene: shoulder block, upper arm and forearm, 4 classes.
    pub fn forearm(image: usize, distance: f64) -> Self {
        SceneConfig {
            camera: CameraModel::preset(image),
            model: ArticulatedModel::forearm(),
            length: 20,
            dt: 0.1,
            distance,
            depth_jitter: 0.0,
            lateral_extent: 0.25,
            attitude_range: [0.4, 0.4, PI],
            joint_range: (-0.6, 0.9),
            motion: MotionSpec::default(),
            distractors: 2,
            background: 0.1,
            distractor_intensity: 0.35,
            noise: 0.02,
            min_object_pixels: 12,
            retries: 50,
        }
    }

    /// Flat plate sliding in front of the camera, 2 classes.
    pub fn moving_rectangle(image: usize) -> Self {
        SceneConfig {
            camera: CameraModel::preset(image),
            model: ArticulatedModel::rectangle(0.5, 0.35, 1),
            length: 6,
            dt: 0.1,
            distance: 2.0,
            depth_jitter: 0.3,
            lateral_extent: 0.35,
            attitude_range: [0.3, 0.3, 0.6],
            joint_range: (0.0, 0.0),
            motion: MotionSpec {
                position_amplitude: [0.25, 0.2, 0.1],
                attitude_amplitude: 0.15,
                joint_amplitude: 0.0,
                max_frequency: 0.8,
                harmonics: 2,
            },
            distractors: 1,
            background: 0.1,
            distractor_intensity: 0.35,
            noise: 0.02,
            min_object_pixels: 12,
            retries: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        self.camera.validate().map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
        if self.length == 0 {
            return bad("sequence length must be at least 1".into());
        }
        if !(self.dt > 0.0) {
            return bad(format!("frame interval must be positive, got {}", self.dt));
        }
        let lo = self.distance - self.depth_jitter;
        if !(lo > self.camera.near && self.distance + self.depth_jitter < self.camera.far) {
            return bad(format!("distance {} is outside the camera frustum", self.distance));
        }
        if self.model.is_empty() {
            return bad("scene model has no geometry".into());
        }
        Ok(())
    }

    /// Gray level used for a link label.
    pub fn intensity(label: u8) -> f32 {
        (0.95 - 0.15 * (label as f32 - 1.0)).max(0.3)
    }
}

/// One rendered sequence with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    /// `1 x 1 x H x W` images in `[0, 1]`
    pub frames: Vec<Tensor>,
    pub masks: Vec<LabelMask>,
    pub poses: Vec<PoseVector>,
    pub occluders: Vec<BinaryMap>,
    /// occluder rectangles per frame, `[x0, y0, x1, y1)` in pixels
    pub occluder_rects: Vec<Vec<[usize; 4]>>,
    /// measured occlusion per frame (%)
    pub occlusion: Vec<f64>,
    /// set when an occlusion target could not be reached
    pub occlusion_warning: bool,
    pub distance_bin: DistanceBin,
    pub occlusion_bin: OcclusionBin,
    pub dt: f64,
    pub seed: u64,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.masks[0].height()
    }

    pub fn width(&self) -> usize {
        self.masks[0].width()
    }

    pub fn mean_occlusion(&self) -> f64 {
        self.occlusion.iter().sum::<f64>() / self.occlusion.len().max(1) as f64
    }

    pub fn mean_depth(&self) -> f64 {
        self.poses.iter().map(|p| p.position[2]).sum::<f64>() / self.poses.len().max(1) as f64
    }

    /// Recomputes the occlusion bin from the measured percentages.
    pub fn rebin(&mut self) {
        self.occlusion_bin = OcclusionBin::of(self.mean_occlusion());
    }
}

struct Wave {
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

fn waves(rng: &mut ChaCha8Rng, peak: f64, spec: &MotionSpec) -> Vec<Wave> {
    let n = spec.harmonics.max(1);
    (0..n)
        .map(|_| Wave {
            amplitude: peak / n as f64 * rng.gen_range(0.5..=1.0),
            frequency: spec.max_frequency * rng.gen_range(0.2..=1.0),
            phase: rng.gen_range(0.0..2.0 * PI),
        })
        .collect()
}

fn eval(ws: &[Wave], t: f64) -> f64 {
    ws.iter().map(|w| w.amplitude * (2.0 * PI * w.frequency * t + w.phase).sin()).sum()
}

fn touches_border(mask: &LabelMask) -> bool {
    let (h, w) = (mask.height(), mask.width());
    (0..w).any(|x| mask.get(0, x) != 0 || mask.get(h - 1, x) != 0)
        || (0..h).any(|y| mask.get(y, 0) != 0 || mask.get(y, w - 1) != 0)
}

/// Draws a smooth trajectory, renders frames and truth, and bins the sample.
pub fn generate_sequence(config: &SceneConfig, seed: u64) -> Result<SequenceSample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = &config.camera;
    let joints = config.model.num_joints();
    for _ in 0..config.retries.max(1) {
        let z0 = config.distance + rng.gen_range(-1.0..=1.0) * config.depth_jitter;
        let half_x = cam.width as f64 / 2.0 / cam.fx * z0;
        let half_y = cam.height as f64 / 2.0 / cam.fy * z0;
        let mean_pos = [
            rng.gen_range(-1.0..=1.0) * config.lateral_extent * half_x,
            rng.gen_range(-1.0..=1.0) * config.lateral_extent * half_y,
            z0,
        ];
        let mean_att: Vec<f64> = config.attitude_range.iter().map(|&r| rng.gen_range(-1.0..=1.0) * r).collect();
        let (jlo, jhi) = config.joint_range;
        let mean_q: Vec<f64> = (0..joints).map(|_| if jhi > jlo { rng.gen_range(jlo..jhi) } else { jlo }).collect();
        let m = &config.motion;
        let pos_w: Vec<Vec<Wave>> = m.position_amplitude.iter().map(|&a| waves(&mut rng, a, m)).collect();
        let att_w: Vec<Vec<Wave>> = (0..3).map(|_| waves(&mut rng, m.attitude_amplitude, m)).collect();
        let q_w: Vec<Vec<Wave>> = (0..joints).map(|_| waves(&mut rng, m.joint_amplitude, m)).collect();

        // static clutter behind the object
        let mut clutter = Vec::with_capacity(config.distractors);
        for _ in 0..config.distractors {
            let zd = z0 + rng.gen_range(0.8..1.6);
            let hx = cam.width as f64 / 2.0 / cam.fx * zd;
            let hy = cam.height as f64 / 2.0 / cam.fy * zd;
            let size = [rng.gen_range(0.1..0.4) * zd, rng.gen_range(0.1..0.4) * zd, 0.2];
            let pose = PoseVector::new(
                [rng.gen_range(-hx..hx), rng.gen_range(-hy..hy), zd],
                [0.0, 0.0, rng.gen_range(-PI..PI)],
                vec![],
            );
            clutter.push((ArticulatedModel::rigid("distractor", Mesh::cuboid(size, [0.0; 3]), 1), pose));
        }
        let mut backdrop = vec![config.background as f32; cam.width * cam.height];
        for (model, pose) in &clutter {
            let r = render(model, cam, pose)?;
            for (px, &l) in backdrop.iter_mut().zip(r.mask.data()) {
                if l != 0 {
                    *px = config.distractor_intensity as f32;
                }
            }
        }

        let mut poses = Vec::with_capacity(config.length);
        let mut masks = Vec::with_capacity(config.length);
        let mut frames = Vec::with_capacity(config.length);
        let mut ok = true;
        for k in 0..config.length {
            let t = k as f64 * config.dt;
            let pos = [0, 1, 2].map(|i| mean_pos[i] + eval(&pos_w[i], t));
            let att = [0, 1, 2].map(|i| mean_att[i] + eval(&att_w[i], t));
            let q = (0..joints).map(|j| mean_q[j] + eval(&q_w[j], t)).collect();
            let pose = PoseVector::new(pos, att, q).at(t);
            let r = render(&config.model, cam, &pose)?;
            if r.mask.object_pixels() < config.min_object_pixels || touches_border(&r.mask) {
                ok = false;
                break;
            }
            let mut img = backdrop.clone();
            for (px, &l) in img.iter_mut().zip(r.mask.data()) {
                if l != 0 {
                    *px = SceneConfig::intensity(l);
                }
                if config.noise > 0.0 {
                    let n = config.noise as f32;
                    *px = (*px + rng.gen_range(-n..=n)).clamp(0.0, 1.0);
                }
            }
            frames.push(Tensor::new(vec![1, 1, cam.height, cam.width], img)?);
            masks.push(r.mask);
            poses.push(pose);
        }
        if !ok {
            continue;
        }
        let n = config.length;
        let mut sample = SequenceSample {
            frames,
            masks,
            poses,
            occluders: vec![BinaryMap::new(cam.height, cam.width); n],
            occluder_rects: vec![Vec::new(); n],
            occlusion: vec![0.0; n],
            occlusion_warning: false,
            distance_bin: DistanceBin::Short,
            occlusion_bin: OcclusionBin::Light,
            dt: config.dt,
            seed,
        };
        sample.distance_bin = DistanceBins::default().of(sample.mean_depth());
        return Ok(sample);
    }
    Err(Error::InvalidConfiguration(format!(
        "trajectory left the camera frustum in all {} attempts (seed {seed})",
        config.retries.max(1)
    )))
}

/// Dataset recipe: scenes cycle through `distances` and `occlusion_targets`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub scene: SceneConfig,
    pub sequences: usize,
    pub distances: Vec<f64>,
    pub occlusion_targets: Vec<f64>,
    pub bins: DistanceBins,
    pub seed: u64,
}

impl DatasetSpec {
    /// Seed of sequence `i`.
    pub fn sequence_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1)
    }
}

/// Generates every sequence of `spec`, in order.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<SequenceSample>> {
    let mut out = Vec::with_capacity(spec.sequences);
    for i in 0..spec.sequences {
        let mut scene = spec.scene.clone();
        if !spec.distances.is_empty() {
            scene.distance = spec.distances[i % spec.distances.len()];
        }
        let seed = spec.sequence_seed(i);
        let mut sample = generate_sequence(&scene, seed)?;
        sample.distance_bin = spec.bins.of(sample.mean_depth());
        if !spec.occlusion_targets.is_empty() {
            let target = spec.occlusion_targets[i % spec.occlusion_targets.len()];
            inject_occlusion(&mut sample, target, seed ^ 0x5EED)?;
        }
        out.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
