use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{corrupt_mask, Corruption, DistanceBin, DistanceBins, OcclusionBin, SequenceSample};
use crate::error::{ensure, Result};
use crate::mask::LabelMask;
use crate::net::ProcNet;
use crate::render::{normalize_angle, ArticulatedModel, CameraModel, PoseVector};
use crate::search::{track, PoseEstimate, SearchConfig};

/// Position errors in centimetres and attitude errors in degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub position_cm: f64,
    /// error parallel to the image plane
    pub in_plane_cm: f64,
    /// error along the optical axis
    pub depth_cm: f64,
    /// roll, pitch, yaw
    pub attitude_deg: [f64; 3],
}

pub fn pose_error(est: &PoseVector, truth: &PoseVector) -> PoseError {
    let d: Vec<f64> = est.position.iter().zip(&truth.position).map(|(a, b)| a - b).collect();
    PoseError {
        position_cm: 100.0 * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt(),
        in_plane_cm: 100.0 * (d[0] * d[0] + d[1] * d[1]).sqrt(),
        depth_cm: 100.0 * d[2].abs(),
        attitude_deg: [0, 1, 2].map(|i| normalize_angle(est.attitude[i] - truth.attitude[i]).abs().to_degrees()),
    }
}

/// Where the tracker's masks come from.
#[derive(Clone, Copy, Debug)]
pub enum MaskSource<'a> {
    /// argmax of the trained network's decoded probabilities
    Procnet(&'a ProcNet),
    /// truth masks degraded by the recorded occluders
    CorruptedTruth(&'a Corruption),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub search: SearchConfig,
    /// start each sequence from its first truth pose instead of a global search
    pub init_from_truth: bool,
    pub bins: DistanceBins,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig { search: SearchConfig::default(), init_from_truth: true, bins: DistanceBins::default() }
    }
}

/// Mean errors over a set of frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub position_cm: f64,
    pub in_plane_cm: f64,
    pub depth_cm: f64,
    pub attitude_deg: [f64; 3],
    pub count: usize,
}

impl ErrorStats {
    pub fn of<'a>(errors: impl IntoIterator<Item = &'a PoseError>) -> Self {
        let mut s = ErrorStats::default();
        for e in errors {
            s.position_cm += e.position_cm;
            s.in_plane_cm += e.in_plane_cm;
            s.depth_cm += e.depth_cm;
            for i in 0..3 {
                s.attitude_deg[i] += e.attitude_deg[i];
            }
            s.count += 1;
        }
        if s.count > 0 {
            let n = s.count as f64;
            s.position_cm /= n;
            s.in_plane_cm /= n;
            s.depth_cm /= n;
            s.attitude_deg.iter_mut().for_each(|a| *a /= n);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub distance: DistanceBin,
    pub occlusion: OcclusionBin,
    pub stats: ErrorStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub sequence: usize,
    pub frame: usize,
    pub distance: DistanceBin,
    pub occlusion: OcclusionBin,
    pub converged: bool,
    pub error: PoseError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// populated bins, distance-major
    pub records: Vec<BenchmarkRecord>,
    /// over every converged frame
    pub average: ErrorStats,
    pub frames: Vec<FrameError>,
    pub bins: DistanceBins,
}

impl BenchmarkReport {
    /// Aggregates converged frames per (distance, occlusion) bin.
    pub fn from_frames(frames: Vec<FrameError>, bins: DistanceBins) -> Self {
        let mut records = Vec::new();
        for d in DistanceBin::ALL {
            for o in OcclusionBin::ALL {
                let stats = ErrorStats::of(
                    frames.iter().filter(|f| f.converged && f.distance == d && f.occlusion == o).map(|f| &f.error),
                );
                if stats.count > 0 {
                    records.push(BenchmarkRecord { distance: d, occlusion: o, stats });
                }
            }
        }
        let average = ErrorStats::of(frames.iter().filter(|f| f.converged).map(|f| &f.error));
        BenchmarkReport { records, average, frames, bins }
    }

    pub fn record(&self, d: DistanceBin, o: OcclusionBin) -> Option<&BenchmarkRecord> {
        self.records.iter().find(|r| r.distance == d && r.occlusion == o)
    }

    /// Mean errors per distance bin, pooling occlusion levels.
    pub fn by_distance(&self, d: DistanceBin) -> ErrorStats {
        ErrorStats::of(self.frames.iter().filter(|f| f.converged && f.distance == d).map(|f| &f.error))
    }

    /// Aligned text: an average row, then one row per distance and occlusion
    /// bin; bins without converged frames print `--`.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let header = ["Camera distance", "Level of occlusion", "e_pos", "e_plane", "e_depth", "e_roll", "e_pitch", "e_yaw", "n"];
        let mut rows: Vec<[String; 9]> = Vec::new();
        let cells = |st: Option<&ErrorStats>| -> [String; 7] {
            match st {
                Some(st) => [
                    format!("{:.2}cm", st.position_cm),
                    format!("{:.2}cm", st.in_plane_cm),
                    format!("{:.2}cm", st.depth_cm),
                    format!("{:.2}deg", st.attitude_deg[0]),
                    format!("{:.2}deg", st.attitude_deg[1]),
                    format!("{:.2}deg", st.attitude_deg[2]),
                    st.count.to_string(),
                ],
                None => std::array::from_fn(|i| if i == 6 { "0".to_string() } else { "--".to_string() }),
            }
        };
        let avg = cells(Some(&self.average).filter(|a| a.count > 0));
        rows.push(std::array::from_fn(|i| match i {
            0 => String::new(),
            1 => "Average".to_string(),
            _ => avg[i - 2].clone(),
        }));
        for d in DistanceBin::ALL {
            for (k, o) in OcclusionBin::ALL.into_iter().enumerate() {
                let c = cells(self.record(d, o).map(|r| &r.stats));
                let dist = if k == 0 { format!("{} ({})", capitalize(d.name()), self.bins.range(d)) } else { String::new() };
                let occ = format!("{} ({})", capitalize(o.name()), o.range());
                rows.push(std::array::from_fn(|i| match i {
                    0 => dist.clone(),
                    1 => occ.clone(),
                    _ => c[i - 2].clone(),
                }));
            }
        }
        let mut widths: [usize; 9] = std::array::from_fn(|i| header[i].len());
        for r in &rows {
            for i in 0..9 {
                widths[i] = widths[i].max(r[i].len());
            }
        }
        let line = |s: &mut String, cols: &[&str]| {
            let parts: Vec<String> = cols.iter().enumerate().map(|(i, c)| format!("{c:<w$}", w = widths[i])).collect();
            let _ = writeln!(s, "{}", parts.join(" | ").trim_end());
        };
        line(&mut s, &header);
        let _ = writeln!(s, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
        for r in &rows {
            line(&mut s, &r.iter().map(String::as_str).collect::<Vec<_>>());
        }
        s
    }

    /// Header plus one row per populated bin.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "distance,occlusion,count,position_cm,in_plane_cm,depth_cm,roll_deg,pitch_deg,yaw_deg\n",
        );
        for r in &self.records {
            let st = &r.stats;
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.distance,
                r.occlusion,
                st.count,
                st.position_cm,
                st.in_plane_cm,
                st.depth_cm,
                st.attitude_deg[0],
                st.attitude_deg[1],
                st.attitude_deg[2]
            );
        }
        s
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// Masks the tracker sees for one sequence.
pub fn source_masks(sample: &SequenceSample, source: MaskSource<'_>) -> Result<Vec<LabelMask>> {
    match source {
        MaskSource::CorruptedTruth(mode) => Ok(sample
            .masks
            .iter()
            .zip(&sample.occluders)
            .enumerate()
            .map(|(k, (m, o))| {
                let mode = match mode {
                    Corruption::EraseSaltNoise { fraction, seed } => {
                        Corruption::EraseSaltNoise { fraction: *fraction, seed: seed.wrapping_add(k as u64) }
                    }
                    other => other.clone(),
                };
                corrupt_mask(m, o, &mode)
            })
            .collect()),
        MaskSource::Procnet(net) => {
            let run = net.run_sequence(&sample.frames)?;
            run.probabilities.iter().map(|p| LabelMask::from_probabilities(p, 0)).collect()
        }
    }
}

/// Tracks every sequence and aggregates errors of converged frames by bin.
pub fn benchmark(
    dataset: &[SequenceSample],
    model: &ArticulatedModel,
    camera: &CameraModel,
    source: MaskSource<'_>,
    config: &BenchmarkConfig,
) -> Result<BenchmarkReport> {
    ensure(!dataset.is_empty(), || "benchmark needs at least one sequence".to_string())?;
    // sequences are independent; collecting in dataset order keeps the report deterministic
    let per_sequence: Vec<Vec<FrameError>> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let masks = source_masks(sample, source)?;
            let init = config.init_from_truth.then(|| sample.poses[0].clone());
            let est: Vec<PoseEstimate> = track(&masks, model, camera, init.as_ref(), sample.dt, &config.search)?;
            let distance = config.bins.of(sample.mean_depth());
            Ok(est
                .iter()
                .zip(&sample.poses)
                .enumerate()
                .map(|(k, (e, truth))| FrameError {
                    sequence: i,
                    frame: k,
                    distance,
                    occlusion: sample.occlusion_bin,
                    converged: e.converged,
                    error: pose_error(&e.pose, truth),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let frames = per_sequence.into_iter().flatten().collect();
    Ok(BenchmarkReport::from_frames(frames, config.bins))
}
