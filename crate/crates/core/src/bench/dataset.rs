use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DistanceBin, OcclusionBin, SequenceSample};
use crate::error::{Error, Result};
use crate::mask::{BinaryMap, LabelMask};
use crate::pgm;
use crate::render::PoseVector;
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
struct Meta {
    seed: u64,
    dt: f64,
    frames: usize,
    height: usize,
    width: usize,
    distance_bin: DistanceBin,
    occlusion_bin: OcclusionBin,
    mean_occlusion: f64,
    occlusion_pct: Vec<f64>,
    occlusion_warning: bool,
    occluders: Vec<Vec<[usize; 4]>>,
}

#[derive(Serialize, Deserialize)]
struct PoseLine {
    frame: usize,
    t: f64,
    x: [f64; 3],
    omega: [f64; 3],
    q: Vec<f64>,
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Parse(e.to_string())
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `seq_<id>/{frame_<t>.pgm, mask_<t>.pgm, poses.jsonl, meta.json}`.
pub fn write_sequence(dir: &Path, sample: &SequenceSample) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (h, w) = (sample.height(), sample.width());
    for (k, (frame, mask)) in sample.frames.iter().zip(&sample.masks).enumerate() {
        let px: Vec<u8> = frame.data().iter().map(|&v| quantize(v)).collect();
        pgm::write(&dir.join(format!("frame_{k:04}.pgm")), w, h, &px)?;
        mask.write_pgm(&dir.join(format!("mask_{k:04}.pgm")))?;
    }
    let mut poses = String::new();
    for (k, p) in sample.poses.iter().enumerate() {
        let line = PoseLine { frame: k, t: p.time, x: p.position, omega: p.attitude, q: p.joints.clone() };
        poses.push_str(&serde_json::to_string(&line).map_err(json_err)?);
        poses.push('\n');
    }
    fs::write(dir.join("poses.jsonl"), poses)?;
    let meta = Meta {
        seed: sample.seed,
        dt: sample.dt,
        frames: sample.len(),
        height: h,
        width: w,
        distance_bin: sample.distance_bin,
        occlusion_bin: sample.occlusion_bin,
        mean_occlusion: sample.mean_occlusion(),
        occlusion_pct: sample.occlusion.clone(),
        occlusion_warning: sample.occlusion_warning,
        occluders: sample.occluder_rects.clone(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta).map_err(json_err)? + "\n")?;
    Ok(())
}

pub fn read_sequence(dir: &Path) -> Result<SequenceSample> {
    let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?).map_err(json_err)?;
    let mut frames = Vec::with_capacity(meta.frames);
    let mut masks = Vec::with_capacity(meta.frames);
    for k in 0..meta.frames {
        let (w, h, px) = pgm::read(&dir.join(format!("frame_{k:04}.pgm")))?;
        if (w, h) != (meta.width, meta.height) {
            return Err(Error::Parse(format!("{}: frame {k} is {w}x{h}", dir.display())));
        }
        frames.push(Tensor::new(vec![1, 1, h, w], px.iter().map(|&v| v as f32 / 255.0).collect())?);
        masks.push(LabelMask::read_pgm(&dir.join(format!("mask_{k:04}.pgm")))?);
    }
    let mut poses = Vec::with_capacity(meta.frames);
    for line in fs::read_to_string(dir.join("poses.jsonl"))?.lines().filter(|l| !l.trim().is_empty()) {
        let p: PoseLine = serde_json::from_str(line).map_err(json_err)?;
        poses.push(PoseVector::new(p.x, p.omega, p.q).at(p.t));
    }
    if poses.len() != meta.frames || meta.occlusion_pct.len() != meta.frames || meta.occluders.len() != meta.frames {
        return Err(Error::Parse(format!("{}: per-frame records do not match {} frames", dir.display(), meta.frames)));
    }
    let occluders = meta
        .occluders
        .iter()
        .map(|rects| {
            let mut map = BinaryMap::new(meta.height, meta.width);
            for r in rects {
                map.fill_rect(r[0], r[1], r[2], r[3]);
            }
            map
        })
        .collect();
    Ok(SequenceSample {
        frames,
        masks,
        poses,
        occluders,
        occluder_rects: meta.occluders,
        occlusion: meta.occlusion_pct,
        occlusion_warning: meta.occlusion_warning,
        distance_bin: meta.distance_bin,
        occlusion_bin: meta.occlusion_bin,
        dt: meta.dt,
        seed: meta.seed,
    })
}

pub fn write_dataset(dir: &Path, samples: &[SequenceSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        write_sequence(&dir.join(format!("seq_{i:04}")), s)?;
    }
    Ok(())
}

/// Reads every `seq_*` directory in name order.
pub fn read_dataset(dir: &Path) -> Result<Vec<SequenceSample>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seq_")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no seq_* directories in {}", dir.display()),
        )));
    }
    dirs.iter().map(|d| read_sequence(d)).collect()
}
