use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SequenceSample;
use crate::error::{ensure, Result};
use crate::mask::{BinaryMap, LabelMask};

/// Share of object pixels (%) hidden by the occluder; 0 for an empty object.
pub fn occlusion_pct(truth: &LabelMask, occluder: &BinaryMap) -> Result<f64> {
    ensure(truth.height() == occluder.height() && truth.width() == occluder.width(), || {
        "mask and occluder sizes differ".to_string()
    })?;
    let (hidden, total) = counts(truth, occluder);
    Ok(if total == 0 { 0.0 } else { 100.0 * hidden as f64 / total as f64 })
}

fn counts(truth: &LabelMask, occluder: &BinaryMap) -> (usize, usize) {
    let mut hidden = 0;
    let mut total = 0;
    for (&l, &o) in truth.data().iter().zip(occluder.data()) {
        if l != 0 {
            total += 1;
            hidden += o as usize;
        }
    }
    (hidden, total)
}

fn object_bbox(mask: &LabelMask) -> Option<[usize; 4]> {
    let mut b: Option<[usize; 4]> = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) != 0 {
                b = Some(match b {
                    None => [x, y, x + 1, y + 1],
                    Some([x0, y0, x1, y1]) => [x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)],
                });
            }
        }
    }
    b
}

/// Achieved occlusion after [`inject_occlusion`].
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionOutcome {
    pub achieved: Vec<f64>,
    /// true when some frame missed its target by more than 5 points
    pub warning: bool,
}

const TOLERANCE: f64 = 5.0;
const RESTARTS: usize = 8;
const PROPOSALS: usize = 200;

/// Blackens random rectangles in every frame until the occlusion of the truth
/// object is within 5 points of `target_pct`. Targets 0 and 100 are met exactly.
pub fn inject_occlusion(sample: &mut SequenceSample, target_pct: f64, seed: u64) -> Result<OcclusionOutcome> {
    let n = sample.len();
    inject_occlusion_frames(sample, 0..n, target_pct, seed)
}

/// [`inject_occlusion`] restricted to the frames in `frames`.
pub fn inject_occlusion_frames(
    sample: &mut SequenceSample,
    frames: Range<usize>,
    target_pct: f64,
    seed: u64,
) -> Result<OcclusionOutcome> {
    ensure((0.0..=100.0).contains(&target_pct), || format!("occlusion target {target_pct} is outside [0, 100]"))?;
    ensure(frames.end <= sample.len(), || format!("frame range {frames:?} exceeds {} frames", sample.len()))?;
    let mut achieved = Vec::with_capacity(frames.len());
    let mut warning = false;
    for k in frames {
        let truth = &sample.masks[k];
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64).wrapping_mul(0xA24B_AED4_963E_E407));
        let start = sample.occluders[k].clone();
        let (rects, map) = match object_bbox(truth) {
            _ if target_pct == 0.0 => (Vec::new(), start),
            None => (Vec::new(), start),
            Some(b) if target_pct == 100.0 => {
                let mut map = start;
                map.fill_rect(b[0], b[1], b[2], b[3]);
                (vec![b], map)
            }
            Some(b) => place(truth, start, b, target_pct, &mut rng),
        };
        let pct = occlusion_pct(truth, &map)?;
        if (pct - target_pct).abs() > TOLERANCE {
            warning = true;
        }
        let frame = sample.frames[k].data_mut();
        for (px, &o) in frame.iter_mut().zip(map.data()) {
            if o {
                *px = 0.0;
            }
        }
        sample.occluder_rects[k].extend(rects);
        sample.occluders[k] = map;
        sample.occlusion[k] = pct;
        achieved.push(pct);
    }
    sample.occlusion_warning |= warning;
    sample.rebin();
    Ok(OcclusionOutcome { achieved, warning })
}

fn place(
    truth: &LabelMask,
    start: BinaryMap,
    bbox: [usize; 4],
    target: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<[usize; 4]>, BinaryMap) {
    let [bx0, by0, bx1, by1] = bbox;
    let (bw, bh) = ((bx1 - bx0) as f64, (by1 - by0) as f64);
    let (w, h) = (truth.width(), truth.height());
    let mut best: Option<(f64, Vec<[usize; 4]>, BinaryMap)> = None;
    for _ in 0..RESTARTS {
        let mut map = start.clone();
        let mut rects = Vec::new();
        let mut pct = occlusion_pct(truth, &map).unwrap_or(0.0);
        for _ in 0..PROPOSALS {
            if (pct - target).abs() <= TOLERANCE {
                break;
            }
            let frac = ((target - pct).max(1.0) / 100.0).sqrt();
            let rw = (bw * frac * rng.gen_range(0.6..1.4)).round().max(1.0) as usize;
            let rh = (bh * frac * rng.gen_range(0.6..1.4)).round().max(1.0) as usize;
            let x0 = (bx0 as f64 - rw as f64 / 2.0 + rng.gen_range(0.0..=1.0) * bw).round().max(0.0) as usize;
            let y0 = (by0 as f64 - rh as f64 / 2.0 + rng.gen_range(0.0..=1.0) * bh).round().max(0.0) as usize;
            let rect = [x0.min(w - 1), y0.min(h - 1), (x0 + rw).min(w), (y0 + rh).min(h)];
            let mut next = map.clone();
            next.fill_rect(rect[0], rect[1], rect[2], rect[3]);
            let p = occlusion_pct(truth, &next).unwrap_or(0.0);
            if p > pct && p <= target + TOLERANCE {
                map = next;
                pct = p;
                rects.push(rect);
            }
        }
        let miss = (pct - target).abs();
        if best.as_ref().is_none_or(|(m, _, _)| miss < *m) {
            best = Some((miss, rects, map));
        }
        if miss <= TOLERANCE {
            break;
        }
    }
    let (_, rects, map) = best.expect("at least one restart");
    (rects, map)
}

/// How a truth mask is degraded to stand in for an imperfect segmenter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Corruption {
    /// labels under the occluder become background
    EraseOccluded,
    /// erase, then flip a seeded `fraction` of pixels: object pixels become
    /// background and background pixels take a random label present in the truth
    EraseSaltNoise { fraction: f64, seed: u64 },
}

pub fn corrupt_mask(truth: &LabelMask, occluder: &BinaryMap, mode: &Corruption) -> LabelMask {
    let mut out = truth.clone();
    for (l, &o) in out.data_mut().iter_mut().zip(occluder.data()) {
        if o {
            *l = 0;
        }
    }
    if let Corruption::EraseSaltNoise { fraction, seed } = *mode {
        let labels: Vec<u8> = truth.labels().into_iter().filter(|&l| l != 0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in out.data_mut() {
            if rng.gen::<f64>() < fraction {
                *l = if *l != 0 || labels.is_empty() { 0 } else { labels[rng.gen_range(0..labels.len())] };
            }
        }
    }
    out
}
