//! Segmentation decoder, supervised and self-supervised losses, training.

pub mod decoder;
mod train;

pub use decoder::{decode_masks, DecoderParams};
pub use train::{
    evaluate, run_config_grid, train, write_loss_csv, Adam, EpochLoss, GridRow, LossBreakdown, TrainOptions,
    TrainReport,
};

use crate::error::{ensure, Error, Result};
use crate::mask::LabelMask;
use crate::net::NetworkState;
use crate::tensor::{Graph, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub dice: f64,
    pub focal: f64,
    /// per-layer prediction-error weights; empty means `(1, 0.1, 0.1, ...)`
    pub layer: Vec<f64>,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub dice_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { dice: 0.5, focal: 0.5, layer: Vec::new(), focal_gamma: 2.0, focal_alpha: 0.25, dice_eps: 1e-6 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        if self.dice < 0.0 || self.focal < 0.0 || ((self.dice + self.focal) - 1.0).abs() > 1e-9 {
            return bad(format!("dice/focal weights must be >= 0 and sum to 1, got {} and {}", self.dice, self.focal));
        }
        if self.layer.iter().any(|&w| w < 0.0) {
            return bad("layer weights must be >= 0".into());
        }
        if self.focal_gamma < 0.0 || !(self.focal_alpha > 0.0 && self.focal_alpha <= 1.0) || self.dice_eps < 0.0 {
            return bad("focal gamma >= 0, alpha in (0, 1] and dice eps >= 0 required".into());
        }
        Ok(())
    }

    pub fn layer_weights(&self, layers: usize) -> Result<Vec<f64>> {
        if self.layer.is_empty() {
            return Ok((0..layers).map(|l| if l == 0 { 1.0 } else { 0.1 }).collect());
        }
        ensure(self.layer.len() == layers, || {
            format!("{} layer weights for a {layers}-layer network", self.layer.len())
        })?;
        Ok(self.layer.clone())
    }
}

fn label_check(g: &Graph, probs: Var, truth: &LabelMask) -> Result<()> {
    let (n, _, h, w) = g.value(probs).dims4()?;
    ensure(n == 1 && (h, w) == (truth.height(), truth.width()), || {
        format!("probabilities {:?} do not match a {}x{} mask", g.value(probs).shape(), truth.height(), truth.width())
    })
}

/// Soft Dice loss of one decoded frame against its truth mask.
pub fn dice_loss(g: &mut Graph, probs: Var, truth: &LabelMask, eps: f64) -> Result<Var> {
    label_check(g, probs, truth)?;
    g.dice_loss(probs, truth.data(), eps)
}

pub fn focal_loss(g: &mut Graph, probs: Var, truth: &LabelMask, gamma: f64, alpha: f64) -> Result<Var> {
    label_check(g, probs, truth)?;
    g.focal_loss(probs, truth.data(), gamma, alpha)
}

/// `sum_t sum_l lambda_l mean(E_l,t) / T`.
pub fn prediction_loss(g: &mut Graph, states: &[&NetworkState], weights: &LossWeights) -> Result<Var> {
    ensure(!states.is_empty(), || "prediction loss needs at least one step".to_string())?;
    let lambda = weights.layer_weights(states[0].layers.len())?;
    let steps = states.len() as f32;
    let mut total: Option<Var> = None;
    for s in states {
        for (layer, &w) in s.layers.iter().zip(&lambda) {
            let m = g.mean(layer.e)?;
            let term = g.scale(m, w as f32 / steps);
            total = Some(match total {
                None => term,
                Some(t) => g.add(t, term)?,
            });
        }
    }
    Ok(total.expect("non-empty"))
}

/// Loss terms of a window, as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    /// mean Dice over steps
    pub dice: Var,
    pub focal: Var,
    pub prediction: Var,
}

/// `mean_t(w_d dice_t + w_f focal_t) + [use_prediction_loss] prediction`.
pub fn total_loss(
    g: &mut Graph,
    probs: &[Var],
    truths: &[&LabelMask],
    states: &[&NetworkState],
    weights: &LossWeights,
    use_prediction_loss: bool,
) -> Result<LossTerms> {
    ensure(!probs.is_empty() && probs.len() == truths.len() && probs.len() == states.len(), || {
        format!("misaligned steps: {} outputs, {} masks, {} states", probs.len(), truths.len(), states.len())
    })?;
    let steps = probs.len() as f32;
    let (mut dice_sum, mut focal_sum): (Option<Var>, Option<Var>) = (None, None);
    for (&p, truth) in probs.iter().zip(truths) {
        let d = dice_loss(g, p, truth, weights.dice_eps)?;
        let f = focal_loss(g, p, truth, weights.focal_gamma, weights.focal_alpha)?;
        dice_sum = Some(match dice_sum {
            None => d,
            Some(s) => g.add(s, d)?,
        });
        focal_sum = Some(match focal_sum {
            None => f,
            Some(s) => g.add(s, f)?,
        });
    }
    let dice = g.scale(dice_sum.expect("non-empty"), 1.0 / steps);
    let focal = g.scale(focal_sum.expect("non-empty"), 1.0 / steps);
    let wd = g.scale(dice, weights.dice as f32);
    let wf = g.scale(focal, weights.focal as f32);
    let supervised = g.add(wd, wf)?;
    let prediction = prediction_loss(g, states, weights)?;
    let total = if use_prediction_loss { g.add(supervised, prediction)? } else { supervised };
    Ok(LossTerms { total, dice, focal, prediction })
}

#[cfg(test)]
mod tests;
