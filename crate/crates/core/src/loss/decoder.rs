use rand::Rng;

use crate::error::{Error, Result};
use crate::net::{Bound, ConvParams, NetworkConfig, NetworkState, ParamId, ParamStore, ProcNet};
use crate::tensor::{Graph, Var};

/// Segmentation head over the representations of layers `1..L`.
///
/// Each `R_l` is projected to a common width with a 1x1 conv, upsampled back
/// to input resolution, concatenated, then mixed by a 3x3 conv + relu and a
/// 1x1 conv to class logits. Layer 0 feeds only frame prediction.
#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub projections: Vec<ConvParams<ParamId>>,
    pub mix: ConvParams<ParamId>,
    pub classify: ConvParams<ParamId>,
}

impl DecoderParams {
    pub(crate) fn init<R: Rng + ?Sized>(store: &mut ParamStore, config: &NetworkConfig, rng: &mut R) -> Self {
        let width = config.decoder_width;
        let projections = (1..config.num_layers())
            .map(|l| ConvParams::init(store, &format!("decoder.proj{l}"), width, config.channels[l], 1, true, rng))
            .collect::<Vec<_>>();
        let mixed_in = width * projections.len();
        let mix = ConvParams::init(store, "decoder.mix", width, mixed_in, 3, true, rng);
        let classify = ConvParams::init(store, "decoder.classify", config.num_classes, width, 1, true, rng);
        DecoderParams { projections, mix, classify }
    }

    /// Per-pixel class probabilities `[N, C, H, W]`.
    pub fn decode(&self, g: &mut Graph, p: &Bound, state: &NetworkState) -> Result<Var> {
        let bind = |c: &ConvParams<ParamId>| c.map(|id| p.var(id));
        let mut merged: Option<Var> = None;
        for (i, proj) in self.projections.iter().enumerate() {
            let l = i + 1;
            let mut x = bind(proj).apply(g, state.layers[l].r)?;
            for _ in 0..l {
                x = g.upsample2(x)?;
            }
            merged = Some(match merged {
                None => x,
                Some(m) => g.concat_channels(m, x)?,
            });
        }
        let merged = merged.ok_or_else(|| Error::InvalidConfiguration("decoder needs at least two layers".into()))?;
        let h = bind(&self.mix).apply(g, merged)?;
        let h = g.relu(h);
        let logits = bind(&self.classify).apply(g, h)?;
        g.softmax_channels(logits)
    }
}

/// Decodes class probabilities from the state after a step.
pub fn decode_masks(net: &ProcNet, g: &mut Graph, p: &Bound, state: &NetworkState) -> Result<Var> {
    let dec = net.decoder().ok_or_else(|| {
        Error::InvalidConfiguration(format!("decoding needs >= 2 layers, network has {}", net.config().num_layers()))
    })?;
    dec.decode(g, p, state)
}
