//! The predictive-coding layer stack.
//!
//! Each layer `l` keeps a representation `R_l` (recurrent cell output) and an
//! error `E_l = relu([A_l - Â_l, Â_l - A_l])`, where `Â_l` is a 1x1 conv of
//! `R_l` and `A_l` is the frame (layer 0) or `relu(pool(conv5(E_{l-1})))`.
//! A timestep runs a top-down sweep updating every `R_l` from
//! `[E_l(t-1), up(R_{l+1})]`, then a bottom-up sweep recomputing errors.

pub mod cells;
pub mod params;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cells::{conv_cell_step, convlstm_step, hgru_step, CellParams, ConvParams, HgruParams, LstmParams};
pub use params::{Bound, ParamId, ParamStore};

use crate::error::{ensure, Error, Result};
use crate::loss::decoder::DecoderParams;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Conv,
    Hgru,
    ConvLstm,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Conv, CellKind::Hgru, CellKind::ConvLstm];
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Conv => "Conv",
            CellKind::Hgru => "hGRU",
            CellKind::ConvLstm => "LSTM",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conv" => Ok(CellKind::Conv),
            "hgru" => Ok(CellKind::Hgru),
            "lstm" | "convlstm" => Ok(CellKind::ConvLstm),
            other => Err(Error::InvalidConfiguration(format!("unknown cell kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Width of each layer; `channels[0]` is the image channel count.
    pub channels: Vec<usize>,
    pub cell: CellKind,
    /// One-timestep lag on inter-layer paths.
    pub axonal_delay: bool,
    pub use_prediction_loss: bool,
    pub conv_kernel: usize,
    pub prediction_kernel: usize,
    pub hgru_kernel: usize,
    pub num_classes: usize,
    pub decoder_width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::with_layers(3)
    }
}

impl NetworkConfig {
    /// Desk-scale widths: (1, 16, 32) for three layers, doubling beyond.
    pub fn with_layers(layers: usize) -> Self {
        let channels = std::iter::once(1).chain((1..layers).map(|l| 8 << l)).collect();
        NetworkConfig {
            channels,
            cell: CellKind::Hgru,
            axonal_delay: false,
            use_prediction_loss: true,
            conv_kernel: 5,
            prediction_kernel: 1,
            hgru_kernel: 5,
            num_classes: 2,
            decoder_width: 16,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad(format!("channels must be non-empty and positive, got {:?}", self.channels));
        }
        for (name, k) in [("conv", self.conv_kernel), ("prediction", self.prediction_kernel), ("hgru", self.hgru_kernel)] {
            if k % 2 == 0 {
                return bad(format!("{name} kernel must be odd, got {k}"));
            }
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return bad(format!("num_classes must be in [2, 256], got {}", self.num_classes));
        }
        if self.decoder_width == 0 {
            return bad("decoder_width must be positive".into());
        }
        Ok(())
    }

    /// Image extents must halve cleanly down the stack.
    pub fn check_image(&self, h: usize, w: usize) -> Result<()> {
        let f = 1usize << (self.num_layers() - 1);
        ensure(h > 0 && w > 0 && h.is_multiple_of(f) && w.is_multiple_of(f), || {
            format!("image {h}x{w} not divisible by {f} for {} layers", self.num_layers())
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerParams {
    /// conv feeding `A_l` from `E_{l-1}`; absent in layer 0
    pub feedforward: Option<ConvParams<ParamId>>,
    pub prediction: ConvParams<ParamId>,
    pub cell: CellParams<ParamId>,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerState {
    pub r: Var,
    pub e: Var,
    /// LSTM cell memory
    pub memory: Option<Var>,
}

/// Per-layer activities at one timestep, as graph nodes.
#[derive(Clone, Debug, Default)]
pub struct NetworkState {
    pub layers: Vec<LayerState>,
}

/// Plain-tensor copy of a [`NetworkState`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateSnapshot {
    pub r: Vec<Tensor>,
    pub e: Vec<Tensor>,
    pub memory: Vec<Option<Tensor>>,
}

impl NetworkState {
    pub fn snapshot(&self, g: &Graph) -> StateSnapshot {
        StateSnapshot {
            r: self.layers.iter().map(|l| g.value(l.r).clone()).collect(),
            e: self.layers.iter().map(|l| g.value(l.e).clone()).collect(),
            memory: self.layers.iter().map(|l| l.memory.map(|m| g.value(m).clone())).collect(),
        }
    }

    /// Re-enters a snapshot as constants (truncates backpropagation).
    pub fn from_snapshot(g: &mut Graph, s: &StateSnapshot) -> Self {
        let layers = (0..s.r.len())
            .map(|l| LayerState {
                r: g.constant(s.r[l].clone()),
                e: g.constant(s.e[l].clone()),
                memory: s.memory[l].as_ref().map(|m| g.constant(m.clone())),
            })
            .collect();
        NetworkState { layers }
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    /// `Â_0`, the next-frame prediction
    pub prediction: Var,
    pub state: NetworkState,
}

/// Result of running a sequence without gradient tracking.
#[derive(Clone, Debug)]
pub struct SequenceRun {
    pub predictions: Vec<Tensor>,
    pub states: Vec<StateSnapshot>,
    /// decoded class probabilities per step (present when the network has a decoder)
    pub probabilities: Vec<Tensor>,
}

/// Network parameters and structure.
#[derive(Clone, Debug)]
pub struct ProcNet {
    config: NetworkConfig,
    store: ParamStore,
    layers: Vec<LayerParams>,
    decoder: Option<DecoderParams>,
}

impl ProcNet {
    /// Fresh parameters, uniform in `±1/sqrt(fan_in)`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ch = &config.channels;
        let num = ch.len();
        let mut layers = Vec::with_capacity(num);
        for l in 0..num {
            let name = format!("layer{l}");
            let feedforward = (l > 0).then(|| {
                ConvParams::init(&mut store, &format!("{name}.ff"), ch[l], 2 * ch[l - 1], config.conv_kernel, true, &mut rng)
            });
            let prediction =
                ConvParams::init(&mut store, &format!("{name}.pred"), ch[l], ch[l], config.prediction_kernel, true, &mut rng);
            let drive = 2 * ch[l] + if l + 1 < num { ch[l + 1] } else { 0 };
            let k = config.conv_kernel;
            let cell = match config.cell {
                CellKind::Conv => CellParams::Conv {
                    input: ConvParams::init(&mut store, &format!("{name}.cell.in"), ch[l], drive, k, true, &mut rng),
                },
                CellKind::Hgru => CellParams::Hgru {
                    input: ConvParams::init(&mut store, &format!("{name}.cell.in"), ch[l], drive, k, true, &mut rng),
                    hgru: HgruParams::init(&mut store, &format!("{name}.cell"), ch[l], config.hgru_kernel, &mut rng),
                },
                CellKind::ConvLstm => {
                    CellParams::Lstm(LstmParams::init(&mut store, &format!("{name}.cell"), drive, ch[l], k, &mut rng))
                }
            };
            layers.push(LayerParams { feedforward, prediction, cell });
        }
        let decoder = (num >= 2).then(|| DecoderParams::init(&mut store, &config, &mut rng));
        Ok(ProcNet { config, store, layers, decoder })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn layer_params(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn decoder(&self) -> Option<&DecoderParams> {
        self.decoder.as_ref()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.store.bind(g, trainable)
    }

    /// All-zero activities for a batch of `h x w` images.
    pub fn init_state(&self, g: &mut Graph, batch: usize, h: usize, w: usize) -> Result<NetworkState> {
        self.config.check_image(h, w)?;
        let layers = self
            .config
            .channels
            .iter()
            .enumerate()
            .map(|(l, &c)| {
                let (lh, lw) = (h >> l, w >> l);
                LayerState {
                    r: g.constant(Tensor::zeros(&[batch, c, lh, lw])),
                    e: g.constant(Tensor::zeros(&[batch, 2 * c, lh, lw])),
                    memory: (self.config.cell == CellKind::ConvLstm)
                        .then(|| g.constant(Tensor::zeros(&[batch, c, lh, lw]))),
                }
            })
            .collect();
        Ok(NetworkState { layers })
    }

    fn check_state(&self, g: &Graph, state: &NetworkState, frame: Var) -> Result<()> {
        let num = self.config.num_layers();
        if state.layers.len() != num {
            return Err(Error::InvalidState(format!(
                "state has {} layers, network has {num}; call init_state first",
                state.layers.len()
            )));
        }
        let (n, c, h, w) = g.value(frame).dims4()?;
        ensure(c == self.config.channels[0], || {
            format!("frame has {c} channels, network expects {}", self.config.channels[0])
        })?;
        let e0 = g.value(state.layers[0].e).shape();
        if e0 != [n, 2 * c, h, w] {
            return Err(Error::InvalidState(format!("state sized for {e0:?}, frame is {:?}", g.value(frame).shape())));
        }
        Ok(())
    }

    /// One timestep: top-down representation sweep, then bottom-up errors.
    pub fn step(&self, g: &mut Graph, p: &Bound, prev: &NetworkState, frame: Var) -> Result<StepOutput> {
        self.check_state(g, prev, frame)?;
        let num = self.config.num_layers();
        let delay = self.config.axonal_delay;

        let mut r: Vec<Option<Var>> = vec![None; num];
        let mut memory: Vec<Option<Var>> = vec![None; num];
        for l in (0..num).rev() {
            let before = prev.layers[l];
            let drive = if l + 1 < num {
                let above = if delay { prev.layers[l + 1].r } else { r[l + 1].expect("upper layer updated") };
                let up = g.upsample2(above)?;
                g.concat_channels(before.e, up)?
            } else {
                before.e
            };
            let (rl, ml) = match self.layers[l].cell.bind(p) {
                CellParams::Conv { input } => (conv_cell_step(g, drive, &input)?, None),
                CellParams::Hgru { input, hgru } => {
                    let x = input.apply(g, drive)?;
                    (hgru_step(g, before.r, x, &hgru)?, None)
                }
                CellParams::Lstm(lstm) => {
                    let mem = before.memory.ok_or_else(|| Error::InvalidState("LSTM memory missing".into()))?;
                    let (h, m) = convlstm_step(g, before.r, mem, drive, &lstm)?;
                    (h, Some(m))
                }
            };
            r[l] = Some(rl);
            memory[l] = ml;
        }

        let mut layers = Vec::with_capacity(num);
        let mut prediction = None;
        for l in 0..num {
            let rl = r[l].expect("all layers updated");
            let params = &self.layers[l];
            let ahat = params.prediction.map(|id| p.var(id)).apply(g, rl)?;
            let a = match params.feedforward {
                None => frame,
                Some(ff) => {
                    let below: &LayerState = if delay { &prev.layers[l - 1] } else { &layers[l - 1] };
                    let c = ff.map(|id| p.var(id)).apply(g, below.e)?;
                    let pooled = g.maxpool2(c)?;
                    g.relu(pooled)
                }
            };
            let pos = g.sub(a, ahat)?;
            let neg = g.sub(ahat, a)?;
            let both = g.concat_channels(pos, neg)?;
            let e = g.relu(both);
            if l == 0 {
                prediction = Some(ahat);
            }
            layers.push(LayerState { r: rl, e, memory: memory[l] });
        }
        Ok(StepOutput { prediction: prediction.expect("layer 0"), state: NetworkState { layers } })
    }

    /// Folds [`step`](Self::step) over `frames` starting from `state`.
    pub fn unroll(&self, g: &mut Graph, p: &Bound, state: NetworkState, frames: &[Var]) -> Result<Vec<StepOutput>> {
        ensure(!frames.is_empty(), || "empty frame sequence".to_string())?;
        let mut outputs: Vec<StepOutput> = Vec::with_capacity(frames.len());
        for &f in frames {
            let prev = outputs.last().map_or(&state, |o| &o.state);
            let out = self.step(g, p, prev, f)?;
            outputs.push(out);
        }
        Ok(outputs)
    }

    /// Runs a whole sequence from a zero state, keeping every step's outputs.
    pub fn run_sequence(&self, frames: &[Tensor]) -> Result<SequenceRun> {
        ensure(!frames.is_empty(), || "empty frame sequence".to_string())?;
        let (n, _, h, w) = frames[0].dims4()?;
        ensure(frames.iter().all(|f| f.shape() == frames[0].shape()), || "frames differ in shape".to_string())?;
        let mut run = SequenceRun { predictions: Vec::new(), states: Vec::new(), probabilities: Vec::new() };
        let mut snapshot: Option<StateSnapshot> = None;
        for frame in frames {
            // one small graph per step keeps memory flat over long sequences
            let mut g = Graph::new();
            let p = self.bind(&mut g, false);
            let state = match &snapshot {
                Some(s) => NetworkState::from_snapshot(&mut g, s),
                None => self.init_state(&mut g, n, h, w)?,
            };
            let f = g.constant(frame.clone());
            let out = self.step(&mut g, &p, &state, f)?;
            if let Some(dec) = &self.decoder {
                let probs = dec.decode(&mut g, &p, &out.state)?;
                run.probabilities.push(g.value(probs).clone());
            }
            run.predictions.push(g.value(out.prediction).clone());
            let snap = out.state.snapshot(&g);
            run.states.push(snap.clone());
            snapshot = Some(snap);
        }
        Ok(run)
    }
}
