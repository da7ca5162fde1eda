//! Recurrent representation cells: stateless conv, horizontal GRU, conv LSTM.
//!
//! Parameter structs are generic over the handle type so the same layout
//! describes stored tensors (`ParamId`) and graph nodes (`Var`).

use rand::Rng;

use super::params::{Bound, ParamId, ParamStore};
use crate::error::{ensure, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams<T> {
    pub weight: T,
    pub bias: Option<T>,
}

impl<T: Copy> ConvParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> ConvParams<U> {
        ConvParams { weight: f(self.weight), bias: self.bias.map(f) }
    }
}

impl ConvParams<ParamId> {
    pub(crate) fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cout: usize,
        cin: usize,
        k: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * k * k;
        let weight = store.add_uniform(format!("{name}.weight"), &[cout, cin, k, k], fan_in, rng);
        let bias = bias.then(|| store.add_uniform(format!("{name}.bias"), &[cout], fan_in, rng));
        ConvParams { weight, bias }
    }
}

impl ConvParams<Var> {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.conv2d(x, self.weight, self.bias)
    }
}

/// Two-stage horizontal GRU. `w` is the shared horizontal kernel; the gate
/// kernels `u1`/`u2` are 1x1; `alpha..omega` are per-channel scalars.
#[derive(Clone, Copy, Debug)]
pub struct HgruParams<T> {
    pub u1: ConvParams<T>,
    pub u2: ConvParams<T>,
    pub w: T,
    pub alpha: T,
    pub mu: T,
    pub kappa: T,
    pub beta: T,
    pub omega: T,
}

impl<T: Copy> HgruParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U + Copy) -> HgruParams<U> {
        HgruParams {
            u1: self.u1.map(f),
            u2: self.u2.map(f),
            w: f(self.w),
            alpha: f(self.alpha),
            mu: f(self.mu),
            kappa: f(self.kappa),
            beta: f(self.beta),
            omega: f(self.omega),
        }
    }
}

impl HgruParams<ParamId> {
    pub(crate) fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, ch: usize, k: usize, rng: &mut R) -> Self {
        let u1 = ConvParams::init(store, &format!("{name}.u1"), ch, ch, 1, true, rng);
        let u2 = ConvParams::init(store, &format!("{name}.u2"), ch, ch, 1, true, rng);
        let w = store.add_uniform(format!("{name}.w"), &[ch, ch, k, k], ch * k * k, rng);
        let mut scalar = |n: &str, v: f32| store.add(format!("{name}.{n}"), Tensor::full(&[ch], v));
        HgruParams {
            u1,
            u2,
            w,
            alpha: scalar("alpha", 0.1),
            mu: scalar("mu", 1.0),
            kappa: scalar("kappa", 0.5),
            beta: scalar("beta", 0.5),
            omega: scalar("omega", 0.5),
        }
    }
}

/// Convolutional LSTM gates, each a convolution over `concat(drive, hidden)`.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams<T> {
    pub input: ConvParams<T>,
    pub forget: ConvParams<T>,
    pub output: ConvParams<T>,
    pub candidate: ConvParams<T>,
}

impl<T: Copy> LstmParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U + Copy) -> LstmParams<U> {
        LstmParams {
            input: self.input.map(f),
            forget: self.forget.map(f),
            output: self.output.map(f),
            candidate: self.candidate.map(f),
        }
    }
}

impl LstmParams<ParamId> {
    pub(crate) fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        drive: usize,
        ch: usize,
        k: usize,
        rng: &mut R,
    ) -> Self {
        let mut gate = |g: &str| ConvParams::init(store, &format!("{name}.{g}"), ch, drive + ch, k, true, rng);
        LstmParams { input: gate("i"), forget: gate("f"), output: gate("o"), candidate: gate("g") }
    }
}

/// Per-layer representation cell. Every kind starts with a convolution that
/// maps the layer drive (error plus top-down input) to the layer width,
/// except the LSTM, whose gates read the drive directly.
#[derive(Clone, Copy, Debug)]
pub enum CellParams<T> {
    Conv { input: ConvParams<T> },
    Hgru { input: ConvParams<T>, hgru: HgruParams<T> },
    Lstm(LstmParams<T>),
}

impl<T: Copy> CellParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U + Copy) -> CellParams<U> {
        match self {
            CellParams::Conv { input } => CellParams::Conv { input: input.map(f) },
            CellParams::Hgru { input, hgru } => CellParams::Hgru { input: input.map(f), hgru: hgru.map(f) },
            CellParams::Lstm(p) => CellParams::Lstm(p.map(f)),
        }
    }
}

impl CellParams<ParamId> {
    pub fn bind(&self, b: &Bound) -> CellParams<Var> {
        self.map(|id| b.var(id))
    }
}

fn same(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    ensure(g.value(a).shape() == g.value(b).shape(), || {
        format!("{what}: shape mismatch {:?} vs {:?}", g.value(a).shape(), g.value(b).shape())
    })
}

/// One horizontal-GRU update of `hidden` under feed-forward `drive`.
///
/// Suppression: `S = relu(X - relu(W*(H.G1) . (alpha H + mu)))`, `G1 = sigmoid(U1*H)`.
/// Facilitation: `H~ = relu(kappa S + beta W*S + omega S.(W*S))`, `G2 = sigmoid(U2*S)`,
/// and `H' = (1 - G2).H + G2.H~`.
pub fn hgru_step(g: &mut Graph, hidden: Var, drive: Var, p: &HgruParams<Var>) -> Result<Var> {
    same(g, hidden, drive, "hgru_step")?;
    let g1 = p.u1.apply(g, hidden)?;
    let g1 = g.sigmoid(g1);
    let gated = g.mul(hidden, g1)?;
    let c1 = g.conv2d(gated, p.w, None)?;
    let gain = g.channel_affine(hidden, p.alpha, Some(p.mu))?;
    let inhibition = g.mul(c1, gain)?;
    let inhibition = g.relu(inhibition);
    let s = g.sub(drive, inhibition)?;
    let s = g.relu(s);

    let g2 = p.u2.apply(g, s)?;
    let g2 = g.sigmoid(g2);
    let c2 = g.conv2d(s, p.w, None)?;
    let linear = g.channel_affine(s, p.kappa, None)?;
    let lateral = g.channel_affine(c2, p.beta, None)?;
    let sc = g.mul(s, c2)?;
    let product = g.channel_affine(sc, p.omega, None)?;
    let sum = g.add(linear, lateral)?;
    let sum = g.add(sum, product)?;
    let candidate = g.relu(sum);

    let keep = g.one_minus(g2);
    let kept = g.mul(keep, hidden)?;
    let fresh = g.mul(g2, candidate)?;
    g.add(kept, fresh)
}

/// Convolutional LSTM: returns `(hidden', memory')`.
pub fn convlstm_step(g: &mut Graph, hidden: Var, memory: Var, drive: Var, p: &LstmParams<Var>) -> Result<(Var, Var)> {
    same(g, hidden, memory, "convlstm_step")?;
    let z = g.concat_channels(drive, hidden)?;
    let i = p.input.apply(g, z)?;
    let i = g.sigmoid(i);
    let f = p.forget.apply(g, z)?;
    let f = g.sigmoid(f);
    let o = p.output.apply(g, z)?;
    let o = g.sigmoid(o);
    let cand = p.candidate.apply(g, z)?;
    let cand = g.tanh(cand);
    ensure(g.value(i).shape() == g.value(memory).shape(), || {
        format!("convlstm_step: gate shape {:?} vs memory {:?}", g.value(i).shape(), g.value(memory).shape())
    })?;
    let fm = g.mul(f, memory)?;
    let ic = g.mul(i, cand)?;
    let memory = g.add(fm, ic)?;
    let t = g.tanh(memory);
    let hidden = g.mul(o, t)?;
    Ok((hidden, memory))
}

/// Stateless convolutional cell: `tanh(conv(drive))`.
pub fn conv_cell_step(g: &mut Graph, drive: Var, p: &ConvParams<Var>) -> Result<Var> {
    let c = p.apply(g, drive)?;
    Ok(g.tanh(c))
}
