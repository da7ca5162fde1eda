use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{decode_masks, total_loss, LossWeights};
use crate::bench::SequenceSample;
use crate::error::{ensure, Error, Result};
use crate::net::{NetworkConfig, NetworkState, ParamStore, ProcNet, StateSnapshot};
use crate::tensor::{Graph, Var};

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// truncated backpropagation window, in frames
    pub bptt: usize,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            bptt: 10,
            seed: 42,
            weights: LossWeights::default(),
        }
    }
}

/// Mean loss components over some set of frames.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub dice: f64,
    pub focal: f64,
    pub prediction: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// loss on the training set before the first update ("epoch 0")
    pub initial: LossBreakdown,
    /// mean training loss of epochs `1..=E`
    pub epochs: Vec<EpochLoss>,
}

impl TrainReport {
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss.total).collect()
    }

    /// `1 - final / initial` of the total loss.
    pub fn reduction(&self) -> f64 {
        let last = self.epochs.last().map_or(self.initial.total, |e| e.loss.total);
        1.0 - last / self.initial.total
    }
}

/// CSV with header `epoch,dice,focal,prediction,total` and one row per
/// training epoch, numbered from 1.
pub fn write_loss_csv(report: &TrainReport) -> String {
    let mut out = String::from("epoch,dice,focal,prediction,total\n");
    for e in &report.epochs {
        let l = e.loss;
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6},{:.6}", e.epoch, l.dice, l.focal, l.prediction, l.total);
    }
    out
}

/// Adam with bias correction; moments kept in f64.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam { lr, beta1, beta2, eps, t: 0, m: zeros(), v: zeros() }
    }

    /// Applies and clears the gradients held on each tensor.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((t, m), v) in store.tensors_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(grad) = t.grad().map(<[f32]>::to_vec) else { continue };
            for (i, (x, &gr)) in t.data_mut().iter_mut().zip(&grad).enumerate() {
                let gr = gr as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gr;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gr * gr;
                let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                *x = (*x as f64 - update) as f32;
            }
            t.zero_grad();
        }
    }
}

struct WindowOutcome {
    loss: LossBreakdown,
    steps: usize,
    carry: StateSnapshot,
    /// per-parameter gradients, aligned with the store
    grads: Vec<Option<Vec<f32>>>,
}

/// Forward pass over one truncated window; with `learn`, also backpropagates.
fn window(
    net: &ProcNet,
    seq: &SequenceSample,
    range: std::ops::Range<usize>,
    carry: Option<&StateSnapshot>,
    weights: &LossWeights,
    learn: bool,
) -> Result<WindowOutcome> {
    let mut g = Graph::new();
    let p = net.bind(&mut g, learn);
    let (n, _, h, w) = seq.frames[range.start].dims4()?;
    let state = match carry {
        Some(s) => NetworkState::from_snapshot(&mut g, s),
        None => net.init_state(&mut g, n, h, w)?,
    };
    let frames: Vec<Var> = seq.frames[range.clone()].iter().map(|f| g.constant(f.clone())).collect();
    let outs = net.unroll(&mut g, &p, state, &frames)?;
    let mut probs = Vec::with_capacity(outs.len());
    for o in &outs {
        probs.push(decode_masks(net, &mut g, &p, &o.state)?);
    }
    let truths: Vec<_> = seq.masks[range.clone()].iter().collect();
    let states: Vec<_> = outs.iter().map(|o| &o.state).collect();
    let terms = total_loss(&mut g, &probs, &truths, &states, weights, net.config().use_prediction_loss)?;
    let val = |v: Var| g.value(v).item() as f64;
    let loss = LossBreakdown {
        dice: val(terms.dice),
        focal: val(terms.focal),
        prediction: val(terms.prediction),
        total: val(terms.total),
    };
    if !loss.total.is_finite() {
        return Err(Error::NumericFailure(format!("non-finite loss {}", loss.total)));
    }
    let grads = if learn {
        let grads = g.backward(terms.total)?;
        p.vars().iter().map(|&v| grads.get(v).map(<[f32]>::to_vec)).collect()
    } else {
        Vec::new()
    };
    let carry = outs.last().expect("non-empty window").state.snapshot(&g);
    Ok(WindowOutcome { loss, steps: range.len(), carry, grads })
}

#[derive(Default)]
struct Mean {
    sum: LossBreakdown,
    weight: f64,
}

impl Mean {
    fn add(&mut self, l: LossBreakdown, w: usize) {
        let w = w as f64;
        self.sum.dice += l.dice * w;
        self.sum.focal += l.focal * w;
        self.sum.prediction += l.prediction * w;
        self.sum.total += l.total * w;
        self.weight += w;
    }

    fn finish(&self) -> LossBreakdown {
        let w = self.weight.max(1.0);
        LossBreakdown {
            dice: self.sum.dice / w,
            focal: self.sum.focal / w,
            prediction: self.sum.prediction / w,
            total: self.sum.total / w,
        }
    }
}

fn check_data(data: &[SequenceSample]) -> Result<()> {
    ensure(!data.is_empty(), || "empty dataset".to_string())?;
    for s in data {
        ensure(!s.frames.is_empty() && s.frames.len() == s.masks.len(), || {
            format!("sequence with {} frames and {} masks", s.frames.len(), s.masks.len())
        })?;
    }
    Ok(())
}

/// Truncated-BPTT training with Adam; sequences are visited in a seeded
/// shuffle each epoch. Returns the mean training loss per epoch.
pub fn train(net: &mut ProcNet, data: &[SequenceSample], opts: &TrainOptions) -> Result<TrainReport> {
    check_data(data)?;
    opts.weights.validate()?;
    ensure(opts.bptt > 0, || "bptt window must be positive".to_string())?;
    let initial = evaluate(net, data, &opts.weights, opts.bptt)
        .map_err(|e| match e {
            Error::NumericFailure(m) => Error::NumericFailure(format!("epoch 0: {m}")),
            other => other,
        })?;
    let mut adam = Adam::new(net.params(), opts.learning_rate, opts.beta1, opts.beta2, opts.adam_eps);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport { initial, epochs: Vec::with_capacity(opts.epochs) };
    for epoch in 1..=opts.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let mut mean = Mean::default();
        for &i in &order {
            let seq = &data[i];
            let mut carry = None;
            let mut start = 0;
            while start < seq.frames.len() {
                let end = (start + opts.bptt).min(seq.frames.len());
                let out = window(net, seq, start..end, carry.as_ref(), &opts.weights, true).map_err(|e| match e {
                    Error::NumericFailure(m) => Error::NumericFailure(format!("epoch {epoch}: {m}")),
                    other => other,
                })?;
                for (t, gr) in net.params_mut().tensors_mut().zip(&out.grads) {
                    if let Some(gr) = gr {
                        t.accumulate_grad(gr)?;
                    }
                }
                adam.step(net.params_mut());
                mean.add(out.loss, out.steps);
                carry = Some(out.carry);
                start = end;
            }
        }
        report.epochs.push(EpochLoss { epoch, loss: mean.finish() });
    }
    Ok(report)
}

/// Mean held-out losses, windowed the same way as training.
pub fn evaluate(net: &ProcNet, data: &[SequenceSample], weights: &LossWeights, bptt: usize) -> Result<LossBreakdown> {
    check_data(data)?;
    let mut mean = Mean::default();
    for seq in data {
        let mut carry = None;
        let mut start = 0;
        while start < seq.frames.len() {
            let end = (start + bptt.max(1)).min(seq.frames.len());
            let out = window(net, seq, start..end, carry.as_ref(), weights, false)?;
            mean.add(out.loss, out.steps);
            carry = Some(out.carry);
            start = end;
        }
    }
    Ok(mean.finish())
}

#[derive(Clone, Debug)]
pub struct GridRow {
    pub config: NetworkConfig,
    pub dice: f64,
    pub focal: f64,
    pub avg: f64,
    pub train: TrainReport,
}

/// Trains every configuration identically and scores it on `heldout`.
pub fn run_config_grid(
    grid: &[NetworkConfig],
    train_set: &[SequenceSample],
    heldout: &[SequenceSample],
    opts: &TrainOptions,
) -> Result<Vec<GridRow>> {
    grid.iter()
        .map(|config| {
            let mut net = ProcNet::new(config.clone(), opts.seed)?;
            let report = train(&mut net, train_set, opts)?;
            let held = evaluate(&net, heldout, &opts.weights, opts.bptt)?;
            Ok(GridRow {
                config: config.clone(),
                dice: held.dice,
                focal: held.focal,
                avg: (held.dice + held.focal) / 2.0,
                train: report,
            })
        })
        .collect()
}
