use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bench::{generate_sequence, SceneConfig, SequenceSample};
use crate::net::{Bound, CellKind, NetworkConfig, ProcNet};
use crate::tensor::{grad_check, Tensor};

fn probs(g: &mut Graph, c: usize, h: usize, w: usize, data: Vec<f32>) -> Var {
    g.constant(Tensor::new(vec![1, c, h, w], data).unwrap())
}

fn one_hot(mask: &LabelMask, c: usize) -> Vec<f32> {
    let plane = mask.height() * mask.width();
    let mut out = vec![0.0; c * plane];
    for (i, &l) in mask.data().iter().enumerate() {
        out[l as usize * plane + i] = 1.0;
    }
    out
}

fn dice_oracle(p: &[f32], truth: &[u8], c: usize, eps: f64) -> f64 {
    let plane = truth.len();
    let mut total = 0.0;
    let mut count = 0.0;
    for k in 0..c {
        let present = k == 0 || truth.contains(&(k as u8));
        if !present {
            continue;
        }
        let mut inter = 0.0;
        let mut sp = 0.0;
        let mut sg = 0.0;
        for i in 0..plane {
            let pk = p[k * plane + i] as f64;
            let gk = if truth[i] as usize == k { 1.0 } else { 0.0 };
            inter += pk * gk;
            sp += pk;
            sg += gk;
        }
        total += 1.0 - (2.0 * inter + eps) / (sp + sg + eps);
        count += 1.0;
    }
    total / count
}

fn random_probs(rng: &mut ChaCha8Rng, c: usize, plane: usize) -> Vec<f32> {
    let raw: Vec<f64> = (0..c * plane).map(|_| rng.gen_range(0.01..1.0)).collect();
    let mut out = vec![0.0; c * plane];
    for i in 0..plane {
        let s: f64 = (0..c).map(|k| raw[k * plane + i]).sum();
        for k in 0..c {
            out[k * plane + i] = (raw[k * plane + i] / s) as f32;
        }
    }
    out
}

#[test]
fn dice_extremes() {
    let truth = LabelMask::new(2, 2, vec![0, 1, 1, 0]).unwrap();
    let mut g = Graph::new();
    let p = probs(&mut g, 2, 2, 2, one_hot(&truth, 2));
    let d = dice_loss(&mut g, p, &truth, 1e-6).unwrap();
    assert!(g.value(d).item().abs() < 1e-6);

    let flipped = LabelMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
    let p = probs(&mut g, 2, 2, 2, one_hot(&flipped, 2));
    let d = dice_loss(&mut g, p, &truth, 1e-6).unwrap();
    assert!((g.value(d).item() - 1.0).abs() < 1e-6);
}

#[test]
fn dice_uniform_half_matches_summation() {
    let truth = LabelMask::new(2, 4, vec![0, 0, 1, 1, 0, 0, 1, 1]).unwrap();
    let p = vec![0.5f32; 16];
    let mut g = Graph::new();
    let v = probs(&mut g, 2, 2, 4, p.clone());
    let d = dice_loss(&mut g, v, &truth, 1e-6).unwrap();
    let want = dice_oracle(&p, truth.data(), 2, 1e-6);
    // 1 - (2*2 + eps)/(4 + 4 + eps) per class
    assert!((want - 0.5).abs() < 1e-6);
    assert!((g.value(d).item() as f64 - want).abs() < 1e-6);
}

#[test]
fn dice_skips_absent_classes() {
    let truth = LabelMask::new(1, 4, vec![0, 2, 2, 0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_probs(&mut rng, 3, 4);
    let mut g = Graph::new();
    let v = probs(&mut g, 3, 1, 4, p.clone());
    let d = dice_loss(&mut g, v, &truth, 1e-6).unwrap();
    assert!((g.value(d).item() as f64 - dice_oracle(&p, truth.data(), 3, 1e-6)).abs() < 1e-6);
}

#[test]
fn focal_hand_values() {
    let truth = LabelMask::new(1, 1, vec![1]).unwrap();
    let mut g = Graph::new();
    let v = probs(&mut g, 2, 1, 1, vec![0.5, 0.5]);
    let f = focal_loss(&mut g, v, &truth, 2.0, 0.25).unwrap();
    let want = 0.25 * 0.25 * 2f64.ln();
    assert!((want - 0.04332).abs() < 1e-5);
    assert!((g.value(f).item() as f64 - want).abs() < 1e-7);

    let v = probs(&mut g, 2, 1, 1, vec![0.0, 1.0]);
    let f = focal_loss(&mut g, v, &truth, 2.0, 0.25).unwrap();
    assert!(g.value(f).item().abs() < 1e-9);
}

#[test]
fn focal_without_focusing_is_cross_entropy() {
    let truth = LabelMask::new(3, 3, vec![0, 1, 2, 2, 1, 0, 0, 0, 1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_probs(&mut rng, 3, 9);
    let mut g = Graph::new();
    let v = probs(&mut g, 3, 3, 3, p.clone());
    let f = focal_loss(&mut g, v, &truth, 0.0, 1.0).unwrap();
    let ce: f64 = truth
        .data()
        .iter()
        .enumerate()
        .map(|(i, &l)| -(p[l as usize * 9 + i] as f64 + 1e-12).ln())
        .sum::<f64>()
        / 9.0;
    assert!((g.value(f).item() as f64 - ce).abs() < 1e-6);
}

#[test]
fn losses_validate_inputs() {
    let mut g = Graph::new();
    let v = probs(&mut g, 2, 1, 2, vec![0.5; 4]);
    let bad = LabelMask::new(1, 2, vec![0, 2]).unwrap();
    assert!(matches!(dice_loss(&mut g, v, &bad, 1e-6), Err(Error::InvalidArgument(_))));
    assert!(matches!(focal_loss(&mut g, v, &bad, 2.0, 0.25), Err(Error::InvalidArgument(_))));
    let wrong = LabelMask::zeros(2, 2);
    assert!(dice_loss(&mut g, v, &wrong, 1e-6).is_err());
    let ok = LabelMask::zeros(1, 2);
    assert!(focal_loss(&mut g, v, &ok, -1.0, 0.25).is_err());
    assert!(focal_loss(&mut g, v, &ok, 2.0, 0.0).is_err());
}

#[test]
fn weights_validation() {
    assert!(LossWeights::default().validate().is_ok());
    let w = LossWeights { dice: 0.7, focal: 0.2, ..LossWeights::default() };
    assert!(w.validate().is_err());
    let w = LossWeights { layer: vec![1.0, -0.1], ..LossWeights::default() };
    assert!(w.validate().is_err());
    assert_eq!(LossWeights::default().layer_weights(3).unwrap(), vec![1.0, 0.1, 0.1]);
    let w = LossWeights { layer: vec![1.0, 1.0], ..LossWeights::default() };
    assert!(w.layer_weights(3).is_err());
}

fn toy_state(g: &mut Graph, errors: &[&[f32]]) -> NetworkState {
    let layers = errors
        .iter()
        .map(|e| {
            let t = Tensor::new(vec![1, 1, 1, e.len()], e.to_vec()).unwrap();
            LayerState { r: g.constant(t.clone()), e: g.constant(t), memory: None }
        })
        .collect();
    NetworkState { layers }
}

use crate::net::LayerState;

#[test]
fn prediction_loss_two_layer_trace() {
    let mut g = Graph::new();
    let s0 = toy_state(&mut g, &[&[1.0, 3.0], &[4.0]]);
    let s1 = toy_state(&mut g, &[&[0.0, 2.0], &[2.0]]);
    let l = prediction_loss(&mut g, &[&s0, &s1], &LossWeights::default()).unwrap();
    // t0: 1*2 + 0.1*4 = 2.4; t1: 1*1 + 0.1*2 = 1.2; mean over 2 steps
    assert!((g.value(l).item() - 1.8).abs() < 1e-6);

    let zero = toy_state(&mut g, &[&[0.0, 0.0], &[0.0]]);
    let l = prediction_loss(&mut g, &[&zero], &LossWeights::default()).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    assert!(prediction_loss(&mut g, &[], &LossWeights::default()).is_err());
}

#[test]
fn total_loss_toggle() {
    let truth = LabelMask::new(1, 2, vec![0, 1]).unwrap();
    let mut g = Graph::new();
    let p = probs(&mut g, 2, 1, 2, vec![0.7, 0.4, 0.3, 0.6]);
    let quiet = toy_state(&mut g, &[&[0.0, 0.0], &[0.0]]);
    let loud = toy_state(&mut g, &[&[5.0, 9.0], &[3.0]]);
    let w = LossWeights::default();
    let a = total_loss(&mut g, &[p], &[&truth], &[&quiet], &w, false).unwrap();
    let b = total_loss(&mut g, &[p], &[&truth], &[&loud], &w, false).unwrap();
    assert_eq!(g.value(a.total).item(), g.value(b.total).item());
    let d = g.value(a.dice).item() as f64;
    let f = g.value(a.focal).item() as f64;
    assert!((g.value(a.total).item() as f64 - 0.5 * (d + f)).abs() < 1e-6);

    let c = total_loss(&mut g, &[p], &[&truth], &[&loud], &w, true).unwrap();
    let pred = g.value(c.prediction).item() as f64;
    assert!((pred - (7.0 + 0.3)).abs() < 1e-5);
    assert!((g.value(c.total).item() as f64 - (0.5 * (d + f) + pred)).abs() < 1e-5);

    let perfect = probs(&mut g, 2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]);
    let z = total_loss(&mut g, &[perfect], &[&truth], &[&quiet], &w, true).unwrap();
    assert!(g.value(z.total).item().abs() < 1e-6);

    assert!(matches!(total_loss(&mut g, &[p, p], &[&truth], &[&quiet], &w, true), Err(Error::InvalidArgument(_))));
}

fn small(cell: CellKind, layers: usize) -> NetworkConfig {
    let channels = std::iter::once(1).chain((1..layers).map(|l| 2 * l)).collect();
    NetworkConfig { channels, cell, decoder_width: 3, ..NetworkConfig::default() }
}

#[test]
fn decoder_zero_weights_is_uniform() {
    let mut net = ProcNet::new(small(CellKind::Hgru, 3), 1).unwrap();
    let names: Vec<String> =
        net.params().iter().map(|(n, _)| n.to_string()).filter(|n| n.starts_with("decoder.")).collect();
    for n in names {
        let id = net.params().id(&n).unwrap();
        net.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let mut g = Graph::new();
    let p = net.bind(&mut g, false);
    let state = net.init_state(&mut g, 1, 8, 8).unwrap();
    let out = decode_masks(&net, &mut g, &p, &state).unwrap();
    let v = g.value(out);
    assert_eq!(v.shape(), &[1, 2, 8, 8]);
    assert!(v.data().iter().all(|&x| (x - 0.5).abs() < 1e-7));
}

#[test]
fn decoder_outputs_distributions() {
    let net = ProcNet::new(small(CellKind::Conv, 4), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frame = Tensor::uniform(&[1, 1, 16, 16], 1.0, &mut rng);
    let run = net.run_sequence(&[frame.clone(), frame]).unwrap();
    for probs in &run.probabilities {
        assert_eq!(probs.shape(), &[1, 2, 16, 16]);
        for i in 0..256 {
            let s = probs.data()[i] + probs.data()[256 + i];
            assert!((s - 1.0).abs() < 1e-5);
            assert!(probs.data()[i] >= 0.0);
        }
    }
}

#[test]
fn decoding_needs_two_layers() {
    let net = ProcNet::new(small(CellKind::Conv, 1), 5).unwrap();
    let mut g = Graph::new();
    let p = net.bind(&mut g, false);
    let state = net.init_state(&mut g, 1, 4, 4).unwrap();
    assert!(matches!(decode_masks(&net, &mut g, &p, &state), Err(Error::InvalidConfiguration(_))));
}

// Seeds chosen so no maxpool or decoder-relu kink falls inside the
// difference stencil.
fn decoder_check(ns: u64, fs: u64) -> f64 {
    let mut truth = LabelMask::zeros(8, 8);
    for y in 2..6 {
        for x in 3..7 {
            truth.set(y, x, 1);
        }
    }
    let mut worst: f64 = 0.0;
    for cell in CellKind::ALL {
        let net = ProcNet::new(small(cell, 2), ns).unwrap();
        let mut inputs: Vec<Tensor> = net.params().iter().map(|(_, t)| t.clone()).collect();
        let nparams = inputs.len();
        let mut rng = ChaCha8Rng::seed_from_u64(fs);
        inputs.push(Tensor::uniform(&[1, 1, 8, 8], 1.0, &mut rng));
        let weights = LossWeights::default();
        let report = grad_check(
            &inputs,
            |g, vars| {
                let p = Bound::from_vars(net.params(), vars[..nparams].to_vec())?;
                let state = net.init_state(g, 1, 8, 8)?;
                let outs = net.unroll(g, &p, state, &vars[nparams..])?;
                let probs = decode_masks(&net, g, &p, &outs[0].state)?;
                Ok(total_loss(g, &[probs], &[&truth], &[&outs[0].state], &weights, true)?.total)
            },
            1e-3,
        )
        .unwrap();
        assert!(report.coordinates > 100);
        worst = worst.max(report.max_rel_error);
    }
    worst
}
#[test]
fn total_loss_gradient_through_decoder() {
    let err = decoder_check(17, 8);
    assert!(err < 1e-3, "{err}");
}

fn toy_data(n: usize, seed: u64) -> Vec<SequenceSample> {
    let mut scene = SceneConfig::moving_rectangle(32);
    scene.length = 3;
    (0..n).map(|i| generate_sequence(&scene, seed + i as u64).unwrap()).collect()
}

fn quick(epochs: usize) -> TrainOptions {
    TrainOptions { epochs, bptt: 2, learning_rate: 5e-3, seed: 4, ..TrainOptions::default() }
}

#[test]
fn one_epoch_one_sequence() {
    let data = toy_data(1, 10);
    let mut net = ProcNet::new(small(CellKind::Hgru, 3), 1).unwrap();
    let report = train(&mut net, &data, &quick(1)).unwrap();
    assert_eq!(report.epochs.len(), 1);
    assert_eq!(report.epochs[0].epoch, 1);
    assert!(report.initial.total.is_finite() && report.epochs[0].loss.total.is_finite());
    let csv = write_loss_csv(&report);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "epoch,dice,focal,prediction,total");
    assert_eq!(lines[1].split(',').count(), 5);
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn training_is_deterministic_and_learns() {
    let data = toy_data(3, 20);
    let run = || {
        let mut net = ProcNet::new(small(CellKind::Hgru, 3), 2).unwrap();
        let report = train(&mut net, &data, &quick(4)).unwrap();
        (report, net.params().to_bytes())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert_eq!(write_loss_csv(&a).lines().count(), 5);
    assert!(a.epochs.last().unwrap().loss.total < a.initial.total);

    let untrained = ProcNet::new(small(CellKind::Hgru, 3), 2).unwrap();
    assert_ne!(untrained.params().to_bytes(), pa);
}

#[test]
fn evaluation_matches_initial_loss() {
    let data = toy_data(2, 30);
    let net = ProcNet::new(small(CellKind::Conv, 3), 3).unwrap();
    let before = evaluate(&net, &data, &LossWeights::default(), 2).unwrap();
    let mut trained = net.clone();
    let report = train(&mut trained, &data, &quick(1)).unwrap();
    assert_eq!(report.initial, before);
}

#[test]
fn training_rejects_bad_input() {
    let mut net = ProcNet::new(small(CellKind::Conv, 3), 3).unwrap();
    assert!(train(&mut net, &[], &quick(1)).is_err());
    let data = toy_data(1, 5);
    let opts = TrainOptions { bptt: 0, ..quick(1) };
    assert!(train(&mut net, &data, &opts).is_err());
}

#[test]
fn grid_rows() {
    let data = toy_data(2, 40);
    let rows = run_config_grid(&[small(CellKind::Conv, 3)], &data[..1], &data[1..], &quick(1)).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((rows[0].avg - (rows[0].dice + rows[0].focal) / 2.0).abs() < 1e-12);
}

