use super::conv::{self, ConvDims};
use super::Tensor;
use crate::error::{ensure, invalid_arg, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, dims: ConvDims },
    MaxPool2 { input: Var, argmax: Vec<u32> },
    Upsample2 { input: Var },
    Concat { a: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    ChannelAffine { x: Var, scale: Var, shift: Option<Var> },
    Mean(Var),
    SoftmaxChannels(Var),
    Dice { probs: Var, labels: Vec<u8>, eps: f64 },
    Focal { probs: Var, labels: Vec<u8>, gamma: f64, alpha: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only operation record. Node order is recording order, which is
/// also a valid topological order; `backward` walks it in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every gradient-tracking leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient buffer, `None` when the leaf is not connected to the loss.
    pub fn get(&self, var: Var) -> Option<&[f32]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; disconnected leaves yield zeros.
    pub fn tensor(&self, var: Var) -> Tensor {
        let shape = &self.shapes[var.0];
        match self.get(var) {
            Some(g) => Tensor::new(shape.clone(), g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    ensure(a.shape() == b.shape(), || format!("{what}: shape mismatch {:?} vs {:?}", a.shape(), b.shape()))
}

fn map(t: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).expect("same length")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same length")
}

fn sigmoid(v: f32) -> f32 {
    let v = v as f64;
    (if v >= 0.0 { 1.0 / (1.0 + (-v).exp()) } else { v.exp() / (1.0 + v.exp()) }) as f32
}

/// Classes entering the Dice mean: background plus every class present.
fn dice_classes(labels: &[u8], classes: usize) -> Vec<bool> {
    let mut present = vec![false; classes];
    present[0] = true;
    for &l in labels {
        present[l as usize] = true;
    }
    present
}

/// Per-class sums `(intersection, prob mass, truth count)`.
fn dice_sums(p: &Tensor, labels: &[u8]) -> Vec<(f64, f64, f64)> {
    let (n, c, h, w) = p.dims4().expect("rank 4");
    let plane = h * w;
    let mut sums = vec![(0.0, 0.0, 0.0); c];
    for b in 0..n {
        let lab = &labels[b * plane..(b + 1) * plane];
        for (k, s) in sums.iter_mut().enumerate() {
            let pc = &p.data()[(b * c + k) * plane..(b * c + k + 1) * plane];
            s.1 += conv::sum(pc);
            for (&pv, &l) in pc.iter().zip(lab) {
                if l as usize == k {
                    s.0 += pv as f64;
                    s.2 += 1.0;
                }
            }
        }
    }
    sums
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Gradient-tracking leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let kt = self.value(kernel);
        let (n, cin, h, w) = x.dims4()?;
        let (cout, kcin, k, k2) = kt.dims4()?;
        ensure(k == k2, || format!("conv2d: kernel must be square, got {k}x{k2}"))?;
        ensure(k % 2 == 1, || format!("conv2d: kernel size must be odd, got {k}"))?;
        ensure(kcin == cin, || format!("conv2d: input has {cin} channels, kernel expects {kcin}"))?;
        if let Some(b) = bias {
            ensure(self.value(b).shape() == [cout], || {
                format!("conv2d: bias shape {:?} does not match {cout} outputs", self.value(b).shape())
            })?;
        }
        let dims = ConvDims { n, cin, cout, h, w, k };
        let out = conv::forward(x.data(), kt.data(), bias.map(|b| self.value(b).data()), dims);
        let value = Tensor::new(vec![n, cout, h, w], out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let needs = self.tracks(&deps);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, dims }, needs))
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        ensure(h % 2 == 0 && w % 2 == 0, || format!("maxpool2: extents {h}x{w} must be even"))?;
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        let d = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        let needs = self.tracks(&[input]);
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, needs))
    }

    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0f32; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &x.data()[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        let needs = self.tracks(&[input]);
        Ok(self.push(value, Op::Upsample2 { input }, needs))
    }

    /// Channels of `a` followed by channels of `b`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (na, ca, ha, wa) = ta.dims4()?;
        let (nb, cb, hb, wb) = tb.dims4()?;
        ensure((na, ha, wa) == (nb, hb, wb), || {
            format!("concat_channels: mismatched extents {:?} vs {:?}", ta.shape(), tb.shape())
        })?;
        let plane = ha * wa;
        let mut out = Vec::with_capacity(na * (ca + cb) * plane);
        for n in 0..na {
            out.extend_from_slice(&ta.data()[n * ca * plane..(n + 1) * ca * plane]);
            out.extend_from_slice(&tb.data()[n * cb * plane..(n + 1) * cb * plane]);
        }
        let value = Tensor::new(vec![na, ca + cb, ha, wa], out)?;
        let needs = self.tracks(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, needs))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = map(self.value(a), |v| v.max(0.0));
        let needs = self.tracks(&[a]);
        self.push(value, Op::Relu(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = map(self.value(a), sigmoid);
        let needs = self.tracks(&[a]);
        self.push(value, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = map(self.value(a), f32::tanh);
        let needs = self.tracks(&[a]);
        self.push(value, Op::Tanh(a), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let value = zip(self.value(a), self.value(b), |x, y| x + y);
        let needs = self.tracks(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let value = zip(self.value(a), self.value(b), |x, y| x - y);
        let needs = self.tracks(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let value = zip(self.value(a), self.value(b), |x, y| x * y);
        let needs = self.tracks(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let value = map(self.value(a), |v| v * s);
        let needs = self.tracks(&[a]);
        self.push(value, Op::Scale(a, s), needs)
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        let value = map(self.value(a), |v| v + s);
        let needs = self.tracks(&[a]);
        self.push(value, Op::AddScalar(a), needs)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// `scale[c] * x + shift[c]` with per-channel vectors of length C.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Option<Var>) -> Result<Var> {
        let t = self.value(x);
        let (n, c, h, w) = t.dims4()?;
        let s = self.value(scale);
        ensure(s.shape() == [c], || format!("channel_affine: scale shape {:?}, want [{c}]", s.shape()))?;
        let zero = vec![0f32; c];
        let sh = match shift {
            Some(v) => {
                let st = self.value(v);
                ensure(st.shape() == [c], || format!("channel_affine: shift shape {:?}, want [{c}]", st.shape()))?;
                st.data()
            }
            None => &zero,
        };
        let plane = h * w;
        let mut out = Vec::with_capacity(t.len());
        for b in 0..n {
            for k in 0..c {
                let src = &t.data()[(b * c + k) * plane..(b * c + k + 1) * plane];
                out.extend(src.iter().map(|&v| s.data()[k] * v + sh[k]));
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let mut deps = vec![x, scale];
        deps.extend(shift);
        let needs = self.tracks(&deps);
        Ok(self.push(value, Op::ChannelAffine { x, scale, shift }, needs))
    }

    /// Arithmetic mean, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        ensure(!t.is_empty(), || "mean of empty tensor".to_string())?;
        let m = conv::sum(t.data()) / t.len() as f64;
        let needs = self.tracks(&[a]);
        Ok(self.push(Tensor::scalar(m as f32), Op::Mean(a), needs))
    }

    /// Softmax across the channel axis of an NCHW tensor.
    pub fn softmax_channels(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (n, c, h, w) = t.dims4()?;
        let plane = h * w;
        let mut out = vec![0f32; t.len()];
        let mut e = vec![0f64; c];
        for b in 0..n {
            for p in 0..plane {
                let at = |k: usize| (b * c + k) * plane + p;
                let m = (0..c).map(|k| t.data()[at(k)]).fold(f32::NEG_INFINITY, f32::max) as f64;
                let mut z = 0.0;
                for (k, ek) in e.iter_mut().enumerate() {
                    *ek = (t.data()[at(k)] as f64 - m).exp();
                    z += *ek;
                }
                for (k, ek) in e.iter().enumerate() {
                    out[at(k)] = (ek / z) as f32;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let needs = self.tracks(&[a]);
        Ok(self.push(value, Op::SoftmaxChannels(a), needs))
    }

    fn check_labels(&self, probs: Var, labels: &[u8]) -> Result<(usize, usize, usize, usize)> {
        let dims @ (n, c, h, w) = self.value(probs).dims4()?;
        ensure(labels.len() == n * h * w, || {
            format!("labels: {} entries for a {n}x{h}x{w} batch", labels.len())
        })?;
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
            return Err(invalid_arg(format!("label {bad} out of range for {c} classes")));
        }
        Ok(dims)
    }

    /// Soft Dice loss averaged over background and the classes present in `labels`.
    /// `labels` is row-major `N x H x W`.
    pub fn dice_loss(&mut self, probs: Var, labels: &[u8], eps: f64) -> Result<Var> {
        let (_, c, _, _) = self.check_labels(probs, labels)?;
        let include = dice_classes(labels, c);
        let sums = dice_sums(self.value(probs), labels);
        let (mut total, mut count) = (0.0, 0.0);
        for (k, &(i, p, g)) in sums.iter().enumerate() {
            if include[k] {
                total += 1.0 - (2.0 * i + eps) / (p + g + eps);
                count += 1.0;
            }
        }
        let value = Tensor::scalar((total / count) as f32);
        let needs = self.tracks(&[probs]);
        Ok(self.push(value, Op::Dice { probs, labels: labels.to_vec(), eps }, needs))
    }

    /// Focal loss `-alpha (1-p_t)^gamma ln(p_t + 1e-12)`, mean over pixels.
    pub fn focal_loss(&mut self, probs: Var, labels: &[u8], gamma: f64, alpha: f64) -> Result<Var> {
        let (n, c, h, w) = self.check_labels(probs, labels)?;
        ensure(gamma >= 0.0, || format!("focal gamma must be >= 0, got {gamma}"))?;
        ensure(alpha > 0.0 && alpha <= 1.0, || format!("focal alpha must be in (0, 1], got {alpha}"))?;
        let p = self.value(probs).data();
        let plane = h * w;
        let mut total = 0.0;
        for b in 0..n {
            for px in 0..plane {
                let l = labels[b * plane + px] as usize;
                let pt = p[(b * c + l) * plane + px] as f64;
                total += -alpha * (1.0 - pt).powf(gamma) * (pt + 1e-12).ln();
            }
        }
        let value = Tensor::scalar((total / (n * plane) as f64) as f32);
        let needs = self.tracks(&[probs]);
        Ok(self.push(value, Op::Focal { probs, labels: labels.to_vec(), gamma, alpha }, needs))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        ensure(self.value(loss).is_scalar(), || {
            format!("backward needs a scalar loss, got shape {:?}", self.value(loss).shape())
        })?;
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], var: Var, contrib: Vec<f32>) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(buf) => buf.iter_mut().zip(&contrib).for_each(|(b, c)| *b += c),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn backward_node(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, dims } => {
                if self.wants(*input) {
                    let gi = conv::backward_input(g, self.value(*kernel).data(), *dims);
                    self.accumulate(grads, *input, gi);
                }
                if self.wants(*kernel) || bias.is_some_and(|b| self.wants(b)) {
                    let (gk, gb) = conv::backward_params(g, self.value(*input).data(), *dims);
                    self.accumulate(grads, *kernel, gk);
                    if let Some(b) = bias {
                        self.accumulate(grads, *b, gb);
                    }
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let mut gi = vec![0f32; self.value(*input).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gi[src as usize] += gv;
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Upsample2 { input } => {
                let x = self.value(*input);
                let (n, c, h, w) = x.dims4().expect("rank 4");
                let ow = 2 * w;
                let mut gi = vec![0f32; x.len()];
                for plane in 0..n * c {
                    let gs = &g[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            let top = 2 * y * ow + 2 * xx;
                            let bot = top + ow;
                            gi[plane * h * w + y * w + xx] = gs[top] + gs[top + 1] + gs[bot] + gs[bot + 1];
                        }
                    }
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Concat { a, b } => {
                let (n, ca, h, w) = self.value(*a).dims4().expect("rank 4");
                let cb = self.value(*b).dims4().expect("rank 4").1;
                let plane = h * w;
                let (mut ga, mut gb) = (Vec::with_capacity(n * ca * plane), Vec::with_capacity(n * cb * plane));
                for i in 0..n {
                    let base = i * (ca + cb) * plane;
                    ga.extend_from_slice(&g[base..base + ca * plane]);
                    gb.extend_from_slice(&g[base + ca * plane..base + (ca + cb) * plane]);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Relu(a) => {
                let gi = g.iter().zip(out).map(|(&gv, &o)| if o > 0.0 { gv } else { 0.0 }).collect();
                self.accumulate(grads, *a, gi);
            }
            Op::Sigmoid(a) => {
                let gi = g.iter().zip(out).map(|(&gv, &o)| gv * o * (1.0 - o)).collect();
                self.accumulate(grads, *a, gi);
            }
            Op::Tanh(a) => {
                let gi = g.iter().zip(out).map(|(&gv, &o)| gv * (1.0 - o * o)).collect();
                self.accumulate(grads, *a, gi);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let gi = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, gi);
                }
                if self.wants(*b) {
                    let gi = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, gi);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.iter().map(|v| v * s).collect()),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::ChannelAffine { x, scale, shift } => {
                let xt = self.value(*x);
                let (n, c, h, w) = xt.dims4().expect("rank 4");
                let plane = h * w;
                let s = self.value(*scale).data();
                if self.wants(*x) {
                    let mut gi = Vec::with_capacity(xt.len());
                    for b in 0..n {
                        for k in 0..c {
                            let gs = &g[(b * c + k) * plane..(b * c + k + 1) * plane];
                            gi.extend(gs.iter().map(|&v| v * s[k]));
                        }
                    }
                    self.accumulate(grads, *x, gi);
                }
                let (mut gs_acc, mut gsh_acc) = (vec![0f64; c], vec![0f64; c]);
                for b in 0..n {
                    for k in 0..c {
                        let r = (b * c + k) * plane..(b * c + k + 1) * plane;
                        gs_acc[k] += conv::dot(&g[r.clone()], &xt.data()[r.clone()]);
                        gsh_acc[k] += conv::sum(&g[r]);
                    }
                }
                self.accumulate(grads, *scale, gs_acc.iter().map(|&v| v as f32).collect());
                if let Some(sh) = shift {
                    self.accumulate(grads, *sh, gsh_acc.iter().map(|&v| v as f32).collect());
                }
            }
            Op::Mean(a) => {
                let len = self.value(*a).len();
                let v = (g[0] as f64 / len as f64) as f32;
                self.accumulate(grads, *a, vec![v; len]);
            }
            Op::SoftmaxChannels(a) => {
                let (n, c, h, w) = node.value.dims4().expect("rank 4");
                let plane = h * w;
                let mut gi = vec![0f32; out.len()];
                for b in 0..n {
                    for p in 0..plane {
                        let at = |k: usize| (b * c + k) * plane + p;
                        let dotp: f64 = (0..c).map(|k| g[at(k)] as f64 * out[at(k)] as f64).sum();
                        for k in 0..c {
                            gi[at(k)] = (out[at(k)] as f64 * (g[at(k)] as f64 - dotp)) as f32;
                        }
                    }
                }
                self.accumulate(grads, *a, gi);
            }
            Op::Dice { probs, labels, eps } => {
                let p = self.value(*probs);
                let (n, c, h, w) = p.dims4().expect("rank 4");
                let plane = h * w;
                let include = dice_classes(labels, c);
                let count = include.iter().filter(|&&b| b).count() as f64;
                let sums = dice_sums(p, labels);
                let mut gi = vec![0f32; p.len()];
                for (k, &(i, pm, gm)) in sums.iter().enumerate() {
                    if !include[k] {
                        continue;
                    }
                    let denom = pm + gm + eps;
                    let num = 2.0 * i + eps;
                    for b in 0..n {
                        for px in 0..plane {
                            let truth = (labels[b * plane + px] as usize == k) as u8 as f64;
                            let d = -(2.0 * truth * denom - num) / (denom * denom);
                            gi[(b * c + k) * plane + px] = (g[0] as f64 * d / count) as f32;
                        }
                    }
                }
                self.accumulate(grads, *probs, gi);
            }
            Op::Focal { probs, labels, gamma, alpha } => {
                let p = self.value(*probs);
                let (n, c, h, w) = p.dims4().expect("rank 4");
                let plane = h * w;
                let scale = g[0] as f64 / (n * plane) as f64;
                let mut gi = vec![0f32; p.len()];
                for b in 0..n {
                    for px in 0..plane {
                        let l = labels[b * plane + px] as usize;
                        let at = (b * c + l) * plane + px;
                        let pt = p.data()[at] as f64;
                        let q = 1.0 - pt;
                        let lg = (pt + 1e-12).ln();
                        let mut d = -alpha * q.powf(*gamma) / (pt + 1e-12);
                        if *gamma != 0.0 {
                            d += alpha * gamma * q.powf(gamma - 1.0) * lg;
                        }
                        gi[at] = (scale * d) as f32;
                    }
                }
                self.accumulate(grads, *probs, gi);
            }
        }
    }
}
