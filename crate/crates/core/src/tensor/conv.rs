// Same-padded, stride-1 convolution kernels over NCHW buffers.
// All inner products accumulate in f64.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }
}

/// Valid `(start, end)` output range along one axis for tap offset `d`.
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let start = (-d).max(0) as usize;
    let end = (len as isize - d).min(len as isize).max(0) as usize;
    (start.min(end), end)
}

pub(crate) fn forward(input: &[f32], kernel: &[f32], bias: Option<&[f32]>, d: ConvDims) -> Vec<f32> {
    let ConvDims { n, cin, cout, h, w, k } = d;
    let p = d.pad();
    let plane = h * w;
    let mut out = vec![0f32; n * cout * plane];
    let mut acc = vec![0f64; plane];
    for b in 0..n {
        for o in 0..cout {
            let b0 = bias.map_or(0.0, |bs| bs[o] as f64);
            acc.iter_mut().for_each(|a| *a = b0);
            for c in 0..cin {
                let src = &input[(b * cin + c) * plane..(b * cin + c + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - p;
                    let (y0, y1) = span(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - p;
                        let (x0, x1) = span(w, dx);
                        let wv = kernel[((o * cin + c) * k + ky) * k + kx] as f64;
                        if wv == 0.0 || x0 >= x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let s = &src[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                            let a = &mut acc[y * w + x0..y * w + x1];
                            for (av, sv) in a.iter_mut().zip(s) {
                                *av += wv * *sv as f64;
                            }
                        }
                    }
                }
            }
            let dst = &mut out[(b * cout + o) * plane..(b * cout + o + 1) * plane];
            for (dv, av) in dst.iter_mut().zip(&acc) {
                *dv = *av as f32;
            }
        }
    }
    out
}

/// Gradient with respect to the input: correlation of the output gradient with
/// the spatially flipped kernel.
pub(crate) fn backward_input(grad_out: &[f32], kernel: &[f32], d: ConvDims) -> Vec<f32> {
    let ConvDims { n, cin, cout, h, w, k } = d;
    let p = d.pad();
    let plane = h * w;
    let mut grad_in = vec![0f32; n * cin * plane];
    let mut acc = vec![0f64; plane];
    for b in 0..n {
        for c in 0..cin {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for o in 0..cout {
                let g = &grad_out[(b * cout + o) * plane..(b * cout + o + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - p;
                    let (y0, y1) = span(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - p;
                        let (x0, x1) = span(w, dx);
                        let wv = kernel[((o * cin + c) * k + ky) * k + kx] as f64;
                        if wv == 0.0 || x0 >= x1 {
                            continue;
                        }
                        // out[y, x] reads in[y + dy, x + dx]
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let gs = &g[y * w + x0..y * w + x1];
                            let a = &mut acc[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                            for (av, gv) in a.iter_mut().zip(gs) {
                                *av += wv * *gv as f64;
                            }
                        }
                    }
                }
            }
            let dst = &mut grad_in[(b * cin + c) * plane..(b * cin + c + 1) * plane];
            for (dv, av) in dst.iter_mut().zip(&acc) {
                *dv = *av as f32;
            }
        }
    }
    grad_in
}

/// Gradients with respect to kernel and bias.
pub(crate) fn backward_params(grad_out: &[f32], input: &[f32], d: ConvDims) -> (Vec<f32>, Vec<f32>) {
    let ConvDims { n, cin, cout, h, w, k } = d;
    let p = d.pad();
    let plane = h * w;
    let mut gk = vec![0f64; cout * cin * k * k];
    let mut gb = vec![0f64; cout];
    for b in 0..n {
        for o in 0..cout {
            let g = &grad_out[(b * cout + o) * plane..(b * cout + o + 1) * plane];
            gb[o] += sum(g);
            for c in 0..cin {
                let src = &input[(b * cin + c) * plane..(b * cin + c + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - p;
                    let (y0, y1) = span(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - p;
                        let (x0, x1) = span(w, dx);
                        if x0 >= x1 {
                            continue;
                        }
                        let mut sum = 0f64;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let gs = &g[y * w + x0..y * w + x1];
                            let s = &src[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                            sum += dot(gs, s);
                        }
                        gk[((o * cin + c) * k + ky) * k + kx] += sum;
                    }
                }
            }
        }
    }
    (gk.into_iter().map(|v| v as f32).collect(), gb.into_iter().map(|v| v as f32).collect())
}

/// f64 dot product with eight independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut part = [0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            part[i] += x[i] as f64 * y[i] as f64;
        }
    }
    let mut tail = 0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x as f64 * *y as f64;
    }
    part.iter().sum::<f64>() + tail
}

/// f64 sum with eight partial sums.
#[inline]
pub(crate) fn sum(a: &[f32]) -> f64 {
    let mut part = [0f64; 8];
    let ca = a.chunks_exact(8);
    let rest = ca.remainder();
    for x in ca {
        for i in 0..8 {
            part[i] += x[i] as f64;
        }
    }
    part.iter().sum::<f64>() + rest.iter().map(|&v| v as f64).sum::<f64>()
}
