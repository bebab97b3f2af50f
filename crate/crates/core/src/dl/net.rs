//! Forward and backward passes of the two-block 1-D CNN.
//!
//! Parameters live in one flat vector; [`Layout`] gives each tensor's
//! offset. Activations are channel-major: element `(c, t)` of a
//! `channels x len` map sits at `c * len + t`.

use serde::{Deserialize, Serialize};

pub const IN_CHANNELS: usize = 3;
pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub window_len: usize,
    pub filters1: usize,
    pub filters2: usize,
    pub kernel: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Layout {
    pub fn pooled_len(&self) -> usize {
        self.window_len / self.pool
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn w1(&self) -> usize {
        0
    }
    pub fn b1(&self) -> usize {
        self.w1() + self.filters1 * IN_CHANNELS * self.kernel
    }
    pub fn w2(&self) -> usize {
        self.b1() + self.filters1
    }
    pub fn b2(&self) -> usize {
        self.w2() + self.filters2 * self.filters1 * self.kernel
    }
    pub fn wd(&self) -> usize {
        self.b2() + self.filters2
    }
    pub fn bd(&self) -> usize {
        self.wd() + CLASSES * self.filters2
    }
    pub fn n_params(&self) -> usize {
        self.bd() + CLASSES
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        let t = |name: &str, shape: Vec<usize>, offset| Tensor {
            name: name.into(),
            shape,
            offset,
        };
        vec![
            t("conv1.weight", vec![self.filters1, IN_CHANNELS, self.kernel], self.w1()),
            t("conv1.bias", vec![self.filters1], self.b1()),
            t("conv2.weight", vec![self.filters2, self.filters1, self.kernel], self.w2()),
            t("conv2.bias", vec![self.filters2], self.b2()),
            t("dense.weight", vec![CLASSES, self.filters2], self.wd()),
            t("dense.bias", vec![CLASSES], self.bd()),
        ]
    }

    /// `(offset, fan_in)` of each weight tensor, for initialization.
    pub fn weight_fans(&self) -> [(usize, usize, usize); 3] {
        [
            (self.w1(), self.b1(), IN_CHANNELS * self.kernel),
            (self.w2(), self.b2(), self.filters1 * self.kernel),
            (self.wd(), self.bd(), self.filters2),
        ]
    }
}

/// `out[o, t] += sum_{i,k} w[o, i, k] * x[i, t + k - pad]`, zero padded.
fn conv_forward(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64], cin: usize, cout: usize, len: usize, kernel: usize, pad: usize) {
    for o in 0..cout {
        let row = &mut out[o * len..(o + 1) * len];
        row.fill(b[o]);
        for i in 0..cin {
            let xi = &x[i * len..(i + 1) * len];
            for k in 0..kernel {
                let wk = w[(o * cin + i) * kernel + k];
                // t + k - pad must land in [0, len)
                let t0 = pad.saturating_sub(k);
                let t1 = (len + pad).saturating_sub(k).min(len);
                if t0 >= t1 {
                    continue;
                }
                let src = t0 + k - pad;
                for (r, v) in row[t0..t1].iter_mut().zip(&xi[src..src + (t1 - t0)]) {
                    *r += wk * v;
                }
            }
        }
    }
}

/// Dot product over four interleaved partial sums, which the compiler can
/// vectorize; the summation order is fixed, so results stay deterministic.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Accumulates weight/bias gradients and, if `dx` is given, the input
/// gradient of `conv_forward`.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
    cin: usize,
    cout: usize,
    len: usize,
    kernel: usize,
    pad: usize,
) {
    for o in 0..cout {
        let g = &dout[o * len..(o + 1) * len];
        db[o] += g.iter().sum::<f64>();
        for i in 0..cin {
            let xi = &x[i * len..(i + 1) * len];
            for k in 0..kernel {
                let t0 = pad.saturating_sub(k);
                let t1 = (len + pad).saturating_sub(k).min(len);
                if t0 >= t1 {
                    continue;
                }
                let src = t0 + k - pad;
                let n = t1 - t0;
                let idx = (o * cin + i) * kernel + k;
                dw[idx] += dot(&g[t0..t1], &xi[src..src + n]);
                if let Some(dx) = dx.as_deref_mut() {
                    let wk = w[idx];
                    let dxi = &mut dx[i * len + src..i * len + src + n];
                    for (d, a) in dxi.iter_mut().zip(&g[t0..t1]) {
                        *d += wk * a;
                    }
                }
            }
        }
    }
}

/// Per-sample activation buffers, reused across samples.
#[derive(Debug, Clone)]
pub struct Workspace {
    z1: Vec<f64>,
    pooled: Vec<f64>,
    argmax: Vec<usize>,
    z2: Vec<f64>,
    gap: Vec<f64>,
    pub probs: [f64; CLASSES],
    dz2: Vec<f64>,
    dpooled: Vec<f64>,
    dz1: Vec<f64>,
}

impl Workspace {
    pub fn new(l: &Layout) -> Workspace {
        let lp = l.pooled_len();
        Workspace {
            z1: vec![0.0; l.filters1 * l.window_len],
            pooled: vec![0.0; l.filters1 * lp],
            argmax: vec![0; l.filters1 * lp],
            z2: vec![0.0; l.filters2 * lp],
            gap: vec![0.0; l.filters2],
            probs: [0.0; CLASSES],
            dz2: vec![0.0; l.filters2 * lp],
            dpooled: vec![0.0; l.filters1 * lp],
            dz1: vec![0.0; l.filters1 * l.window_len],
        }
    }
}

/// Runs one channel-major input through the network, leaving the softmax
/// output in `ws.probs`.
pub fn forward(l: &Layout, params: &[f64], x: &[f64], ws: &mut Workspace) {
    let (len, lp, pad) = (l.window_len, l.pooled_len(), l.pad());
    conv_forward(
        x,
        &params[l.w1()..l.b1()],
        &params[l.b1()..l.w2()],
        &mut ws.z1,
        IN_CHANNELS,
        l.filters1,
        len,
        l.kernel,
        pad,
    );
    for f in 0..l.filters1 {
        for u in 0..lp {
            let base = f * len + u * l.pool;
            let mut best = base;
            for t in base + 1..base + l.pool {
                if ws.z1[t] > ws.z1[best] {
                    best = t;
                }
            }
            // ReLU commutes with max
            ws.pooled[f * lp + u] = ws.z1[best].max(0.0);
            ws.argmax[f * lp + u] = best;
        }
    }
    conv_forward(
        &ws.pooled,
        &params[l.w2()..l.b2()],
        &params[l.b2()..l.wd()],
        &mut ws.z2,
        l.filters1,
        l.filters2,
        lp,
        l.kernel,
        pad,
    );
    for g in 0..l.filters2 {
        ws.gap[g] = ws.z2[g * lp..(g + 1) * lp].iter().map(|v| v.max(0.0)).sum::<f64>() / lp as f64;
    }
    let wd = &params[l.wd()..l.bd()];
    let bd = &params[l.bd()..];
    let mut logits = [0.0; CLASSES];
    for (j, z) in logits.iter_mut().enumerate() {
        *z = bd[j] + wd[j * l.filters2..(j + 1) * l.filters2].iter().zip(&ws.gap).map(|(a, b)| a * b).sum::<f64>();
    }
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
    let s: f64 = e.iter().sum();
    for j in 0..CLASSES {
        ws.probs[j] = e[j] / s;
    }
}

/// Forward plus backward for one sample with class `y`; adds
/// `scale * d(-ln p_y)/d(params)` into `grad` and returns `-ln p_y`.
pub fn backward(l: &Layout, params: &[f64], x: &[f64], y: usize, scale: f64, grad: &mut [f64], ws: &mut Workspace) -> f64 {
    forward(l, params, x, ws);
    let (len, lp, pad) = (l.window_len, l.pooled_len(), l.pad());
    let loss = -ws.probs[y].max(f64::MIN_POSITIVE).ln();

    let mut dlogits = ws.probs;
    dlogits[y] -= 1.0;
    dlogits.iter_mut().for_each(|v| *v *= scale);

    let (wd_off, bd_off) = (l.wd(), l.bd());
    let mut dgap = vec![0.0; l.filters2];
    for j in 0..CLASSES {
        grad[bd_off + j] += dlogits[j];
        for g in 0..l.filters2 {
            grad[wd_off + j * l.filters2 + g] += dlogits[j] * ws.gap[g];
            dgap[g] += params[wd_off + j * l.filters2 + g] * dlogits[j];
        }
    }
    for g in 0..l.filters2 {
        let share = dgap[g] / lp as f64;
        for u in 0..lp {
            let i = g * lp + u;
            ws.dz2[i] = if ws.z2[i] > 0.0 { share } else { 0.0 };
        }
    }
    ws.dpooled.fill(0.0);
    let (gw2, rest) = grad[l.w2()..l.wd()].split_at_mut(l.b2() - l.w2());
    conv_backward(
        &ws.pooled,
        &params[l.w2()..l.b2()],
        &ws.dz2,
        gw2,
        rest,
        Some(&mut ws.dpooled),
        l.filters1,
        l.filters2,
        lp,
        l.kernel,
        pad,
    );
    ws.dz1.fill(0.0);
    for (i, &src) in ws.argmax.iter().enumerate() {
        if ws.z1[src] > 0.0 {
            ws.dz1[src] += ws.dpooled[i];
        }
    }
    let (gw1, rest) = grad[l.w1()..l.w2()].split_at_mut(l.b1() - l.w1());
    conv_backward(
        x,
        &params[l.w1()..l.b1()],
        &ws.dz1,
        gw1,
        rest,
        None,
        IN_CHANNELS,
        l.filters1,
        len,
        l.kernel,
        pad,
    );
    loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], b: &[f64], cin: usize, cout: usize, len: usize, kernel: usize) -> Vec<f64> {
        let pad = kernel / 2;
        let mut out = vec![0.0; cout * len];
        for o in 0..cout {
            for t in 0..len {
                let mut s = b[o];
                for i in 0..cin {
                    for k in 0..kernel {
                        let src = t as isize + k as isize - pad as isize;
                        if src >= 0 && (src as usize) < len {
                            s += w[(o * cin + i) * kernel + k] * x[i * len + src as usize];
                        }
                    }
                }
                out[o * len + t] = s;
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (cin, cout, len, kernel) = (3, 4, 11, 5);
        let x: Vec<f64> = (0..cin * len).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let w: Vec<f64> = (0..cout * cin * kernel).map(|i| ((i * 104729) % 17) as f64 / 8.0 - 1.0).collect();
        let b = vec![0.5, -0.25, 0.0, 1.0];
        let mut out = vec![0.0; cout * len];
        conv_forward(&x, &w, &b, &mut out, cin, cout, len, kernel, kernel / 2);
        let want = naive_conv(&x, &w, &b, cin, cout, len, kernel);
        for (a, e) in out.iter().zip(&want) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_count() {
        let l = Layout {
            window_len: 150,
            filters1: 16,
            filters2: 32,
            kernel: 5,
            pool: 2,
        };
        assert_eq!(l.n_params(), 16 * 3 * 5 + 16 + 32 * 16 * 5 + 32 + 2 * 32 + 2);
        let t = l.tensors();
        assert_eq!(t.last().unwrap().offset + 2, l.n_params());
    }
}
