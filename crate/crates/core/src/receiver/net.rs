//! The demodulator network and its reverse-mode gradient.
//!
//! A residual trunk reads the whole received symbol and produces a context
//! vector. A head shared by all subcarriers classifies each `Y[k]` into one of
//! 16 labels, with first-layer weights modulated by the context so the head
//! can apply a symbol-dependent equaliser:
//!
//! ```text
//! x  = (Re Y, Im Y) / s
//! z0 = tanh(W0 x + b0)
//! z1 = z0 + tanh(W1 z0 + b1)
//! z2 = z1 + tanh(W2 z1 + b2)
//! e  = E z2 + e0                     (rank-R mixing coefficients)
//! D  = S + sum_r e_r T_r             (head x 6)
//! a_k = tanh(C z2 + c0 + D u_k + P_k)
//! logits_k = B a_k + b
//! ```
//!
//! with `u_k = (y_r, y_i, y_r cos w_k, y_i cos w_k, y_r sin w_k, y_i sin w_k)`,
//! `w_k = 2 pi k / N`, and `P_k` a learned per-subcarrier embedding.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of per-subcarrier input features.
pub const U_FEATURES: usize = 6;
pub const N_CLASSES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub n_subcarriers: usize,
    pub width: usize,
    pub head: usize,
    pub rank: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            n_subcarriers: 64,
            width: 128,
            head: 64,
            rank: 8,
        }
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    w0: usize,
    b0: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    e: usize,
    e0: usize,
    c: usize,
    c0: usize,
    s: usize,
    t: usize,
    p: usize,
    bo: usize,
    bb: usize,
    len: usize,
}

impl Layout {
    fn new(a: &Arch) -> Self {
        let input = 2 * a.n_subcarriers;
        let (w, h, r, u) = (a.width, a.head, a.rank, U_FEATURES);
        let mut off = 0;
        let mut take = |n: usize| {
            let start = off;
            off += n;
            start
        };
        let w0 = take(w * input);
        let b0 = take(w);
        let w1 = take(w * w);
        let b1 = take(w);
        let w2 = take(w * w);
        let b2 = take(w);
        let e = take(r * w);
        let e0 = take(r);
        let c = take(h * w);
        let c0 = take(h);
        let s = take(h * u);
        let t = take(r * h * u);
        let p = take(a.n_subcarriers * h);
        let bo = take(N_CLASSES * h);
        let bb = take(N_CLASSES);
        Self {
            w0,
            b0,
            w1,
            b1,
            w2,
            b2,
            e,
            e0,
            c,
            c0,
            s,
            t,
            p,
            bo,
            bb,
            len: off,
        }
    }
}

/// `out = W v + b` for row-major `W` of shape `out.len() x v.len()`.
fn affine(w: &[f64], b: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = b[i] + crate::manifold::dot(&w[i * cols..(i + 1) * cols], v);
    }
}

/// `out += W^T g`.
fn affine_transpose_acc(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *o += gi * wij;
        }
    }
}

/// `dW += g v^T`.
fn outer_acc(dw: &mut [f64], g: &[f64], v: &[f64]) {
    let cols = v.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        for (d, vj) in dw[i * cols..(i + 1) * cols].iter_mut().zip(v) {
            *d += gi * vj;
        }
    }
}

/// Activations of the trunk for one received symbol.
#[derive(Debug, Clone)]
pub struct TrunkCache {
    x: Vec<f64>,
    z0: Vec<f64>,
    t1: Vec<f64>,
    z1: Vec<f64>,
    t2: Vec<f64>,
    z2: Vec<f64>,
    e: Vec<f64>,
    g: Vec<f64>,
    d: Vec<f64>,
    u: Vec<[f64; U_FEATURES]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "NetRepr", into = "NetRepr")]
pub struct DemodNet {
    pub arch: Arch,
    /// Scalar applied to `(Re Y, Im Y)`, frozen at calibration.
    pub input_scale: f64,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct NetRepr {
    arch: Arch,
    input_scale: f64,
}

impl From<NetRepr> for DemodNet {
    fn from(r: NetRepr) -> Self {
        let mut net = DemodNet::new(r.arch);
        net.input_scale = r.input_scale;
        net
    }
}

impl From<DemodNet> for NetRepr {
    fn from(n: DemodNet) -> Self {
        NetRepr {
            arch: n.arch,
            input_scale: n.input_scale,
        }
    }
}

impl DemodNet {
    pub fn new(arch: Arch) -> Self {
        Self {
            arch,
            input_scale: 1.0,
            layout: Layout::new(&arch),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout.len
    }

    pub fn n_subcarriers(&self) -> usize {
        self.arch.n_subcarriers
    }

    /// Random initialisation with fan-in scaling.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let a = &self.arch;
        let l = &self.layout;
        let input = (2 * a.n_subcarriers) as f64;
        let w = a.width as f64;
        let h = a.head as f64;
        let mut theta = vec![0.0; l.len];
        let mut fill = |range: std::ops::Range<usize>, sd: f64| {
            let dist = Normal::new(0.0, sd).expect("positive sd");
            for v in &mut theta[range] {
                *v = dist.sample(rng);
            }
        };
        fill(l.w0..l.b0, 1.0 / input.sqrt());
        fill(l.w1..l.b1, 0.5 / w.sqrt());
        fill(l.w2..l.b2, 0.5 / w.sqrt());
        fill(l.e..l.e0, 1.0 / w.sqrt());
        fill(l.c..l.c0, 0.5 / w.sqrt());
        fill(l.s..l.t, 1.0 / (U_FEATURES as f64).sqrt());
        fill(l.t..l.p, 0.3 / (U_FEATURES as f64).sqrt());
        fill(l.p..l.bo, 0.1);
        fill(l.bo..l.bb, 1.0 / h.sqrt());
        theta
    }

    fn check(&self, theta: &[f64], y: &[Complex64]) -> Result<()> {
        if theta.len() != self.layout.len {
            return Err(Error::InvalidInput(format!(
                "theta has {} entries, network needs {}",
                theta.len(),
                self.layout.len
            )));
        }
        if y.len() != self.arch.n_subcarriers {
            return Err(Error::InvalidInput(format!(
                "received symbol has {} subcarriers, expected {}",
                y.len(),
                self.arch.n_subcarriers
            )));
        }
        if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite received sample".into()));
        }
        Ok(())
    }

    /// Runs the trunk and builds the context-dependent head weights.
    pub fn trunk(&self, theta: &[f64], y: &[Complex64]) -> Result<TrunkCache> {
        self.check(theta, y)?;
        let a = &self.arch;
        let l = &self.layout;
        let n = a.n_subcarriers;
        let (w, h, r) = (a.width, a.head, a.rank);
        let mut x = Vec::with_capacity(2 * n);
        x.extend(y.iter().map(|v| v.re * self.input_scale));
        x.extend(y.iter().map(|v| v.im * self.input_scale));

        let mut z0 = vec![0.0; w];
        affine(&theta[l.w0..l.b0], &theta[l.b0..l.w1], &x, &mut z0);
        z0.iter_mut().for_each(|v| *v = v.tanh());

        let mut t1 = vec![0.0; w];
        affine(&theta[l.w1..l.b1], &theta[l.b1..l.w2], &z0, &mut t1);
        t1.iter_mut().for_each(|v| *v = v.tanh());
        let z1: Vec<f64> = z0.iter().zip(&t1).map(|(a, b)| a + b).collect();

        let mut t2 = vec![0.0; w];
        affine(&theta[l.w2..l.b2], &theta[l.b2..l.e], &z1, &mut t2);
        t2.iter_mut().for_each(|v| *v = v.tanh());
        let z2: Vec<f64> = z1.iter().zip(&t2).map(|(a, b)| a + b).collect();

        let mut e = vec![0.0; r];
        affine(&theta[l.e..l.e0], &theta[l.e0..l.c], &z2, &mut e);
        let mut g = vec![0.0; h];
        affine(&theta[l.c..l.c0], &theta[l.c0..l.s], &z2, &mut g);

        let hu = h * U_FEATURES;
        let mut d = theta[l.s..l.t].to_vec();
        for (ri, &er) in e.iter().enumerate() {
            let tr = &theta[l.t + ri * hu..l.t + (ri + 1) * hu];
            for (dv, tv) in d.iter_mut().zip(tr) {
                *dv += er * tv;
            }
        }

        let u = (0..n)
            .map(|k| {
                let om = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let (s, c) = om.sin_cos();
                let (yr, yi) = (x[k], x[n + k]);
                [yr, yi, yr * c, yi * c, yr * s, yi * s]
            })
            .collect();
        Ok(TrunkCache {
            x,
            z0,
            t1,
            z1,
            t2,
            z2,
            e,
            g,
            d,
            u,
        })
    }

    /// Head activations and logits for subcarrier `k`.
    fn head(&self, theta: &[f64], cache: &TrunkCache, k: usize) -> (Vec<f64>, [f64; N_CLASSES]) {
        let l = &self.layout;
        let h = self.arch.head;
        let pk = &theta[l.p + k * h..l.p + (k + 1) * h];
        let uk = &cache.u[k];
        let mut act = vec![0.0; h];
        for i in 0..h {
            let drow = &cache.d[i * U_FEATURES..(i + 1) * U_FEATURES];
            let mut v = cache.g[i] + pk[i];
            for (dv, uv) in drow.iter().zip(uk) {
                v += dv * uv;
            }
            act[i] = v.tanh();
        }
        let mut logits = [0.0; N_CLASSES];
        affine(&theta[l.bo..l.bb], &theta[l.bb..l.len], &act, &mut logits);
        (act, logits)
    }

    /// Logits for every subcarrier.
    pub fn logits(&self, theta: &[f64], y: &[Complex64]) -> Result<Vec<[f64; N_CLASSES]>> {
        let cache = self.trunk(theta, y)?;
        Ok((0..self.arch.n_subcarriers)
            .map(|k| self.head(theta, &cache, k).1)
            .collect())
    }

    /// Per-subcarrier class probabilities.
    pub fn forward(&self, theta: &[f64], y: &[Complex64]) -> Result<Vec<[f64; N_CLASSES]>> {
        Ok(self.logits(theta, y)?.iter().map(softmax).collect())
    }

    /// Sum over `targets` of `-log p(label | Y)`; no gradient.
    pub fn nll_sum(&self, theta: &[f64], y: &[Complex64], targets: &[(usize, u8)]) -> Result<f64> {
        let cache = self.trunk(theta, y)?;
        Ok(targets
            .iter()
            .map(|&(k, label)| {
                let (_, logits) = self.head(theta, &cache, k);
                log_sum_exp(&logits) - logits[label as usize]
            })
            .sum())
    }

    /// Accumulates `scale * d(sum_k <upstream_k, logits_k>)/d theta` into
    /// `grad`, for upstream logit gradients on a subset of subcarriers.
    pub fn backward_logits(
        &self,
        theta: &[f64],
        y: &[Complex64],
        upstream: &[(usize, [f64; N_CLASSES])],
        grad: &mut [f64],
    ) -> Result<()> {
        let cache = self.trunk(theta, y)?;
        let items: Vec<(usize, Vec<f64>, [f64; N_CLASSES])> = upstream
            .iter()
            .map(|&(k, dl)| (k, self.head(theta, &cache, k).0, dl))
            .collect();
        self.backprop(theta, &cache, &items, grad);
        Ok(())
    }

    /// Accumulates `weight * grad` of the summed cross-entropy over `targets`
    /// into `grad` and returns the (unweighted) summed loss.
    pub fn nll_grad(
        &self,
        theta: &[f64],
        y: &[Complex64],
        targets: &[(usize, u8)],
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let cache = self.trunk(theta, y)?;
        let mut loss = 0.0;
        let mut items = Vec::with_capacity(targets.len());
        for &(k, label) in targets {
            let (act, logits) = self.head(theta, &cache, k);
            let lse = log_sum_exp(&logits);
            loss += lse - logits[label as usize];
            let mut dl = [0.0; N_CLASSES];
            for (c, v) in dl.iter_mut().enumerate() {
                *v = weight * (logits[c] - lse).exp();
            }
            dl[label as usize] -= weight;
            items.push((k, act, dl));
        }
        self.backprop(theta, &cache, &items, grad);
        Ok(loss)
    }

    fn backprop(
        &self,
        theta: &[f64],
        cache: &TrunkCache,
        items: &[(usize, Vec<f64>, [f64; N_CLASSES])],
        grad: &mut [f64],
    ) {
        let a = &self.arch;
        let l = &self.layout;
        let (w, h, r) = (a.width, a.head, a.rank);
        let hu = h * U_FEATURES;
        let mut dg = vec![0.0; h];
        let mut dd = vec![0.0; hu];

        for (k, act, dl) in items {
            outer_acc(&mut grad[l.bo..l.bb], dl, act);
            for (gb, d) in grad[l.bb..l.len].iter_mut().zip(dl) {
                *gb += d;
            }
            let mut dact = vec![0.0; h];
            affine_transpose_acc(&theta[l.bo..l.bb], dl, &mut dact);
            let uk = &cache.u[*k];
            let gp = &mut grad[l.p + k * h..l.p + (k + 1) * h];
            for i in 0..h {
                let dpre = dact[i] * (1.0 - act[i] * act[i]);
                dg[i] += dpre;
                gp[i] += dpre;
                for (j, uv) in uk.iter().enumerate() {
                    dd[i * U_FEATURES + j] += dpre * uv;
                }
            }
        }

        // D = S + sum_r e_r T_r
        for (gs, v) in grad[l.s..l.t].iter_mut().zip(&dd) {
            *gs += v;
        }
        let mut de = vec![0.0; r];
        for ri in 0..r {
            let tr = &theta[l.t + ri * hu..l.t + (ri + 1) * hu];
            de[ri] = crate::manifold::dot(tr, &dd);
            let er = cache.e[ri];
            for (gt, v) in grad[l.t + ri * hu..l.t + (ri + 1) * hu].iter_mut().zip(&dd) {
                *gt += er * v;
            }
        }

        // e = E z2 + e0, g = C z2 + c0
        let mut dz2 = vec![0.0; w];
        outer_acc(&mut grad[l.e..l.e0], &de, &cache.z2);
        for (ge, v) in grad[l.e0..l.c].iter_mut().zip(&de) {
            *ge += v;
        }
        affine_transpose_acc(&theta[l.e..l.e0], &de, &mut dz2);
        outer_acc(&mut grad[l.c..l.c0], &dg, &cache.z2);
        for (gc, v) in grad[l.c0..l.s].iter_mut().zip(&dg) {
            *gc += v;
        }
        affine_transpose_acc(&theta[l.c..l.c0], &dg, &mut dz2);

        // z2 = z1 + tanh(W2 z1 + b2)
        let da2: Vec<f64> = dz2
            .iter()
            .zip(&cache.t2)
            .map(|(d, t)| d * (1.0 - t * t))
            .collect();
        outer_acc(&mut grad[l.w2..l.b2], &da2, &cache.z1);
        for (gb, v) in grad[l.b2..l.e].iter_mut().zip(&da2) {
            *gb += v;
        }
        let mut dz1 = dz2;
        affine_transpose_acc(&theta[l.w2..l.b2], &da2, &mut dz1);

        // z1 = z0 + tanh(W1 z0 + b1)
        let da1: Vec<f64> = dz1
            .iter()
            .zip(&cache.t1)
            .map(|(d, t)| d * (1.0 - t * t))
            .collect();
        outer_acc(&mut grad[l.w1..l.b1], &da1, &cache.z0);
        for (gb, v) in grad[l.b1..l.w2].iter_mut().zip(&da1) {
            *gb += v;
        }
        let mut dz0 = dz1;
        affine_transpose_acc(&theta[l.w1..l.b1], &da1, &mut dz0);

        // z0 = tanh(W0 x + b0)
        let da0: Vec<f64> = dz0
            .iter()
            .zip(&cache.z0)
            .map(|(d, z)| d * (1.0 - z * z))
            .collect();
        outer_acc(&mut grad[l.w0..l.b0], &da0, &cache.x);
        for (gb, v) in grad[l.b0..l.w1].iter_mut().zip(&da0) {
            *gb += v;
        }
    }

    /// Range of the output-layer weights and bias inside `theta`.
    pub fn output_layer(&self) -> std::ops::Range<usize> {
        self.layout.bo..self.layout.len
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let lse = log_sum_exp(logits);
    let mut out = [0.0; N_CLASSES];
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - lse).exp();
    }
    out
}
