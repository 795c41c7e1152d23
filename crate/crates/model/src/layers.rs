//! Layer primitives with explicit forward caches and backward passes.
//!
//! Activations are packed row-major `rows x width` buffers. Variable-length
//! sequences are described by an offset table (`seg`, length `batch + 1`) so
//! no padding rows ever enter a computation.

use rand::Rng;

use crate::float::Float;
use crate::linalg::{gemm, softmax_in_place, Op};
use crate::params::{Grads, ParamId, ParamStore};

/// Parameter initialisation used while building a model.
pub(crate) enum Init<'a, R: Rng> {
    Normal { std: f64, rng: &'a mut R },
    Zeros,
}

impl<R: Rng> Init<'_, R> {
    pub(crate) fn weight<T: Float>(&mut self, store: &mut ParamStore<T>, name: &str, shape: &[usize]) -> ParamId {
        match self {
            Init::Normal { std, rng } => store.normal(name, shape, *std, *rng),
            Init::Zeros => store.constant(name, shape, 0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub(crate) fn new<T: Float, R: Rng>(
        store: &mut ParamStore<T>,
        init: &mut Init<'_, R>,
        name: &str,
        din: usize,
        dout: usize,
    ) -> Self {
        let w = init.weight(store, &format!("{name}.weight"), &[din, dout]);
        let b = store.constant(&format!("{name}.bias"), &[dout], 0.0);
        Self { w, b, din, dout }
    }

    pub fn forward<T: Float>(&self, store: &ParamStore<T>, x: &[T], rows: usize) -> Vec<T> {
        let bias = store.get(self.b);
        let mut y = Vec::with_capacity(rows * self.dout);
        for _ in 0..rows {
            y.extend_from_slice(bias);
        }
        gemm(Op::N, Op::N, rows, self.dout, self.din, T::one(), x, self.din, store.get(self.w), self.dout, T::one(), &mut y, self.dout);
        y
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward<T: Float>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        x: &[T],
        dy: &[T],
        rows: usize,
    ) -> Vec<T> {
        let mut dx = vec![T::zero(); rows * self.din];
        self.backward_into(store, grads, x, dy, rows, &mut dx, false);
        dx
    }

    /// Like [`Linear::backward`] but writes (or adds, when `accumulate`) into `dx`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_into<T: Float>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        x: &[T],
        dy: &[T],
        rows: usize,
        dx: &mut [T],
        accumulate: bool,
    ) {
        gemm(Op::T, Op::N, self.din, self.dout, rows, T::one(), x, self.din, dy, self.dout, T::one(), grads.get_mut(self.w), self.dout);
        let db = grads.get_mut(self.b);
        for row in dy.chunks_exact(self.dout) {
            for (g, &v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
        let beta = if accumulate { T::one() } else { T::zero() };
        gemm(Op::N, Op::T, rows, self.din, self.dout, T::one(), dy, self.dout, store.get(self.w), self.dout, beta, dx, self.din);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct LnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub(crate) fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gain = store.constant(&format!("{name}.gain"), &[dim], 1.0);
        let bias = store.constant(&format!("{name}.bias"), &[dim], 0.0);
        Self { gain, bias, dim }
    }

    pub fn forward<T: Float>(&self, store: &ParamStore<T>, x: &[T]) -> (Vec<T>, LnCache<T>) {
        let d = self.dim;
        let g = store.get(self.gain);
        let b = store.get(self.bias);
        let rows = x.len() / d;
        let inv_d = T::one() / T::lit(d as f64);
        let eps = T::lit(LN_EPS);
        let mut y = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let xr = &x[r * d..(r + 1) * d];
            let mean = xr.iter().copied().sum::<T>() * inv_d;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (xr[j] - mean) * is;
                xhat[r * d + j] = h;
                y[r * d + j] = h * g[j] + b[j];
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward<T: Float>(&self, store: &ParamStore<T>, grads: &mut Grads<T>, cache: &LnCache<T>, dy: &[T]) -> Vec<T> {
        let d = self.dim;
        let g = store.get(self.gain);
        let rows = dy.len() / d;
        let inv_d = T::one() / T::lit(d as f64);
        let mut dx = vec![T::zero(); dy.len()];
        {
            let dg = grads.get_mut(self.gain);
            for r in 0..rows {
                for j in 0..d {
                    dg[j] += dy[r * d + j] * cache.xhat[r * d + j];
                }
            }
        }
        {
            let db = grads.get_mut(self.bias);
            for row in dy.chunks_exact(d) {
                for (acc, &v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut dxhat = vec![T::zero(); d];
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let mut mean_d = T::zero();
            let mut mean_dx = T::zero();
            for j in 0..d {
                dxhat[j] = dy[r * d + j] * g[j];
                mean_d += dxhat[j];
                mean_dx += dxhat[j] * xh[j];
            }
            mean_d *= inv_d;
            mean_dx *= inv_d;
            let is = cache.inv_std[r];
            for j in 0..d {
                dx[r * d + j] = is * (dxhat[j] - mean_d - xh[j] * mean_dx);
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through a single `exp`; libm's `tanh` dominates FFN time otherwise.
#[inline]
fn fast_tanh<T: Float>(u: T) -> T {
    let e = (u + u).exp();
    if e.is_infinite() {
        return T::one();
    }
    T::one() - T::lit(2.0) / (e + T::one())
}

#[inline]
pub fn gelu<T: Float>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * x * (T::one() + fast_tanh(c * (x + a * x * x * x)))
}

#[inline]
pub fn gelu_grad<T: Float>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let t = fast_tanh(c * (x + a * x * x * x));
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone)]
pub struct FfnCache<T> {
    x: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

impl FeedForward {
    pub(crate) fn new<T: Float, R: Rng>(store: &mut ParamStore<T>, init: &mut Init<'_, R>, name: &str, d: usize, ff: usize) -> Self {
        Self {
            up: Linear::new(store, init, &format!("{name}.up"), d, ff),
            down: Linear::new(store, init, &format!("{name}.down"), ff, d),
        }
    }

    pub fn forward<T: Float>(&self, store: &ParamStore<T>, x: Vec<T>, rows: usize) -> (Vec<T>, FfnCache<T>) {
        let pre = self.up.forward(store, &x, rows);
        let act: Vec<T> = pre.iter().map(|&v| gelu(v)).collect();
        let y = self.down.forward(store, &act, rows);
        (y, FfnCache { x, pre, act })
    }

    pub fn backward<T: Float>(&self, store: &ParamStore<T>, grads: &mut Grads<T>, cache: &FfnCache<T>, dy: &[T], rows: usize) -> Vec<T> {
        let mut dact = self.down.backward(store, grads, &cache.act, dy, rows);
        for (d, &p) in dact.iter_mut().zip(&cache.pre) {
            *d *= gelu_grad(p);
        }
        self.up.backward(store, grads, &cache.x, &dact, rows)
    }
}

/// Deliberate backward-pass corruptions used to validate the gradient checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the gradient flowing through attention scores.
    FlipAttentionScoreGrad,
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct AttnCache<T> {
    hq: Vec<T>,
    /// Key/value input when it differs from the query input (cross-attention).
    hkv: Option<Vec<T>>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    prob_off: Vec<usize>,
    o: Vec<T>,
}

/// Which positions a query row may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mask {
    Full,
    Causal,
}

impl Attention {
    pub(crate) fn new<T: Float, R: Rng>(store: &mut ParamStore<T>, init: &mut Init<'_, R>, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(store, init, &format!("{name}.q"), dim, dim),
            k: Linear::new(store, init, &format!("{name}.k"), dim, dim),
            v: Linear::new(store, init, &format!("{name}.v"), dim, dim),
            o: Linear::new(store, init, &format!("{name}.o"), dim, dim),
            heads,
            dim,
        }
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn scale<T: Float>(&self) -> T {
        T::one() / T::lit(self.head_dim() as f64).sqrt()
    }

    /// Multi-head attention of packed query rows over packed key rows.
    /// `hkv = None` means self-attention over `hq`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Float>(
        &self,
        store: &ParamStore<T>,
        hq: Vec<T>,
        seg_q: &[usize],
        hkv: Option<Vec<T>>,
        seg_k: &[usize],
        mask: Mask,
    ) -> (Vec<T>, AttnCache<T>) {
        let d = self.dim;
        let dh = self.head_dim();
        let nq = hq.len() / d;
        let q = self.q.forward(store, &hq, nq);
        let src = hkv.as_deref().unwrap_or(&hq);
        let nk = src.len() / d;
        let k = self.k.forward(store, src, nk);
        let v = self.v.forward(store, src, nk);
        let scale: T = self.scale();
        let batch = seg_q.len() - 1;
        let mut prob_off = Vec::with_capacity(batch + 1);
        let mut total = 0;
        for b in 0..batch {
            prob_off.push(total);
            total += self.heads * (seg_q[b + 1] - seg_q[b]) * (seg_k[b + 1] - seg_k[b]);
        }
        prob_off.push(total);
        let mut probs = vec![T::zero(); total];
        let mut o = vec![T::zero(); nq * d];
        for b in 0..batch {
            let (q0, lq) = (seg_q[b], seg_q[b + 1] - seg_q[b]);
            let (k0, lk) = (seg_k[b], seg_k[b + 1] - seg_k[b]);
            if lq == 0 || lk == 0 {
                continue;
            }
            for h in 0..self.heads {
                let p0 = prob_off[b] + h * lq * lk;
                let s = &mut probs[p0..p0 + lq * lk];
                gemm(Op::N, Op::T, lq, lk, dh, scale, &q[q0 * d + h * dh..], d, &k[k0 * d + h * dh..], d, T::zero(), s, lk);
                for i in 0..lq {
                    let row = &mut s[i * lk..(i + 1) * lk];
                    match mask {
                        Mask::Full => softmax_in_place(row),
                        Mask::Causal => {
                            let visible = (i + 1 + lk - lq).min(lk);
                            softmax_in_place(&mut row[..visible]);
                            for x in &mut row[visible..] {
                                *x = T::zero();
                            }
                        }
                    }
                }
                gemm(Op::N, Op::N, lq, dh, lk, T::one(), s, lk, &v[k0 * d + h * dh..], d, T::zero(), &mut o[q0 * d + h * dh..], d);
            }
        }
        let y = self.o.forward(store, &o, nq);
        (y, AttnCache { hq, hkv, q, k, v, probs, prob_off, o })
    }

    /// Returns `(d hq, d hkv)`; for self-attention the second is `None` and
    /// its contribution is already folded into the first.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Float>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Grads<T>,
        cache: &AttnCache<T>,
        dy: &[T],
        seg_q: &[usize],
        seg_k: &[usize],
        fault: Option<Fault>,
    ) -> (Vec<T>, Option<Vec<T>>) {
        let d = self.dim;
        let dh = self.head_dim();
        let nq = cache.hq.len() / d;
        let nk = cache.k.len() / d;
        let scale: T = self.scale();
        let d_o = self.o.backward(store, grads, &cache.o, dy, nq);
        let mut dq = vec![T::zero(); nq * d];
        let mut dk = vec![T::zero(); nk * d];
        let mut dv = vec![T::zero(); nk * d];
        let batch = seg_q.len() - 1;
        let mut ds = Vec::new();
        for b in 0..batch {
            let (q0, lq) = (seg_q[b], seg_q[b + 1] - seg_q[b]);
            let (k0, lk) = (seg_k[b], seg_k[b + 1] - seg_k[b]);
            if lq == 0 || lk == 0 {
                continue;
            }
            ds.clear();
            ds.resize(lq * lk, T::zero());
            for h in 0..self.heads {
                let p0 = cache.prob_off[b] + h * lq * lk;
                let a = &cache.probs[p0..p0 + lq * lk];
                let qo = q0 * d + h * dh;
                let ko = k0 * d + h * dh;
                gemm(Op::N, Op::T, lq, lk, dh, T::one(), &d_o[qo..], d, &cache.v[ko..], d, T::zero(), &mut ds, lk);
                gemm(Op::T, Op::N, lk, dh, lq, T::one(), a, lk, &d_o[qo..], d, T::zero(), &mut dv[ko..], d);
                for i in 0..lq {
                    let ar = &a[i * lk..(i + 1) * lk];
                    let dr = &mut ds[i * lk..(i + 1) * lk];
                    let dot: T = ar.iter().zip(dr.iter()).map(|(&p, &g)| p * g).sum();
                    for (g, &p) in dr.iter_mut().zip(ar) {
                        *g = p * (*g - dot);
                    }
                }
                if fault == Some(Fault::FlipAttentionScoreGrad) {
                    for g in ds.iter_mut() {
                        *g = -*g;
                    }
                }
                gemm(Op::N, Op::N, lq, dh, lk, scale, &ds, lk, &cache.k[ko..], d, T::zero(), &mut dq[qo..], d);
                gemm(Op::T, Op::N, lk, dh, lq, scale, &ds, lk, &cache.q[qo..], d, T::zero(), &mut dk[ko..], d);
            }
        }
        let mut dhq = self.q.backward(store, grads, &cache.hq, &dq, nq);
        match &cache.hkv {
            None => {
                self.k.backward_into(store, grads, &cache.hq, &dk, nk, &mut dhq, true);
                self.v.backward_into(store, grads, &cache.hq, &dv, nk, &mut dhq, true);
                (dhq, None)
            }
            Some(hkv) => {
                let mut dkv = self.k.backward(store, grads, hkv, &dk, nk);
                self.v.backward_into(store, grads, hkv, &dv, nk, &mut dkv, true);
                (dhq, Some(dkv))
            }
        }
    }
}

/// Inverted dropout; returns the scaled keep-mask, or `None` when inactive.
pub fn dropout<T: Float, R: Rng>(x: &mut [T], p: f64, rng: Option<&mut R>) -> Option<Vec<T>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = T::lit(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    for (v, &m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

pub fn apply_mask<T: Float>(dy: &[T], mask: &Option<Vec<T>>) -> Vec<T> {
    match mask {
        Some(m) => dy.iter().zip(m).map(|(&g, &k)| g * k).collect(),
        None => dy.to_vec(),
    }
}

pub fn add_in_place<T: Float>(acc: &mut [T], x: &[T]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn causal_softmax_rows_sum_to_one_and_hide_future() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = rand::rng();
        let mut init = Init::Normal { std: 0.5, rng: &mut rng };
        let attn = Attention::new(&mut store, &mut init, "a", 4, 2);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let seg = [0, 3];
        let (_, cache) = attn.forward(&store, x, &seg, None, &seg, Mask::Causal);
        for h in 0..2 {
            for i in 0..3 {
                let row = &cache.probs[h * 9 + i * 3..h * 9 + i * 3 + 3];
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                for &p in &row[i + 1..] {
                    assert_eq!(p, 0.0);
                }
            }
        }
    }
}
