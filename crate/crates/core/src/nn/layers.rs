//! Pre-norm transformer encoder with hand-written backward passes.
//!
//! Every `forward` returns a cache holding what the matching `backward`
//! needs. Backward passes accumulate parameter gradients into a [`Grads`] and
//! return the gradient with respect to their input.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{self, gemm_into, layer_norm, layer_norm_backward, matmul, matmul_acc, LnCache, Mat, View};
use super::params::{Grads, Init, ParamStore, TensorId};

/// Forward mode. Dropout is only sampled in training mode.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng, dropout: f64 },
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }

    /// Inverted-dropout scale factors, or `None` when nothing is dropped.
    pub fn dropout_mask(&mut self, n: usize) -> Option<Vec<f64>> {
        match self {
            Mode::Train { rng, dropout } if *dropout > 0.0 => {
                let keep = 1.0 - *dropout;
                Some((0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect())
            }
            _ => None,
        }
    }
}

fn apply_mask(x: &mut Mat, mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, s) in x.data.iter_mut().zip(m) {
            *v *= s;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: TensorId,
    pub b: TensorId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = 1.0 / (d_in as f64).sqrt();
        Linear {
            w: store.add(format!("{name}.weight"), &[d_in, d_out], Init::Normal(std), rng),
            b: store.add(format!("{name}.bias"), &[d_out], Init::Zeros, rng),
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &Mat) -> Mat {
        debug_assert_eq!(x.cols, self.d_in);
        let bias = p.get(self.b);
        let mut y = Mat::zeros(x.rows, self.d_out);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(bias);
        }
        gemm_into(
            View::of(x),
            View::slice(p.get(self.w), self.d_in, self.d_out),
            &mut y.data,
            self.d_out,
            0,
            1.0,
            1.0,
        );
        y
    }

    pub fn backward(&self, p: &ParamStore, x: &Mat, dy: &Mat, g: &mut Grads) -> Mat {
        matmul_acc(View::of(x).t(), View::of(dy), g.get_mut(self.w));
        let db = g.get_mut(self.b);
        for r in 0..dy.rows {
            for (acc, v) in db.iter_mut().zip(dy.row(r)) {
                *acc += v;
            }
        }
        matmul(View::of(dy), View::slice(p.get(self.w), self.d_in, self.d_out).t())
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: TensorId,
    pub beta: TensorId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), &[d], Init::Ones, rng),
            beta: store.add(format!("{name}.beta"), &[d], Init::Zeros, rng),
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &Mat) -> (Mat, LnCache) {
        layer_norm(x, p.get(self.gamma), p.get(self.beta))
    }

    pub fn backward(&self, p: &ParamStore, cache: &LnCache, dy: &Mat, g: &mut Grads) -> Mat {
        let mut dgamma = vec![0.0; dy.cols];
        let mut dbeta = vec![0.0; dy.cols];
        let dx = layer_norm_backward(dy, cache, p.get(self.gamma), &mut dgamma, &mut dbeta);
        for (a, b) in g.get_mut(self.gamma).iter_mut().zip(&dgamma) {
            *a += b;
        }
        for (a, b) in g.get_mut(self.beta).iter_mut().zip(&dbeta) {
            *a += b;
        }
        dx
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
}

pub struct AttnCache {
    x: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    ctx: Mat,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, n_heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Attention {
            q: Linear::new(store, &format!("{name}.query"), d, d, rng),
            k: Linear::new(store, &format!("{name}.key"), d, d, rng),
            v: Linear::new(store, &format!("{name}.value"), d, d, rng),
            o: Linear::new(store, &format!("{name}.output"), d, d, rng),
            n_heads,
        }
    }

    /// `mask[i] == false` marks padding: it neither attends nor is attended to.
    pub fn forward(&self, p: &ParamStore, x: &Mat, mask: &[bool]) -> (Mat, AttnCache) {
        let (len, d) = (x.rows, x.cols);
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.q.forward(p, x);
        let k = self.k.forward(p, x);
        let v = self.v.forward(p, x);
        let mut ctx = Mat::zeros(len, d);
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let mut s = matmul(View::cols_of(&q, h * dh, dh), View::cols_of(&k, h * dh, dh).t());
            for i in 0..len {
                let row = s.row_mut(i);
                if !mask[i] {
                    row.iter_mut().for_each(|v| *v = 0.0);
                    continue;
                }
                for (j, val) in row.iter_mut().enumerate() {
                    *val = if mask[j] { *val * scale } else { f64::NEG_INFINITY };
                }
                ops::softmax_in_place(row);
            }
            gemm_into(View::of(&s), View::cols_of(&v, h * dh, dh), &mut ctx.data, d, h * dh, 1.0, 0.0);
            probs.push(s);
        }
        let y = self.o.forward(p, &ctx);
        (
            y,
            AttnCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                ctx,
            },
        )
    }

    pub fn backward(&self, p: &ParamStore, c: &AttnCache, dy: &Mat, g: &mut Grads) -> Mat {
        let (len, d) = (c.x.rows, c.x.cols);
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dctx = self.o.backward(p, &c.ctx, dy, g);
        let mut dq = Mat::zeros(len, d);
        let mut dk = Mat::zeros(len, d);
        let mut dv = Mat::zeros(len, d);
        for (h, pr) in c.probs.iter().enumerate() {
            let dctx_h = View::cols_of(&dctx, h * dh, dh);
            gemm_into(View::of(pr).t(), dctx_h, &mut dv.data, d, h * dh, 1.0, 0.0);
            let mut ds = matmul(dctx_h, View::cols_of(&c.v, h * dh, dh).t());
            for i in 0..len {
                let prow = pr.row(i);
                let drow = ds.row_mut(i);
                let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                for (dv_, pv) in drow.iter_mut().zip(prow) {
                    *dv_ = pv * (*dv_ - dot) * scale;
                }
            }
            gemm_into(View::of(&ds), View::cols_of(&c.k, h * dh, dh), &mut dq.data, d, h * dh, 1.0, 0.0);
            gemm_into(View::of(&ds).t(), View::cols_of(&c.q, h * dh, dh), &mut dk.data, d, h * dh, 1.0, 0.0);
        }
        let mut dx = self.q.backward(p, &c.x, &dq, g);
        dx.add_assign(&self.k.backward(p, &c.x, &dk, g));
        dx.add_assign(&self.v.backward(p, &c.x, &dv, g));
        dx
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

pub struct FfCache {
    x: Mat,
    pre: Mat,
    act: Mat,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, ff: usize, rng: &mut ChaCha8Rng) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), d, ff, rng),
            down: Linear::new(store, &format!("{name}.down"), ff, d, rng),
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &Mat) -> (Mat, FfCache) {
        let pre = self.up.forward(p, x);
        let act = Mat::from_vec(pre.rows, pre.cols, pre.data.iter().map(|&v| ops::gelu(v)).collect());
        let y = self.down.forward(p, &act);
        (y, FfCache { x: x.clone(), pre, act })
    }

    pub fn backward(&self, p: &ParamStore, c: &FfCache, dy: &Mat, g: &mut Grads) -> Mat {
        let mut dact = self.down.backward(p, &c.act, dy, g);
        for (v, &z) in dact.data.iter_mut().zip(&c.pre.data) {
            *v *= ops::gelu_grad(z);
        }
        self.up.backward(p, &c.x, &dact, g)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub attn: Attention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

pub struct LayerCache {
    ln1: LnCache,
    attn: AttnCache,
    drop1: Option<Vec<f64>>,
    ln2: LnCache,
    ff: FfCache,
    drop2: Option<Vec<f64>>,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, n_heads: usize, ff: usize, rng: &mut ChaCha8Rng) -> Self {
        EncoderLayer {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d, rng),
            attn: Attention::new(store, &format!("{name}.attn"), d, n_heads, rng),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), d, rng),
            ff: FeedForward::new(store, &format!("{name}.ff"), d, ff, rng),
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &Mat, mask: &[bool], mode: &mut Mode) -> (Mat, LayerCache) {
        let (n1, ln1) = self.ln_attn.forward(p, x);
        let (mut a, attn) = self.attn.forward(p, &n1, mask);
        let drop1 = mode.dropout_mask(a.data.len());
        apply_mask(&mut a, &drop1);
        let mut x1 = x.clone();
        x1.add_assign(&a);

        let (n2, ln2) = self.ln_ff.forward(p, &x1);
        let (mut f, ff) = self.ff.forward(p, &n2);
        let drop2 = mode.dropout_mask(f.data.len());
        apply_mask(&mut f, &drop2);
        x1.add_assign(&f);
        (
            x1,
            LayerCache {
                ln1,
                attn,
                drop1,
                ln2,
                ff,
                drop2,
            },
        )
    }

    pub fn backward(&self, p: &ParamStore, c: &LayerCache, dy: &Mat, g: &mut Grads) -> Mat {
        let mut df = dy.clone();
        apply_mask(&mut df, &c.drop2);
        let dn2 = self.ff.backward(p, &c.ff, &df, g);
        let mut dx1 = self.ln_ff.backward(p, &c.ln2, &dn2, g);
        dx1.add_assign(dy);

        let mut da = dx1.clone();
        apply_mask(&mut da, &c.drop1);
        let dn1 = self.attn.backward(p, &c.attn, &da, g);
        let mut dx = self.ln_attn.backward(p, &c.ln1, &dn1, g);
        dx.add_assign(&dx1);
        dx
    }
}

/// A stack of encoder layers followed by a final layer norm.
#[derive(Clone, Debug)]
pub struct EncoderStack {
    pub layers: Vec<EncoderLayer>,
    pub ln_final: LayerNorm,
}

pub struct StackCache {
    layers: Vec<LayerCache>,
    ln_final: LnCache,
}

impl EncoderStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_layers: usize,
        d: usize,
        n_heads: usize,
        ff: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        EncoderStack {
            layers: (0..n_layers)
                .map(|i| EncoderLayer::new(store, &format!("{name}.layer{i}"), d, n_heads, ff, rng))
                .collect(),
            ln_final: LayerNorm::new(store, &format!("{name}.ln_final"), d, rng),
        }
    }

    pub fn forward(&self, p: &ParamStore, x: Mat, mask: &[bool], mode: &mut Mode) -> (Mat, StackCache) {
        assert_eq!(mask.len(), x.rows, "mask length");
        let mut h = x;
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, c) = layer.forward(p, &h, mask, mode);
            caches.push(c);
            h = next;
        }
        let (out, ln_final) = self.ln_final.forward(p, &h);
        (
            out,
            StackCache {
                layers: caches,
                ln_final,
            },
        )
    }

    pub fn backward(&self, p: &ParamStore, c: &StackCache, dy: &Mat, g: &mut Grads) -> Mat {
        let mut d = self.ln_final.backward(p, &c.ln_final, dy, g);
        for (layer, lc) in self.layers.iter().zip(&c.layers).rev() {
            d = layer.backward(p, lc, &d, g);
        }
        d
    }
}
