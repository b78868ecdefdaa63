//! Pre-norm transformer blocks shared by the tagger and the generator.

use std::collections::HashMap;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// Dropout setting for one forward pass.
pub enum Dropout<'a> {
    Off,
    On { rate: f64, rng: &'a mut dyn RngCore },
}

impl Dropout<'_> {
    pub(crate) fn apply<F: Scalar>(&mut self, g: &mut Graph<F>, x: Var) -> Result<Var> {
        match self {
            Dropout::Off => Ok(x),
            Dropout::On { rate, rng } => g.dropout(x, *rate, &mut **rng),
        }
    }
}

pub(crate) fn normal_tensor<F: Scalar, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<F> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| F::from_acc(dist.sample(rng))).collect()).expect("shape matches data")
}

/// Glorot-normal weight matrix.
pub(crate) fn dense_init<F: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<F> {
    normal_tensor(&[rows, cols], (2.0 / (rows + cols) as f64).sqrt(), rng)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    pub(crate) fn register<F: Scalar>(store: &mut ParamStore<F>, prefix: &str, d: usize) -> Self {
        Norm {
            gain: store.register(format!("{prefix}.gain"), Tensor::filled(&[d], F::one())),
            bias: store.register(format!("{prefix}.bias"), Tensor::zeros(&[d])),
        }
    }

    pub(crate) fn forward<F: Scalar>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let n = g.layer_norm(x)?;
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let scaled = g.mul(n, gain)?;
        g.add(scaled, bias)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Linear {
    pub(crate) fn register<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.register(format!("{name}.weight"), dense_init(inputs, outputs, rng));
        let bias = bias.then(|| store.register(format!("{name}.bias"), Tensor::zeros(&[outputs])));
        Linear { weight, bias }
    }

    pub(crate) fn forward<F: Scalar>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Block {
    norm1: Norm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm2: Norm,
    ff_in: Linear,
    ff_out: Linear,
}

impl Block {
    fn register<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let d = cfg.d_model;
        Block {
            norm1: Norm::register(store, &format!("{prefix}.norm1"), d),
            query: Linear::register(store, &format!("{prefix}.attn.query"), d, d, false, rng),
            key: Linear::register(store, &format!("{prefix}.attn.key"), d, d, false, rng),
            value: Linear::register(store, &format!("{prefix}.attn.value"), d, d, false, rng),
            out: Linear::register(store, &format!("{prefix}.attn.out"), d, d, true, rng),
            norm2: Norm::register(store, &format!("{prefix}.norm2"), d),
            ff_in: Linear::register(store, &format!("{prefix}.ff.in"), d, cfg.d_ff, true, rng),
            ff_out: Linear::register(store, &format!("{prefix}.ff.out"), cfg.d_ff, d, true, rng),
        }
    }
}

/// A stack of blocks applied to the rows of several independent sequences
/// packed into one `[total_len, d]` matrix. Attention never crosses
/// sequence boundaries, so no padding is ever materialized.
#[derive(Clone, Debug)]
pub(crate) struct Stack {
    blocks: Vec<Block>,
    heads: usize,
    causal: bool,
}

impl Stack {
    pub(crate) fn register<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        cfg: &ModelConfig,
        causal: bool,
        rng: &mut R,
    ) -> Self {
        let blocks = (0..cfg.n_layers).map(|i| Block::register(store, &format!("block{i}"), cfg, rng)).collect();
        Stack { blocks, heads: cfg.n_heads, causal }
    }

    pub(crate) fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        mut x: Var,
        lens: &[usize],
        dropout: &mut Dropout<'_>,
    ) -> Result<Var> {
        let mut masks: HashMap<usize, Var> = HashMap::new();
        for block in &self.blocks {
            let h = block.norm1.forward(g, store, x)?;
            let a = self.attention(g, store, block, h, lens, &mut masks)?;
            let a = dropout.apply(g, a)?;
            x = g.add(x, a)?;
            let h = block.norm2.forward(g, store, x)?;
            let h = block.ff_in.forward(g, store, h)?;
            let h = g.relu(h)?;
            let h = block.ff_out.forward(g, store, h)?;
            let h = dropout.apply(g, h)?;
            x = g.add(x, h)?;
        }
        Ok(x)
    }

    fn attention<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        block: &Block,
        x: Var,
        lens: &[usize],
        masks: &mut HashMap<usize, Var>,
    ) -> Result<Var> {
        let d = g.shape(x)[1];
        let dh = d / self.heads;
        let scale = F::from_acc(1.0 / (dh as f64).sqrt());
        let q = block.query.forward(g, store, x)?;
        let k = block.key.forward(g, store, x)?;
        let v = block.value.forward(g, store, x)?;

        let mut per_seq = Vec::with_capacity(lens.len());
        let mut offset = 0;
        for &len in lens {
            let mask = if self.causal && len > 1 {
                Some(*masks.entry(len).or_insert_with(|| g.constant(causal_mask(len))))
            } else {
                None
            };
            let (qs, ks, vs) = if lens.len() == 1 {
                (q, k, v)
            } else {
                (g.narrow(q, 0, offset, len)?, g.narrow(k, 0, offset, len)?, g.narrow(v, 0, offset, len)?)
            };
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = g.narrow(qs, 1, h * dh, dh)?;
                let kh = g.narrow(ks, 1, h * dh, dh)?;
                let vh = g.narrow(vs, 1, h * dh, dh)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let mut scores = g.scale(scores, scale)?;
                if let Some(m) = mask {
                    scores = g.add(scores, m)?;
                }
                let weights = g.softmax(scores, 1)?;
                heads.push(g.matmul(weights, vh)?);
            }
            per_seq.push(g.concat(&heads, 1)?);
            offset += len;
        }
        let merged = if per_seq.len() == 1 { per_seq[0] } else { g.concat(&per_seq, 0)? };
        block.out.forward(g, store, merged)
    }
}

/// Additive mask hiding future positions: 0 on and below the diagonal.
pub(crate) fn causal_mask<F: Scalar>(len: usize) -> Tensor<F> {
    let mut t = Tensor::zeros(&[len, len]);
    let big = F::from_acc(-1e9);
    for i in 0..len {
        for j in i + 1..len {
            t.data_mut()[i * len + j] = big;
        }
    }
    t
}

/// Keys and values of every position decoded so far, one `[len, d]`
/// row-major buffer per block.
#[derive(Clone, Debug, Default)]
pub(crate) struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

fn to_f64<F: Scalar>(t: &Tensor<F>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_acc()).collect()
}

impl Norm {
    pub(crate) fn apply_row<F: Scalar>(&self, store: &ParamStore<F>, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let is = 1.0 / (var + crate::autodiff::LAYER_NORM_EPS).sqrt();
        let (gain, bias) = (store.get(self.gain).data(), store.get(self.bias).data());
        x.iter().zip(gain.iter().zip(bias)).map(|(v, (g, b))| (v - mean) * is * g.to_acc() + b.to_acc()).collect()
    }
}

impl Linear {
    pub(crate) fn apply_row<F: Scalar>(&self, store: &ParamStore<F>, x: &[f64]) -> Vec<f64> {
        let w = store.get(self.weight);
        let outputs = w.shape()[1];
        let mut out = match self.bias {
            Some(b) => to_f64(store.get(b)),
            None => vec![0.0; outputs],
        };
        for (&xi, wrow) in x.iter().zip(w.data().chunks_exact(outputs)) {
            for (o, wv) in out.iter_mut().zip(wrow) {
                *o += xi * wv.to_acc();
            }
        }
        out
    }
}

impl Stack {
    /// Hidden state of one new position given everything in `cache`, which
    /// is extended with this position's keys and values. Dropout is off.
    pub(crate) fn step<F: Scalar>(&self, store: &ParamStore<F>, mut x: Vec<f64>, cache: &mut KvCache) -> Vec<f64> {
        if cache.keys.len() < self.blocks.len() {
            cache.keys.resize(self.blocks.len(), Vec::new());
            cache.values.resize(self.blocks.len(), Vec::new());
        }
        let d = x.len();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for (i, block) in self.blocks.iter().enumerate() {
            let h = block.norm1.apply_row(store, &x);
            let q = block.query.apply_row(store, &h);
            cache.keys[i].extend(block.key.apply_row(store, &h));
            cache.values[i].extend(block.value.apply_row(store, &h));
            let (keys, values) = (&cache.keys[i], &cache.values[i]);
            let len = keys.len() / d;
            let mut merged = vec![0.0; d];
            let mut scores = vec![0.0; len];
            for head in 0..self.heads {
                let cols = head * dh..(head + 1) * dh;
                for (t, s) in scores.iter_mut().enumerate() {
                    let k = &keys[t * d + cols.start..t * d + cols.end];
                    *s = q[cols.clone()].iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                for (t, &w) in scores.iter().enumerate() {
                    let v = &values[t * d + cols.start..t * d + cols.end];
                    for (m, vv) in merged[cols.clone()].iter_mut().zip(v) {
                        *m += w / z * vv;
                    }
                }
            }
            let a = block.out.apply_row(store, &merged);
            x.iter_mut().zip(&a).for_each(|(x, a)| *x += a);
            let h = block.norm2.apply_row(store, &x);
            let mut h = block.ff_in.apply_row(store, &h);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            let h = block.ff_out.apply_row(store, &h);
            x.iter_mut().zip(&h).for_each(|(x, h)| *x += h);
        }
        x
    }
}
