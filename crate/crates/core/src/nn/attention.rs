//! Multi-head scaled dot-product attention and pre-norm transformer blocks.

use super::layers::{join, LayerNorm, LayerNormCache, Linear, Mlp, MlpCache, Module, Param};
use super::tensor::Tensor;
use super::Rng;
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Indices of unmasked keys.
    keys: Vec<usize>,
    /// Per head, `[nq, keys.len()]` attention weights.
    weights: Vec<Vec<f64>>,
    context: Tensor,
}

impl MultiHeadAttention {
    pub fn new(rng: &mut Rng, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "head count must divide embedding dim");
        Self {
            heads,
            query: Linear::new(rng, dim, dim),
            // a key bias only shifts every score of a query equally
            key: Linear::new(rng, dim, dim).without_bias(),
            value: Linear::new(rng, dim, dim),
            output: Linear::new(rng, dim, dim),
        }
    }

    /// All four projections set to the identity.
    pub fn identity(dim: usize, heads: usize) -> Self {
        Self {
            heads,
            query: Linear::identity(dim),
            key: Linear::identity(dim).without_bias(),
            value: Linear::identity(dim),
            output: Linear::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.output_dim()
    }

    pub fn forward(
        &self,
        q_in: &Tensor,
        k_in: &Tensor,
        v_in: &Tensor,
        mask: &[bool],
    ) -> Result<(Tensor, AttentionCache)> {
        let d = self.dim();
        if !d.is_multiple_of(self.heads) {
            return Err(dim_err("attention heads", format!("divisor of {d}"), self.heads));
        }
        if mask.len() != k_in.rows() || k_in.rows() != v_in.rows() {
            return Err(dim_err("attention mask", k_in.rows(), format!("{} (values {})", mask.len(), v_in.rows())));
        }
        let keys: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
        if keys.is_empty() {
            return Err(Error::EmptyAttention);
        }
        let q = self.query.forward(q_in)?;
        let k = self.key.forward(k_in)?;
        let v = self.value.forward(v_in)?;
        let nq = q.rows();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let nk = keys.len();
        let mut context = Tensor::zeros(&[nq, d]);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let off = h * dh;
            let mut w = vec![0.0; nq * nk];
            for i in 0..nq {
                let qi = &q.row(i)[off..off + dh];
                let wr = &mut w[i * nk..(i + 1) * nk];
                for (a, &j) in keys.iter().enumerate() {
                    let kj = &k.row(j)[off..off + dh];
                    wr[a] = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                }
                softmax_inplace(wr);
                let cr = &mut context.row_mut(i)[off..off + dh];
                for (a, &j) in keys.iter().enumerate() {
                    let vj = &v.row(j)[off..off + dh];
                    for t in 0..dh {
                        cr[t] += wr[a] * vj[t];
                    }
                }
            }
            weights.push(w);
        }
        let out = self.output.forward(&context)?;
        Ok((
            out,
            AttentionCache {
                q_in: q_in.clone(),
                k_in: k_in.clone(),
                v_in: v_in.clone(),
                q,
                k,
                v,
                keys,
                weights,
                context,
            },
        ))
    }

    /// Returns `(dq_in, dk_in, dv_in)`.
    pub fn backward(&mut self, cache: &AttentionCache, dout: &Tensor) -> (Tensor, Tensor, Tensor) {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dctx = self.output.backward(&cache.context, dout);
        let nq = cache.q.rows();
        let nkv = cache.k.rows();
        let nk = cache.keys.len();
        let mut dq = Tensor::zeros(&[nq, d]);
        let mut dk = Tensor::zeros(&[nkv, d]);
        let mut dv = Tensor::zeros(&[nkv, d]);
        for h in 0..self.heads {
            let off = h * dh;
            let w = &cache.weights[h];
            for i in 0..nq {
                let dci = &dctx.row(i)[off..off + dh];
                let wr = &w[i * nk..(i + 1) * nk];
                let mut da = vec![0.0; nk];
                for (a, &j) in cache.keys.iter().enumerate() {
                    let vj = &cache.v.row(j)[off..off + dh];
                    da[a] = dci.iter().zip(vj).map(|(x, y)| x * y).sum();
                    let dvr = &mut dv.row_mut(j)[off..off + dh];
                    for t in 0..dh {
                        dvr[t] += wr[a] * dci[t];
                    }
                }
                let dot: f64 = wr.iter().zip(&da).map(|(x, y)| x * y).sum();
                let qi = cache.q.row(i)[off..off + dh].to_vec();
                let mut dqi = vec![0.0; dh];
                for (a, &j) in cache.keys.iter().enumerate() {
                    let ds = wr[a] * (da[a] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &cache.k.row(j)[off..off + dh];
                    for t in 0..dh {
                        dqi[t] += ds * kj[t];
                    }
                    let dkr = &mut dk.row_mut(j)[off..off + dh];
                    for t in 0..dh {
                        dkr[t] += ds * qi[t];
                    }
                }
                let dqr = &mut dq.row_mut(i)[off..off + dh];
                for t in 0..dh {
                    dqr[t] += dqi[t];
                }
            }
        }
        let dq_in = self.query.backward(&cache.q_in, &dq);
        let dk_in = self.key.backward(&cache.k_in, &dk);
        let dv_in = self.value.backward(&cache.v_in, &dv);
        (dq_in, dk_in, dv_in)
    }
}

impl Module for MultiHeadAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Attention output for queries `q` over keys `k` and values `v`; masked keys get zero weight.
pub fn mha_forward(attn: &MultiHeadAttention, q: &Tensor, k: &Tensor, v: &Tensor, mask: &[bool]) -> Result<Tensor> {
    Ok(attn.forward(q, k, v, mask)?.0)
}

pub(crate) fn softmax_inplace(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in x.iter_mut() {
        *v /= s;
    }
}

/// Pre-norm residual block: `x + Attn(LN(x))` followed by `x + FFN(LN(x))`.
///
/// Used both as self-attention (agent-agent) and cross-attention (agent-map),
/// where keys and values are taken un-normalized from the memory.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: Mlp,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    ln2: LayerNormCache,
    ff: MlpCache,
    self_attention: bool,
}

impl TransformerBlock {
    pub fn new(rng: &mut Rng, name: &str, dim: usize, heads: usize, ff_width: usize) -> Self {
        Self {
            norm_attn: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(rng, dim, heads),
            norm_ff: LayerNorm::new(dim),
            ff: Mlp::new(rng, name, &[dim, ff_width, dim]),
        }
    }

    pub fn forward_self(&self, x: &Tensor, mask: &[bool]) -> Result<(Tensor, BlockCache)> {
        let (h1, ln1) = self.norm_attn.forward(x)?;
        let (a, attn) = self.attn.forward(&h1, &h1, &h1, mask)?;
        self.finish(x, a, ln1, attn, true)
    }

    pub fn forward_cross(&self, x: &Tensor, memory: &Tensor) -> Result<(Tensor, BlockCache)> {
        let (h1, ln1) = self.norm_attn.forward(x)?;
        let mask = vec![true; memory.rows()];
        let (a, attn) = self.attn.forward(&h1, memory, memory, &mask)?;
        self.finish(x, a, ln1, attn, false)
    }

    fn finish(
        &self,
        x: &Tensor,
        a: Tensor,
        ln1: LayerNormCache,
        attn: AttentionCache,
        self_attention: bool,
    ) -> Result<(Tensor, BlockCache)> {
        let mut x1 = x.clone();
        x1.add_assign(&a);
        let (h2, ln2) = self.norm_ff.forward(&x1)?;
        let (f, ff) = self.ff.forward(&h2)?;
        let mut y = x1;
        y.add_assign(&f);
        Ok((y, BlockCache { ln1, attn, ln2, ff, self_attention }))
    }

    /// Smallest |pre-activation| of a feed-forward hidden unit in a cached pass.
    pub fn kink_margin(&self, cache: &BlockCache) -> Result<f64> {
        self.ff.kink_margin(&cache.ff.inputs[0])
    }

    /// Returns `(dx, dmemory)`; `dmemory` is empty for self-attention.
    pub fn backward(&mut self, cache: &BlockCache, dy: &Tensor) -> (Tensor, Tensor) {
        let dh2 = self.ff.backward(&cache.ff, dy);
        let mut dx1 = self.norm_ff.backward(&cache.ln2, &dh2);
        dx1.add_assign(dy);
        let (dq, dk, dv) = self.attn.backward(&cache.attn, &dx1);
        if cache.self_attention {
            let mut dh1 = dq;
            dh1.add_assign(&dk);
            dh1.add_assign(&dv);
            let mut dx = self.norm_attn.backward(&cache.ln1, &dh1);
            dx.add_assign(&dx1);
            (dx, Tensor::zeros(&[0]))
        } else {
            let mut dx = self.norm_attn.backward(&cache.ln1, &dq);
            dx.add_assign(&dx1);
            let mut dm = dk;
            dm.add_assign(&dv);
            (dx, dm)
        }
    }
}

impl Module for TransformerBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.norm_attn.visit(&join(prefix, "norm_attn"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm_ff.visit(&join(prefix, "norm_ff"), f);
        self.ff.visit(&join(prefix, "ff"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.norm_attn.visit_mut(&join(prefix, "norm_attn"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.norm_ff.visit_mut(&join(prefix, "norm_ff"), f);
        self.ff.visit_mut(&join(prefix, "ff"), f);
    }
}
