//! Scalar objectives wrapping single layers for finite-difference checks.
//!
//! Each probe treats its inputs as parameters too, so the checks cover input
//! gradients (what upstream layers receive) as well as weight gradients.
//! The objective is a fixed random projection `sum(w * output)`.

use rand::Rng as _;

use super::attention::{MultiHeadAttention, TransformerBlock};
use super::gradcheck::GradCheck;
use super::layers::{join, LayerNorm, Mlp, Module, Param};
use super::lstm::LstmCell;
use super::tensor::Tensor;
use super::{seeded_rng, Rng};
use crate::error::Result;

pub(crate) fn random_tensor(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("shape")
}

pub(crate) fn project(out: &Tensor, w: &Tensor) -> f64 {
    out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

pub struct MlpProbe {
    pub mlp: Mlp,
    pub input: Param,
    pub weights: Tensor,
}

impl MlpProbe {
    pub fn random(seed: u64, dims: &[usize], rows: usize) -> Self {
        let mut rng = seeded_rng(seed);
        let mlp = Mlp::new(&mut rng, "probe", dims);
        let input = Param::new(random_tensor(&mut rng, &[rows, dims[0]], 1.0));
        let weights = random_tensor(&mut rng, &[rows, *dims.last().unwrap()], 1.0);
        Self { mlp, input, weights }
    }

    /// Smallest |pre-activation| of any hidden unit; tiny values sit near a ReLU kink.
    pub fn kink_margin(&self) -> f64 {
        self.mlp.kink_margin(&self.input.value).expect("probe shapes")
    }
}

impl Module for MlpProbe {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.mlp.visit(&join(prefix, "mlp"), f);
        f(&join(prefix, "input"), &self.input);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
        f(&join(prefix, "input"), &mut self.input);
    }
}

impl GradCheck for MlpProbe {
    fn objective(&self) -> Result<f64> {
        Ok(project(&self.mlp.forward(&self.input.value)?.0, &self.weights))
    }
    fn backprop(&mut self) -> Result<()> {
        let (_, cache) = self.mlp.forward(&self.input.value)?;
        let dx = self.mlp.backward(&cache, &self.weights);
        self.input.grad.add_assign(&dx);
        Ok(())
    }
}

/// Unrolls the cell over several steps; objective on the final hidden state.
pub struct LstmProbe {
    pub cell: LstmCell,
    pub steps: Vec<Param>,
    pub weights: Tensor,
}

impl LstmProbe {
    pub fn random(seed: u64, input: usize, hidden: usize, rows: usize, steps: usize) -> Self {
        let mut rng = seeded_rng(seed);
        let mut cell = LstmCell::new(&mut rng, input, hidden);
        // random biases so every gate path is exercised
        let b = random_tensor(&mut rng, &[4 * hidden], 0.5);
        cell.bias.value = b;
        let steps = (0..steps).map(|_| Param::new(random_tensor(&mut rng, &[rows, input], 1.0))).collect();
        let weights = random_tensor(&mut rng, &[rows, hidden], 1.0);
        Self { cell, steps, weights }
    }

    fn inputs(&self) -> Vec<Tensor> {
        self.steps.iter().map(|p| p.value.clone()).collect()
    }
}

impl Module for LstmProbe {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.cell.visit(&join(prefix, "cell"), f);
        for (i, s) in self.steps.iter().enumerate() {
            f(&join(prefix, &format!("x{i}")), s);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.cell.visit_mut(&join(prefix, "cell"), f);
        for (i, s) in self.steps.iter_mut().enumerate() {
            f(&join(prefix, &format!("x{i}")), s);
        }
    }
}

impl GradCheck for LstmProbe {
    fn objective(&self) -> Result<f64> {
        Ok(project(&self.cell.encode(&self.inputs())?.0, &self.weights))
    }
    fn backprop(&mut self) -> Result<()> {
        let (_, caches) = self.cell.encode(&self.inputs())?;
        let dxs = self.cell.encode_backward(&caches, &self.weights);
        for (p, dx) in self.steps.iter_mut().zip(dxs) {
            p.grad.add_assign(&dx);
        }
        Ok(())
    }
}

pub struct AttentionProbe {
    pub attn: MultiHeadAttention,
    pub query: Param,
    pub key: Param,
    pub value: Param,
    pub mask: Vec<bool>,
    pub weights: Tensor,
}

impl AttentionProbe {
    pub fn random(seed: u64, dim: usize, heads: usize, nq: usize, nk: usize) -> Self {
        let mut rng = seeded_rng(seed);
        let mut attn = MultiHeadAttention::new(&mut rng, dim, heads);
        for l in [&mut attn.query, &mut attn.key, &mut attn.value, &mut attn.output] {
            if let Some(b) = &mut l.bias {
                b.value = random_tensor(&mut rng, &[dim], 0.3);
            }
        }
        let query = Param::new(random_tensor(&mut rng, &[nq, dim], 1.0));
        let key = Param::new(random_tensor(&mut rng, &[nk, dim], 1.0));
        let value = Param::new(random_tensor(&mut rng, &[nk, dim], 1.0));
        let mut mask: Vec<bool> = (0..nk).map(|_| rng.gen_bool(0.75)).collect();
        mask[0] = true;
        let weights = random_tensor(&mut rng, &[nq, dim], 1.0);
        Self { attn, query, key, value, mask, weights }
    }
}

impl Module for AttentionProbe {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.attn.visit(&join(prefix, "attn"), f);
        f(&join(prefix, "q"), &self.query);
        f(&join(prefix, "k"), &self.key);
        f(&join(prefix, "v"), &self.value);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.attn.visit_mut(&join(prefix, "attn"), f);
        f(&join(prefix, "q"), &mut self.query);
        f(&join(prefix, "k"), &mut self.key);
        f(&join(prefix, "v"), &mut self.value);
    }
}

impl GradCheck for AttentionProbe {
    fn objective(&self) -> Result<f64> {
        let out = self.attn.forward(&self.query.value, &self.key.value, &self.value.value, &self.mask)?.0;
        Ok(project(&out, &self.weights))
    }
    fn backprop(&mut self) -> Result<()> {
        let (_, cache) = self.attn.forward(&self.query.value, &self.key.value, &self.value.value, &self.mask)?;
        let (dq, dk, dv) = self.attn.backward(&cache, &self.weights);
        self.query.grad.add_assign(&dq);
        self.key.grad.add_assign(&dk);
        self.value.grad.add_assign(&dv);
        Ok(())
    }
}

/// Pre-norm transformer block, in self- or cross-attention mode.
pub struct BlockProbe {
    pub block: TransformerBlock,
    pub input: Param,
    pub memory: Option<Param>,
    pub mask: Vec<bool>,
    pub weights: Tensor,
}

impl BlockProbe {
    pub fn random(seed: u64, dim: usize, heads: usize, rows: usize, memory_rows: Option<usize>) -> Self {
        let mut rng = seeded_rng(seed);
        let mut block = TransformerBlock::new(&mut rng, "ff", dim, heads, 2 * dim);
        block.norm_attn.gain.value = random_tensor(&mut rng, &[dim], 1.0);
        block.norm_ff.shift.value = random_tensor(&mut rng, &[dim], 0.5);
        let input = Param::new(random_tensor(&mut rng, &[rows, dim], 1.0));
        let memory = memory_rows.map(|m| Param::new(random_tensor(&mut rng, &[m, dim], 1.0)));
        let mut mask: Vec<bool> = (0..rows).map(|_| rng.gen_bool(0.8)).collect();
        mask[0] = true;
        let weights = random_tensor(&mut rng, &[rows, dim], 1.0);
        Self { block, input, memory, mask, weights }
    }

    /// Smallest |pre-activation| of a feed-forward hidden unit.
    pub fn kink_margin(&self) -> f64 {
        let (_, cache) = self.run().expect("probe shapes");
        self.block.kink_margin(&cache).expect("probe shapes")
    }

    fn run(&self) -> Result<(Tensor, super::attention::BlockCache)> {
        match &self.memory {
            Some(m) => self.block.forward_cross(&self.input.value, &m.value),
            None => self.block.forward_self(&self.input.value, &self.mask),
        }
    }
}

impl Module for BlockProbe {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.block.visit(&join(prefix, "block"), f);
        f(&join(prefix, "x"), &self.input);
        if let Some(m) = &self.memory {
            f(&join(prefix, "memory"), m);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.block.visit_mut(&join(prefix, "block"), f);
        f(&join(prefix, "x"), &mut self.input);
        if let Some(m) = &mut self.memory {
            f(&join(prefix, "memory"), m);
        }
    }
}

impl GradCheck for BlockProbe {
    fn objective(&self) -> Result<f64> {
        Ok(project(&self.run()?.0, &self.weights))
    }
    fn backprop(&mut self) -> Result<()> {
        let (_, cache) = self.run()?;
        let (dx, dm) = self.block.backward(&cache, &self.weights);
        self.input.grad.add_assign(&dx);
        if let Some(m) = &mut self.memory {
            m.grad.add_assign(&dm);
        }
        Ok(())
    }
}

pub struct LayerNormProbe {
    pub norm: LayerNorm,
    pub input: Param,
    pub weights: Tensor,
}

impl LayerNormProbe {
    pub fn random(seed: u64, dim: usize, rows: usize) -> Self {
        let mut rng = seeded_rng(seed);
        let mut norm = LayerNorm::new(dim);
        norm.gain.value = random_tensor(&mut rng, &[dim], 1.5);
        norm.shift.value = random_tensor(&mut rng, &[dim], 1.0);
        Self {
            norm,
            input: Param::new(random_tensor(&mut rng, &[rows, dim], 2.0)),
            weights: random_tensor(&mut rng, &[rows, dim], 1.0),
        }
    }
}

impl Module for LayerNormProbe {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.norm.visit(&join(prefix, "norm"), f);
        f(&join(prefix, "x"), &self.input);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.norm.visit_mut(&join(prefix, "norm"), f);
        f(&join(prefix, "x"), &mut self.input);
    }
}

impl GradCheck for LayerNormProbe {
    fn objective(&self) -> Result<f64> {
        Ok(project(&self.norm.forward(&self.input.value)?.0, &self.weights))
    }
    fn backprop(&mut self) -> Result<()> {
        let (_, cache) = self.norm.forward(&self.input.value)?;
        let dx = self.norm.backward(&cache, &self.weights);
        self.input.grad.add_assign(&dx);
        Ok(())
    }
}
