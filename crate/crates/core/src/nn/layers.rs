//! Dense layers: parameters, linear maps, ReLU MLPs and layer normalization.

use rand::Rng as _;

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt, Tensor};
use super::Rng;
use crate::error::{dim_err, Result};

/// A learnable tensor together with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns named parameters.
///
/// Visiting order is fixed per type so checkpoints and optimizer state line up.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.value.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// `y = x W^T + b` with `W: [out, in]`; the bias is optional.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new(rng: &mut Rng, input: usize, output: usize) -> Self {
        let w = xavier_uniform(rng, input, output, input * output);
        Self {
            weight: Param::new(Tensor::from_vec(&[output, input], w).expect("shape")),
            bias: Some(Param::new(Tensor::zeros(&[output]))),
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.len() != weight.rows() {
            return Err(dim_err(
                "linear",
                format!("bias of {} for weight {:?}", weight.rows(), weight.shape()),
                bias.len(),
            ));
        }
        Ok(Self { weight: Param::new(weight), bias: Some(Param::new(bias)) })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Param::new(Tensor::zeros(&[output, input])), bias: Some(Param::new(Tensor::zeros(&[output]))) }
    }

    pub fn identity(dim: usize) -> Self {
        let mut w = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            w.data_mut()[i * dim + i] = 1.0;
        }
        Self { weight: Param::new(w), bias: Some(Param::new(Tensor::zeros(&[dim]))) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_named(x, "linear")
    }

    fn forward_named(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        let (din, dout) = (self.input_dim(), self.output_dim());
        if x.cols() != din {
            return Err(dim_err(name, format!("input width {din}"), x.cols()));
        }
        let n = x.rows();
        let mut out = Tensor::zeros(&[n, dout]);
        matmul_bt(x.data(), self.weight.value.data(), n, din, dout, out.data_mut());
        if let Some(bias) = &self.bias {
            let b = bias.value.data();
            for i in 0..n {
                for (o, bj) in out.row_mut(i).iter_mut().zip(b) {
                    *o += bj;
                }
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (din, dout) = (self.input_dim(), self.output_dim());
        let n = x.rows();
        matmul_at_acc(dy.data(), x.data(), n, dout, din, self.weight.grad.data_mut());
        if let Some(bias) = &mut self.bias {
            let gb = bias.grad.data_mut();
            for i in 0..n {
                for (g, d) in gb.iter_mut().zip(dy.row(i)) {
                    *g += d;
                }
            }
        }
        let mut dx = Tensor::zeros(&[n, din]);
        matmul_acc(dy.data(), self.weight.value.data(), n, dout, din, dx.data_mut());
        dx
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub name: String,
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer; for `l > 0` this is the ReLU output of layer `l - 1`.
    pub(crate) inputs: Vec<Tensor>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`
    pub fn new(rng: &mut Rng, name: &str, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output width");
        let layers = dims.windows(2).map(|w| Linear::new(rng, w[0], w[1])).collect();
        Self { name: name.to_string(), layers }
    }

    pub fn from_layers(name: &str, layers: Vec<Linear>) -> Self {
        Self { name: name.to_string(), layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward_named(&h, &format!("mlp `{}` layer {l}", self.name))?;
            if l < last {
                relu_inplace(&mut y);
            }
            inputs.push(h);
            h = y;
        }
        Ok((h, MlpCache { inputs }))
    }

    /// Smallest |pre-activation| of any hidden unit for input `x`; tiny values sit near a ReLU kink.
    pub fn kink_margin(&self, x: &Tensor) -> Result<f64> {
        let (_, cache) = self.forward(x)?;
        let mut margin = f64::INFINITY;
        for (l, layer) in self.layers.iter().enumerate().take(self.layers.len() - 1) {
            let y = layer.forward(&cache.inputs[l])?;
            margin = y.data().iter().fold(margin, |m, v| m.min(v.abs()));
        }
        Ok(margin)
    }

    pub fn backward(&mut self, cache: &MlpCache, dy: &Tensor) -> Tensor {
        let mut d = dy.clone();
        for l in (0..self.layers.len()).rev() {
            if l < self.layers.len() - 1 {
                // ReLU mask from this layer's output, which is the next layer's input.
                for (g, a) in d.data_mut().iter_mut().zip(cache.inputs[l + 1].data()) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            d = self.layers[l].backward(&cache.inputs[l], &d);
        }
        d
    }
}

impl Module for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Forward pass through a sequence of layers with ReLU hidden activations.
pub fn mlp_forward(layers: &[Linear], x: &Tensor) -> Result<Tensor> {
    let mlp = Mlp::from_layers("mlp", layers.to_vec());
    Ok(mlp.forward(x)?.0)
}

fn relu_inplace(t: &mut Tensor) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Row-wise layer normalization with learnable gain and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Param,
    pub shift: Param,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normed: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        let mut g = Tensor::zeros(&[dim]);
        g.fill(1.0);
        Self { gain: Param::new(g), shift: Param::new(Tensor::zeros(&[dim])), eps: 1e-5 }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        let d = self.gain.value.len();
        if x.cols() != d {
            return Err(dim_err("layer norm", format!("width {d}"), x.cols()));
        }
        let n = x.rows();
        let mut normed = Tensor::zeros(&[n, d]);
        let mut out = Tensor::zeros(&[n, d]);
        let mut inv_std = Vec::with_capacity(n);
        let (g, b) = (self.gain.value.data(), self.shift.value.data());
        for i in 0..n {
            let r = x.row(i);
            let mean = r.iter().sum::<f64>() / d as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std.push(is);
            let nr = normed.row_mut(i);
            for j in 0..d {
                nr[j] = (r[j] - mean) * is;
            }
            let or = out.row_mut(i);
            for j in 0..d {
                or[j] = nr[j] * g[j] + b[j];
            }
        }
        Ok((out, LayerNormCache { normed, inv_std }))
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Tensor) -> Tensor {
        let d = self.gain.value.len();
        let n = dy.rows();
        let mut dx = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let dyr = dy.row(i);
            let nr = cache.normed.row(i);
            {
                let gg = self.gain.grad.data_mut();
                for j in 0..d {
                    gg[j] += dyr[j] * nr[j];
                }
            }
            {
                let gs = self.shift.grad.data_mut();
                for j in 0..d {
                    gs[j] += dyr[j];
                }
            }
            let g = self.gain.value.data();
            let dn: Vec<f64> = (0..d).map(|j| dyr[j] * g[j]).collect();
            let mean_dn = dn.iter().sum::<f64>() / d as f64;
            let mean_dn_n = dn.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let is = cache.inv_std[i];
            let dxr = dx.row_mut(i);
            for j in 0..d {
                dxr[j] = is * (dn[j] - mean_dn - nr[j] * mean_dn_n);
            }
        }
        dx
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gain"), &self.gain);
        f(&join(prefix, "shift"), &self.shift);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gain"), &mut self.gain);
        f(&join(prefix, "shift"), &mut self.shift);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;

    #[test]
    fn identity_layer_passes_input() {
        let l = Linear::identity(2);
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let y = mlp_forward(&[l], &x).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn bias_only_layer() {
        let l = Linear::from_parts(Tensor::zeros(&[1, 2]), Tensor::from_vec(&[1], vec![3.0]).unwrap()).unwrap();
        let x = Tensor::from_rows(&[vec![-7.0, 11.0]]).unwrap();
        assert_eq!(mlp_forward(&[l], &x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn width_mismatch_names_layer() {
        let mut rng = seeded_rng(1);
        let m = Mlp::new(&mut rng, "enc", &[3, 4, 2]);
        let err = m.forward(&Tensor::zeros(&[1, 2])).unwrap_err().to_string();
        assert!(err.contains("mlp `enc` layer 0"), "{err}");
    }

    #[test]
    fn two_layer_matches_naive_loops() {
        let mut rng = seeded_rng(7);
        let m = Mlp::new(&mut rng, "m", &[3, 5, 2]);
        let x = [0.3, -1.2, 0.7];
        let y = m.forward(&Tensor::from_vec(&[1, 3], x.to_vec()).unwrap()).unwrap().0;

        // naive oracle
        let mut h = x.to_vec();
        for (l, layer) in m.layers.iter().enumerate() {
            let w = layer.weight.value.data();
            let b = layer.bias.as_ref().unwrap().value.data();
            let (o, i) = (layer.output_dim(), layer.input_dim());
            let mut next = vec![0.0; o];
            for r in 0..o {
                let mut s = b[r];
                for c in 0..i {
                    s += w[r * i + c] * h[c];
                }
                next[r] = if l + 1 < m.layers.len() { s.max(0.0) } else { s };
            }
            h = next;
        }
        for (a, b) in y.data().iter().zip(&h) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let ln = LayerNorm::new(4);
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let (y, _) = ln.forward(&x).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
    }
}
