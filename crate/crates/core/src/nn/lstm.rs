//! LSTM cell with explicit backpropagation through time.
//!
//! Gate layout in the stacked weight matrices is `[input, forget, candidate, output]`.

use super::layers::{join, xavier_uniform, Module, Param};
use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt, Tensor};
use super::Rng;
use crate::error::{dim_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `[4H, in]`
    pub w_input: Param,
    /// `[4H, H]`
    pub w_hidden: Param,
    /// `[4H]`
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    /// Activated gates `[n, 4H]`.
    gates: Tensor,
    c: Tensor,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LstmCell {
    pub fn new(rng: &mut Rng, input: usize, hidden: usize) -> Self {
        let g = 4 * hidden;
        let wi = xavier_uniform(rng, input, hidden, g * input);
        let wh = xavier_uniform(rng, hidden, hidden, g * hidden);
        let mut b = vec![0.0; g];
        // forget-gate bias starts at 1 so early training keeps cell state
        for v in &mut b[hidden..2 * hidden] {
            *v = 1.0;
        }
        Self {
            w_input: Param::new(Tensor::from_vec(&[g, input], wi).expect("shape")),
            w_hidden: Param::new(Tensor::from_vec(&[g, hidden], wh).expect("shape")),
            bias: Param::new(Tensor::from_vec(&[g], b).expect("shape")),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_input: Param::new(Tensor::zeros(&[4 * hidden, input])),
            w_hidden: Param::new(Tensor::zeros(&[4 * hidden, hidden])),
            bias: Param::new(Tensor::zeros(&[4 * hidden])),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.value.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.value.cols()
    }

    pub fn step(&self, x: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor, LstmStepCache)> {
        let hd = self.hidden();
        let din = self.input_dim();
        let n = x.rows();
        if x.cols() != din {
            return Err(dim_err("lstm input", din, x.cols()));
        }
        if h_prev.cols() != hd || c_prev.cols() != hd || h_prev.rows() != n || c_prev.rows() != n {
            return Err(dim_err(
                "lstm state",
                format!("[{n}, {hd}]"),
                format!("{:?} / {:?}", h_prev.shape(), c_prev.shape()),
            ));
        }
        let g4 = 4 * hd;
        let mut z = Tensor::zeros(&[n, g4]);
        matmul_bt(x.data(), self.w_input.value.data(), n, din, g4, z.data_mut());
        let mut zh = vec![0.0; n * g4];
        matmul_bt(h_prev.data(), self.w_hidden.value.data(), n, hd, g4, &mut zh);
        let b = self.bias.value.data();
        let mut c = Tensor::zeros(&[n, hd]);
        let mut h = Tensor::zeros(&[n, hd]);
        for r in 0..n {
            let zr = z.row_mut(r);
            for j in 0..g4 {
                zr[j] += zh[r * g4 + j] + b[j];
            }
            for j in 0..hd {
                zr[j] = sigmoid(zr[j]);
                zr[hd + j] = sigmoid(zr[hd + j]);
                zr[2 * hd + j] = zr[2 * hd + j].tanh();
                zr[3 * hd + j] = sigmoid(zr[3 * hd + j]);
            }
            let cp = c_prev.row(r);
            let zr = z.row(r);
            let cr = c.row_mut(r);
            for j in 0..hd {
                cr[j] = zr[hd + j] * cp[j] + zr[j] * zr[2 * hd + j];
            }
            let cr = c.row(r).to_vec();
            let hr = h.row_mut(r);
            for j in 0..hd {
                hr[j] = zr[3 * hd + j] * cr[j].tanh();
            }
        }
        let cache =
            LstmStepCache { x: x.clone(), h_prev: h_prev.clone(), c_prev: c_prev.clone(), gates: z, c: c.clone() };
        Ok((h, c, cache))
    }

    /// Returns `(dx, dh_prev, dc_prev)` and accumulates parameter gradients.
    pub fn step_backward(&mut self, cache: &LstmStepCache, dh: &Tensor, dc: &Tensor) -> (Tensor, Tensor, Tensor) {
        let hd = self.hidden();
        let din = self.input_dim();
        let n = dh.rows();
        let g4 = 4 * hd;
        let mut dz = Tensor::zeros(&[n, g4]);
        let mut dc_prev = Tensor::zeros(&[n, hd]);
        for r in 0..n {
            let gr = cache.gates.row(r);
            let cr = cache.c.row(r);
            let cp = cache.c_prev.row(r);
            let (dhr, dcr) = (dh.row(r), dc.row(r));
            let mut dzr = vec![0.0; g4];
            let mut dcp = vec![0.0; hd];
            for j in 0..hd {
                let (i, f, g, o) = (gr[j], gr[hd + j], gr[2 * hd + j], gr[3 * hd + j]);
                let tc = cr[j].tanh();
                let d_o = dhr[j] * tc;
                let dct = dcr[j] + dhr[j] * o * (1.0 - tc * tc);
                dzr[j] = dct * g * i * (1.0 - i);
                dzr[hd + j] = dct * cp[j] * f * (1.0 - f);
                dzr[2 * hd + j] = dct * i * (1.0 - g * g);
                dzr[3 * hd + j] = d_o * o * (1.0 - o);
                dcp[j] = dct * f;
            }
            dz.row_mut(r).copy_from_slice(&dzr);
            dc_prev.row_mut(r).copy_from_slice(&dcp);
        }
        matmul_at_acc(dz.data(), cache.x.data(), n, g4, din, self.w_input.grad.data_mut());
        matmul_at_acc(dz.data(), cache.h_prev.data(), n, g4, hd, self.w_hidden.grad.data_mut());
        let gb = self.bias.grad.data_mut();
        for r in 0..n {
            for (g, d) in gb.iter_mut().zip(dz.row(r)) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(&[n, din]);
        matmul_acc(dz.data(), self.w_input.value.data(), n, g4, din, dx.data_mut());
        let mut dh_prev = Tensor::zeros(&[n, hd]);
        matmul_acc(dz.data(), self.w_hidden.value.data(), n, g4, hd, dh_prev.data_mut());
        (dx, dh_prev, dc_prev)
    }

    /// Runs the cell over `steps` (each `[n, in]`) from zero state; returns the final hidden state.
    pub fn encode(&self, steps: &[Tensor]) -> Result<(Tensor, Vec<LstmStepCache>)> {
        let hd = self.hidden();
        let n = steps.first().map_or(0, Tensor::rows);
        let mut h = Tensor::zeros(&[n, hd]);
        let mut c = Tensor::zeros(&[n, hd]);
        let mut caches = Vec::with_capacity(steps.len());
        for x in steps {
            let (h2, c2, cache) = self.step(x, &h, &c)?;
            h = h2;
            c = c2;
            caches.push(cache);
        }
        Ok((h, caches))
    }

    /// Backpropagates a gradient on the final hidden state through all steps.
    pub fn encode_backward(&mut self, caches: &[LstmStepCache], dh_final: &Tensor) -> Vec<Tensor> {
        let mut dh = dh_final.clone();
        let mut dc = Tensor::zeros(dh.shape());
        let mut dxs = vec![Tensor::zeros(&[0]); caches.len()];
        for (t, cache) in caches.iter().enumerate().rev() {
            let (dx, dhp, dcp) = self.step_backward(cache, &dh, &dc);
            dxs[t] = dx;
            dh = dhp;
            dc = dcp;
        }
        dxs
    }
}

impl Module for LstmCell {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "w_input"), &self.w_input);
        f(&join(prefix, "w_hidden"), &self.w_hidden);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "w_input"), &mut self.w_input);
        f(&join(prefix, "w_hidden"), &mut self.w_hidden);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Single LSTM step returning the new `(h, c)`.
pub fn lstm_step(cell: &LstmCell, x: &Tensor, h_prev: &Tensor, c_prev: &Tensor) -> Result<(Tensor, Tensor)> {
    let (h, c, _) = cell.step(x, h_prev, c_prev)?;
    Ok((h, c))
}
