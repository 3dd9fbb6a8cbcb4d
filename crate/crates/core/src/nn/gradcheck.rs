//! Finite-difference verification of analytic gradients with the fourth-order
//! central stencil `(8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h`.

use super::layers::Module;
use crate::error::{Error, Result};

/// Step `h` of the stencil.
pub const FD_STEP: f64 = 1e-4;

/// A scalar objective over a module's parameters with an analytic gradient.
pub trait GradCheck: Module {
    fn objective(&self) -> Result<f64>;
    /// Writes `d objective / d param` into the parameter gradients (which start zeroed).
    fn backprop(&mut self) -> Result<()>;
}

fn set_element<M: Module + ?Sized>(m: &mut M, tensor: usize, elem: usize, value: f64) -> f64 {
    let mut k = 0;
    let mut old = 0.0;
    m.visit_mut("", &mut |_, p| {
        if k == tensor {
            old = p.value.data()[elem];
            p.value.data_mut()[elem] = value;
        }
        k += 1;
    });
    old
}

/// Max relative error `|a - n| / max(|a|, |n|, 1e-8)` over every parameter element.
pub fn grad_check<G: GradCheck>(layer: &mut G, h: f64) -> Result<f64> {
    grad_check_strided(layer, h, 1)
}

/// Like [`grad_check`] but only probes every `stride`-th element of each tensor.
pub fn grad_check_strided<G: GradCheck>(layer: &mut G, h: f64, stride: usize) -> Result<f64> {
    grad_check_steps(layer, &[h], stride)
}

/// Scores each element by its best agreement over several step sizes. Deep
/// piecewise-linear stacks put kinks within reach of a large step while a
/// small one drowns in rounding noise; a correct gradient matches at least one.
pub fn grad_check_steps<G: GradCheck>(layer: &mut G, steps: &[f64], stride: usize) -> Result<f64> {
    layer.zero_grad();
    layer.backprop()?;
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    layer.visit("", &mut |_, p| analytic.push(p.grad.data().to_vec()));
    let mut worst: f64 = 0.0;
    for (t, grads) in analytic.iter().enumerate() {
        for e in (0..grads.len()).step_by(stride.max(1)) {
            let a = grads[e];
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("analytic gradient of tensor {t}")));
            }
            let mut best = f64::INFINITY;
            for &h in steps {
                let n = stencil(layer, t, e, h)?;
                best = best.min((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
            }
            worst = worst.max(best);
        }
    }
    Ok(worst)
}

fn stencil<G: GradCheck>(layer: &mut G, t: usize, e: usize, h: f64) -> Result<f64> {
    let orig = set_element(layer, t, e, 0.0);
    let mut f = [0.0; 4];
    for (slot, off) in f.iter_mut().zip([h, -h, 2.0 * h, -2.0 * h]) {
        set_element(layer, t, e, orig + off);
        match layer.objective() {
            Ok(v) => *slot = v,
            Err(err) => {
                set_element(layer, t, e, orig);
                return Err(err);
            }
        }
    }
    set_element(layer, t, e, orig);
    let n = (8.0 * (f[0] - f[1]) - (f[2] - f[3])) / (12.0 * h);
    if !n.is_finite() {
        return Err(Error::NonFinite(format!("numeric gradient of tensor {t}")));
    }
    Ok(n)
}
