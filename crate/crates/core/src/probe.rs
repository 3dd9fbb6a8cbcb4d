//! Finite-difference probes for the intention module, the decoder and the
//! assembled model, in the style of [`crate::nn::probe`].

use rand::Rng as _;

use crate::error::Result;
use crate::geometry::Vec2;
use crate::intention::{Anchor, DecoderConfig, DecoderParams, IntentionConfig, IntentionParams, JointPrediction};
use crate::interaction::{InteractionConfig, SceneInputs};
use crate::model::{anchors, Model, ModelConfig, OutputGrads};
use crate::nn::probe::{project, random_tensor};
use crate::nn::{join, seeded_rng, GradCheck, Module, Param, Tensor};
use crate::scene::{generate_scenario, Template};

/// Positions minus their anchors. The anchors carry no parameters, and
/// leaving them out keeps |f| small, which keeps the stencil's rounding error
/// small too.
fn displacements(jp: &JointPrediction, anchors: &[Anchor]) -> Tensor {
    let (n, t) = (jp.num_agents(), jp.horizon());
    let mut out = jp.trajectories.clone();
    for (idx, v) in out.data_mut().iter_mut().enumerate() {
        let a = anchors[(idx / (2 * t)) % n].position;
        *v -= if idx % 2 == 0 { a.x } else { a.y };
    }
    out
}

/// Objective `w_z·Z + w_la·P_la + w_lo·P_lo` over the intention module.
pub struct IntentionProbe {
    pub params: IntentionParams,
    pub input: Param,
    pub wz: Tensor,
    pub wlat: Tensor,
    pub wlon: Tensor,
}

impl IntentionProbe {
    pub fn random(seed: u64, dim: usize, rows: usize) -> Self {
        let mut rng = seeded_rng(seed);
        let cfg = IntentionConfig { class_embed_dim: 3, feature_dim: 4, ..IntentionConfig::default() };
        let params = IntentionParams::new(&mut rng, dim, &cfg);
        let input = Param::new(random_tensor(&mut rng, &[rows, dim], 1.0));
        Self {
            params,
            input,
            wz: random_tensor(&mut rng, &[rows, cfg.feature_dim], 1.0),
            wlat: random_tensor(&mut rng, &[rows, 3], 1.0),
            wlon: random_tensor(&mut rng, &[rows, 3], 1.0),
        }
    }

    /// Distance of the nearest hidden unit from its ReLU kink.
    pub fn kink_margin(&self) -> Result<f64> {
        let p = &self.params;
        let x = &self.input.value;
        let mut m = [&p.lateral_head, &p.longitudinal_head, &p.lateral_embed, &p.longitudinal_embed]
            .iter()
            .map(|mlp| mlp.kink_margin(x))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let c = p.forward(x)?;
        let de = p.class_embed_dim();
        let mut fused = Tensor::zeros(&[x.rows(), 2 * de]);
        let (e_la, e_lo) = (p.lateral_embed.forward(x)?.0, p.longitudinal_embed.forward(x)?.0);
        for i in 0..x.rows() {
            for cls in 0..3 {
                for k in 0..de {
                    fused.row_mut(i)[k] += c.lat_probs.row(i)[cls] * e_la.row(i)[cls * de + k];
                    fused.row_mut(i)[de + k] += c.lon_probs.row(i)[cls] * e_lo.row(i)[cls * de + k];
                }
            }
        }
        m = m.min(p.fuse.kink_margin(&fused)?);
        Ok(m)
    }
}

impl Module for IntentionProbe {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.params.visit(&join(prefix, "intention"), f);
        f(&join(prefix, "input"), &self.input);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.params.visit_mut(&join(prefix, "intention"), f);
        f(&join(prefix, "input"), &mut self.input);
    }
}

impl GradCheck for IntentionProbe {
    fn objective(&self) -> Result<f64> {
        let c = self.params.forward(&self.input.value)?;
        Ok(project(&c.z, &self.wz) + project(&c.lat_probs, &self.wlat) + project(&c.lon_probs, &self.wlon))
    }
    fn backprop(&mut self) -> Result<()> {
        let c = self.params.forward(&self.input.value)?;
        let dx = self.params.backward(&c, &self.wz, &self.wlat, &self.wlon);
        self.input.grad.add_assign(&dx);
        Ok(())
    }
}

/// Objective `w_traj·Y + w_p·p` over the decoder.
pub struct DecoderProbe {
    pub params: DecoderParams,
    pub input: Param,
    pub anchors: Vec<Anchor>,
    pub wtraj: Tensor,
    pub wprob: Vec<f64>,
}

impl DecoderProbe {
    pub fn random(seed: u64, dim: usize, rows: usize, modes: usize, horizon: usize) -> Self {
        let mut rng = seeded_rng(seed);
        let cfg = DecoderConfig { modes, hidden: 6, prob_hidden: 5 };
        let params = DecoderParams::new(&mut rng, dim, horizon, &cfg);
        let input = Param::new(random_tensor(&mut rng, &[rows, dim], 1.0));
        let anchors = (0..rows)
            .map(|_| Anchor {
                position: Vec2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)),
                yaw: rng.gen_range(-3.0..3.0),
            })
            .collect();
        Self {
            params,
            input,
            anchors,
            wtraj: random_tensor(&mut rng, &[modes, rows, horizon, 2], 1.0),
            wprob: random_tensor(&mut rng, &[modes], 1.0).into_data(),
        }
    }

    /// Smallest distance from a ReLU kink or from a tie in the max-pool.
    pub fn kink_margin(&self) -> Result<f64> {
        let x = &self.input.value;
        let mut m = self.params.trajectory_head.kink_margin(x)?;
        let mut pooled = Tensor::zeros(&[1, x.cols()]);
        for c in 0..x.cols() {
            let mut col: Vec<f64> = (0..x.rows()).map(|i| x.row(i)[c]).collect();
            col.sort_by(|a, b| b.total_cmp(a));
            pooled.data_mut()[c] = col[0];
            if col.len() > 1 {
                m = m.min(col[0] - col[1]);
            }
        }
        Ok(m.min(self.params.probability_head.kink_margin(&pooled)?))
    }
}

impl Module for DecoderProbe {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.params.visit(&join(prefix, "decoder"), f);
        f(&join(prefix, "input"), &self.input);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.params.visit_mut(&join(prefix, "decoder"), f);
        f(&join(prefix, "input"), &mut self.input);
    }
}

impl GradCheck for DecoderProbe {
    fn objective(&self) -> Result<f64> {
        let (jp, _) = self.params.forward(&self.input.value, &self.anchors)?;
        let p: f64 = jp.mode_probs.iter().zip(&self.wprob).map(|(a, b)| a * b).sum();
        Ok(project(&displacements(&jp, &self.anchors), &self.wtraj) + p)
    }
    fn backprop(&mut self) -> Result<()> {
        let (_, cache) = self.params.forward(&self.input.value, &self.anchors)?;
        let dx = self.params.backward(&cache, &self.wtraj, &self.wprob);
        self.input.grad.add_assign(&dx);
        Ok(())
    }
}

/// Random projection of every model output, on a generated scene.
pub struct ModelProbe {
    pub model: Model,
    pub inputs: SceneInputs,
    pub anchors: Vec<Anchor>,
    pub grads: OutputGrads,
}

impl ModelProbe {
    pub fn random(seed: u64) -> Self {
        let cfg = ModelConfig {
            interaction: InteractionConfig {
                embed_dim: 4,
                attention_heads: 2,
                agent_layers: 1,
                ..InteractionConfig::default()
            },
            intention: IntentionConfig { class_embed_dim: 2, feature_dim: 3, ..IntentionConfig::default() },
            decoder: DecoderConfig { modes: 2, hidden: 4, prob_hidden: 3 },
            horizon: 3,
        };
        let template = Template::ALL[seed as usize % Template::ALL.len()];
        let mut scn = generate_scenario(template, 3, seed);
        for a in &mut scn.agents {
            a.states.drain(..a.states.len() - 3);
        }
        scn.horizon_past = 3;
        let model = Model::new(cfg, seed).expect("valid probe config");
        let inputs = SceneInputs::new(&scn, &cfg.interaction);
        let mut rng = seeded_rng(seed ^ 0x5eed);
        let n = scn.num_agents();
        let grads = OutputGrads {
            trajectories: Some(random_tensor(&mut rng, &[2, n, 3, 2], 1.0)),
            mode_probs: Some(random_tensor(&mut rng, &[2], 1.0).into_data()),
            lateral: Some(random_tensor(&mut rng, &[n, 3], 1.0)),
            longitudinal: Some(random_tensor(&mut rng, &[n, 3], 1.0)),
        };
        Self { model, anchors: anchors(&scn), inputs, grads }
    }
}

impl Module for ModelProbe {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.model.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.model.visit_mut(prefix, f);
    }
}

impl GradCheck for ModelProbe {
    fn objective(&self) -> Result<f64> {
        let (out, _) = self.model.forward_inputs(&self.inputs, &self.anchors)?;
        let g = &self.grads;
        let lat = Tensor::from_rows(&out.intentions.iter().map(|d| d.lateral.to_vec()).collect::<Vec<_>>())?;
        let lon = Tensor::from_rows(&out.intentions.iter().map(|d| d.longitudinal.to_vec()).collect::<Vec<_>>())?;
        let p: f64 = out.prediction.mode_probs.iter().zip(g.mode_probs.as_ref().unwrap()).map(|(a, b)| a * b).sum();
        Ok(project(&displacements(&out.prediction, &self.anchors), g.trajectories.as_ref().unwrap())
            + p
            + project(&lat, g.lateral.as_ref().unwrap())
            + project(&lon, g.longitudinal.as_ref().unwrap()))
    }
    fn backprop(&mut self) -> Result<()> {
        let (_, cache) = self.model.forward_inputs(&self.inputs, &self.anchors)?;
        self.model.backward(&cache, &self.grads);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, grad_check_steps, FD_STEP};

    #[test]
    fn intention_and_decoder_gradients() {
        for seed in 0..100 {
            let mut p = IntentionProbe::random(seed, 4, 3);
            if p.kink_margin().unwrap() > 1e-3 {
                assert!(grad_check(&mut p, FD_STEP).unwrap() < 1e-5, "intention seed {seed}");
            }
            let mut p = DecoderProbe::random(seed, 4, 3, 2, 3);
            if p.kink_margin().unwrap() > 1e-3 {
                assert!(grad_check(&mut p, FD_STEP).unwrap() < 1e-5, "decoder seed {seed}");
            }
        }
    }

    /// Composition of the backward passes; per-layer accuracy is pinned by the layer probes.
    #[test]
    fn model_gradients() {
        for seed in 0..20 {
            let mut p = ModelProbe::random(seed);
            let err = grad_check_steps(&mut p, &[1e-3, 1e-5], 1).unwrap();
            assert!(err < 1e-3, "model seed {seed}: {err}");
        }
    }
}
