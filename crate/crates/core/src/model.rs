//! The full predictor: interaction encoder, intention module and joint decoder.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::intention::{
    Anchor, DecoderCache, DecoderConfig, DecoderParams, IntentionCache, IntentionConfig, IntentionDistribution,
    IntentionParams, JointPrediction,
};
use crate::interaction::{InteractionCache, InteractionConfig, InteractionParams, SceneInputs};
use crate::nn::{join, seeded_rng, Checkpoint, Module, Param, Tensor};
use crate::scene::{Scenario, DEFAULT_HORIZON_FUTURE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub interaction: InteractionConfig,
    pub intention: IntentionConfig,
    pub decoder: DecoderConfig,
    /// Predicted steps `T`.
    pub horizon: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            interaction: InteractionConfig::default(),
            intention: IntentionConfig::default(),
            decoder: DecoderConfig::default(),
            horizon: DEFAULT_HORIZON_FUTURE,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.interaction.validate()?;
        let i = &self.intention;
        if i.class_embed_dim == 0 || i.feature_dim == 0 || i.speed_window == 0 {
            return Err(Error::InvalidArgument("intention widths and speed_window must be positive".into()));
        }
        if self.decoder.modes == 0 || self.decoder.hidden == 0 || self.decoder.prob_hidden == 0 {
            return Err(Error::InvalidArgument("decoder modes and widths must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub interaction: InteractionParams,
    pub intention: IntentionParams,
    pub decoder: DecoderParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub prediction: JointPrediction,
    pub intentions: Vec<IntentionDistribution>,
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    interaction: InteractionCache,
    intention: IntentionCache,
    decoder: DecoderCache,
}

/// Upstream gradients for [`Model::backward`]; `None` means zero.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    /// `[K, N, T, 2]`
    pub trajectories: Option<Tensor>,
    pub mode_probs: Option<Vec<f64>>,
    /// `[N, 3]`
    pub lateral: Option<Tensor>,
    pub longitudinal: Option<Tensor>,
}

/// Each agent's last observed pose.
pub fn anchors(scn: &Scenario) -> Vec<Anchor> {
    scn.agents
        .iter()
        .map(|a| {
            let s = a.states.last().expect("validated scenario has states");
            Anchor { position: s.position(), yaw: s.yaw }
        })
        .collect()
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let interaction = InteractionParams::new(&mut rng, &config.interaction);
        let d = config.interaction.embed_dim;
        let intention = IntentionParams::new(&mut rng, d, &config.intention);
        let decoder = DecoderParams::new(&mut rng, d + config.intention.feature_dim, config.horizon, &config.decoder);
        Ok(Self { config, interaction, intention, decoder })
    }

    pub fn forward(&self, scn: &Scenario) -> Result<(ModelOutput, ModelCache)> {
        self.forward_inputs(&SceneInputs::new(scn, &self.config.interaction), &anchors(scn))
    }

    pub fn forward_inputs(&self, inputs: &SceneInputs, anchors: &[Anchor]) -> Result<(ModelOutput, ModelCache)> {
        let (features, interaction) = self.interaction.forward(inputs)?;
        let intention = self.intention.forward(&features)?;
        let u = Tensor::concat_cols(&features, &intention.z)?;
        let (prediction, decoder) = self.decoder.forward(&u, anchors)?;
        if !prediction.trajectories.is_finite() || prediction.mode_probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("joint prediction".into()));
        }
        Ok((
            ModelOutput { prediction, intentions: intention.distributions() },
            ModelCache { interaction, intention, decoder },
        ))
    }

    pub fn predict(&self, scn: &Scenario) -> Result<ModelOutput> {
        Ok(self.forward(scn)?.0)
    }

    /// Accumulates parameter gradients.
    pub fn backward(&mut self, cache: &ModelCache, grads: &OutputGrads) {
        let dc = &cache.decoder;
        let traj_shape = [self.decoder.modes, cache.intention.z.rows(), self.decoder.horizon, 2];
        let n = cache.intention.z.rows();
        let dtraj = grads.trajectories.clone().unwrap_or_else(|| Tensor::zeros(&traj_shape));
        let dprobs = grads.mode_probs.clone().unwrap_or_else(|| vec![0.0; self.decoder.modes]);
        let du = self.decoder.backward(dc, &dtraj, &dprobs);
        let (mut dfeat, dz) = du.split_cols(self.config.interaction.embed_dim);
        let zero = Tensor::zeros(&[n, 3]);
        let dlat = grads.lateral.as_ref().unwrap_or(&zero);
        let dlon = grads.longitudinal.as_ref().unwrap_or(&zero);
        dfeat.add_assign(&self.intention.backward(&cache.intention, &dz, dlat, dlon));
        self.interaction.backward(&cache.interaction, &dfeat);
    }

    /// Accumulates gradients from `dtraj` into the decoder only; nothing
    /// reaches the intention or interaction modules.
    pub fn backward_decoder(&mut self, cache: &ModelCache, dtraj: &Tensor) {
        let zero = vec![0.0; self.decoder.modes];
        self.decoder.backward(&cache.decoder, dtraj, &zero);
    }

    pub fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.value.len());
        n
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint> {
        let metadata = serde_json::json!({ "model": self.config, "extra": extra });
        Ok(Checkpoint::capture(self, metadata))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = ckpt
            .metadata
            .get("model")
            .ok_or_else(|| Error::Checkpoint("metadata lacks the model configuration".into()))?;
        let config: ModelConfig =
            serde_json::from_value(cfg.clone()).map_err(|e| Error::Checkpoint(format!("model configuration: {e}")))?;
        let mut model = Self::new(config, 0)?;
        ckpt.restore(&mut model)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        self.to_checkpoint(extra)?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl Module for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.interaction.visit(&join(prefix, "interaction"), f);
        self.intention.visit(&join(prefix, "intention"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.interaction.visit_mut(&join(prefix, "interaction"), f);
        self.intention.visit_mut(&join(prefix, "intention"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

/// Lateral probabilities keyed by class code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LateralProbs {
    #[serde(rename = "LT")]
    pub left: f64,
    #[serde(rename = "ST")]
    pub straight: f64,
    #[serde(rename = "RT")]
    pub right: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongitudinalProbs {
    #[serde(rename = "ACC")]
    pub accelerate: f64,
    #[serde(rename = "DEC")]
    pub decelerate: f64,
    #[serde(rename = "CON")]
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentIntentionRecord {
    pub id: u32,
    pub lateral: LateralProbs,
    pub longitudinal: LongitudinalProbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentPathRecord {
    pub id: u32,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeRecord {
    pub k: usize,
    pub p: f64,
    pub agents: Vec<AgentPathRecord>,
}

/// Serialized prediction for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub scenario_id: String,
    pub modes: Vec<ModeRecord>,
    pub intentions: Vec<AgentIntentionRecord>,
}

impl PredictionRecord {
    pub fn new(scn: &Scenario, out: &ModelOutput) -> Result<Self> {
        let jp = &out.prediction;
        if jp.num_agents() != scn.num_agents() || out.intentions.len() != scn.num_agents() {
            return Err(crate::error::dim_err("prediction agents", scn.num_agents(), jp.num_agents()));
        }
        let modes = (0..jp.num_modes())
            .map(|k| ModeRecord {
                k,
                p: jp.mode_probs[k],
                agents: scn
                    .agents
                    .iter()
                    .enumerate()
                    .map(|(i, a)| AgentPathRecord {
                        id: a.id,
                        points: jp.agent_path(k, i).iter().map(|p| [p.x, p.y]).collect(),
                    })
                    .collect(),
            })
            .collect();
        let intentions = scn
            .agents
            .iter()
            .zip(&out.intentions)
            .map(|(a, d)| AgentIntentionRecord {
                id: a.id,
                lateral: LateralProbs { left: d.lateral[0], straight: d.lateral[1], right: d.lateral[2] },
                longitudinal: LongitudinalProbs {
                    accelerate: d.longitudinal[0],
                    decelerate: d.longitudinal[1],
                    constant: d.longitudinal[2],
                },
            })
            .collect();
        Ok(Self { scenario_id: scn.id.clone(), modes, intentions })
    }

    /// Rebuilds the joint prediction with agents in the order of `scn`.
    pub fn joint_prediction(&self, scn: &Scenario) -> Result<JointPrediction> {
        let mut modes = Vec::with_capacity(self.modes.len());
        let mut probs = Vec::with_capacity(self.modes.len());
        for m in &self.modes {
            let mut agents = Vec::with_capacity(scn.num_agents());
            for a in &scn.agents {
                let rec = m.agents.iter().find(|r| r.id == a.id).ok_or(Error::UnknownAgent(a.id))?;
                agents.push(rec.points.iter().map(|p| Vec2::new(p[0], p[1])).collect());
            }
            modes.push(agents);
            probs.push(m.p);
        }
        JointPrediction::from_points(&modes, probs)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Schema { path: e.path().to_string(), message: e.inner().to_string() })
    }

    /// Rows `scenario_id, agent_id, mode_k, t, x, y, p_k`; `t` counts from 1.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for m in &self.modes {
            for a in &m.agents {
                for (t, p) in a.points.iter().enumerate() {
                    w.serialize((&self.scenario_id, a.id, m.k, t + 1, p[0], p[1], m.p))?;
                }
            }
        }
        Ok(())
    }
}

pub const PREDICTION_CSV_HEADER: [&str; 7] = ["scenario_id", "agent_id", "mode_k", "t", "x", "y", "p_k"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scenario, Template};

    pub(crate) fn tiny_config(horizon: usize) -> ModelConfig {
        ModelConfig {
            interaction: InteractionConfig { embed_dim: 8, attention_heads: 2, ..InteractionConfig::default() },
            intention: IntentionConfig { class_embed_dim: 4, feature_dim: 4, ..IntentionConfig::default() },
            decoder: DecoderConfig { modes: 3, hidden: 8, prob_hidden: 8 },
            horizon,
        }
    }

    #[test]
    fn shapes_and_start_points() {
        let scn = generate_scenario(Template::LeftTurn, 3, 5);
        let model = Model::new(tiny_config(7), 1).unwrap();
        let out = model.predict(&scn).unwrap();
        let jp = &out.prediction;
        assert_eq!(jp.trajectories.shape(), &[3, scn.num_agents(), 7, 2]);
        assert!((jp.mode_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(out.intentions.len(), scn.num_agents());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let scn = generate_scenario(Template::Merge, 3, 2);
        let model = Model::new(tiny_config(5), 9).unwrap();
        let text = model.to_checkpoint(serde_json::json!({"epoch": 3})).unwrap().to_json().unwrap();
        let back = Model::from_checkpoint(&Checkpoint::from_json(&text).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.predict(&scn).unwrap(), model.predict(&scn).unwrap());
    }

    #[test]
    fn prediction_record_round_trip() {
        let scn = generate_scenario(Template::CrossingConflict, 3, 3);
        let model = Model::new(tiny_config(4), 2).unwrap();
        let out = model.predict(&scn).unwrap();
        let rec = PredictionRecord::new(&scn, &out).unwrap();
        let back = PredictionRecord::from_json(&rec.to_json_pretty().unwrap()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.joint_prediction(&scn).unwrap(), out.prediction);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(PREDICTION_CSV_HEADER).unwrap();
        rec.write_csv(&mut w).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * scn.num_agents() * 4);
        assert!(text.lines().nth(1).unwrap().starts_with(&format!("{},{},0,1,", scn.id, scn.agents[0].id)));
    }

    #[test]
    fn prediction_is_equivariant_under_rigid_motion() {
        let scn = generate_scenario(Template::RightTurn, 3, 8);
        let model = Model::new(tiny_config(6), 4).unwrap();
        let tf = crate::geometry::RigidTransform::new(0.9, Vec2::new(12.0, -40.0));
        let a = model.predict(&scn).unwrap().prediction;
        let b = model.predict(&scn.transformed(&tf)).unwrap().prediction;
        for k in 0..a.num_modes() {
            assert!((a.mode_probs[k] - b.mode_probs[k]).abs() < 1e-9);
            for i in 0..a.num_agents() {
                for t in 0..a.horizon() {
                    assert!((tf.point(a.point(k, i, t)) - b.point(k, i, t)).norm() < 1e-8);
                }
            }
        }
    }
}
