//! Intention heads, the fused intention feature, the joint trajectory decoder
//! and ground-truth intention labels.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::nn::{
    join, softmax_backward, softmax_rows, softmax_rows_backward, Mlp, MlpCache, Module, Param, Rng, Tensor,
};
use crate::scene::StateRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lateral {
    #[serde(rename = "LT")]
    LeftTurn,
    #[serde(rename = "ST")]
    Straight,
    #[serde(rename = "RT")]
    RightTurn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Longitudinal {
    #[serde(rename = "ACC")]
    Accelerate,
    #[serde(rename = "DEC")]
    Decelerate,
    #[serde(rename = "CON")]
    Constant,
}

impl Lateral {
    pub const ALL: [Lateral; 3] = [Lateral::LeftTurn, Lateral::Straight, Lateral::RightTurn];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        ["LT", "ST", "RT"][self.index()]
    }
}

impl Longitudinal {
    pub const ALL: [Longitudinal; 3] = [Longitudinal::Accelerate, Longitudinal::Decelerate, Longitudinal::Constant];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        ["ACC", "DEC", "CON"][self.index()]
    }
}

impl fmt::Display for Lateral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl fmt::Display for Longitudinal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Class probabilities, indexed like [`Lateral::ALL`] and [`Longitudinal::ALL`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntentionDistribution {
    pub lateral: [f64; 3],
    pub longitudinal: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntentionConfig {
    /// Width of each per-class embedding.
    pub class_embed_dim: usize,
    /// Width of the fused intention feature `Z`.
    pub feature_dim: usize,
    /// Net heading change (rad) separating turns from straight driving.
    pub lateral_threshold_rad: f64,
    /// Speed change (m/s) separating acceleration and deceleration from cruising.
    pub speed_threshold: f64,
    /// Samples averaged at each end of the horizon when measuring speed change.
    pub speed_window: usize,
}

impl Default for IntentionConfig {
    fn default() -> Self {
        Self {
            class_embed_dim: 32,
            feature_dim: 32,
            lateral_threshold_rad: 15f64.to_radians(),
            speed_threshold: 1.0,
            speed_window: 5,
        }
    }
}

/// Lateral label from the net heading change over the horizon, longitudinal
/// label from the change of mean speed between its first and last samples.
pub fn label_intentions(future: &[StateRecord], cfg: &IntentionConfig) -> Result<(Lateral, Longitudinal)> {
    let t = future.len();
    if t == 0 {
        return Err(Error::InvalidArgument("cannot label an empty future".into()));
    }
    let dyaw = wrap_angle(future[t - 1].yaw - future[0].yaw);
    let lateral = if dyaw > cfg.lateral_threshold_rad {
        Lateral::LeftTurn
    } else if dyaw < -cfg.lateral_threshold_rad {
        Lateral::RightTurn
    } else {
        Lateral::Straight
    };
    let w = cfg.speed_window.clamp(1, t);
    let mean_speed = |s: &[StateRecord]| {
        let sum = s.iter().fold(Vec2::ZERO, |acc, r| acc + r.velocity());
        (sum * (1.0 / s.len() as f64)).norm()
    };
    let dv = mean_speed(&future[t - w..]) - mean_speed(&future[..w]);
    let longitudinal = if dv > cfg.speed_threshold {
        Longitudinal::Accelerate
    } else if dv < -cfg.speed_threshold {
        Longitudinal::Decelerate
    } else {
        Longitudinal::Constant
    };
    Ok((lateral, longitudinal))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentionParams {
    pub lateral_head: Mlp,
    pub longitudinal_head: Mlp,
    /// Interaction feature to one embedding per lateral class, `[3 * De]`.
    pub lateral_embed: Mlp,
    pub longitudinal_embed: Mlp,
    /// `e^la ⊕ e^lo` to the logits of `Z`.
    pub fuse: Mlp,
}

impl IntentionParams {
    pub fn new(rng: &mut Rng, input_dim: usize, cfg: &IntentionConfig) -> Self {
        let d = input_dim;
        let de = cfg.class_embed_dim;
        Self {
            lateral_head: Mlp::new(rng, "lateral_head", &[d, d, 3]),
            longitudinal_head: Mlp::new(rng, "longitudinal_head", &[d, d, 3]),
            lateral_embed: Mlp::new(rng, "lateral_embed", &[d, d, 3 * de]),
            longitudinal_embed: Mlp::new(rng, "longitudinal_embed", &[d, d, 3 * de]),
            fuse: Mlp::new(rng, "fuse", &[2 * de, 2 * de, cfg.feature_dim]),
        }
    }

    pub fn class_embed_dim(&self) -> usize {
        self.lateral_embed.output_dim() / 3
    }

    pub fn feature_dim(&self) -> usize {
        self.fuse.output_dim()
    }
}

impl Module for IntentionParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.lateral_head.visit(&join(prefix, "lateral_head"), f);
        self.longitudinal_head.visit(&join(prefix, "longitudinal_head"), f);
        self.lateral_embed.visit(&join(prefix, "lateral_embed"), f);
        self.longitudinal_embed.visit(&join(prefix, "longitudinal_embed"), f);
        self.fuse.visit(&join(prefix, "fuse"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.lateral_head.visit_mut(&join(prefix, "lateral_head"), f);
        self.longitudinal_head.visit_mut(&join(prefix, "longitudinal_head"), f);
        self.lateral_embed.visit_mut(&join(prefix, "lateral_embed"), f);
        self.longitudinal_embed.visit_mut(&join(prefix, "longitudinal_embed"), f);
        self.fuse.visit_mut(&join(prefix, "fuse"), f);
    }
}

fn distributions(lat: &Tensor, lon: &Tensor) -> Vec<IntentionDistribution> {
    (0..lat.rows())
        .map(|i| IntentionDistribution {
            lateral: lat.row(i).try_into().expect("3 classes"),
            longitudinal: lon.row(i).try_into().expect("3 classes"),
        })
        .collect()
}

pub fn predict_intention(features: &Tensor, params: &IntentionParams) -> Result<Vec<IntentionDistribution>> {
    let lat = softmax_rows(&params.lateral_head.forward(features)?.0);
    let lon = softmax_rows(&params.longitudinal_head.forward(features)?.0);
    Ok(distributions(&lat, &lon))
}

/// Mixes per-class embeddings `[N, 3 * De]` by class probabilities `[N, 3]`.
fn mix(embeds: &Tensor, probs: &Tensor) -> Tensor {
    let de = embeds.cols() / 3;
    let mut out = Tensor::zeros(&[embeds.rows(), de]);
    for i in 0..embeds.rows() {
        let e = embeds.row(i);
        let p = probs.row(i);
        let o = out.row_mut(i);
        for c in 0..3 {
            for k in 0..de {
                o[k] += p[c] * e[c * de + k];
            }
        }
    }
    out
}

/// Returns `(d embeds, d probs)`.
fn mix_backward(embeds: &Tensor, probs: &Tensor, dout: &Tensor) -> (Tensor, Tensor) {
    let de = embeds.cols() / 3;
    let mut de_ = Tensor::zeros(embeds.shape());
    let mut dp = Tensor::zeros(probs.shape());
    for i in 0..embeds.rows() {
        let (e, p, g) = (embeds.row(i), probs.row(i), dout.row(i));
        for c in 0..3 {
            dp.row_mut(i)[c] = (0..de).map(|k| e[c * de + k] * g[k]).sum();
            let r = de_.row_mut(i);
            for k in 0..de {
                r[c * de + k] = p[c] * g[k];
            }
        }
    }
    (de_, dp)
}

fn probs_tensor(dists: &[IntentionDistribution], lateral: bool) -> Tensor {
    let rows: Vec<Vec<f64>> =
        dists.iter().map(|d| if lateral { d.lateral.to_vec() } else { d.longitudinal.to_vec() }).collect();
    if rows.is_empty() {
        return Tensor::zeros(&[0, 3]);
    }
    Tensor::from_rows(&rows).expect("rectangular")
}

/// `Z = softmax(MLP(e^la ⊕ e^lo))`, where each `e` mixes the per-class
/// embeddings `[N, 3 * De]` by the predicted class probabilities.
pub fn fuse_intention(
    e_la: &Tensor,
    e_lo: &Tensor,
    probs: &[IntentionDistribution],
    params: &IntentionParams,
) -> Result<Tensor> {
    let de = params.class_embed_dim();
    for e in [e_la, e_lo] {
        if e.cols() != 3 * de || e.rows() != probs.len() {
            return Err(dim_err(
                "fuse_intention",
                format!("[{}, {}]", probs.len(), 3 * de),
                format!("{:?}", e.shape()),
            ));
        }
    }
    let la = mix(e_la, &probs_tensor(probs, true));
    let lo = mix(e_lo, &probs_tensor(probs, false));
    Ok(softmax_rows(&params.fuse.forward(&Tensor::concat_cols(&la, &lo)?)?.0))
}

#[derive(Debug, Clone)]
pub struct IntentionCache {
    lat_head: MlpCache,
    lon_head: MlpCache,
    pub lat_probs: Tensor,
    pub lon_probs: Tensor,
    lat_embed: MlpCache,
    lon_embed: MlpCache,
    e_la: Tensor,
    e_lo: Tensor,
    fuse: MlpCache,
    pub z: Tensor,
}

impl IntentionParams {
    pub fn forward(&self, features: &Tensor) -> Result<IntentionCache> {
        let (lat_logits, lat_head) = self.lateral_head.forward(features)?;
        let (lon_logits, lon_head) = self.longitudinal_head.forward(features)?;
        let lat_probs = softmax_rows(&lat_logits);
        let lon_probs = softmax_rows(&lon_logits);
        let (e_la, lat_embed) = self.lateral_embed.forward(features)?;
        let (e_lo, lon_embed) = self.longitudinal_embed.forward(features)?;
        let fused = Tensor::concat_cols(&mix(&e_la, &lat_probs), &mix(&e_lo, &lon_probs))?;
        let (logits, fuse) = self.fuse.forward(&fused)?;
        let z = softmax_rows(&logits);
        Ok(IntentionCache { lat_head, lon_head, lat_probs, lon_probs, lat_embed, lon_embed, e_la, e_lo, fuse, z })
    }

    /// Backpropagates gradients on `Z` and on the two probability tables;
    /// returns the gradient on the interaction features.
    pub fn backward(&mut self, cache: &IntentionCache, dz: &Tensor, dlat: &Tensor, dlon: &Tensor) -> Tensor {
        let dlogits = softmax_rows_backward(&cache.z, dz);
        let dfused = self.fuse.backward(&cache.fuse, &dlogits);
        let de = self.class_embed_dim();
        let (dmix_la, dmix_lo) = dfused.split_cols(de);
        let (de_la, mut dp_la) = mix_backward(&cache.e_la, &cache.lat_probs, &dmix_la);
        let (de_lo, mut dp_lo) = mix_backward(&cache.e_lo, &cache.lon_probs, &dmix_lo);
        dp_la.add_assign(dlat);
        dp_lo.add_assign(dlon);
        let mut dx = self.lateral_embed.backward(&cache.lat_embed, &de_la);
        dx.add_assign(&self.longitudinal_embed.backward(&cache.lon_embed, &de_lo));
        dx.add_assign(&self.lateral_head.backward(&cache.lat_head, &softmax_rows_backward(&cache.lat_probs, &dp_la)));
        dx.add_assign(
            &self.longitudinal_head.backward(&cache.lon_head, &softmax_rows_backward(&cache.lon_probs, &dp_lo)),
        );
        dx
    }
}

impl IntentionCache {
    pub fn distributions(&self) -> Vec<IntentionDistribution> {
        distributions(&self.lat_probs, &self.lon_probs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Number of joint modes `K`.
    pub modes: usize,
    pub hidden: usize,
    pub prob_hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { modes: 6, hidden: 128, prob_hidden: 64 }
    }
}

/// `K` joint futures for all agents with their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPrediction {
    /// `[K, N, T, 2]`, metres.
    pub trajectories: Tensor,
    pub mode_probs: Vec<f64>,
}

impl JointPrediction {
    pub fn new(trajectories: Tensor, mode_probs: Vec<f64>) -> Result<Self> {
        let s = trajectories.shape();
        if s.len() != 4 || s[3] != 2 || s[0] != mode_probs.len() {
            return Err(dim_err("joint prediction", format!("[{}, N, T, 2]", mode_probs.len()), format!("{s:?}")));
        }
        Ok(Self { trajectories, mode_probs })
    }

    /// Builds a prediction from per-mode, per-agent point lists.
    pub fn from_points(modes: &[Vec<Vec<Vec2>>], mode_probs: Vec<f64>) -> Result<Self> {
        let k = modes.len();
        let n = modes.first().map_or(0, Vec::len);
        let t = modes.first().and_then(|m| m.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(k * n * t * 2);
        for m in modes {
            if m.len() != n {
                return Err(dim_err("joint prediction agents", n, m.len()));
            }
            for a in m {
                if a.len() != t {
                    return Err(dim_err("joint prediction steps", t, a.len()));
                }
                for p in a {
                    data.extend([p.x, p.y]);
                }
            }
        }
        Self::new(Tensor::from_vec(&[k, n, t, 2], data)?, mode_probs)
    }

    pub fn num_modes(&self) -> usize {
        self.trajectories.shape()[0]
    }

    pub fn num_agents(&self) -> usize {
        self.trajectories.shape()[1]
    }

    pub fn horizon(&self) -> usize {
        self.trajectories.shape()[2]
    }

    pub fn offset(&self, k: usize, i: usize, t: usize) -> usize {
        let s = self.trajectories.shape();
        ((k * s[1] + i) * s[2] + t) * 2
    }

    pub fn point(&self, k: usize, i: usize, t: usize) -> Vec2 {
        let o = self.offset(k, i, t);
        let d = self.trajectories.data();
        Vec2::new(d[o], d[o + 1])
    }

    pub fn agent_path(&self, k: usize, i: usize) -> Vec<Vec2> {
        (0..self.horizon()).map(|t| self.point(k, i, t)).collect()
    }
}

/// Highest-probability mode; ties go to the lowest index.
pub fn select_mode(jp: &JointPrediction) -> usize {
    let mut best = 0;
    for (k, &p) in jp.mode_probs.iter().enumerate() {
        if p > jp.mode_probs[best] {
            best = k;
        }
    }
    best
}

/// Pose of each agent at the current instant, the origin of its decoded path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub position: Vec2,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub horizon: usize,
    pub modes: usize,
    /// Per agent: `K * T * 2` step offsets in the agent's frame.
    pub trajectory_head: Mlp,
    pub probability_head: Mlp,
}

impl DecoderParams {
    pub fn new(rng: &mut Rng, input_dim: usize, horizon: usize, cfg: &DecoderConfig) -> Self {
        Self {
            horizon,
            modes: cfg.modes,
            trajectory_head: Mlp::new(rng, "trajectory_head", &[input_dim, cfg.hidden, cfg.modes * horizon * 2]),
            probability_head: Mlp::new(rng, "probability_head", &[input_dim, cfg.prob_hidden, cfg.modes]),
        }
    }
}

impl Module for DecoderParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.trajectory_head.visit(&join(prefix, "trajectory_head"), f);
        self.probability_head.visit(&join(prefix, "probability_head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.trajectory_head.visit_mut(&join(prefix, "trajectory_head"), f);
        self.probability_head.visit_mut(&join(prefix, "probability_head"), f);
    }
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    traj: MlpCache,
    prob: MlpCache,
    /// Agent holding the maximum of each pooled column.
    argmax: Vec<usize>,
    probs: Vec<f64>,
    yaws: Vec<f64>,
    rows: usize,
}

impl DecoderParams {
    pub fn forward(&self, u: &Tensor, anchors: &[Anchor]) -> Result<(JointPrediction, DecoderCache)> {
        let n = u.rows();
        if anchors.len() != n {
            return Err(dim_err("decoder anchors", n, anchors.len()));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("cannot decode a scene without agents".into()));
        }
        let (k, t) = (self.modes, self.horizon);
        let (offsets, traj) = self.trajectory_head.forward(u)?;
        let mut data = vec![0.0; k * n * t * 2];
        for (i, a) in anchors.iter().enumerate() {
            let row = offsets.row(i);
            for m in 0..k {
                let mut p = a.position;
                for s in 0..t {
                    let o = (m * t + s) * 2;
                    p += Vec2::new(row[o], row[o + 1]).rotate(a.yaw);
                    let dst = ((m * n + i) * t + s) * 2;
                    data[dst] = p.x;
                    data[dst + 1] = p.y;
                }
            }
        }
        let cols = u.cols();
        let mut pooled = Tensor::zeros(&[1, cols]);
        let mut argmax = vec![0; cols];
        for c in 0..cols {
            for i in 1..n {
                if u.row(i)[c] > u.row(argmax[c])[c] {
                    argmax[c] = i;
                }
            }
            pooled.data_mut()[c] = u.row(argmax[c])[c];
        }
        let (logits, prob) = self.probability_head.forward(&pooled)?;
        let probs = crate::nn::softmax(logits.data());
        let jp = JointPrediction::new(Tensor::from_vec(&[k, n, t, 2], data)?, probs.clone())?;
        Ok((jp, DecoderCache { traj, prob, argmax, probs, yaws: anchors.iter().map(|a| a.yaw).collect(), rows: n }))
    }

    /// Gradients on positions `[K, N, T, 2]` and mode probabilities; returns
    /// the gradient on the decoder input.
    pub fn backward(&mut self, cache: &DecoderCache, dtraj: &Tensor, dprobs: &[f64]) -> Tensor {
        let (k, t, n) = (self.modes, self.horizon, cache.rows);
        let mut doffsets = Tensor::zeros(&[n, k * t * 2]);
        let g = dtraj.data();
        for i in 0..n {
            let row = doffsets.row_mut(i);
            for m in 0..k {
                // position s sums offsets 0..=s, so offset s collects gradients s..T
                let mut acc = Vec2::ZERO;
                for s in (0..t).rev() {
                    let src = ((m * n + i) * t + s) * 2;
                    acc += Vec2::new(g[src], g[src + 1]);
                    let local = acc.rotate(-cache.yaws[i]);
                    let o = (m * t + s) * 2;
                    row[o] = local.x;
                    row[o + 1] = local.y;
                }
            }
        }
        let mut du = self.trajectory_head.backward(&cache.traj, &doffsets);
        let dlogits = softmax_backward(&cache.probs, dprobs);
        let dpooled =
            self.probability_head.backward(&cache.prob, &Tensor::from_vec(&[1, k], dlogits).expect("k logits"));
        for (c, &i) in cache.argmax.iter().enumerate() {
            du.row_mut(i)[c] += dpooled.data()[c];
        }
        du
    }
}

/// Decodes `u = I ⊕ Z` into a joint prediction.
pub fn decode_joint(u: &Tensor, anchors: &[Anchor], params: &DecoderParams) -> Result<JointPrediction> {
    Ok(params.forward(u, anchors)?.0)
}
