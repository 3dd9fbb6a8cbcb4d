//! History and map encoders plus agent-agent and agent-map attention.
//!
//! Every agent sees the scene in its own frame (its pose at the current
//! instant), so the features are invariant under global rigid motions. The
//! interaction graph of agent `i` is the set of agents within the context
//! radius of it; the self-attention stack runs on that subset only, which
//! makes the locality exact through both layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{relative_encoding, wrap_angle, AgentState, RigidTransform, Vec2};
use crate::nn::{
    join, BlockCache, LstmCell, LstmStepCache, Mlp, MlpCache, Module, Param, Rng, Tensor, TransformerBlock,
};
use crate::scene::{AgentHistory, MapPolyline, Scenario, MAX_WAYPOINTS};

/// `[x, y, yaw, vx, vy]` in the agent frame, the relative encoding to the
/// ego and the class one-hot.
pub const HISTORY_FEATURES: usize = 14;
/// Padded waypoints, padding mask and kind one-hot.
pub const MAP_FEATURES: usize = 2 * MAX_WAYPOINTS + MAX_WAYPOINTS + 3;

const POSITION_SCALE: f64 = 10.0;
const VELOCITY_SCALE: f64 = 10.0;
const DISTANCE_SCALE: f64 = 50.0;
const MAP_SCALE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractionConfig {
    pub embed_dim: usize,
    pub attention_heads: usize,
    pub context_radius_m: f64,
    pub agent_layers: usize,
    /// Feed-forward width as a multiple of `embed_dim`.
    pub ff_multiplier: usize,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self { embed_dim: 64, attention_heads: 4, context_radius_m: 50.0, agent_layers: 2, ff_multiplier: 2 }
    }
}

impl InteractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.attention_heads == 0 || !self.embed_dim.is_multiple_of(self.attention_heads) {
            return Err(Error::InvalidArgument(format!(
                "embed_dim {} must be a positive multiple of attention_heads {}",
                self.embed_dim, self.attention_heads
            )));
        }
        if !(self.context_radius_m > 0.0) {
            return Err(Error::InvalidArgument("context_radius_m must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionParams {
    pub lstm: LstmCell,
    pub map_encoder: Mlp,
    pub agent_layers: Vec<TransformerBlock>,
    pub map_layer: TransformerBlock,
}

impl InteractionParams {
    pub fn new(rng: &mut Rng, cfg: &InteractionConfig) -> Self {
        let d = cfg.embed_dim;
        let ff = cfg.ff_multiplier * d;
        Self {
            lstm: LstmCell::new(rng, HISTORY_FEATURES, d),
            map_encoder: Mlp::new(rng, "map_encoder", &[MAP_FEATURES, d, d]),
            agent_layers: (0..cfg.agent_layers)
                .map(|l| TransformerBlock::new(rng, &format!("agent_layer{l}.ff"), d, cfg.attention_heads, ff))
                .collect(),
            map_layer: TransformerBlock::new(rng, "map_layer.ff", d, cfg.attention_heads, ff),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.lstm.hidden()
    }
}

impl Module for InteractionParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.lstm.visit(&join(prefix, "lstm"), f);
        self.map_encoder.visit(&join(prefix, "map_encoder"), f);
        for (l, b) in self.agent_layers.iter().enumerate() {
            b.visit(&join(prefix, &format!("agent_layer{l}")), f);
        }
        self.map_layer.visit(&join(prefix, "map_layer"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.lstm.visit_mut(&join(prefix, "lstm"), f);
        self.map_encoder.visit_mut(&join(prefix, "map_encoder"), f);
        for (l, b) in self.agent_layers.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("agent_layer{l}")), f);
        }
        self.map_layer.visit_mut(&join(prefix, "map_layer"), f);
    }
}

/// Velocities from backward differences of the observed positions; the first
/// sample reuses the second one's. Recorded velocities are not used because
/// the last one is a forward difference reaching into the future.
pub fn observed_velocities(hist: &AgentHistory, dt: f64) -> Vec<Vec2> {
    let p: Vec<Vec2> = hist.states.iter().map(|s| s.position()).collect();
    if p.len() < 2 {
        return vec![Vec2::ZERO; p.len()];
    }
    let mut v: Vec<Vec2> = p.windows(2).map(|w| (w[1] - w[0]) * (1.0 / dt)).collect();
    v.insert(0, v[0]);
    v
}

/// Observed states with velocities replaced by [`observed_velocities`].
pub fn observed_states(hist: &AgentHistory, dt: f64) -> Vec<AgentState> {
    let v = observed_velocities(hist, dt);
    hist.states.iter().zip(v).map(|(s, v)| AgentState { velocity: v, ..hist.state(s) }).collect()
}

/// Frame of an agent's pose at the current instant.
pub fn agent_frame(hist: &AgentHistory) -> RigidTransform {
    let s = hist.states.last().expect("validated history");
    RigidTransform::to_local(s.position(), s.yaw)
}

/// Per-step LSTM inputs, `H + 1` tensors of shape `[N, 14]`.
pub fn history_features(scn: &Scenario) -> Vec<Tensor> {
    let n = scn.num_agents();
    let steps = scn.horizon_past + 1;
    let observed: Vec<Vec<AgentState>> = scn.agents.iter().map(|a| observed_states(a, scn.dt)).collect();
    let ego = &observed[scn.ego_index];
    let mut out = vec![Tensor::zeros(&[n, HISTORY_FEATURES]); steps];
    for (i, a) in scn.agents.iter().enumerate() {
        let frame = agent_frame(a);
        let yaw0 = a.states.last().expect("validated history").yaw;
        let one_hot = a.class.one_hot();
        for (k, s) in observed[i].iter().enumerate() {
            let p = frame.point(s.position) * (1.0 / POSITION_SCALE);
            let v = frame.vector(s.velocity) * (1.0 / VELOCITY_SCALE);
            let r = relative_encoding(&ego[k], s);
            let row = out[k].row_mut(i);
            row[..5].copy_from_slice(&[p.x, p.y, wrap_angle(s.yaw - yaw0), v.x, v.y]);
            row[5..10].copy_from_slice(&[
                r.sin_heading_diff,
                r.cos_heading_diff,
                r.sin_bearing,
                r.cos_bearing,
                r.distance / DISTANCE_SCALE,
            ]);
            row[10..].copy_from_slice(&one_hot);
        }
    }
    out
}

/// Encoder input for one polyline, in whatever frame its coordinates are.
pub fn polyline_features(p: &MapPolyline) -> [f64; MAP_FEATURES] {
    let mut f = [0.0; MAP_FEATURES];
    for (w, pt) in p.waypoints.iter().take(MAX_WAYPOINTS).enumerate() {
        f[2 * w] = pt.x / MAP_SCALE;
        f[2 * w + 1] = pt.y / MAP_SCALE;
        f[2 * MAX_WAYPOINTS + w] = 1.0;
    }
    f[3 * MAX_WAYPOINTS + p.kind.index()] = 1.0;
    f
}

/// Polylines with a waypoint within `radius` of the agent, in its frame.
pub fn local_polylines(scn: &Scenario, agent: usize, radius: f64) -> Vec<MapPolyline> {
    let a = &scn.agents[agent];
    let center = a.current().position;
    let frame = agent_frame(a);
    scn.map
        .iter()
        .filter(|p| p.waypoints.iter().any(|w| w.distance(center) <= radius))
        .map(|p| MapPolyline { kind: p.kind, waypoints: p.waypoints.iter().map(|w| frame.point(*w)).collect() })
        .collect()
}

fn map_feature_tensor(polylines: &[MapPolyline]) -> Tensor {
    let mut t = Tensor::zeros(&[polylines.len(), MAP_FEATURES]);
    for (m, p) in polylines.iter().enumerate() {
        t.row_mut(m).copy_from_slice(&polyline_features(p));
    }
    t
}

/// `mask[i][j]`: agent `j` lies within the context radius of agent `i`
/// at the current instant (always true for `j = i`).
pub fn context_mask(scn: &Scenario, radius: f64) -> Vec<Vec<bool>> {
    let pos: Vec<Vec2> = scn.agents.iter().map(|a| a.current().position).collect();
    pos.iter()
        .enumerate()
        .map(|(i, pi)| pos.iter().enumerate().map(|(j, pj)| i == j || pi.distance(*pj) <= radius).collect())
        .collect()
}

/// Everything the encoder needs from a scenario.
#[derive(Debug, Clone)]
pub struct SceneInputs {
    pub steps: Vec<Tensor>,
    pub mask: Vec<Vec<bool>>,
    /// Per agent, `[M_i, MAP_FEATURES]`.
    pub map: Vec<Tensor>,
}

impl SceneInputs {
    pub fn new(scn: &Scenario, cfg: &InteractionConfig) -> Self {
        let r = cfg.context_radius_m;
        Self {
            steps: history_features(scn),
            mask: context_mask(scn, r),
            map: (0..scn.num_agents()).map(|i| map_feature_tensor(&local_polylines(scn, i, r))).collect(),
        }
    }

    pub fn num_agents(&self) -> usize {
        self.mask.len()
    }
}

pub fn encode_history(steps: &[Tensor], params: &InteractionParams) -> Result<Tensor> {
    Ok(params.lstm.encode(steps)?.0)
}

pub fn encode_map(polylines: &[MapPolyline], params: &InteractionParams) -> Result<Tensor> {
    Ok(params.map_encoder.forward(&map_feature_tensor(polylines))?.0)
}

pub fn agent_agent_attention(embeds: &Tensor, mask: &[Vec<bool>], params: &InteractionParams) -> Result<Tensor> {
    Ok(agent_agent_forward(&params.agent_layers, embeds, mask)?.0)
}

/// `map_embeds[i]` holds agent `i`'s polyline embeddings; an empty one leaves
/// the row untouched.
pub fn agent_map_attention(features: &Tensor, map_embeds: &[Tensor], params: &InteractionParams) -> Result<Tensor> {
    Ok(agent_map_forward(&params.map_layer, features, map_embeds)?.0)
}

#[derive(Debug, Clone)]
struct SubsetCache {
    members: Vec<usize>,
    /// Row of the query agent inside `members`.
    row: usize,
    layers: Vec<BlockCache>,
}

fn agent_agent_forward(
    layers: &[TransformerBlock],
    embeds: &Tensor,
    mask: &[Vec<bool>],
) -> Result<(Tensor, Vec<SubsetCache>)> {
    let n = embeds.rows();
    if mask.len() != n {
        return Err(crate::error::dim_err("agent context mask", n, mask.len()));
    }
    let mut out = Tensor::zeros(embeds.shape());
    let mut caches = Vec::with_capacity(n);
    for (i, m) in mask.iter().enumerate() {
        if m.len() != n {
            return Err(crate::error::dim_err("agent context mask row", n, m.len()));
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::EmptyAttention);
        }
        let members: Vec<usize> = (0..n).filter(|&j| m[j] || j == i).collect();
        let key_mask: Vec<bool> = members.iter().map(|&j| m[j]).collect();
        let row = members.iter().position(|&j| j == i).expect("query is a member");
        let mut x = embeds.gather_rows(&members);
        let mut layer_caches = Vec::with_capacity(layers.len());
        for block in layers {
            let (y, c) = block.forward_self(&x, &key_mask)?;
            x = y;
            layer_caches.push(c);
        }
        out.row_mut(i).copy_from_slice(x.row(row));
        caches.push(SubsetCache { members, row, layers: layer_caches });
    }
    Ok((out, caches))
}

fn agent_agent_backward(layers: &mut [TransformerBlock], caches: &[SubsetCache], dout: &Tensor) -> Tensor {
    let mut dembeds = Tensor::zeros(dout.shape());
    let d = dout.cols();
    for (i, c) in caches.iter().enumerate() {
        let mut dx = Tensor::zeros(&[c.members.len(), d]);
        dx.row_mut(c.row).copy_from_slice(dout.row(i));
        for (block, bc) in layers.iter_mut().zip(&c.layers).rev() {
            dx = block.backward(bc, &dx).0;
        }
        for (r, &j) in c.members.iter().enumerate() {
            for (g, v) in dembeds.row_mut(j).iter_mut().zip(dx.row(r)) {
                *g += v;
            }
        }
    }
    dembeds
}

fn agent_map_forward(
    block: &TransformerBlock,
    features: &Tensor,
    map_embeds: &[Tensor],
) -> Result<(Tensor, Vec<Option<BlockCache>>)> {
    if map_embeds.len() != features.rows() {
        return Err(crate::error::dim_err("agent-map attention", features.rows(), map_embeds.len()));
    }
    let mut out = features.clone();
    let mut caches = Vec::with_capacity(map_embeds.len());
    for (i, mem) in map_embeds.iter().enumerate() {
        if mem.rows() == 0 {
            caches.push(None);
            continue;
        }
        let q = features.gather_rows(&[i]);
        let (y, c) = block.forward_cross(&q, mem)?;
        out.row_mut(i).copy_from_slice(y.row(0));
        caches.push(Some(c));
    }
    Ok((out, caches))
}

#[derive(Debug, Clone)]
pub struct InteractionCache {
    lstm: Vec<LstmStepCache>,
    map_mlp: Vec<Option<MlpCache>>,
    agents: Vec<SubsetCache>,
    map_attn: Vec<Option<BlockCache>>,
}

impl InteractionParams {
    /// Interaction features `[N, D]` for one scene.
    pub fn forward(&self, inputs: &SceneInputs) -> Result<(Tensor, InteractionCache)> {
        let (h, lstm) = self.lstm.encode(&inputs.steps)?;
        let (x, agents) = agent_agent_forward(&self.agent_layers, &h, &inputs.mask)?;
        let mut map_embeds = Vec::with_capacity(inputs.map.len());
        let mut map_mlp = Vec::with_capacity(inputs.map.len());
        for feats in &inputs.map {
            if feats.rows() == 0 {
                map_embeds.push(Tensor::zeros(&[0, self.embed_dim()]));
                map_mlp.push(None);
            } else {
                let (e, c) = self.map_encoder.forward(feats)?;
                map_embeds.push(e);
                map_mlp.push(Some(c));
            }
        }
        let (y, map_attn) = agent_map_forward(&self.map_layer, &x, &map_embeds)?;
        if !y.is_finite() {
            return Err(Error::NonFinite("interaction features".into()));
        }
        Ok((y, InteractionCache { lstm, map_mlp, agents, map_attn }))
    }

    /// Accumulates parameter gradients for `dL/dfeatures`.
    pub fn backward(&mut self, cache: &InteractionCache, dy: &Tensor) {
        let mut dx = dy.clone();
        for (i, c) in cache.map_attn.iter().enumerate() {
            let Some(c) = c else { continue };
            let (dq, dmem) = self.map_layer.backward(c, &dy.gather_rows(&[i]));
            dx.row_mut(i).copy_from_slice(dq.row(0));
            let mc = cache.map_mlp[i].as_ref().expect("map cache present with attention cache");
            self.map_encoder.backward(mc, &dmem);
        }
        let dh = agent_agent_backward(&mut self.agent_layers, &cache.agents, &dx);
        self.lstm.encode_backward(&cache.lstm, &dh);
    }
}
