//! Scenario data model and JSON ingestion.
//!
//! Document layout:
//!
//! ```json
//! {
//!   "id": "left_turn-7", "template": "left_turn",
//!   "dt": 0.1, "H": 10, "T": 50, "ego_index": 0,
//!   "agents": [{"id": 0, "class": "car", "length": 4.5, "width": 1.9, "mass": 1500.0,
//!               "states": [{"x": 0.0, "y": 0.0, "yaw": 0.0, "vx": 8.0, "vy": 0.0}, ...],
//!               "future": [...]}],
//!   "map": [{"kind": "lane_center", "waypoints": [[0.0, 0.0], [4.0, 0.0]]}]
//! }
//! ```
//!
//! `id`, `template` and `future` are optional. `states` holds `H + 1` samples
//! ending at the current instant; `future` holds the `T` samples after it.

mod frame;
mod generator;

use serde::{Deserialize, Serialize};

pub use frame::{local_frame, local_frame_with_radius, DEFAULT_CONTEXT_RADIUS};
pub use generator::{dataset_seed, generate_scenario, generate_with, GeneratorConfig, Template};

use crate::error::{Error, Result};
use crate::geometry::{AgentClass, AgentState, RigidTransform, Vec2};

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_HORIZON_PAST: usize = 10;
pub const DEFAULT_HORIZON_FUTURE: usize = 50;
/// Longest polyline accepted by the map encoder.
pub const MAX_WAYPOINTS: usize = 20;

/// Kinematic sample of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
}

impl StateRecord {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.vx, self.vy)
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        let p = t.point(self.position());
        let v = t.vector(self.velocity());
        Self { x: p.x, y: p.y, yaw: t.yaw(self.yaw), vx: v.x, vy: v.y }
    }

    fn fields(&self) -> [(&'static str, f64); 5] {
        [("x", self.x), ("y", self.y), ("yaw", self.yaw), ("vx", self.vx), ("vy", self.vy)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentHistory {
    pub id: u32,
    pub class: AgentClass,
    pub length: f64,
    pub width: f64,
    pub mass: f64,
    pub states: Vec<StateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub future: Option<Vec<StateRecord>>,
}

impl AgentHistory {
    pub fn state(&self, rec: &StateRecord) -> AgentState {
        AgentState {
            position: rec.position(),
            yaw: rec.yaw,
            velocity: rec.velocity(),
            length: self.length,
            width: self.width,
            mass: self.mass,
            class: self.class,
        }
    }

    /// State at the current instant (last history sample).
    pub fn current(&self) -> AgentState {
        self.state(self.states.last().expect("validated history is nonempty"))
    }

    pub fn future_positions(&self) -> Option<Vec<Vec2>> {
        self.future.as_ref().map(|f| f.iter().map(StateRecord::position).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolylineKind {
    LaneCenter,
    RoadBoundary,
    Crosswalk,
}

impl PolylineKind {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapPolyline {
    pub kind: PolylineKind,
    #[serde(with = "waypoints_serde")]
    pub waypoints: Vec<Vec2>,
}

impl MapPolyline {
    /// Smallest distance from `p` to any segment of the polyline.
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let w = &self.waypoints;
        if w.len() == 1 {
            return w[0].distance(p);
        }
        w.windows(2).map(|s| segment_distance(p, s[0], s[1])).fold(f64::INFINITY, f64::min)
    }
}

pub fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let u = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.distance(a + ab * u)
}

mod waypoints_serde {
    use super::Vec2;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(w: &[Vec2], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(w.iter().map(|p| [p.x, p.y]))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec2>, D::Error> {
        let raw: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|[x, y]| Vec2::new(x, y)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<Template>,
    pub dt: f64,
    #[serde(rename = "H")]
    pub horizon_past: usize,
    #[serde(rename = "T")]
    pub horizon_future: usize,
    pub ego_index: usize,
    pub agents: Vec<AgentHistory>,
    #[serde(default)]
    pub map: Vec<MapPolyline>,
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scn: Scenario = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Schema { path: e.path().to_string(), message: e.inner().to_string() })?;
    scn.validate()?;
    Ok(scn)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        load_scenario(text)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        load_scenario(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn ego(&self) -> &AgentHistory {
        &self.agents[self.ego_index]
    }

    pub fn agent_index(&self, id: u32) -> Result<usize> {
        self.agents.iter().position(|a| a.id == id).ok_or(Error::UnknownAgent(id))
    }

    pub fn current_states(&self) -> Vec<AgentState> {
        self.agents.iter().map(AgentHistory::current).collect()
    }

    pub fn has_futures(&self) -> bool {
        self.agents.iter().all(|a| a.future.is_some())
    }

    /// Ground-truth future positions `[N][T]`; errors when any agent lacks one.
    pub fn future_truth(&self) -> Result<Vec<Vec<Vec2>>> {
        self.agents
            .iter()
            .map(|a| {
                a.future_positions()
                    .ok_or_else(|| Error::AgentLength { agent_id: a.id, message: "missing ground-truth future".into() })
            })
            .collect()
    }

    pub fn polylines(&self, kind: PolylineKind) -> impl Iterator<Item = &MapPolyline> {
        self.map.iter().filter(move |p| p.kind == kind)
    }

    /// Applies a rigid motion to every coordinate.
    pub fn transformed(&self, t: &RigidTransform) -> Scenario {
        let mut out = self.clone();
        for a in &mut out.agents {
            for s in &mut a.states {
                *s = s.transformed(t);
            }
            if let Some(f) = &mut a.future {
                for s in f {
                    *s = s.transformed(t);
                }
            }
        }
        for p in &mut out.map {
            for w in &mut p.waypoints {
                *w = t.point(*w);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |path: String, message: &str| Error::Validation { path, message: message.to_string() };
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt".into(), "must be positive and finite"));
        }
        if self.agents.is_empty() {
            return Err(invalid("agents".into(), "at least one agent is required"));
        }
        if self.ego_index >= self.agents.len() {
            return Err(invalid(
                "ego_index".into(),
                &format!("{} out of range for {} agents", self.ego_index, self.agents.len()),
            ));
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, a) in self.agents.iter().enumerate() {
            if !ids.insert(a.id) {
                return Err(invalid(format!("agents[{i}].id"), &format!("duplicate agent id {}", a.id)));
            }
            for (name, v) in [("length", a.length), ("width", a.width), ("mass", a.mass)] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(invalid(format!("agents[{i}].{name}"), "must be positive and finite"));
                }
            }
            if a.states.len() != self.horizon_past + 1 {
                return Err(Error::AgentLength {
                    agent_id: a.id,
                    message: format!(
                        "history has {} states, expected H + 1 = {}",
                        a.states.len(),
                        self.horizon_past + 1
                    ),
                });
            }
            if let Some(f) = &a.future {
                if f.len() != self.horizon_future {
                    return Err(Error::AgentLength {
                        agent_id: a.id,
                        message: format!("future has {} states, expected T = {}", f.len(), self.horizon_future),
                    });
                }
            }
            let seqs = std::iter::once(("states", &a.states)).chain(a.future.as_ref().map(|f| ("future", f)));
            for (seq, recs) in seqs {
                for (k, r) in recs.iter().enumerate() {
                    if let Some((name, _)) = r.fields().iter().find(|(_, v)| !v.is_finite()) {
                        return Err(invalid(format!("agents[{i}].{seq}[{k}].{name}"), "non-finite value"));
                    }
                }
            }
        }
        for (m, p) in self.map.iter().enumerate() {
            if p.waypoints.len() < 2 {
                return Err(invalid(format!("map[{m}].waypoints"), "a polyline needs at least 2 waypoints"));
            }
            if let Some(w) = p.waypoints.iter().position(|w| !w.is_finite()) {
                return Err(invalid(format!("map[{m}].waypoints[{w}]"), "non-finite value"));
            }
        }
        Ok(())
    }
}

/// Splits a point sequence into polylines of at most [`MAX_WAYPOINTS`]
/// waypoints; consecutive pieces share their joining point.
pub fn split_polyline(kind: PolylineKind, points: &[Vec2]) -> Vec<MapPolyline> {
    let mut out = Vec::new();
    if points.len() < 2 {
        return out;
    }
    let mut start = 0;
    while start + 1 < points.len() {
        let end = (start + MAX_WAYPOINTS).min(points.len());
        out.push(MapPolyline { kind, waypoints: points[start..end].to_vec() });
        start = end - 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Scenario {
        let rec = |x: f64| StateRecord { x, y: 0.0, yaw: 0.0, vx: 1.0, vy: 0.0 };
        Scenario {
            id: "tiny".into(),
            template: None,
            dt: 0.1,
            horizon_past: 2,
            horizon_future: 2,
            ego_index: 0,
            agents: vec![AgentHistory {
                id: 7,
                class: AgentClass::Car,
                length: 4.5,
                width: 1.9,
                mass: 1500.0,
                states: vec![rec(0.0), rec(0.1), rec(0.2)],
                future: Some(vec![rec(0.3), rec(0.4)]),
            }],
            map: vec![MapPolyline {
                kind: PolylineKind::LaneCenter,
                waypoints: vec![Vec2::new(0.0, 0.0), Vec2::new(4.0, 0.0)],
            }],
        }
    }

    #[test]
    fn json_round_trip() {
        let s = tiny();
        let back = load_scenario(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn short_history_names_agent() {
        let mut s = tiny();
        s.agents[0].states.pop();
        let err = load_scenario(&s.to_json().unwrap()).unwrap_err();
        assert!(matches!(err, Error::AgentLength { agent_id: 7, .. }), "{err}");
        assert!(err.to_string().contains("agent 7"));
    }

    #[test]
    fn non_finite_coordinate_reports_path() {
        let mut s = tiny();
        s.agents[0].states[1].y = f64::NAN;
        match s.validate().unwrap_err() {
            Error::Validation { path, .. } => assert_eq!(path, "agents[0].states[1].y"),
            e => panic!("unexpected {e}"),
        }
        let text = tiny().to_json().unwrap().replacen("\"y\":0.0", "\"y\":1e999", 1);
        match load_scenario(&text).unwrap_err() {
            Error::Schema { path, .. } => assert_eq!(path, "agents[0].states[0].y"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn schema_error_reports_path() {
        let text = tiny().to_json().unwrap().replace("\"car\"", "\"tank\"");
        match load_scenario(&text).unwrap_err() {
            Error::Schema { path, .. } => assert_eq!(path, "agents[0].class"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn split_shares_joints() {
        let pts: Vec<Vec2> = (0..45).map(|i| Vec2::new(i as f64, 0.0)).collect();
        let parts = split_polyline(PolylineKind::RoadBoundary, &pts);
        assert_eq!(parts.len(), 3);
        assert!(parts.iter().all(|p| p.waypoints.len() <= MAX_WAYPOINTS && p.waypoints.len() >= 2));
        assert_eq!(parts[0].waypoints.last(), parts[1].waypoints.first());
        assert_eq!(parts[2].waypoints.last(), pts.last());
    }

    #[test]
    fn polyline_distance() {
        let p = MapPolyline {
            kind: PolylineKind::RoadBoundary,
            waypoints: vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)],
        };
        assert_eq!(p.distance_to(Vec2::new(5.0, 3.0)), 3.0);
        assert_eq!(p.distance_to(Vec2::new(13.0, 4.0)), 5.0);
    }
}
