//! Seeded synthetic scenarios.
//!
//! Roads are laid out in a canonical frame (main road along +x, right-hand
//! traffic, lanes 3.5 m wide) and the whole scene is then moved by a random
//! rigid transform. The ego is always agent 0. Every agent follows a
//! geometric path at a speed profile with constant acceleration; positions
//! are jittered after integration and velocities are forward differences of
//! the jittered positions, so `p(t+1) = p(t) + v(t)·dt` holds to rounding.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{split_polyline, AgentHistory, PolylineKind, Scenario, StateRecord};
use crate::geometry::{AgentClass, RigidTransform, Vec2};
use crate::nn::seeded_rng;

const LANE_WIDTH: f64 = 3.5;
const WAYPOINT_SPACING: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Straight,
    LeftTurn,
    RightTurn,
    Merge,
    CrossingConflict,
}

impl Template {
    pub const ALL: [Template; 5] =
        [Template::Straight, Template::LeftTurn, Template::RightTurn, Template::Merge, Template::CrossingConflict];

    pub fn name(self) -> &'static str {
        match self {
            Template::Straight => "straight",
            Template::LeftTurn => "left_turn",
            Template::RightTurn => "right_turn",
            Template::Merge => "merge",
            Template::CrossingConflict => "crossing_conflict",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Template::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            format!(
                "unknown template `{s}` (expected one of straight, left_turn, right_turn, merge, crossing_conflict)"
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub dt: f64,
    pub horizon_past: usize,
    pub horizon_future: usize,
    /// Standard deviation of the position jitter (m).
    pub jitter: f64,
    /// Apply a random global rigid transform.
    pub random_pose: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            dt: super::DEFAULT_DT,
            horizon_past: super::DEFAULT_HORIZON_PAST,
            horizon_future: super::DEFAULT_HORIZON_FUTURE,
            jitter: 0.05,
            random_pose: true,
        }
    }
}

/// Speed profile `v(t) = max(0, v0 + a·t)` with `t = 0` the current instant.
#[derive(Debug, Clone, Copy)]
struct Motion {
    v0: f64,
    accel: f64,
}

impl Motion {
    /// Signed distance travelled between `0` and `t`.
    fn dist(&self, t: f64) -> f64 {
        let te = if self.accel < 0.0 {
            t.min(self.v0 / -self.accel)
        } else if self.accel > 0.0 {
            t.max(-self.v0 / self.accel)
        } else {
            t
        };
        self.v0 * te + 0.5 * self.accel * te * te
    }
}

#[derive(Debug, Clone, Copy)]
enum Path {
    Line {
        origin: Vec2,
        heading: f64,
    },
    /// Straight up to `origin`, a quarter circle, then straight again.
    Turn {
        origin: Vec2,
        heading: f64,
        radius: f64,
        /// +1 left, -1 right.
        side: f64,
    },
    /// Lateral shift by `offset` with a cosine profile over `length`.
    LaneChange {
        origin: Vec2,
        heading: f64,
        offset: f64,
        length: f64,
    },
}

impl Path {
    fn pose(&self, s: f64) -> (Vec2, f64) {
        match *self {
            Path::Line { origin, heading } => (origin + Vec2::from_angle(heading) * s, heading),
            Path::Turn { origin, heading, radius, side } => {
                let dir = Vec2::from_angle(heading);
                if s <= 0.0 {
                    return (origin + dir * s, heading);
                }
                let arc = radius * FRAC_PI_2;
                let center = origin + dir.rotate(FRAC_PI_2) * (side * radius);
                let phi = s.min(arc) / radius;
                let on_arc = center + (origin - center).rotate(side * phi);
                let yaw = heading + side * phi;
                if s <= arc {
                    (on_arc, yaw)
                } else {
                    (on_arc + Vec2::from_angle(yaw) * (s - arc), yaw)
                }
            }
            Path::LaneChange { origin, heading, offset, length } => {
                let dir = Vec2::from_angle(heading);
                let normal = dir.rotate(FRAC_PI_2);
                let u = (s / length).clamp(0.0, 1.0);
                let lateral = offset * (1.0 - (PI * u).cos()) / 2.0;
                let slope = if s > 0.0 && s < length { offset * PI / (2.0 * length) * (PI * u).sin() } else { 0.0 };
                (origin + dir * s + normal * lateral, heading + slope.atan())
            }
        }
    }
}

struct Spec {
    class: AgentClass,
    path: Path,
    /// Arc length at `t = 0`.
    s0: f64,
    motion: Motion,
}

fn dims(class: AgentClass) -> (f64, f64, f64) {
    match class {
        AgentClass::Car => (4.5, 1.9, 1500.0),
        AgentClass::Truck => (8.0, 2.5, 9000.0),
        AgentClass::Pedestrian => (0.5, 0.6, 75.0),
        AgentClass::Cyclist => (1.8, 0.6, 90.0),
    }
}

pub fn generate_scenario(template: Template, n_agents: usize, seed: u64) -> Scenario {
    generate_with(&GeneratorConfig::default(), template, n_agents, seed)
}

/// Crossing conflicts always contain the crossing agent, so they have at
/// least two agents whatever `n_agents` says.
pub fn generate_with(cfg: &GeneratorConfig, template: Template, n_agents: usize, seed: u64) -> Scenario {
    let mut rng = seeded_rng(seed);
    let n_agents = n_agents.max(1);
    let mut specs = Vec::new();
    let mut lines: Vec<(PolylineKind, Vec2, Vec2)> = Vec::new();

    let accel_mag = rng.gen_range(1.0..2.0);
    let accel = [-accel_mag, 0.0, accel_mag][rng.gen_range(0..3)];
    let ego_motion = Motion { v0: rng.gen_range(6.0..10.0), accel };
    let ego_x0 = rng.gen_range(-30.0..0.0);
    let ego_lane = -LANE_WIDTH / 2.0;
    let x_min = ego_x0 - 100.0;
    let x_max = ego_x0 + 140.0;

    let mut lane = |kind, a: (f64, f64), b: (f64, f64)| lines.push((kind, Vec2::new(a.0, a.1), Vec2::new(b.0, b.1)));
    let main_lanes = |lane: &mut dyn FnMut(PolylineKind, (f64, f64), (f64, f64))| {
        lane(PolylineKind::LaneCenter, (x_min, ego_lane), (x_max, ego_lane));
        lane(PolylineKind::LaneCenter, (x_max, -ego_lane), (x_min, -ego_lane));
    };

    let mut follower_lane = ego_lane;
    let mut others_start = 1;
    match template {
        Template::Straight => {
            main_lanes(&mut lane);
            lane(PolylineKind::RoadBoundary, (x_min, -LANE_WIDTH), (x_max, -LANE_WIDTH));
            lane(PolylineKind::RoadBoundary, (x_min, LANE_WIDTH), (x_max, LANE_WIDTH));
            specs.push(Spec {
                class: AgentClass::Car,
                path: Path::Line { origin: Vec2::new(0.0, ego_lane), heading: 0.0 },
                s0: ego_x0,
                motion: ego_motion,
            });
        }
        Template::LeftTurn | Template::RightTurn => {
            let side = if template == Template::LeftTurn { 1.0 } else { -1.0 };
            let radius = rng.gen_range(10.0..20.0);
            let t_start = rng.gen_range(-0.9..-0.2);
            let s0 = -ego_motion.dist(t_start);
            let x_turn = ego_x0 - s0;
            let x_exit = x_turn + radius;
            let cross = x_exit - side * LANE_WIDTH / 2.0;
            main_lanes(&mut lane);
            // cross street lanes: +y on the east side, -y on the west side
            lane(PolylineKind::LaneCenter, (cross + 1.75, -120.0), (cross + 1.75, 120.0));
            lane(PolylineKind::LaneCenter, (cross - 1.75, 120.0), (cross - 1.75, -120.0));
            let gap_lo = x_turn - 2.0;
            let gap_hi = cross + LANE_WIDTH + 2.0;
            for y in [-LANE_WIDTH, LANE_WIDTH] {
                lane(PolylineKind::RoadBoundary, (x_min, y), (gap_lo, y));
                lane(PolylineKind::RoadBoundary, (gap_hi, y), (x_max, y));
            }
            let gap_y = radius + 2.0;
            for x in [cross - LANE_WIDTH, cross + LANE_WIDTH] {
                lane(PolylineKind::RoadBoundary, (x, -120.0), (x, -gap_y));
                lane(PolylineKind::RoadBoundary, (x, gap_y), (x, 120.0));
            }
            specs.push(Spec {
                class: AgentClass::Car,
                path: Path::Turn { origin: Vec2::new(x_turn, ego_lane), heading: 0.0, radius, side },
                s0,
                motion: ego_motion,
            });
        }
        Template::Merge => {
            let ramp = ego_lane - LANE_WIDTH;
            let length = rng.gen_range(20.0..40.0);
            let t_start = rng.gen_range(-0.9..-0.2);
            let s0 = -ego_motion.dist(t_start);
            let x_merge = ego_x0 - s0;
            main_lanes(&mut lane);
            lane(PolylineKind::LaneCenter, (x_min, ramp), (x_merge + length, ramp));
            lane(PolylineKind::RoadBoundary, (x_min, ramp - LANE_WIDTH / 2.0), (x_max, ramp - LANE_WIDTH / 2.0));
            lane(PolylineKind::RoadBoundary, (x_min, LANE_WIDTH), (x_max, LANE_WIDTH));
            specs.push(Spec {
                class: AgentClass::Car,
                path: Path::LaneChange { origin: Vec2::new(x_merge, ramp), heading: 0.0, offset: LANE_WIDTH, length },
                s0,
                motion: ego_motion,
            });
            follower_lane = ramp;
        }
        Template::CrossingConflict => {
            main_lanes(&mut lane);
            lane(PolylineKind::RoadBoundary, (x_min, -LANE_WIDTH), (x_max, -LANE_WIDTH));
            lane(PolylineKind::RoadBoundary, (x_min, LANE_WIDTH), (x_max, LANE_WIDTH));
            let ego_path = Path::Line { origin: Vec2::new(0.0, ego_lane), heading: 0.0 };
            // meet exactly at a sampled step so the conflict survives discretization
            let k_c = rng.gen_range((2.0 / cfg.dt).round() as i64..=(4.0 / cfg.dt).round() as i64);
            let t_c = k_c as f64 * cfg.dt;
            let meet = ego_path.pose(ego_x0 + ego_motion.dist(t_c)).0;
            lane(PolylineKind::Crosswalk, (meet.x, -LANE_WIDTH - 1.5), (meet.x, LANE_WIDTH + 1.5));
            specs.push(Spec { class: AgentClass::Car, path: ego_path, s0: ego_x0, motion: ego_motion });
            let (class, speed) = if rng.gen_bool(0.5) {
                (AgentClass::Pedestrian, rng.gen_range(1.2..1.8))
            } else {
                (AgentClass::Cyclist, rng.gen_range(3.0..6.0))
            };
            let heading = if rng.gen_bool(0.5) { FRAC_PI_2 } else { -FRAC_PI_2 };
            specs.push(Spec {
                class,
                path: Path::Line { origin: meet, heading },
                s0: -speed * t_c,
                motion: Motion { v0: speed, accel: 0.0 },
            });
            others_start = 2;
        }
    }
    let n_total = if template == Template::CrossingConflict { n_agents.max(2) } else { n_agents };

    let mut followers = 0;
    let mut oncoming = 0;
    for _ in others_start..n_total {
        let class = if rng.gen_bool(0.2) { AgentClass::Truck } else { AgentClass::Car };
        let is_follower = template != Template::CrossingConflict && rng.gen_bool(0.5);
        if is_follower {
            let gap = 10.0 + 12.0 * followers as f64 + rng.gen_range(0.0..5.0);
            followers += 1;
            specs.push(Spec {
                class,
                path: Path::Line { origin: Vec2::new(0.0, follower_lane), heading: 0.0 },
                s0: ego_x0 - gap,
                motion: Motion { v0: ego_motion.v0 * rng.gen_range(0.7..1.0), accel: ego_motion.accel.min(0.0) },
            });
        } else {
            let ahead = 15.0 + 14.0 * oncoming as f64 + rng.gen_range(0.0..8.0);
            oncoming += 1;
            specs.push(Spec {
                class,
                path: Path::Line { origin: Vec2::new(0.0, -ego_lane), heading: PI },
                s0: -(ego_x0 + ahead),
                motion: Motion { v0: rng.gen_range(4.0..10.0), accel: 0.0 },
            });
        }
    }

    let h = cfg.horizon_past;
    let t_steps = cfg.horizon_future;
    let noise = Normal::new(0.0, cfg.jitter.max(0.0)).expect("finite jitter");
    let mut agents = Vec::with_capacity(specs.len());
    for (id, spec) in specs.iter().enumerate() {
        let (length, width, mass) = dims(spec.class);
        // samples k = -H ..= T + 1; the extra one closes the last velocity
        let mut pos = Vec::with_capacity(h + t_steps + 2);
        let mut yaw = Vec::with_capacity(h + t_steps + 2);
        for k in -(h as i64)..=(t_steps as i64 + 1) {
            let t = k as f64 * cfg.dt;
            let (p, y) = spec.path.pose(spec.s0 + spec.motion.dist(t));
            let j =
                if cfg.jitter > 0.0 { Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng)) } else { Vec2::ZERO };
            pos.push(p + j);
            yaw.push(y);
        }
        let recs: Vec<StateRecord> = (0..h + t_steps + 1)
            .map(|k| {
                let v = (pos[k + 1] - pos[k]) * (1.0 / cfg.dt);
                StateRecord { x: pos[k].x, y: pos[k].y, yaw: crate::geometry::wrap_angle(yaw[k]), vx: v.x, vy: v.y }
            })
            .collect();
        agents.push(AgentHistory {
            id: id as u32,
            class: spec.class,
            length,
            width,
            mass,
            states: recs[..=h].to_vec(),
            future: Some(recs[h + 1..].to_vec()),
        });
    }

    let mut map = Vec::new();
    for (kind, a, b) in lines {
        let len = a.distance(b);
        let n = ((len / WAYPOINT_SPACING).ceil() as usize).max(1);
        let pts: Vec<Vec2> = (0..=n).map(|i| a + (b - a) * (i as f64 / n as f64)).collect();
        map.extend(split_polyline(kind, &pts));
    }

    let scn = Scenario {
        id: format!("{}-{seed}", template.name()),
        template: Some(template),
        dt: cfg.dt,
        horizon_past: h,
        horizon_future: t_steps,
        ego_index: 0,
        agents,
        map,
    };
    if cfg.random_pose {
        let pose = RigidTransform::new(
            rng.gen_range(-PI..PI),
            Vec2::new(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)),
        );
        scn.transformed(&pose)
    } else {
        scn
    }
}

/// Deterministic per-scenario seeds for dataset generation.
pub fn dataset_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(template: Template, seed: u64) -> Scenario {
        let cfg = GeneratorConfig { jitter: 0.0, random_pose: false, ..GeneratorConfig::default() };
        generate_with(&cfg, template, 4, seed)
    }

    #[test]
    fn same_seed_same_bytes() {
        for t in Template::ALL {
            let a = generate_scenario(t, 5, 11).to_json().unwrap();
            let b = generate_scenario(t, 5, 11).to_json().unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn constant_speed_straight_steps_are_v_dt() {
        let mut seed = 0;
        let scn = loop {
            let s = flat(Template::Straight, seed);
            if s.agents[0].states[0].vx == s.agents[0].states[5].vx {
                break s;
            }
            seed += 1;
        };
        let ego = &scn.agents[0];
        let v = ego.states[0].vx;
        for w in ego.states.windows(2) {
            assert!((w[1].x - w[0].x - v * scn.dt).abs() < 1e-12);
            assert_eq!(w[0].y, w[1].y);
        }
    }

    #[test]
    fn generated_scenarios_validate() {
        for t in Template::ALL {
            for seed in 0..5 {
                let s = generate_scenario(t, 6, seed);
                s.validate().unwrap();
                assert_eq!(s.num_agents(), 6);
                assert!(s.map.iter().all(|p| p.waypoints.len() <= super::super::MAX_WAYPOINTS));
            }
        }
        assert_eq!(generate_scenario(Template::CrossingConflict, 1, 0).num_agents(), 2);
    }

    #[test]
    fn turn_paths_end_perpendicular() {
        let p = Path::Turn { origin: Vec2::ZERO, heading: 0.0, radius: 10.0, side: 1.0 };
        let (end, yaw) = p.pose(10.0 * FRAC_PI_2);
        assert!(end.distance(Vec2::new(10.0, 10.0)) < 1e-12);
        assert!((yaw - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn decelerating_agents_stop() {
        let m = Motion { v0: 4.0, accel: -2.0 };
        assert_eq!(m.dist(2.0), 4.0);
        assert_eq!(m.dist(10.0), 4.0);
        let m = Motion { v0: 1.0, accel: 2.0 };
        assert_eq!(m.dist(-5.0), -0.25);
    }

    #[test]
    fn template_names_parse() {
        for t in Template::ALL {
            assert_eq!(t.name().parse::<Template>().unwrap(), t);
        }
        assert!("u_turn".parse::<Template>().is_err());
    }
}
