//! Planar geometry shared by the encoder and the risk engine.

use std::f64::consts::{FRAC_PI_4, PI};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Speeds below this (m/s) fall back to the yaw direction.
pub const MIN_SPEED: f64 = 1e-6;
/// Separations below this (m) use the coincident-position bearing.
pub const MIN_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(angle: f64) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentClass {
    Car,
    Truck,
    Pedestrian,
    Cyclist,
}

impl AgentClass {
    pub const ALL: [AgentClass; 4] = [AgentClass::Car, AgentClass::Truck, AgentClass::Pedestrian, AgentClass::Cyclist];

    /// Vehicle occupants are protected; pedestrians and cyclists are not.
    pub fn is_protected(self) -> bool {
        matches!(self, AgentClass::Car | AgentClass::Truck)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentClass::Car => "car",
            AgentClass::Truck => "truck",
            AgentClass::Pedestrian => "pedestrian",
            AgentClass::Cyclist => "cyclist",
        }
    }
}

/// Full physical state of one agent at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub position: Vec2,
    pub yaw: f64,
    pub velocity: Vec2,
    pub length: f64,
    pub width: f64,
    pub mass: f64,
    pub class: AgentClass,
}

impl AgentState {
    pub fn protected(&self) -> bool {
        self.class.is_protected()
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// Unit motion direction; the yaw direction when (nearly) stationary.
    pub fn direction(&self) -> Vec2 {
        let s = self.speed();
        if s < MIN_SPEED {
            Vec2::from_angle(self.yaw)
        } else {
            self.velocity * (1.0 / s)
        }
    }
}

/// Pairwise relative encoding `[sin α, cos α, sin β, cos β, ‖d‖]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelEncoding {
    pub sin_heading_diff: f64,
    pub cos_heading_diff: f64,
    pub sin_bearing: f64,
    pub cos_bearing: f64,
    pub distance: f64,
}

impl RelEncoding {
    pub fn to_array(&self) -> [f64; 5] {
        [self.sin_heading_diff, self.cos_heading_diff, self.sin_bearing, self.cos_bearing, self.distance]
    }
}

/// Heading difference between the motions of `i` and `j`, bearing of `j`'s
/// motion relative to the displacement `d = p_j - p_i`, and the separation.
pub fn relative_encoding(i: &AgentState, j: &AgentState) -> RelEncoding {
    let ui = i.direction();
    let uj = j.direction();
    let d = j.position - i.position;
    let distance = d.norm();
    let (sin_bearing, cos_bearing) = if distance < MIN_DISTANCE {
        (0.0, 1.0)
    } else {
        let ud = d * (1.0 / distance);
        (ud.cross(uj), ud.dot(uj))
    };
    RelEncoding { sin_heading_diff: ui.cross(uj), cos_heading_diff: ui.dot(uj), sin_bearing, cos_bearing, distance }
}

/// `(front, center, rear)` along the body axis.
pub fn body_points(a: &AgentState) -> (Vec2, Vec2, Vec2) {
    let half = Vec2::from_angle(a.yaw) * (a.length / 2.0);
    (a.position + half, a.position, a.position - half)
}

/// Angle between the two motion directions, in `[0, π]`.
pub fn collision_angle(i: &AgentState, j: &AgentState) -> f64 {
    let (ui, uj) = (i.direction(), j.direction());
    ui.cross(uj).abs().atan2(ui.dot(uj))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollisionRegion {
    Front,
    Side,
    Rear,
}

/// Region of `a` struck by `b`, from the bearing of `b` relative to `a`'s
/// motion direction folded to `[0, π]`.
pub fn collision_region(a: &AgentState, b: &AgentState) -> CollisionRegion {
    let d = b.position - a.position;
    let bearing = if d.norm() < MIN_DISTANCE {
        // coincident: fall back to relative motion
        collision_angle(a, b)
    } else {
        let u = a.direction();
        u.cross(d).abs().atan2(u.dot(d))
    };
    region_for_bearing(bearing)
}

pub fn region_for_bearing(bearing: f64) -> CollisionRegion {
    let b = wrap_angle(bearing).abs();
    if b <= FRAC_PI_4 {
        CollisionRegion::Front
    } else if b >= 3.0 * FRAC_PI_4 {
        CollisionRegion::Rear
    } else {
        CollisionRegion::Side
    }
}

/// Proper rigid motion `p ↦ R(θ) p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: f64,
    pub translation: Vec2,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform { rotation: 0.0, translation: Vec2::ZERO };

    pub fn new(rotation: f64, translation: Vec2) -> Self {
        Self { rotation, translation }
    }

    /// Maps world coordinates into the frame of a pose at `origin` facing `yaw`.
    pub fn to_local(origin: Vec2, yaw: f64) -> Self {
        Self::new(-yaw, -origin.rotate(-yaw))
    }

    pub fn inverse(&self) -> Self {
        Self::new(-self.rotation, -self.translation.rotate(-self.rotation))
    }

    pub fn point(&self, p: Vec2) -> Vec2 {
        p.rotate(self.rotation) + self.translation
    }

    pub fn vector(&self, v: Vec2) -> Vec2 {
        v.rotate(self.rotation)
    }

    pub fn yaw(&self, yaw: f64) -> f64 {
        wrap_angle(yaw + self.rotation)
    }

    pub fn state(&self, s: &AgentState) -> AgentState {
        AgentState { position: self.point(s.position), yaw: self.yaw(s.yaw), velocity: self.vector(s.velocity), ..*s }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn agent(x: f64, y: f64, vx: f64, vy: f64, yaw: f64) -> AgentState {
        AgentState {
            position: Vec2::new(x, y),
            yaw,
            velocity: Vec2::new(vx, vy),
            length: 4.0,
            width: 2.0,
            mass: 1500.0,
            class: AgentClass::Car,
        }
    }

    #[test]
    fn heading_difference_cases() {
        let e = relative_encoding(&agent(0.0, 0.0, 1.0, 0.0, 0.0), &agent(5.0, 0.0, 1.0, 0.0, 0.0));
        assert_eq!((e.sin_heading_diff, e.cos_heading_diff), (0.0, 1.0));
        let e = relative_encoding(&agent(0.0, 0.0, 1.0, 0.0, 0.0), &agent(5.0, 0.0, 0.0, 1.0, 0.0));
        assert_eq!((e.sin_heading_diff, e.cos_heading_diff), (1.0, 0.0));
    }

    #[test]
    fn distance_three_four_five() {
        let e = relative_encoding(&agent(0.0, 0.0, 1.0, 0.0, 0.0), &agent(3.0, 4.0, 1.0, 0.0, 0.0));
        assert_eq!(e.distance, 5.0);
    }

    #[test]
    fn degenerate_inputs_use_fallbacks() {
        let a = agent(1.0, 1.0, 0.0, 0.0, FRAC_PI_2);
        let e = relative_encoding(&a, &a);
        assert_eq!((e.sin_bearing, e.cos_bearing, e.distance), (0.0, 1.0, 0.0));
        assert!((e.cos_heading_diff - 1.0).abs() < 1e-15);
        assert!(e.to_array().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn body_points_cases() {
        let (f, c, r) = body_points(&agent(0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!((f, c, r), (Vec2::new(2.0, 0.0), Vec2::ZERO, Vec2::new(-2.0, 0.0)));
        let (f, _, _) = body_points(&agent(0.0, 0.0, 0.0, 0.0, FRAC_PI_2));
        assert!(f.distance(Vec2::new(0.0, 2.0)) < 1e-15);
        let (f, _, _) = body_points(&agent(0.0, 0.0, 0.0, 0.0, PI));
        assert!(f.distance(Vec2::new(-2.0, 0.0)) < 1e-15);
    }

    #[test]
    fn collision_angle_cases() {
        let a = agent(0.0, 0.0, 3.0, 0.0, 0.0);
        assert_eq!(collision_angle(&a, &agent(0.0, 0.0, 7.0, 0.0, 0.0)), 0.0);
        assert_eq!(collision_angle(&a, &agent(0.0, 0.0, -2.0, 0.0, 0.0)), PI);
        assert_eq!(collision_angle(&a, &agent(0.0, 0.0, 0.0, 5.0, 0.0)), FRAC_PI_2);
        // stationary agents use yaw
        assert_eq!(collision_angle(&a, &agent(0.0, 0.0, 0.0, 0.0, PI)), PI);
    }

    #[test]
    fn regions_by_bearing() {
        let a = agent(0.0, 0.0, 1.0, 0.0, 0.0);
        assert_eq!(collision_region(&a, &agent(5.0, 0.5, 0.0, 0.0, 0.0)), CollisionRegion::Front);
        assert_eq!(collision_region(&a, &agent(0.0, -5.0, 0.0, 0.0, 0.0)), CollisionRegion::Side);
        assert_eq!(collision_region(&a, &agent(-5.0, 1.0, 0.0, 0.0, 0.0)), CollisionRegion::Rear);
        assert_eq!(region_for_bearing(FRAC_PI_4), CollisionRegion::Front);
        assert_eq!(region_for_bearing(-3.0 * FRAC_PI_4), CollisionRegion::Rear);
    }

    #[test]
    fn local_transform_puts_pose_at_origin() {
        let t = RigidTransform::to_local(Vec2::new(3.0, -2.0), 0.7);
        let p = t.point(Vec2::new(3.0, -2.0));
        assert!(p.norm() < 1e-15);
        assert!(t.yaw(0.7).abs() < 1e-15);
        let back = t.inverse().point(t.point(Vec2::new(1.0, 2.0)));
        assert!(back.distance(Vec2::new(1.0, 2.0)) < 1e-14);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-15);
    }
}
