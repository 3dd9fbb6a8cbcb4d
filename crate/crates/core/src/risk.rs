//! Collision probability, crash harm, per-trajectory risk and the safety,
//! care and responsiveness costs used to rank joint predictions.
//!
//! Positions are uncertain with isotropic Gaussian noise whose standard
//! deviation grows linearly with the number of steps ahead. Two agents collide
//! when a body point of one lies within `(w_i + w_j) / 2` of the other's
//! centre; that disc probability is evaluated exactly as a Poisson race
//! (see [`disc_probability`]).

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::geometry::{
    body_points, collision_angle, collision_region, AgentClass, AgentState, CollisionRegion, Vec2, MIN_SPEED,
};
use crate::intention::JointPrediction;
use crate::scene::{PolylineKind, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyModel {
    /// Position standard deviation (m) at zero steps ahead.
    pub sigma0: f64,
    /// Added standard deviation per step (m).
    pub growth: f64,
}

impl Default for UncertaintyModel {
    fn default() -> Self {
        Self { sigma0: 0.5, growth: 0.05 }
    }
}

impl UncertaintyModel {
    pub fn sigma(&self, steps_ahead: usize) -> f64 {
        self.sigma0 + self.growth * steps_ahead as f64
    }
}

/// Logistic harm model `H = 1 / (1 + exp(-(mu0 + mu1·Δv + mu_area)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarmCoefficients {
    pub mu0: f64,
    /// Per m/s.
    pub mu1: f64,
    pub front: f64,
    pub side: f64,
    pub rear: f64,
}

impl Default for HarmCoefficients {
    fn default() -> Self {
        Self { mu0: -6.0, mu1: 0.4, front: 0.2, side: 0.8, rear: 0.0 }
    }
}

impl HarmCoefficients {
    pub fn area(&self, region: CollisionRegion) -> f64 {
        match region {
            CollisionRegion::Front => self.front,
            CollisionRegion::Side => self.side,
            CollisionRegion::Rear => self.rear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub safety: f64,
    pub care: f64,
    pub responsiveness: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { safety: 33.3, care: 33.3, responsiveness: 33.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub uncertainty: UncertaintyModel,
    pub harm: HarmCoefficients,
    /// Harm multiplier for vehicle occupants.
    pub protected_multiplier: f64,
    /// Harm multiplier for pedestrians and cyclists.
    pub unprotected_multiplier: f64,
    pub weights: CostWeights,
    /// Slope `s` of the responsiveness map `f(R) = s·R`.
    pub response_scale: f64,
    /// Weight of `-ln p_k` in the ranking score.
    pub prob_weight: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            uncertainty: UncertaintyModel::default(),
            harm: HarmCoefficients::default(),
            protected_multiplier: 1.0,
            unprotected_multiplier: 2.0,
            weights: CostWeights::default(),
            response_scale: 1.0,
            prob_weight: 1.0,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<()> {
        let u = &self.uncertainty;
        if !(u.sigma0 > 0.0) || !(u.growth >= 0.0) {
            return Err(Error::InvalidArgument("uncertainty needs sigma0 > 0 and growth >= 0".into()));
        }
        let h = &self.harm;
        if ![h.mu0, h.front, h.side, h.rear].iter().all(|v| v.is_finite()) || !(h.mu1 > 0.0 && h.mu1.is_finite()) {
            return Err(Error::InvalidArgument("harm coefficients must be finite with mu1 > 0".into()));
        }
        let w = &self.weights;
        let nonneg = [
            w.safety,
            w.care,
            w.responsiveness,
            self.protected_multiplier,
            self.unprotected_multiplier,
            self.response_scale,
            self.prob_weight,
        ];
        if !nonneg.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument("risk weights and multipliers must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn class_multiplier(&self, class: AgentClass) -> f64 {
        if class.is_protected() {
            self.protected_multiplier
        } else {
            self.unprotected_multiplier
        }
    }
}

/// Probability that a point distributed as `N(μ, σ²I)` in the plane, with
/// `|μ| = d`, lands within `r` of the origin.
///
/// With `λ = d²/2σ²` and `y = r²/2σ²` this equals `Pr(Pois(y) > Pois(λ))` for
/// independent Poisson variables, summed as `Σ_k pmf_λ(k)·Pr(Pois(y) > k)`.
pub fn disc_probability(d: f64, r: f64, sigma: f64) -> f64 {
    disc_probability_grad(d, r, sigma).0
}

/// Returns the probability and its derivative with respect to `d`.
pub fn disc_probability_grad(d: f64, r: f64, sigma: f64) -> (f64, f64) {
    let d = d.abs();
    // Beyond 8σ the probability is below exp(-32).
    if !(r > 0.0) || d - r > 8.0 * sigma {
        return (0.0, 0.0);
    }
    let s2 = sigma * sigma;
    let lam = d * d / (2.0 * s2);
    let y = r * r / (2.0 * s2);
    // Past kmax both the Poisson(y) pmf and its tail are below 1e-20.
    let kmax = (y + 10.0 * y.sqrt() + 20.0).ceil() as usize;
    let mut p = 0.0;
    let mut dlam = 0.0;
    if lam.max(y) < 600.0 {
        // pmf recurrences in linear space; exp(-600) is still a normal float
        let (mut l_k, mut y_k) = ((-lam).exp(), (-y).exp());
        let mut cdf_y = 0.0;
        for k in 0..=kmax {
            cdf_y += y_k;
            let y_next = y_k * y / (k + 1) as f64;
            p += l_k * (1.0 - cdf_y).max(0.0);
            dlam -= l_k * y_next;
            l_k *= lam / (k + 1) as f64;
            y_k = y_next;
        }
    } else {
        let pmf_y = poisson_pmf(y, kmax + 1);
        let pmf_l = poisson_pmf(lam, kmax);
        let mut tail: f64 = pmf_y[kmax + 1];
        for k in (0..=kmax).rev() {
            p += pmf_l[k] * tail;
            dlam -= pmf_l[k] * pmf_y[k + 1];
            tail += pmf_y[k];
        }
    }
    (p.clamp(0.0, 1.0), dlam * d / s2)
}

fn poisson_pmf(mean: f64, kmax: usize) -> Vec<f64> {
    if mean == 0.0 {
        let mut v = vec![0.0; kmax + 1];
        v[0] = 1.0;
        return v;
    }
    let ln_mean = mean.ln();
    let mut log_p = -mean;
    (0..=kmax)
        .map(|k| {
            if k > 0 {
                log_p += ln_mean - (k as f64).ln();
            }
            log_p.exp()
        })
        .collect()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Combined standard deviation of the separation between two agents that
/// each carry `σ_t`.
fn pair_sigma(steps_ahead: usize, u: &UncertaintyModel) -> f64 {
    u.sigma(steps_ahead) * std::f64::consts::SQRT_2
}

struct PairProbability {
    value: f64,
    /// Gradients with respect to translations of `a` and of `b`.
    da: Vec2,
    db: Vec2,
}

fn pair_probability(a: &AgentState, b: &AgentState, sigma: f64) -> PairProbability {
    let r = (a.width + b.width) / 2.0;
    let mut sum = 0.0;
    let mut da = Vec2::ZERO;
    let mut db = Vec2::ZERO;
    let (fa, ca, ra) = body_points(a);
    let (fb, cb, rb) = body_points(b);
    let pairs = [(fa, cb, 1.0), (ca, cb, 1.0), (ra, cb, 1.0), (fb, ca, -1.0), (cb, ca, -1.0), (rb, ca, -1.0)];
    for (point, centre, sign) in pairs {
        let diff = point - centre;
        let d = diff.norm();
        let (p, dp) = disc_probability_grad(d, r, sigma);
        sum += p;
        if d > 0.0 && dp != 0.0 {
            // `diff` points from the other centre to this agent's body point
            let g = diff * (dp / d);
            da += g * sign;
            db += g * -sign;
        }
    }
    let half = sum / 2.0;
    if half >= 1.0 {
        PairProbability { value: 1.0, da: Vec2::ZERO, db: Vec2::ZERO }
    } else {
        PairProbability { value: half, da: da * 0.5, db: db * 0.5 }
    }
}

/// Collision probability of two agents `steps_ahead` steps into the future:
/// the disc probability for each body point (front, centre, rear) of one
/// agent against the other's centre, averaged over both directions and capped
/// at 1.
pub fn collision_probability(a: &AgentState, b: &AgentState, steps_ahead: usize, u: &UncertaintyModel) -> f64 {
    pair_probability(a, b, pair_sigma(steps_ahead, u)).value
}

/// Speed change of `A` in a collision with `B` at angle `theta` between the
/// two velocity vectors.
pub fn delta_v(m_a: f64, m_b: f64, v_a: f64, v_b: f64, theta: f64) -> f64 {
    let rel = (v_a * v_a + v_b * v_b - 2.0 * v_a * v_b * theta.cos()).max(0.0).sqrt();
    m_b / (m_a + m_b) * rel
}

pub fn harm(dv: f64, region: CollisionRegion, coeffs: &HarmCoefficients) -> f64 {
    1.0 / (1.0 + (-(coeffs.mu0 + coeffs.mu1 * dv + coeffs.area(region))).exp())
}

/// Harm of a collision between the ego and another agent: the larger of the
/// two class-weighted harms, capped at 1.
pub fn pair_harm(ego: &AgentState, other: &AgentState, cfg: &RiskConfig) -> f64 {
    let theta = collision_angle(ego, other);
    let (ve, vo) = (ego.speed(), other.speed());
    let h_ego = harm(delta_v(ego.mass, other.mass, ve, vo, theta), collision_region(ego, other), &cfg.harm);
    let h_other = harm(delta_v(other.mass, ego.mass, vo, ve, theta), collision_region(other, ego), &cfg.harm);
    (cfg.class_multiplier(ego.class) * h_ego).max(cfg.class_multiplier(other.class) * h_other).min(1.0)
}

/// Harm of the ego striking an immovable boundary side-on: `Δv` is the full
/// ego speed.
pub fn boundary_harm(ego: &AgentState, cfg: &RiskConfig) -> f64 {
    cfg.class_multiplier(ego.class) * harm(ego.speed(), CollisionRegion::Side, &cfg.harm)
}

/// `max_t H_t·P_t` and the first step attaining it.
pub fn max_risk(harms: &[f64], probs: &[f64]) -> (f64, usize) {
    let mut best = (0.0, 0);
    for (t, (h, p)) in harms.iter().zip(probs).enumerate() {
        let v = h * p;
        if v > best.0 {
            best = (v, t);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRisk {
    pub risk: f64,
    pub argmax: usize,
    pub probabilities: Vec<f64>,
    pub harms: Vec<f64>,
}

/// Risk between two predicted state sequences; step `t` is `t + 1` steps ahead.
pub fn trajectory_risk(ego: &[AgentState], other: &[AgentState], cfg: &RiskConfig) -> Result<PairRisk> {
    if ego.len() != other.len() {
        return Err(dim_err("trajectory_risk horizon", ego.len(), other.len()));
    }
    if ego.is_empty() {
        return Err(Error::InvalidArgument("trajectory_risk needs at least one step".into()));
    }
    let probabilities: Vec<f64> = ego
        .iter()
        .zip(other)
        .enumerate()
        .map(|(t, (e, o))| collision_probability(e, o, t + 1, &cfg.uncertainty))
        .collect();
    let harms: Vec<f64> = ego.iter().zip(other).map(|(e, o)| pair_harm(e, o, cfg)).collect();
    let (risk, argmax) = max_risk(&harms, &probabilities);
    Ok(PairRisk { risk, argmax, probabilities, harms })
}

/// `(ΣR_i + R_b) / 2n`; an empty scene gives `R_b / 2`.
pub fn safety_cost(risks: &[f64], boundary: f64) -> f64 {
    let n = risks.len().max(1) as f64;
    (risks.iter().sum::<f64>() + boundary) / (2.0 * n)
}

/// `(1/n)·Σ_i Σ_j |R_i − R_j|` over ordered pairs.
pub fn care_cost(risks: &[f64]) -> f64 {
    if risks.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for a in risks {
        for b in risks {
            total += (a - b).abs();
        }
    }
    total / risks.len() as f64
}

/// `Σ_i f(R_i)` with `f(R) = scale·R`.
pub fn responsiveness_cost(risks: &[f64], scale: f64) -> f64 {
    risks.iter().map(|r| scale * r).sum()
}

pub fn total_risk_cost(c_s: f64, c_c: f64, c_r: f64, w: &CostWeights) -> f64 {
    w.safety * c_s + w.care * c_c + w.responsiveness * c_r
}

/// Risk assessment of one mode, from the ego's point of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub k: usize,
    pub p: f64,
    /// Risk per non-ego agent, in scenario order.
    #[serde(rename = "R")]
    pub risks: Vec<f64>,
    #[serde(rename = "R_b")]
    pub boundary_risk: f64,
    pub c_s: f64,
    pub c_c: f64,
    pub c_r: f64,
    #[serde(rename = "L_risk")]
    pub l_risk: f64,
    /// 1 for the preferred mode.
    pub rank: usize,
    /// Per non-ego agent, the collision probability at each future step.
    #[serde(skip)]
    pub collision_probabilities: Vec<Vec<f64>>,
}

impl RiskReport {
    pub fn score(&self, prob_weight: f64) -> f64 {
        self.l_risk - prob_weight * self.p.ln()
    }
}

/// Predicted states of agent `i` in mode `k`: velocity from successive
/// positions (the first step measured from the last observed position),
/// heading from the velocity, held while the agent is stationary.
pub fn predicted_states(scn: &Scenario, jp: &JointPrediction, k: usize, i: usize) -> Vec<AgentState> {
    let agent = &scn.agents[i];
    let last = agent.current();
    let mut prev = last.position;
    let mut yaw = last.yaw;
    (0..jp.horizon())
        .map(|t| {
            let p = jp.point(k, i, t);
            let v = (p - prev) * (1.0 / scn.dt);
            if v.norm() > MIN_SPEED {
                yaw = v.angle();
            }
            prev = p;
            AgentState { position: p, yaw, velocity: v, ..last }
        })
        .collect()
}

fn boundary_clearance(p: Vec2, scn: &Scenario) -> Option<(f64, Vec2)> {
    let mut best: Option<(f64, Vec2)> = None;
    for poly in scn.polylines(PolylineKind::RoadBoundary) {
        let w = &poly.waypoints;
        let segs = w.windows(2).map(|s| (s[0], s[1])).chain(w.first().filter(|_| w.len() == 1).map(|&a| (a, a)));
        for (a, b) in segs {
            let ab = b - a;
            let len2 = ab.norm_sq();
            let s = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let q = a + ab * s;
            let d2 = (p - q).norm_sq();
            if best.is_none_or(|(bd, _)| d2 < bd) {
                best = Some((d2, q));
            }
        }
    }
    best.map(|(d2, q)| (d2.sqrt(), q))
}

/// Risk report of mode `k` together with `dL_risk/d position` for every
/// agent and step, `[N, T]`. Harms are held fixed and each max over steps
/// passes its gradient to the maximising step only.
pub fn mode_risk_with_grad(
    scn: &Scenario,
    jp: &JointPrediction,
    k: usize,
    cfg: &RiskConfig,
) -> Result<(RiskReport, Vec<Vec<Vec2>>)> {
    check_prediction(scn, jp)?;
    if k >= jp.num_modes() {
        return Err(Error::IndexOutOfRange { index: k, len: jp.num_modes() });
    }
    let states: Vec<Vec<AgentState>> = (0..scn.num_agents()).map(|i| predicted_states(scn, jp, k, i)).collect();
    let (mut report, grad) = risk_from_states(scn, &states, cfg);
    report.k = k;
    report.p = jp.mode_probs[k];
    Ok((report, grad))
}

/// Risk of explicit per-agent state sequences; gradients treat each state's
/// velocity and heading as fixed and move only its position.
fn risk_from_states(scn: &Scenario, states: &[Vec<AgentState>], cfg: &RiskConfig) -> (RiskReport, Vec<Vec<Vec2>>) {
    let n_agents = states.len();
    let horizon = states[0].len();
    let ego = scn.ego_index;

    let others: Vec<usize> = (0..n_agents).filter(|&i| i != ego).collect();
    let mut risks = Vec::with_capacity(others.len());
    let mut probs_out = Vec::with_capacity(others.len());
    // (agent, step, d risk / d ego position, d risk / d agent position)
    let mut risk_grads = Vec::with_capacity(others.len());
    for &j in &others {
        let mut probs = Vec::with_capacity(horizon);
        let mut best = (0.0, 0, Vec2::ZERO, Vec2::ZERO);
        for t in 0..horizon {
            let (e, o) = (&states[ego][t], &states[j][t]);
            let pp = pair_probability(e, o, pair_sigma(t + 1, &cfg.uncertainty));
            let h = pair_harm(e, o, cfg);
            let v = h * pp.value;
            if v > best.0 {
                best = (v, t, pp.da * h, pp.db * h);
            }
            probs.push(pp.value);
        }
        risks.push(best.0);
        probs_out.push(probs);
        risk_grads.push((j, best.1, best.2, best.3));
    }

    let mut boundary = (0.0, 0, Vec2::ZERO);
    for t in 0..horizon {
        let e = &states[ego][t];
        let sigma = cfg.uncertainty.sigma(t + 1);
        let (f, c, r) = body_points(e);
        let mut nearest: Option<(f64, Vec2)> = None;
        for point in [f, c, r] {
            if let Some((d, q)) = boundary_clearance(point, scn) {
                if nearest.is_none_or(|(bd, _)| d < bd) {
                    nearest = Some((d, point - q));
                }
            }
        }
        let Some((d, away)) = nearest else { break };
        let z = (e.width / 2.0 - d) / sigma;
        let p = normal_cdf(z);
        let v = boundary_harm(e, cfg) * p;
        if v > boundary.0 {
            let dir = if d > 0.0 { away * (1.0 / d) } else { Vec2::ZERO };
            // dP/dd = -φ(z)/σ, and d grows along `dir`
            boundary = (v, t, dir * (-boundary_harm(e, cfg) * normal_pdf(z) / sigma));
        }
    }

    let w = &cfg.weights;
    let c_s = safety_cost(&risks, boundary.0);
    let c_c = care_cost(&risks);
    let c_r = responsiveness_cost(&risks, cfg.response_scale);
    let l_risk = total_risk_cost(c_s, c_c, c_r, w);

    let n = others.len().max(1) as f64;
    let mut grad = vec![vec![Vec2::ZERO; horizon]; n_agents];
    for (a, &(j, t, d_ego, d_other)) in risk_grads.iter().enumerate() {
        let signs: f64 = risks.iter().map(|b| sign(risks[a] - b)).sum();
        let dl_dr = w.safety / (2.0 * n) + w.care * 2.0 * signs / n + w.responsiveness * cfg.response_scale;
        if risks[a] > 0.0 {
            grad[ego][t] += d_ego * dl_dr;
            grad[j][t] += d_other * dl_dr;
        }
    }
    if boundary.0 > 0.0 {
        grad[ego][boundary.1] += boundary.2 * (w.safety / (2.0 * n));
    }

    (
        RiskReport {
            k: 0,
            p: 1.0,
            risks,
            boundary_risk: boundary.0,
            c_s,
            c_c,
            c_r,
            l_risk,
            rank: 0,
            collision_probabilities: probs_out,
        },
        grad,
    )
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn mode_risk(scn: &Scenario, jp: &JointPrediction, k: usize, cfg: &RiskConfig) -> Result<RiskReport> {
    Ok(mode_risk_with_grad(scn, jp, k, cfg)?.0)
}

fn check_prediction(scn: &Scenario, jp: &JointPrediction) -> Result<()> {
    if jp.num_agents() != scn.num_agents() {
        return Err(dim_err("prediction agents", scn.num_agents(), jp.num_agents()));
    }
    if jp.num_modes() == 0 || jp.horizon() == 0 {
        return Err(Error::InvalidArgument("prediction needs at least one mode and one step".into()));
    }
    if !jp.trajectories.is_finite() {
        return Err(Error::NonFinite("predicted trajectories".into()));
    }
    Ok(())
}

/// One report per mode, in mode order, with `rank` set by ascending
/// `L_risk − λ_p·ln p_k` (ties to the lower mode index).
pub fn rank_trajectories(scn: &Scenario, jp: &JointPrediction, cfg: &RiskConfig) -> Result<Vec<RiskReport>> {
    let mut reports = (0..jp.num_modes()).map(|k| mode_risk(scn, jp, k, cfg)).collect::<Result<Vec<_>>>()?;
    for (rank, k) in ranking(&reports, cfg.prob_weight).into_iter().enumerate() {
        reports[k].rank = rank + 1;
    }
    Ok(reports)
}

/// Mode indices from best to worst score.
pub fn ranking(reports: &[RiskReport], prob_weight: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| reports[a].score(prob_weight).total_cmp(&reports[b].score(prob_weight)).then(a.cmp(&b)));
    order
}
