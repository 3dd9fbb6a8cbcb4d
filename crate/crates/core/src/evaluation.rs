//! Displacement metrics, the constant-velocity baseline and subset reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::intention::{label_intentions, select_mode, IntentionConfig, JointPrediction, Lateral};
use crate::model::Model;
use crate::scene::{AgentHistory, Scenario, Template};

fn check_horizon(pred: &[Vec2], truth: &[Vec2], horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("metric horizon must be at least one step".into()));
    }
    if horizon > pred.len() || horizon > truth.len() {
        return Err(Error::InvalidArgument(format!(
            "metric horizon {horizon} exceeds trajectory lengths {} / {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Mean distance over the first `horizon` steps.
pub fn ade(pred: &[Vec2], truth: &[Vec2], horizon: usize) -> Result<f64> {
    check_horizon(pred, truth, horizon)?;
    Ok(pred[..horizon].iter().zip(truth).map(|(p, t)| p.distance(*t)).sum::<f64>() / horizon as f64)
}

/// Distance at step `horizon` (1-based).
pub fn fde(pred: &[Vec2], truth: &[Vec2], horizon: usize) -> Result<f64> {
    check_horizon(pred, truth, horizon)?;
    Ok(pred[horizon - 1].distance(truth[horizon - 1]))
}

/// Extrapolates the last observed velocity, the difference of the last two
/// positions over `dt`; a single observed state is held in place.
pub fn constant_velocity_baseline(history: &AgentHistory, dt: f64, horizon: usize) -> Vec<Vec2> {
    let s = &history.states;
    let last = s[s.len() - 1].position();
    let v = if s.len() >= 2 { (last - s[s.len() - 2].position()) * (1.0 / dt) } else { Vec2::ZERO };
    (1..=horizon).map(|t| last + v * (t as f64 * dt)).collect()
}

/// Anything that produces a joint prediction for a scenario.
pub trait Predictor {
    fn name(&self) -> &str;
    fn predict_joint(&self, scn: &Scenario) -> Result<JointPrediction>;
}

impl Predictor for Model {
    fn name(&self) -> &str {
        "model"
    }

    fn predict_joint(&self, scn: &Scenario) -> Result<JointPrediction> {
        Ok(self.predict(scn)?.prediction)
    }
}

/// Single-mode constant-velocity prediction of every agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantVelocity {
    pub horizon: usize,
}

impl Predictor for ConstantVelocity {
    fn name(&self) -> &str {
        "constant_velocity"
    }

    fn predict_joint(&self, scn: &Scenario) -> Result<JointPrediction> {
        let paths = scn.agents.iter().map(|a| constant_velocity_baseline(a, scn.dt, self.horizon)).collect();
        JointPrediction::from_points(&[paths], vec![1.0])
    }
}

/// Per-scenario metrics at one horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioMetrics {
    pub ego_ade: f64,
    pub ego_fde: f64,
    pub all_ade: f64,
    pub all_fde: f64,
    pub ego_min_ade: f64,
    pub ego_min_fde: f64,
    pub all_min_ade: f64,
    pub all_min_fde: f64,
}

/// Metrics of the selected mode plus the best-of-K variants, where the best
/// mode is chosen per metric (joint over agents for the all-agent scope).
pub fn scenario_metrics(scn: &Scenario, jp: &JointPrediction, horizon: usize) -> Result<ScenarioMetrics> {
    let truth = scn.future_truth()?;
    if jp.num_agents() != truth.len() {
        return Err(crate::error::dim_err("prediction agents", truth.len(), jp.num_agents()));
    }
    let ego = scn.ego_index;
    let per_mode = |k: usize| -> Result<[f64; 4]> {
        let mut all = [0.0; 2];
        let mut ego_m = [0.0; 2];
        for (i, y) in truth.iter().enumerate() {
            let p = jp.agent_path(k, i);
            let (a, f) = (ade(&p, y, horizon)?, fde(&p, y, horizon)?);
            all[0] += a / truth.len() as f64;
            all[1] += f / truth.len() as f64;
            if i == ego {
                ego_m = [a, f];
            }
        }
        Ok([ego_m[0], ego_m[1], all[0], all[1]])
    };
    let rows = (0..jp.num_modes()).map(per_mode).collect::<Result<Vec<_>>>()?;
    let sel = rows[select_mode(jp)];
    let min = |c: usize| rows.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
    Ok(ScenarioMetrics {
        ego_ade: sel[0],
        ego_fde: sel[1],
        all_ade: sel[2],
        all_fde: sel[3],
        ego_min_ade: min(0),
        ego_min_fde: min(1),
        all_min_ade: min(2),
        all_min_fde: min(3),
    })
}

pub const REPORT_HORIZONS_S: [u32; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Ego,
    All,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::Ego => "ego",
            Scope::All => "all",
        }
    }
}

/// One aggregated cell of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub subset: String,
    pub model: String,
    pub scope: Scope,
    pub horizon_s: u32,
    pub ade: f64,
    pub fde: f64,
    pub min_ade: f64,
    pub min_fde: f64,
    pub scenarios: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

/// Subsets a scenario belongs to: `all`, `normal` or `conflict`, the ego's
/// lateral intention, and the two crossed.
pub fn subsets(scn: &Scenario, cfg: &IntentionConfig) -> Result<Vec<String>> {
    let kind = if scn.template == Some(Template::CrossingConflict) { "conflict" } else { "normal" };
    let future = scn
        .ego()
        .future
        .as_deref()
        .ok_or_else(|| Error::AgentLength { agent_id: scn.ego().id, message: "missing ground-truth future".into() })?;
    let lateral: Lateral = label_intentions(future, cfg)?.0;
    Ok(vec!["all".to_string(), kind.to_string(), lateral.code().to_string(), format!("{kind}/{}", lateral.code())])
}

/// Aggregates per-scenario metrics (plain means) by subset, scope and horizon.
pub fn evaluate_predictions(model: &str, items: &[(&Scenario, &JointPrediction)]) -> Result<MetricsReport> {
    let cfg = IntentionConfig::default();
    // (subset, scope, horizon) -> sums of [ade, fde, min_ade, min_fde] and count
    let mut acc: BTreeMap<(String, Scope, u32), ([f64; 4], usize)> = BTreeMap::new();
    for (scn, jp) in items {
        let tags = subsets(scn, &cfg)?;
        for h in REPORT_HORIZONS_S {
            let steps = (f64::from(h) / scn.dt).round() as usize;
            if steps == 0 || steps > jp.horizon() || steps > scn.horizon_future {
                continue;
            }
            let m = scenario_metrics(scn, jp, steps)?;
            for tag in &tags {
                for (scope, vals) in [
                    (Scope::Ego, [m.ego_ade, m.ego_fde, m.ego_min_ade, m.ego_min_fde]),
                    (Scope::All, [m.all_ade, m.all_fde, m.all_min_ade, m.all_min_fde]),
                ] {
                    let e = acc.entry((tag.clone(), scope, h)).or_insert(([0.0; 4], 0));
                    for (s, v) in e.0.iter_mut().zip(vals) {
                        *s += v;
                    }
                    e.1 += 1;
                }
            }
        }
    }
    let rows = acc
        .into_iter()
        .map(|((subset, scope, horizon_s), (s, n))| {
            let c = n as f64;
            MetricsRow {
                subset,
                model: model.to_string(),
                scope,
                horizon_s,
                ade: s[0] / c,
                fde: s[1] / c,
                min_ade: s[2] / c,
                min_fde: s[3] / c,
                scenarios: n,
            }
        })
        .collect();
    Ok(MetricsReport { rows })
}

pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, dataset: &[Scenario]) -> Result<MetricsReport> {
    let preds = dataset.iter().map(|s| predictor.predict_joint(s)).collect::<Result<Vec<_>>>()?;
    let items: Vec<_> = dataset.iter().zip(&preds).collect();
    evaluate_predictions(predictor.name(), &items)
}

impl MetricsReport {
    pub fn merge(mut self, other: MetricsReport) -> Self {
        self.rows.extend(other.rows);
        self
    }

    pub fn get(&self, model: &str, subset: &str, scope: Scope, horizon_s: u32) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.subset == subset && r.scope == scope && r.horizon_s == horizon_s)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Table layout: one row per subset, model, scope and metric, one column
    /// per horizon.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["subset".to_string(), "model".into(), "scope".into(), "metric".into()];
        header.extend(REPORT_HORIZONS_S.iter().map(|h| format!("{h}s")));
        w.write_record(&header)?;
        let mut groups: BTreeMap<(&str, &str, Scope), BTreeMap<u32, &MetricsRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.subset.as_str(), r.model.as_str(), r.scope)).or_default().insert(r.horizon_s, r);
        }
        for ((subset, model, scope), by_h) in groups {
            let metrics: [(&str, fn(&MetricsRow) -> f64); 4] =
                [("ADE", |r| r.ade), ("FDE", |r| r.fde), ("minADE", |r| r.min_ade), ("minFDE", |r| r.min_fde)];
            for (name, get) in metrics {
                let mut rec = vec![subset.to_string(), model.to_string(), scope.name().to_string(), name.to_string()];
                rec.extend(REPORT_HORIZONS_S.iter().map(|h| by_h.get(h).map_or(String::new(), |r| get(r).to_string())));
                w.write_record(&rec)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scenario, StateRecord};

    fn line(n: usize, off: Vec2, growth: f64) -> (Vec<Vec2>, Vec<Vec2>) {
        let truth: Vec<Vec2> = (1..=n).map(|t| Vec2::new(t as f64, 0.0)).collect();
        let pred = truth.iter().enumerate().map(|(t, p)| *p + off + Vec2::new(0.0, growth * (t + 1) as f64)).collect();
        (pred, truth)
    }

    #[test]
    fn metric_cases() {
        let (p, t) = line(10, Vec2::ZERO, 0.0);
        assert_eq!(ade(&p, &t, 10).unwrap(), 0.0);
        assert_eq!(fde(&p, &t, 10).unwrap(), 0.0);
        let (p, t) = line(10, Vec2::new(1.0, 0.0), 0.0);
        for h in 1..=10 {
            assert!((ade(&p, &t, h).unwrap() - 1.0).abs() < 1e-15);
        }
        let (p, t) = line(10, Vec2::new(0.0, 2.0), 0.0);
        assert_eq!(fde(&p, &t, 4).unwrap(), 2.0);
        let (p, t) = line(10, Vec2::ZERO, 0.1);
        assert!((ade(&p, &t, 10).unwrap() - 0.55).abs() < 1e-12);
        assert!((fde(&p, &t, 10).unwrap() - 1.0).abs() < 1e-12);
        assert!(ade(&p, &t, 0).is_err());
        assert!(fde(&p, &t, 11).is_err());
    }

    #[test]
    fn baseline_cases() {
        let scn = generate_scenario(Template::Straight, 1, 3);
        let mut a = scn.agents[0].clone();
        // exact constant-velocity history
        a.states = (0..10)
            .map(|t| StateRecord { x: 2.0 * t as f64 * 0.1, y: -(t as f64) * 0.1, yaw: 0.0, vx: 2.0, vy: -1.0 })
            .collect();
        let pred = constant_velocity_baseline(&a, 0.1, 5);
        for (t, p) in pred.iter().enumerate() {
            let expect = Vec2::new(2.0 * (10 + t) as f64 * 0.1, -((10 + t) as f64) * 0.1);
            assert!(p.distance(expect) < 1e-12);
        }
        a.states.truncate(1);
        assert!(constant_velocity_baseline(&a, 0.1, 3).iter().all(|p| *p == a.states[0].position()));
    }

    struct Oracle;

    impl Predictor for Oracle {
        fn name(&self) -> &str {
            "oracle"
        }
        fn predict_joint(&self, scn: &Scenario) -> Result<JointPrediction> {
            JointPrediction::from_points(&[scn.future_truth()?], vec![1.0])
        }
    }

    #[test]
    fn oracle_report_is_zero_and_means_aggregate() {
        let data: Vec<Scenario> = (0..6).map(|s| generate_scenario(Template::ALL[s as usize % 5], 3, s)).collect();
        let rep = evaluate(&Oracle, &data).unwrap();
        assert!(rep.rows.iter().all(|r| r.ade == 0.0 && r.fde == 0.0));
        let cv = evaluate(&ConstantVelocity { horizon: 50 }, &data).unwrap();
        let row = cv.get("constant_velocity", "all", Scope::Ego, 5).unwrap();
        let mean = data
            .iter()
            .map(|s| {
                let jp = ConstantVelocity { horizon: 50 }.predict_joint(s).unwrap();
                scenario_metrics(s, &jp, 50).unwrap().ego_ade
            })
            .sum::<f64>()
            / data.len() as f64;
        assert!((row.ade - mean).abs() < 1e-12);
        assert_eq!(row.scenarios, 6);
        let csv = cv.to_csv().unwrap();
        assert!(csv.starts_with("subset,model,scope,metric,1s,2s,3s,4s,5s\n"));
    }
}
