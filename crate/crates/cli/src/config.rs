//! Resolved run configuration: defaults, then a flat dotted-key JSON file,
//! then `RISKCAST_SEED`, then command-line overrides.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use riskcast::model::ModelConfig;
use riskcast::risk::RiskConfig;
use riskcast::scene::{GeneratorConfig, Template};
use riskcast::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SEED_ENV: &str = "RISKCAST_SEED";
pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// Scenario generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    /// Template name, or `all` to cycle through every template.
    pub template: String,
    pub count: usize,
    pub agents: usize,
    pub dt: f64,
    pub horizon_past: usize,
    pub horizon_future: usize,
    pub jitter: f64,
    pub random_pose: bool,
}

impl Default for GenSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            template: "all".into(),
            count: 10,
            agents: 3,
            dt: g.dt,
            horizon_past: g.horizon_past,
            horizon_future: g.horizon_future,
            jitter: g.jitter,
            random_pose: g.random_pose,
        }
    }
}

impl GenSection {
    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            dt: self.dt,
            horizon_past: self.horizon_past,
            horizon_future: self.horizon_future,
            jitter: self.jitter,
            random_pose: self.random_pose,
        }
    }

    /// Templates to cycle through, in generation order.
    pub fn templates(&self) -> Result<Vec<Template>> {
        if self.template == "all" {
            return Ok(Template::ALL.to_vec());
        }
        let t = self.template.parse::<Template>().map_err(|e| anyhow::anyhow!("gen.template: {e}"))?;
        Ok(vec![t])
    }
}

/// Which contiguous slice of a dataset directory a subcommand works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    All,
    Train,
    Val,
    Test,
}

/// Input paths, recorded for provenance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub data: Option<String>,
    pub model: Option<String>,
    pub scenario: Option<String>,
    pub predictions: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub gen: GenSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub risk: RiskConfig,
    pub input: InputSection,
}


/// Error in how the tool was invoked rather than in an input file.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Flat map of dotted keys to leaf values. `train.seed` is omitted because
/// the top-level `seed` drives every module.
pub type FlatConfig = BTreeMap<String, Value>;

fn flatten_into(prefix: &str, v: &Value, out: &mut FlatConfig) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, child, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn unflatten(flat: &FlatConfig) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().unwrap_or_default();
        let mut node = &mut root;
        for p in parts {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("intermediate keys are objects");
        }
        node.insert(last.to_string(), v.clone());
    }
    Value::Object(root)
}

impl RunConfig {
    pub fn to_flat(&self) -> FlatConfig {
        let mut flat = FlatConfig::new();
        flatten_into("", &serde_json::to_value(self).expect("config serializes"), &mut flat);
        flat.remove("train.seed");
        flat
    }

    fn from_flat(flat: &FlatConfig) -> Result<Self> {
        let value = unflatten(flat);
        let mut cfg: RunConfig =
            serde_path_to_error::deserialize(value).map_err(|e| anyhow::anyhow!("{}: {}", e.path(), e.inner()))?;
        cfg.train.seed = cfg.seed;
        cfg.gen.templates()?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        cfg.risk.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_flat()).expect("config serializes")
    }
}

/// Parses a `key=value` override; the value is read as JSON when it parses,
/// otherwise as a string.
pub fn parse_assignment(s: &str) -> Result<(String, Value), UsageError> {
    let (k, v) = s.split_once('=').ok_or_else(|| UsageError(format!("expected key=value, got `{s}`")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn apply(flat: &mut FlatConfig, key: &str, value: Value) -> Result<(), String> {
    match flat.get_mut(key) {
        Some(slot) => {
            *slot = value;
            Ok(())
        }
        None => Err(format!("unknown configuration key `{key}`")),
    }
}

/// Merges every layer and checks the result.
pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let mut flat = RunConfig::default().to_flat();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let entries: BTreeMap<String, Value> =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        for (k, v) in entries {
            apply(&mut flat, &k, v).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        }
    }
    if let Some(s) = env_seed {
        let seed: u64 =
            s.trim().parse().map_err(|_| UsageError(format!("{SEED_ENV} must be an unsigned integer, got `{s}`")))?;
        flat.insert("seed".into(), Value::from(seed));
    }
    for (k, v) in overrides {
        apply(&mut flat, k, v.clone()).map_err(UsageError)?;
    }
    match RunConfig::from_flat(&flat) {
        Ok(cfg) => Ok(cfg),
        Err(e) if file.is_some() => Err(e.context(format!("invalid configuration (file {})", file.unwrap().display()))),
        Err(e) => bail!(UsageError(format!("invalid configuration: {e:#}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip() {
        let cfg = RunConfig::default();
        let flat = cfg.to_flat();
        assert!(flat.contains_key("model.decoder.modes"));
        assert!(flat.contains_key("gen.template"));
        assert!(!flat.contains_key("train.seed"));
        assert_eq!(RunConfig::from_flat(&flat).unwrap(), cfg);
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 3, "train.lr": 0.01, "train.epochs": 7}"#).unwrap();
        let cfg = resolve(Some(&path), None, &[]).unwrap();
        assert_eq!((cfg.seed, cfg.train.lr, cfg.train.epochs, cfg.train.seed), (3, 0.01, 7, 3));
        let cfg = resolve(Some(&path), Some("5"), &[]).unwrap();
        assert_eq!(cfg.seed, 5);
        let flags = [("seed".to_string(), Value::from(8)), ("train.lr".to_string(), Value::from(0.5))];
        let cfg = resolve(Some(&path), Some("5"), &flags).unwrap();
        assert_eq!((cfg.seed, cfg.train.lr, cfg.train.epochs), (8, 0.5, 7));
    }

    #[test]
    fn rejects_unknown_and_ill_typed_keys() {
        let unknown = [("train.learning_rate".to_string(), Value::from(1.0))];
        assert!(resolve(None, None, &unknown).unwrap_err().downcast_ref::<UsageError>().is_some());
        let ill = [("train.epochs".to_string(), Value::from("many"))];
        let err = resolve(None, None, &ill).unwrap_err().to_string();
        assert!(err.contains("train.epochs"), "{err}");
        let bad = [("gen.template".to_string(), Value::from("roundabout"))];
        assert!(resolve(None, None, &bad).is_err());
    }

    #[test]
    fn assignment_values() {
        assert_eq!(parse_assignment("a.b=3").unwrap(), ("a.b".into(), Value::from(3)));
        assert_eq!(parse_assignment("a=left_turn").unwrap(), ("a".into(), Value::from("left_turn")));
        assert!(parse_assignment("novalue").is_err());
    }
}
