//! JSON checkpoint container of named tensors.
//!
//! Layout (version 1):
//!
//! ```json
//! {
//!   "format": "riskcast-checkpoint",
//!   "version": 1,
//!   "metadata": { ... },
//!   "tensors": [ { "name": "interaction.lstm.w_input", "shape": [256, 14], "data": [ ... ] } ]
//! }
//! ```
//!
//! Floats are written as shortest round-trip decimals and parsed exactly, so a
//! save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Module;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "riskcast-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture<M: Module + ?Sized>(module: &M, metadata: serde_json::Value) -> Self {
        let mut tensors = Vec::new();
        module.visit("", &mut |name, p| {
            tensors.push(NamedTensor {
                name: name.to_string(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
        });
        Self { format: CHECKPOINT_FORMAT.to_string(), version: CHECKPOINT_VERSION, metadata, tensors }
    }

    /// Copies tensors into `module`, requiring names and shapes to match exactly.
    pub fn restore<M: Module + ?Sized>(&self, module: &mut M) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format {} v{}", self.format, self.version)));
        }
        let mut idx = 0;
        let mut err = None;
        module.visit_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(idx) {
                Some(t) if t.name == name && t.shape == p.value.shape() && t.data.len() == p.value.len() => {
                    p.value.data_mut().copy_from_slice(&t.data);
                }
                Some(t) => {
                    err = Some(Error::Checkpoint(format!(
                        "tensor {idx}: expected {name} {:?}, found {} {:?}",
                        p.value.shape(),
                        t.name,
                        t.shape
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing tensor {name}"))),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != self.tensors.len() {
            return Err(Error::Checkpoint(format!("{} extra tensors", self.tensors.len() - idx)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{seeded_rng, Mlp};

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = seeded_rng(5);
        let m = Mlp::new(&mut rng, "m", &[3, 7, 2]);
        let ck = Checkpoint::capture(&m, serde_json::json!({"note": "x"}));
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        let mut m2 = Mlp::new(&mut seeded_rng(99), "m", &[3, 7, 2]);
        back.restore(&mut m2).unwrap();
        for (a, b) in m.layers.iter().zip(&m2.layers) {
            let bits = |t: &crate::nn::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.weight.value), bits(&b.weight.value));
            assert_eq!(bits(&a.bias.as_ref().unwrap().value), bits(&b.bias.as_ref().unwrap().value));
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = Mlp::new(&mut seeded_rng(5), "m", &[3, 7, 2]);
        let ck = Checkpoint::capture(&m, serde_json::Value::Null);
        let mut other = Mlp::new(&mut seeded_rng(5), "m", &[3, 6, 2]);
        assert!(ck.restore(&mut other).is_err());
    }
}
