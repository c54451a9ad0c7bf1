use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ensemble::{DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_K, DEFAULT_W_MAX, DEFAULT_W_MIN};
use crate::semantics::{DEFAULT_CLUSTER_THRESHOLD, DEFAULT_MAPPING_FLOOR, DEFAULT_NEIGHBORS};

pub const DEFAULT_NAME_THRESHOLD: f64 = 0.9;
pub const DEFAULT_VALUE_THRESHOLD: f64 = 0.9;

/// Tunable parameters of a curation session. Every field has a default, so a
/// partial object is a valid override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub k: usize,
    pub name_threshold: f64,
    pub value_threshold: f64,
    pub auto_accept_easy: bool,
    pub alpha: f64,
    pub beta: f64,
    pub w_min: f64,
    pub w_max: f64,
    /// Starting weights; matchers not listed start at 1.0.
    pub initial_weights: BTreeMap<String, f64>,
    pub n_neighbors: usize,
    pub cluster_threshold: f64,
    pub value_mapping_floor: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            name_threshold: DEFAULT_NAME_THRESHOLD,
            value_threshold: DEFAULT_VALUE_THRESHOLD,
            auto_accept_easy: true,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            w_min: DEFAULT_W_MIN,
            w_max: DEFAULT_W_MAX,
            initial_weights: BTreeMap::new(),
            n_neighbors: DEFAULT_NEIGHBORS,
            cluster_threshold: DEFAULT_CLUSTER_THRESHOLD,
            value_mapping_floor: DEFAULT_MAPPING_FLOOR,
        }
    }
}

fn unit(name: &str, x: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(format!("{name} must be in [0, 1], got {x}"))
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        unit("name_threshold", self.name_threshold)?;
        unit("value_threshold", self.value_threshold)?;
        unit("cluster_threshold", self.cluster_threshold)?;
        unit("value_mapping_floor", self.value_mapping_floor)?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err("alpha and beta must be positive".into());
        }
        if !(self.w_min >= 0.0 && self.w_min <= self.w_max && self.w_max.is_finite()) {
            return Err(format!("weight bounds [{}, {}] are invalid", self.w_min, self.w_max));
        }
        if self.n_neighbors == 0 {
            return Err("n_neighbors must be at least 1".into());
        }
        Ok(())
    }

    /// Applies the fields present in a JSON object on top of `self`.
    pub fn merged(&self, overrides: &serde_json::Value) -> Result<Self, String> {
        let mut base = serde_json::to_value(self).map_err(|e| e.to_string())?;
        match (base.as_object_mut(), overrides) {
            (Some(base_obj), serde_json::Value::Object(over)) => {
                for (k, v) in over {
                    base_obj.insert(k.clone(), v.clone());
                }
            }
            (_, serde_json::Value::Null) => {}
            _ => return Err("config must be a JSON object".into()),
        }
        let merged: Self = serde_json::from_value(base).map_err(|e| e.to_string())?;
        merged.validate()?;
        Ok(merged)
    }
}
