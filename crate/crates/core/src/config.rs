//! Training configuration and bundled presets.
//!
//! A configuration is a JSON object; unknown keys are rejected. Every
//! `(D, K, L)` combination in `d_values x k_values x lengths` receives
//! `n_fun` random periodic input functions.
//!
//! ```json
//! {
//!   "scenario": "inputgen",
//!   "n_fun": 50, "n_data": 500, "n_colloc": 1000,
//!   "schedule": [{"epochs": 200, "learning_rate": 1e-3}, {"epochs": 100, "learning_rate": 1e-4}],
//!   "seed": 7,
//!   "d_values": [0.001], "k_values": [0.001], "lengths": [1.0]
//! }
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{Scenario, HIDDEN_WIDTHS};
use crate::network::AdamConfig;
use crate::oracle::{FtcsSettings, PdeParams, NT, NX};
use crate::{Error, Result};

/// `epochs` epochs at a fixed learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSegment {
    pub epochs: usize,
    pub learning_rate: f64,
}

fn default_hidden() -> Vec<usize> {
    HIDDEN_WIDTHS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub scenario: Scenario,
    /// Input functions per `(D, K, L)` combination.
    pub n_fun: usize,
    /// Measurements per input function (the minibatch size).
    pub n_data: usize,
    /// Collocation points drawn per gradient step.
    pub n_colloc: usize,
    pub schedule: Vec<ScheduleSegment>,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    pub d_values: Vec<f64>,
    pub k_values: Vec<f64>,
    pub lengths: Vec<f64>,
    /// Hidden widths shared by `N_sol` and `N_hid`.
    #[serde(default = "default_hidden")]
    pub hidden_widths: Vec<usize>,
}

pub const PRESETS: [&str; 6] = [
    "inputgen-full",
    "paramgen-full",
    "domaingen-full",
    "desk-small",
    "desk-paramgen",
    "desk-domaingen",
];

fn seg(epochs: usize, learning_rate: f64) -> ScheduleSegment {
    ScheduleSegment { epochs, learning_rate }
}

impl TrainConfig {
    /// A bundled preset by name (see [`PRESETS`]).
    pub fn preset(name: &str) -> Result<Self> {
        let base = TrainConfig {
            scenario: Scenario::InputGen,
            n_fun: 200,
            n_data: 1000,
            n_colloc: 5000,
            schedule: vec![seg(1000, 1e-3), seg(1000, 1e-4)],
            seed: 0,
            adam: AdamConfig::default(),
            d_values: vec![1e-3],
            k_values: vec![1e-3],
            lengths: vec![1.0],
            hidden_widths: default_hidden(),
        };
        let cfg = match name {
            "inputgen-full" => base,
            "paramgen-full" => TrainConfig {
                scenario: Scenario::ParamGen,
                n_fun: 200,
                n_data: 500,
                n_colloc: 1000,
                schedule: vec![seg(1000, 1e-3), seg(2000, 1e-4)],
                d_values: vec![1e-3, 3e-3, 5e-3],
                k_values: vec![1e-3, 3e-3, 5e-3],
                ..base
            },
            "domaingen-full" => TrainConfig {
                scenario: Scenario::DomainGen,
                n_fun: 200,
                n_data: 500,
                n_colloc: 1000,
                schedule: vec![seg(1000, 1e-3), seg(2000, 1e-4)],
                lengths: vec![1.0, 1.1, 1.2, 1.3, 1.4, 1.5],
                ..base
            },
            "desk-small" => TrainConfig {
                n_fun: 50,
                n_data: 500,
                n_colloc: 1000,
                schedule: vec![seg(200, 1e-3), seg(100, 1e-4)],
                ..base
            },
            "desk-paramgen" => TrainConfig {
                scenario: Scenario::ParamGen,
                n_fun: 50,
                n_data: 500,
                n_colloc: 500,
                schedule: vec![seg(120, 1e-3), seg(40, 1e-4)],
                d_values: vec![1e-3, 5e-3],
                k_values: vec![1e-3, 5e-3],
                ..base
            },
            "desk-domaingen" => TrainConfig {
                scenario: Scenario::DomainGen,
                n_fun: 50,
                n_data: 500,
                n_colloc: 500,
                schedule: vec![seg(120, 1e-3), seg(40, 1e-4)],
                lengths: vec![1.0, 1.25, 1.5],
                ..base
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    /// Parse and validate a JSON configuration document.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("not valid JSON: {e}")))?;
        if let Some(obj) = value.as_object() {
            for key in ["n_fun", "n_data", "n_colloc", "seed"] {
                if let Some(v) = obj.get(key) {
                    if !v.is_u64() {
                        return Err(Error::InvalidConfig(format!(
                            "{key}: expected a non-negative integer, got {v}"
                        )));
                    }
                }
            }
        }
        let cfg: TrainConfig = serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Field-level invariant checks.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidConfig(format!("{field}: {msg}")));
        if self.n_fun == 0 {
            return bad("n_fun", "must be at least 1".into());
        }
        if self.n_data == 0 || self.n_data > NX * NT {
            return bad("n_data", format!("must be in 1..={}, got {}", NX * NT, self.n_data));
        }
        if self.n_colloc == 0 {
            return bad("n_colloc", "must be at least 1".into());
        }
        if self.schedule.is_empty() {
            return bad("schedule", "must have at least one segment".into());
        }
        for (i, s) in self.schedule.iter().enumerate() {
            if s.epochs == 0 {
                return bad(&format!("schedule[{i}].epochs"), "must be at least 1".into());
            }
            if !(s.learning_rate.is_finite() && s.learning_rate > 0.0) {
                return bad(
                    &format!("schedule[{i}].learning_rate"),
                    format!("must be positive, got {}", s.learning_rate),
                );
            }
        }
        let AdamConfig { beta1, beta2, epsilon } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
            return bad("adam", "need 0 <= beta1, beta2 < 1 and epsilon > 0".into());
        }
        if self.hidden_widths.contains(&0) {
            return bad("hidden_widths", "widths must be positive".into());
        }
        for (field, values) in [
            ("d_values", &self.d_values),
            ("k_values", &self.k_values),
            ("lengths", &self.lengths),
        ] {
            if values.is_empty() {
                return bad(field, "must not be empty".into());
            }
        }
        if let Some(d) = self.d_values.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return bad("d_values", format!("D must be positive, got {d}"));
        }
        if let Some(k) = self.k_values.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
            return bad("k_values", format!("K must be non-negative, got {k}"));
        }
        if let Some(l) = self.lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return bad("lengths", format!("L must be positive, got {l}"));
        }
        let single = |field: &str, v: &[f64]| {
            if v.len() != 1 {
                bad(
                    field,
                    format!("{} takes a single value, got {}", self.scenario, v.len()),
                )
            } else {
                Ok(())
            }
        };
        match self.scenario {
            Scenario::InputGen => {
                single("d_values", &self.d_values)?;
                single("k_values", &self.k_values)?;
                single("lengths", &self.lengths)?;
            }
            Scenario::ParamGen => single("lengths", &self.lengths)?,
            Scenario::DomainGen => {
                single("d_values", &self.d_values)?;
                single("k_values", &self.k_values)?;
            }
        }
        let dt = FtcsSettings::default().dt;
        for &l in &self.lengths {
            let dx = l / (NX - 1) as f64;
            for &d in &self.d_values {
                let ratio = d * dt / (dx * dx);
                if ratio > 0.5 {
                    return bad(
                        "d_values",
                        format!("D = {d} with L = {l} violates FTCS stability ({ratio:.3} > 0.5)"),
                    );
                }
            }
        }
        Ok(())
    }

    /// `(params, L)` for every combination, L outermost, then D, then K.
    pub fn combinations(&self) -> Vec<(PdeParams, f64)> {
        let mut out = Vec::new();
        for &l in &self.lengths {
            for &d in &self.d_values {
                for &k in &self.k_values {
                    out.push((PdeParams { d, k }, l));
                }
            }
        }
        out
    }

    pub fn n_records(&self) -> usize {
        self.combinations().len() * self.n_fun
    }

    pub fn total_epochs(&self) -> usize {
        self.schedule.iter().map(|s| s.epochs).sum()
    }

    /// Learning rate in effect for zero-based `epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let mut end = 0;
        for s in &self.schedule {
            end += s.epochs;
            if epoch < end {
                return s.learning_rate;
            }
        }
        self.schedule.last().map(|s| s.learning_rate).unwrap_or(0.0)
    }

    /// SHA-256 over the canonical JSON of every field, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_presets() {
        let c = TrainConfig::preset("inputgen-full").unwrap();
        assert_eq!((c.n_fun, c.n_data, c.n_colloc), (200, 1000, 5000));
        assert_eq!(c.schedule, vec![seg(1000, 1e-3), seg(1000, 1e-4)]);
        assert_eq!(c.n_records(), 200);

        let p = TrainConfig::preset("paramgen-full").unwrap();
        assert_eq!(p.combinations().len(), 9);
        assert_eq!((p.n_data, p.n_colloc), (500, 1000));
        assert_eq!(p.n_records(), 1800);
        assert_eq!(p.total_epochs(), 3000);

        let d = TrainConfig::preset("domaingen-full").unwrap();
        assert_eq!(d.n_records(), 1200);
        for name in PRESETS {
            TrainConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(TrainConfig::preset("nope").is_err());
    }

    #[test]
    fn schedule_lookup() {
        let c = TrainConfig::preset("inputgen-full").unwrap();
        assert_eq!(c.learning_rate(0), 1e-3);
        assert_eq!(c.learning_rate(999), 1e-3);
        assert_eq!(c.learning_rate(1000), 1e-4);
        assert_eq!(c.total_epochs(), 2000);
    }

    #[test]
    fn json_round_trip_and_rejections() {
        let c = TrainConfig::preset("desk-small").unwrap();
        let back = TrainConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());

        let mut v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        v["n_data"] = serde_json::json!(-5);
        let err = TrainConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("n_data"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        v["colour"] = serde_json::json!("red");
        let err = TrainConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        v["lengths"] = serde_json::json!([1.0, 1.5]);
        assert!(TrainConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn hash_tracks_fields() {
        let a = TrainConfig::preset("desk-small").unwrap();
        let mut b = a.clone();
        b.n_colloc += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
