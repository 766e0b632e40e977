//! Run configuration shared by every pipeline stage and echoed into every
//! output artifact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::patch::PatchConfig;
use crate::scoring::ScoreMode;

/// Negative-bank rate used by the method description.
pub const NEGATIVE_RATE: f64 = 0.02;
/// Negative-bank rate reported with the experimental setup.
pub const NEGATIVE_RATE_ALT: f64 = 0.01;
pub const POSITIVE_RATE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub negative: f64,
    pub positive: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            negative: NEGATIVE_RATE,
            positive: POSITIVE_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub projection: u64,
    pub coreset_neg: u64,
    pub coreset_pos: u64,
    pub fixture: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            projection: 0,
            coreset_neg: 1,
            coreset_pos: 2,
            fixture: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    /// Banks hold projected vectors and scoring runs in projected space.
    /// When false, projection only drives coreset selection.
    pub store_projected: bool,
    /// Evaluate the positive distance at the patch chosen by the negative
    /// max-min search instead of running an independent search.
    pub positive_at_negative_patch: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Self {
            store_projected: true,
            positive_at_negative_patch: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub patch: PatchConfig,
    pub d_star: usize,
    pub rates: Rates,
    /// Neighborhood size for density weighting.
    pub b: usize,
    pub epsilon: f32,
    pub sigma: f32,
    pub seeds: Seeds,
    pub mode: ScoreMode,
    pub flags: Flags,
    pub mask_coverage_tau: f32,
    /// Cap on pooled pixels for pixel-level AUROC; `None` uses every pixel.
    pub max_eval_pixels: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            patch: PatchConfig::default(),
            d_star: 128,
            rates: Rates::default(),
            b: 3,
            epsilon: 1e-6,
            sigma: 2.0,
            seeds: Seeds::default(),
            mode: ScoreMode::Ratio,
            flags: Flags::default(),
            mask_coverage_tau: 0.25,
            max_eval_pixels: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        if self.d_star == 0 {
            return Err(Error::Config("d_star must be >= 1".into()));
        }
        for (name, r) in [
            ("negative", self.rates.negative),
            ("positive", self.rates.positive),
        ] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!("rates.{name} must lie in (0, 1]")));
            }
        }
        if self.b == 0 {
            return Err(Error::Config("b must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config("sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_coverage_tau) {
            return Err(Error::Config("mask_coverage_tau must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Sets a dotted field path, e.g. `rates.negative=0.01` or
    /// `mode=negative_only`. Values parse as JSON, falling back to a string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let value: Value =
            serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for key in path.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(key))
                .ok_or_else(|| Error::Config(format!("unknown config field {path:?}")))?;
        }
        *slot = value;
        let updated: RunConfig = serde_json::from_value(doc)
            .map_err(|e| Error::Config(format!("override {assignment:?}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.patch.patch_size, 3);
        assert_eq!(c.patch.stride, 1);
        assert_eq!(c.patch.levels, vec![2, 3]);
        assert_eq!(c.d_star, 128);
        assert_eq!(c.rates.negative, 0.02);
        assert_eq!(c.rates.positive, 0.10);
        assert_eq!(c.b, 3);
        assert_eq!(c.epsilon, 1e-6);
        assert_eq!(c.sigma, 2.0);
        assert_eq!(c.mode, ScoreMode::Ratio);
        assert!(c.flags.store_projected);
        assert!(!c.flags.positive_at_negative_patch);
        assert_eq!(c.mask_coverage_tau, 0.25);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"d_star": 8, "rates": {"negative": 0.01}}"#).unwrap();
        assert_eq!(c.d_star, 8);
        assert_eq!(c.rates.negative, NEGATIVE_RATE_ALT);
        assert_eq!(c.rates.positive, 0.10);
        assert!(serde_json::from_str::<RunConfig>(r#"{"dstar": 8}"#).is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut c = RunConfig::default();
        c.set("rates.negative=0.01").unwrap();
        c.set("mode=negative_only").unwrap();
        c.set("flags.store_projected=false").unwrap();
        c.set("patch.levels=[2]").unwrap();
        assert_eq!(c.rates.negative, 0.01);
        assert_eq!(c.mode, ScoreMode::NegativeOnly);
        assert!(!c.flags.store_projected);
        assert_eq!(c.patch.levels, vec![2]);
        assert!(c.set("nope=1").is_err());
        assert!(c.set("b=0").is_err());
        assert!(c.set("mode=sideways").is_err());
    }
}
