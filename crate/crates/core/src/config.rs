//! Pipeline configuration: one JSON document with a section per stage.
//!
//! Every section defaults, unknown keys are rejected, and [`PipelineConfig::validate`]
//! reports all violations at once.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::depth::{DepthThreshold, DEFAULT_CIRCLE_AMBIGUITY_RATIO};
use crate::enhance::AheParams;
use crate::eval::MethodVariant;
use crate::features::FeatureParams;
use crate::ingest::KeyframeSelection;
use crate::ransac::{ModelKind, RansacParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// Depth threshold: Otsu's method per frame, or a fixed grey level.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ThresholdChoice {
    #[default]
    Otsu,
    Fixed(f64),
}

impl fmt::Display for ThresholdChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdChoice::Otsu => f.write_str("otsu"),
            ThresholdChoice::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for ThresholdChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("otsu") {
            return Ok(ThresholdChoice::Otsu);
        }
        s.parse::<f64>()
            .map(ThresholdChoice::Fixed)
            .map_err(|_| format!("expected a grey level in [0, 255] or \"otsu\", got {s:?}"))
    }
}

impl Serialize for ThresholdChoice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ThresholdChoice::Otsu => s.serialize_str("otsu"),
            ThresholdChoice::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for ThresholdChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Level(f64),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Level(v) => Ok(ThresholdChoice::Fixed(v)),
            Repr::Name(n) => n.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthConfig {
    /// Lumen threshold for the ellipse fit.
    pub threshold: ThresholdChoice,
    /// Threshold for the deepest point and inner radius; unset reuses `threshold`.
    pub deepest_threshold: Option<ThresholdChoice>,
    /// Fits with `a / b` below this are treated as circles and not rotated.
    pub circle_ambiguity_ratio: f64,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            threshold: ThresholdChoice::Otsu,
            deepest_threshold: None,
            circle_ambiguity_ratio: DEFAULT_CIRCLE_AMBIGUITY_RATIO,
        }
    }
}

/// Unset fields are derived from the frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnwrapConfig {
    pub n_theta: Option<usize>,
    pub n_r: Option<usize>,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    pub model: ModelKind,
    pub iterations: usize,
    pub inlier_tolerance: f64,
    pub min_inliers: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        let p = RansacParams::default();
        Self {
            model: ModelKind::Translation,
            iterations: p.iterations,
            inlier_tolerance: p.inlier_tolerance,
            min_inliers: p.min_inliers,
        }
    }
}

impl RansacConfig {
    pub fn params(&self, seed: u64) -> RansacParams {
        RansacParams {
            iterations: self.iterations,
            inlier_tolerance: self.inlier_tolerance,
            seed,
            min_inliers: self.min_inliers,
        }
    }
}

/// Which strip intensities the panorama shows; geometry is always estimated on
/// the enhanced strip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositeSource {
    #[default]
    Ahe,
    Original,
}

impl FromStr for CompositeSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ahe" => Ok(CompositeSource::Ahe),
            "original" => Ok(CompositeSource::Original),
            other => Err(format!("expected ahe or original, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StitchConfig {
    pub composite_source: CompositeSource,
    /// Wrap the angular axis of the panorama.
    pub cyclic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Variant every other variant is tested against.
    pub reference: MethodVariant,
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            reference: MethodVariant::AheRotated,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub ingest: KeyframeSelection,
    pub depth: DepthConfig,
    pub unwrap: UnwrapConfig,
    pub ahe: AheParams,
    pub feature: FeatureParams,
    pub ransac: RansacConfig,
    pub stitch: StitchConfig,
    pub eval: EvalConfig,
    pub seed: u64,
    pub debug_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ingest: KeyframeSelection::default(),
            depth: DepthConfig::default(),
            unwrap: UnwrapConfig::default(),
            ahe: AheParams::default(),
            feature: FeatureParams::default(),
            ransac: RansacConfig::default(),
            stitch: StitchConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
            debug_dir: None,
        }
    }
}

impl PipelineConfig {
    /// Parses without validating, so callers can layer overrides first.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            problems.sort();
            Err(ConfigError::Invalid(problems))
        }
    }

    /// All invariant violations, one message per field.
    pub fn problems(&self) -> Vec<String> {
        let mut p = self.ingest.validate();
        if !self.ingest.selected_indices.is_empty() {
            p.push("ingest.selected_indices is computed, not configured".to_string());
        }
        for (name, choice) in [("threshold", Some(self.depth.threshold)), ("deepest_threshold", self.depth.deepest_threshold)] {
            if let Some(ThresholdChoice::Fixed(v)) = choice {
                if DepthThreshold::new(v).is_err() {
                    p.push(format!("depth.{name} must be in [0, 255] or \"otsu\", got {v}"));
                }
            }
        }
        if !(self.depth.circle_ambiguity_ratio >= 1.0 && self.depth.circle_ambiguity_ratio.is_finite()) {
            p.push(format!(
                "depth.circle_ambiguity_ratio must be >= 1, got {}",
                self.depth.circle_ambiguity_ratio
            ));
        }
        let u = &self.unwrap;
        for (name, v) in [("n_theta", u.n_theta), ("n_r", u.n_r)] {
            if v == Some(0) {
                p.push(format!("unwrap.{name} must be positive, got 0"));
            }
        }
        if u.n_r == Some(1) {
            p.push("unwrap.n_r must be at least 2, got 1".to_string());
        }
        if let Some(r) = u.r_min {
            if !(r.is_finite() && r >= 0.0) {
                p.push(format!("unwrap.r_min must be >= 0, got {r}"));
            }
        }
        if let Some(r) = u.r_max {
            if !(r.is_finite() && r > 0.0) {
                p.push(format!("unwrap.r_max must be > 0, got {r}"));
            }
        }
        if let (Some(lo), Some(hi)) = (u.r_min, u.r_max) {
            if lo >= hi {
                p.push(format!("unwrap.r_min ({lo}) must be below unwrap.r_max ({hi})"));
            }
        }
        p.extend(self.ahe.validate());
        p.extend(self.feature.validate());
        p.extend(self.ransac.params(self.seed).validate());
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            p.push(format!("eval.alpha must be in (0, 1), got {}", self.eval.alpha));
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(PipelineConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn every_violation_is_reported() {
        let c = PipelineConfig::from_json(
            r#"{"feature": {"ratio": 1.5}, "ahe": {"bins": 0}, "depth": {"threshold": 300}}"#,
        )
        .unwrap();
        let problems = c.problems();
        assert_eq!(problems.len(), 3, "{problems:?}");
        assert!(problems.iter().any(|m| m.contains("feature.ratio") && m.contains("(0, 1)")));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_json(r#"{"feature": {"ratoi": 0.7}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"colour": true}"#).is_err());
    }

    #[test]
    fn threshold_forms() {
        let c = PipelineConfig::from_json(r#"{"depth": {"threshold": "otsu"}}"#).unwrap();
        assert_eq!(c.depth.threshold, ThresholdChoice::Otsu);
        let c = PipelineConfig::from_json(r#"{"depth": {"threshold": 40}}"#).unwrap();
        assert_eq!(c.depth.threshold, ThresholdChoice::Fixed(40.0));
        assert!(PipelineConfig::from_json(r#"{"depth": {"threshold": "dark"}}"#).is_err());
    }
}
