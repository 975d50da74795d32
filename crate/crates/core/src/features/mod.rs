//! Scale-space keypoints, gradient-histogram descriptors and ratio-test matching.

mod matching;
mod scale_space;
mod sift;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matching::{descriptor_distance, match_ratio, MatchPair};
pub use sift::detect_and_describe;

/// Length of a descriptor vector: 4x4 spatial cells of 8 orientation bins.
pub const DESCRIPTOR_LEN: usize = 128;
/// Per-component ceiling applied before the final renormalization.
pub const DESCRIPTOR_CLAMP: f32 = 0.2;
/// Smallest image side accepted by the detector.
pub const MIN_IMAGE_SIDE: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("image {width}x{height} is smaller than {min}x{min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("invalid feature parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Detection scale in input-image pixels.
    pub sigma: f64,
    /// Dominant gradient direction, radians in `[0, 2pi)`, image coordinates.
    pub orientation: f64,
    /// Magnitude of the interpolated difference-of-Gaussians extremum.
    pub response: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Descriptor(pub Vec<f32>);

impl Descriptor {
    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureParams {
    pub octaves: usize,
    pub scales_per_octave: usize,
    /// Minimum |DoG| at the refined extremum, on `[0, 1]` intensities.
    pub contrast_threshold: f64,
    /// Maximum principal-curvature ratio.
    pub edge_ratio_threshold: f64,
    /// Lowe ratio for match filtering.
    pub ratio: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            octaves: 4,
            scales_per_octave: 3,
            contrast_threshold: 0.03,
            edge_ratio_threshold: 10.0,
            ratio: 0.75,
        }
    }
}

impl FeatureParams {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.octaves == 0 {
            problems.push("feature.octaves must be positive, got 0".to_string());
        }
        if self.scales_per_octave == 0 {
            problems.push("feature.scales_per_octave must be positive, got 0".to_string());
        }
        if !(self.contrast_threshold.is_finite() && self.contrast_threshold > 0.0) {
            problems.push(format!(
                "feature.contrast_threshold must be > 0, got {}",
                self.contrast_threshold
            ));
        }
        if !(self.edge_ratio_threshold.is_finite() && self.edge_ratio_threshold > 0.0) {
            problems.push(format!(
                "feature.edge_ratio_threshold must be > 0, got {}",
                self.edge_ratio_threshold
            ));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            problems.push(format!(
                "feature.ratio must be in (0, 1), got {}",
                self.ratio
            ));
        }
        problems
    }
}
