//! Panoramas from tubular endoscopy video: lumen-guided rotation, polar
//! unwrapping, adaptive histogram equalization, keypoint matching with RANSAC,
//! feathered compositing, and a three-way method comparison.

pub mod config;
pub mod depth;
pub mod enhance;
pub mod eval;
pub mod features;
pub mod image;
pub mod ingest;
pub mod phantom;
pub mod pipeline;
pub mod ransac;
pub mod stitch;
pub mod unwrap;

pub use config::PipelineConfig;
pub use image::{GrayImage, Mask};
pub use pipeline::{run_pipeline, PipelineSummary, Stage, StageError};
