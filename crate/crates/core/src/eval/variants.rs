use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MethodVariant;
use crate::config::PipelineConfig;
use crate::features::{detect_and_describe, match_ratio, Descriptor, Feature, MatchPair};
use crate::image::GrayImage;
use crate::pipeline::{prepare_frame, PreparedFrame, Stage, StageError};
use crate::ransac::{ransac_estimate, RansacResult};

/// One `(video, variant, pair)` measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRow {
    pub video_id: String,
    pub variant: MethodVariant,
    pub pair_index: usize,
    pub valid_match_count: usize,
    /// Why the count is zero, when a stage failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<StageError>,
}

#[derive(Debug, Clone)]
pub struct AnalyzedFrame {
    pub prepared: PreparedFrame,
    pub features: Vec<Feature>,
}

pub fn analyze_frame(
    img: &GrayImage,
    item: &str,
    variant: MethodVariant,
    config: &PipelineConfig,
) -> Result<AnalyzedFrame, StageError> {
    let prepared = prepare_frame(img, variant, config, item)?;
    let features = detect_and_describe(&prepared.strip, &config.feature)
        .map_err(|e| StageError::new(Stage::Features, item, e))?;
    Ok(AnalyzedFrame { prepared, features })
}

pub fn analyze_frames(
    frames: &[GrayImage],
    ids: &[String],
    variant: MethodVariant,
    config: &PipelineConfig,
) -> Vec<Result<AnalyzedFrame, StageError>> {
    frames
        .par_iter()
        .zip(ids)
        .map(|(img, id)| analyze_frame(img, id, variant, config))
        .collect()
}

/// Matches between consecutive frames with the RANSAC outcome.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub row: MatchRow,
    pub matches: Vec<MatchPair>,
    pub ransac: Option<RansacResult>,
    pub error: Option<StageError>,
}

pub fn match_pair(
    a: &AnalyzedFrame,
    b: &AnalyzedFrame,
    config: &PipelineConfig,
    item: &str,
) -> (Vec<MatchPair>, Result<RansacResult, StageError>) {
    let descriptors = |f: &AnalyzedFrame| -> Vec<Descriptor> { f.features.iter().map(|f| f.descriptor.clone()).collect() };
    let matches = match_ratio(&descriptors(a), &descriptors(b), config.feature.ratio);
    let points = |f: &AnalyzedFrame| -> Vec<(f64, f64)> { f.features.iter().map(|f| (f.keypoint.x, f.keypoint.y)).collect() };
    let result = ransac_estimate(
        &matches,
        &points(a),
        &points(b),
        config.ransac.model,
        &config.ransac.params(config.seed),
    )
    .map_err(|e| StageError::new(Stage::Ransac, item, e));
    (matches, result)
}

pub fn match_frames(
    video_id: &str,
    variant: MethodVariant,
    frames: &[Result<AnalyzedFrame, StageError>],
    config: &PipelineConfig,
) -> Vec<PairOutcome> {
    (0..frames.len().saturating_sub(1))
        .into_par_iter()
        .map(|i| {
            let item = format!("{video_id}/{variant}/pair_{i:03}");
            let (matches, result) = match (&frames[i], &frames[i + 1]) {
                (Ok(a), Ok(b)) => match_pair(a, b, config, &item),
                (Err(e), _) | (_, Err(e)) => (
                    Vec::new(),
                    Err(StageError::new(e.stage, &item, format!("{}: {}", e.item, e.message))),
                ),
            };
            let (ransac, error) = match result {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e)),
            };
            PairOutcome {
                row: MatchRow {
                    video_id: video_id.to_string(),
                    variant,
                    pair_index: i,
                    valid_match_count: ransac.as_ref().map_or(0, |r| r.valid_match_count),
                    error: error.clone(),
                },
                matches,
                ransac,
                error,
            }
        })
        .collect()
}

/// Valid-match counts for every adjacent keyframe pair under all three variants,
/// with identical feature and RANSAC settings. Failures become zero-count rows.
pub fn run_variants(
    video_id: &str,
    frames: &[GrayImage],
    config: &PipelineConfig,
) -> Result<Vec<MatchRow>, StageError> {
    if frames.len() < 2 {
        return Err(StageError::new(
            Stage::Keyframes,
            video_id,
            format!("need at least 2 keyframes, got {}", frames.len()),
        ));
    }
    let ids: Vec<String> = (0..frames.len()).map(|i| format!("{video_id}/keyframe_{i:03}")).collect();
    Ok(MethodVariant::ALL
        .into_iter()
        .flat_map(|variant| {
            let analyzed = analyze_frames(frames, &ids, variant, config);
            match_frames(video_id, variant, &analyzed, config)
                .into_iter()
                .map(|o| o.row)
        })
        .collect())
}
