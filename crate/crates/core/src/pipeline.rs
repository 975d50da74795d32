//! End-to-end orchestration: keyframes, lumen geometry, unwrapping,
//! enhancement, matching, compositing and reporting.

use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{CompositeSource, PipelineConfig, ThresholdChoice};
use crate::depth::{
    deepest_point_within, ellipse_overlay, fit_ellipse, largest_component_contour, otsu_threshold,
    rotate_to_canonical_with, rotation_coverage, threshold_mask, DepthThreshold, Ellipse,
};
use crate::enhance::adaptive_hist_eq;
use crate::eval::report::{build_report, emit_report, MatchReport};
use crate::eval::variants::{analyze_frames, match_frames, AnalyzedFrame, MatchRow};
use crate::eval::MethodVariant;
use crate::image::{GrayImage, Mask};
use crate::ingest::{load_frames, select_keyframes, FrameManifest};
use crate::stitch::{compose_segments, CompositeOptions};
use crate::ransac::RansacResult;
use crate::unwrap::{annulus_radii_within, unwrap, UnwrapSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Keyframes,
    Load,
    Depth,
    Rotate,
    Unwrap,
    Enhance,
    Features,
    Match,
    Ransac,
    Stitch,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("string tag"))
    }
}

/// A failure tied to the stage and the frame or pair it happened on.
#[derive(Debug, Clone, Error, PartialEq, Serialize, Deserialize)]
#[error("{stage} failed on {item}: {message}")]
pub struct StageError {
    pub stage: Stage,
    pub item: String,
    pub message: String,
}

impl StageError {
    pub fn new(stage: Stage, item: impl Into<String>, err: impl fmt::Display) -> Self {
        Self {
            stage,
            item: item.into(),
            message: err.to_string(),
        }
    }
}

/// One keyframe carried through geometry, unwrapping and (optionally) enhancement.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    /// Lumen threshold used for the ellipse fit.
    pub tau: f64,
    /// Threshold used for the deepest point and inner radius.
    pub deepest_tau: f64,
    /// Present for the rotated variant.
    pub ellipse: Option<Ellipse>,
    pub applied_angle: f64,
    pub center: (f64, f64),
    pub spec: UnwrapSpec,
    /// The frame that was unwrapped (rotated for the rotated variant).
    pub frame: GrayImage,
    /// Unwrapped strip before enhancement.
    pub raw_strip: GrayImage,
    /// Strip used for feature detection.
    pub strip: GrayImage,
}

pub fn frame_threshold(img: &GrayImage, choice: ThresholdChoice) -> Result<DepthThreshold, String> {
    match choice {
        ThresholdChoice::Otsu => Ok(otsu_threshold(img)),
        ThresholdChoice::Fixed(v) => DepthThreshold::new(v).map_err(|e| e.to_string()),
    }
}

/// Annulus and sampling grid for a frame, honouring configured overrides.
pub fn unwrap_spec_for(
    img: &GrayImage,
    center: (f64, f64),
    tau: DepthThreshold,
    valid: Option<&Mask>,
    config: &PipelineConfig,
) -> Result<UnwrapSpec, String> {
    let u = &config.unwrap;
    let (r_min, r_max) = match (u.r_min, u.r_max) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => {
            let (lo, hi) = annulus_radii_within(img, center, tau, valid).map_err(|e| e.to_string())?;
            (u.r_min.unwrap_or(lo), u.r_max.unwrap_or(hi))
        }
    };
    let auto = UnwrapSpec::with_auto_resolution(center, r_min, r_max);
    let spec = UnwrapSpec {
        n_theta: u.n_theta.unwrap_or(auto.n_theta),
        n_r: u.n_r.unwrap_or(auto.n_r),
        ..auto
    };
    spec.validate_for(img.width(), img.height())
        .map_err(|e| e.to_string())?;
    Ok(spec)
}

/// Runs the per-frame part of a method variant.
pub fn prepare_frame(
    img: &GrayImage,
    variant: MethodVariant,
    config: &PipelineConfig,
    item: &str,
) -> Result<PreparedFrame, StageError> {
    let err = |stage| move |e: String| StageError::new(stage, item, e);
    let tau = frame_threshold(img, config.depth.threshold).map_err(err(Stage::Depth))?;
    let deepest_tau = match config.depth.deepest_threshold {
        Some(choice) => frame_threshold(img, choice).map_err(err(Stage::Depth))?,
        None => tau,
    };
    let (frame, ellipse, applied, coverage) = if variant.rotates() {
        let mask = threshold_mask(img, tau);
        let contour = largest_component_contour(&mask).map_err(|e| err(Stage::Depth)(e.to_string()))?;
        let ellipse = fit_ellipse(&contour).map_err(|e| err(Stage::Depth)(e.to_string()))?;
        let (rotated, applied) = rotate_to_canonical_with(img, &ellipse, config.depth.circle_ambiguity_ratio);
        let coverage = rotation_coverage(img.width(), img.height(), applied);
        (rotated, Some(ellipse), applied, Some(coverage))
    } else {
        (img.clone(), None, 0.0, None)
    };
    let center = deepest_point_within(&frame, deepest_tau, coverage.as_ref())
        .map_err(|e| err(Stage::Depth)(e.to_string()))?;
    let spec = unwrap_spec_for(&frame, center, deepest_tau, coverage.as_ref(), config).map_err(err(Stage::Unwrap))?;
    let raw_strip = unwrap(&frame, &spec).map_err(|e| err(Stage::Unwrap)(e.to_string()))?;
    let strip = if variant.enhances() {
        adaptive_hist_eq(&raw_strip, &config.ahe).map_err(|e| err(Stage::Enhance)(e.to_string()))?
    } else {
        raw_strip.clone()
    };
    Ok(PreparedFrame {
        tau: tau.value(),
        deepest_tau: deepest_tau.value(),
        ellipse,
        applied_angle: applied,
        center,
        spec,
        frame,
        raw_strip,
        strip,
    })
}

/// What a pipeline run wrote and how it went.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub source_id: String,
    pub keyframes: Vec<usize>,
    pub rows: Vec<MatchRow>,
    /// File names inside the output directory.
    pub panoramas: Vec<String>,
    pub chain_breaks: Vec<usize>,
    pub errors: Vec<StageError>,
}

fn write_json(path: &Path, value: &impl Serialize, item: &str) -> Result<(), StageError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| StageError::new(Stage::Report, item, e))?;
    fs::write(path, text + "\n").map_err(|e| StageError::new(Stage::Report, path.display().to_string(), e))
}

fn create_dir(dir: &Path) -> Result<(), StageError> {
    fs::create_dir_all(dir).map_err(|e| StageError::new(Stage::Report, dir.display().to_string(), e))
}

fn save_png(img: &GrayImage, path: &Path) -> Result<(), StageError> {
    img.save_png(path)
        .map_err(|e| StageError::new(Stage::Report, path.display().to_string(), e))
}

/// Frame-level debug artefacts for one variant.
fn write_frame_debug(dir: &Path, variant: MethodVariant, ids: &[String], frames: &[Result<AnalyzedFrame, StageError>]) -> Result<(), StageError> {
    let dir = dir.join(variant.name());
    create_dir(&dir)?;
    for (id, frame) in ids.iter().zip(frames) {
        let Ok(f) = frame else { continue };
        let p = &f.prepared;
        save_png(&threshold_mask(&p.frame, DepthThreshold::new(p.tau).expect("valid tau")).to_image(), &dir.join(format!("{id}_mask.png")))?;
        if let Some(e) = &p.ellipse {
            save_png(&ellipse_overlay(&p.frame, e), &dir.join(format!("{id}_ellipse.png")))?;
            save_png(&p.frame, &dir.join(format!("{id}_rotated.png")))?;
        }
        save_png(&p.raw_strip, &dir.join(format!("{id}_strip.png")))?;
        if variant.enhances() {
            save_png(&p.strip, &dir.join(format!("{id}_ahe.png")))?;
        }
        let meta = serde_json::json!({
            "tau": p.tau,
            "deepest_tau": p.deepest_tau,
            "ellipse": p.ellipse,
            "applied_angle": p.applied_angle,
            "center": p.center,
            "unwrap": p.spec,
        });
        write_json(&dir.join(format!("{id}_geometry.json")), &meta, id)?;
        write_json(&dir.join(format!("{id}_keypoints.json")), &f.features, id)?;
    }
    Ok(())
}

/// Runs the whole pipeline on one video and writes its artefacts into `out_dir`.
///
/// Per-frame and per-pair failures are recorded and the run continues; only
/// configuration, keyframe selection, frame loading and output errors abort.
pub fn run_pipeline(
    config: &PipelineConfig,
    manifest: &FrameManifest,
    out_dir: &Path,
) -> Result<PipelineSummary, StageError> {
    config
        .validate()
        .map_err(|e| StageError::new(Stage::Config, "config", e))?;
    let id = manifest.source_id.as_str();
    let selection = select_keyframes(manifest, &config.ingest).map_err(|e| StageError::new(Stage::Keyframes, id, e))?;
    let indices = selection.selected_indices;
    if indices.len() < 2 {
        return Err(StageError::new(
            Stage::Keyframes,
            id,
            format!("need at least 2 keyframes, got {}", indices.len()),
        ));
    }
    let frames = load_frames(manifest, &indices).map_err(|e| StageError::new(Stage::Load, id, e))?;
    let ids: Vec<String> = indices.iter().map(|i| format!("frame_{i:05}")).collect();
    create_dir(out_dir)?;
    let debug = config.debug_dir.as_deref();
    if let Some(d) = debug {
        create_dir(d)?;
        write_json(&d.join("keyframes.json"), &indices, id)?;
        write_json(&d.join("config.json"), config, id)?;
    }

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut reference_frames = Vec::new();
    let mut reference_links = Vec::new();
    for variant in MethodVariant::ALL {
        let analyzed = analyze_frames(&frames, &ids, variant, config);
        if let Some(d) = debug {
            write_frame_debug(d, variant, &ids, &analyzed)?;
        }
        errors.extend(analyzed.iter().filter_map(|f| f.as_ref().err().cloned()));
        let outcomes = match_frames(id, variant, &analyzed, config);
        if let Some(d) = debug {
            let dir = d.join(variant.name());
            for o in &outcomes {
                let value = serde_json::json!({
                    "pair_index": o.row.pair_index,
                    "matches": o.matches,
                    "ransac": o.ransac,
                    "error": o.error,
                });
                write_json(&dir.join(format!("pair_{:03}.json", o.row.pair_index)), &value, id)?;
            }
        }
        for o in &outcomes {
            if let Some(e) = &o.error {
                if !errors.contains(e) {
                    errors.push(e.clone());
                }
            }
        }
        rows.extend(outcomes.iter().map(|o| o.row.clone()));
        if variant == MethodVariant::AheRotated {
            reference_links = outcomes.into_iter().map(|o| o.ransac).collect();
            reference_frames = analyzed;
        }
    }

    // Panorama from the full method, on the strips exactly as written to disk.
    let strips: Vec<Option<GrayImage>> = reference_frames
        .iter()
        .map(|f| {
            f.as_ref().ok().map(|f| match config.stitch.composite_source {
                CompositeSource::Ahe => f.prepared.strip.quantized(),
                CompositeSource::Original => f.prepared.raw_strip.quantized(),
            })
        })
        .collect();
    let (outputs, chain_breaks) = stitch_chain(id, &strips, &reference_links, &ids, config.stitch.cyclic)?;
    let mut panoramas = Vec::new();
    for out in outputs {
        save_png(&out.canvas, &out_dir.join(format!("{}.png", out.name)))?;
        write_json(&out_dir.join(format!("{}.json", out.name)), &out.meta, id)?;
        panoramas.push(format!("{}.png", out.name));
    }

    let report: MatchReport = build_report(&rows, &config.eval);
    emit_report(&report, out_dir).map_err(|e| StageError::new(Stage::Report, out_dir.display().to_string(), e))?;
    let summary = PipelineSummary {
        source_id: id.to_string(),
        keyframes: indices,
        rows,
        panoramas,
        chain_breaks,
        errors,
    };
    write_json(&out_dir.join("run.json"), &summary, id)?;
    Ok(summary)
}

/// One stitched segment ready to be written.
#[derive(Debug, Clone)]
pub struct PanoramaOutput {
    /// `panorama_<first strip>`.
    pub name: String,
    pub canvas: GrayImage,
    /// Placements and seams as written to the JSON sidecar.
    pub meta: serde_json::Value,
}

/// Composites consecutive strips into one panorama per unbroken run.
///
/// `None` strips (frames that failed upstream) and `None` links both split the
/// chain. Returns the panoramas and the sorted pair indices where it broke.
pub fn stitch_chain(
    source_id: &str,
    strips: &[Option<GrayImage>],
    links: &[Option<RansacResult>],
    names: &[String],
    cyclic: bool,
) -> Result<(Vec<PanoramaOutput>, Vec<usize>), StageError> {
    if links.len() + 1 != strips.len() || names.len() != strips.len() {
        return Err(StageError::new(
            Stage::Stitch,
            source_id,
            format!(
                "{} strips need {} links and names, got {} links and {} names",
                strips.len(),
                strips.len().saturating_sub(1),
                links.len(),
                names.len()
            ),
        ));
    }
    let mut outputs = Vec::new();
    let mut chain_breaks = Vec::new();
    let mut start = 0;
    while start < strips.len() {
        let Some(first) = &strips[start] else {
            start += 1;
            continue;
        };
        let mut end = start;
        while end + 1 < strips.len() && strips[end + 1].is_some() {
            end += 1;
        }
        let run: Vec<GrayImage> = strips[start..=end].iter().flatten().cloned().collect();
        let options = CompositeOptions {
            cyclic_period: cyclic.then(|| first.width()),
        };
        let (segments, breaks) = compose_segments(&run, &links[start..end], options)
            .map_err(|e| StageError::new(Stage::Stitch, source_id, e))?;
        chain_breaks.extend(breaks.iter().map(|b| b + start));
        for seg in segments {
            let first = seg.first_strip + start;
            let placements: Vec<_> = seg
                .panorama
                .placements
                .iter()
                .map(|p| {
                    serde_json::json!({
                        "frame": names[p.strip_index + start],
                        "model": p.model,
                        "width": p.width,
                        "height": p.height,
                    })
                })
                .collect();
            let meta = serde_json::json!({
                "source_id": source_id,
                "origin": seg.panorama.origin,
                "width": seg.panorama.width(),
                "height": seg.panorama.height(),
                "blend": seg.panorama.blend,
                "placements": placements,
                "seams": seg.panorama.seams,
            });
            outputs.push(PanoramaOutput {
                name: format!("panorama_{first:03}"),
                canvas: seg.panorama.canvas(),
                meta,
            });
        }
        if end + 1 < strips.len() {
            chain_breaks.push(end);
        }
        start = end + 1;
    }
    chain_breaks.sort_unstable();
    chain_breaks.dedup();
    Ok((outputs, chain_breaks))
}

/// Loads and prepares every keyframe of a manifest for one variant in parallel.
pub fn prepare_manifest(
    config: &PipelineConfig,
    manifest: &FrameManifest,
    variant: MethodVariant,
) -> Result<Vec<(usize, Result<PreparedFrame, StageError>)>, StageError> {
    let id = manifest.source_id.as_str();
    let selection = select_keyframes(manifest, &config.ingest).map_err(|e| StageError::new(Stage::Keyframes, id, e))?;
    let frames = load_frames(manifest, &selection.selected_indices).map_err(|e| StageError::new(Stage::Load, id, e))?;
    Ok(selection
        .selected_indices
        .par_iter()
        .zip(frames.par_iter())
        .map(|(&i, f)| (i, prepare_frame(f, variant, config, &format!("frame_{i:05}"))))
        .collect())
}
