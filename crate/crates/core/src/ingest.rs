//! Frame manifests, keyframe selection and frame decoding.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{GrayImage, ImageError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("fps must be positive and finite, got {0}")]
    InvalidFps(f64),
    #[error("video lasts {duration:.3} s, not longer than the trimmed {trimmed:.3} s")]
    VideoTooShort { duration: f64, trimmed: f64 },
    #[error("invalid keyframe parameters: {0}")]
    InvalidParams(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Decode(#[from] ImageError),
}

/// Ordered list of decoded frame files belonging to one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub source_id: String,
    pub fps: f64,
    pub frame_paths: Vec<PathBuf>,
    pub frame_count: usize,
}

/// On-disk manifest layout: `{"source_id", "fps", "frames": [relative paths]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    source_id: String,
    fps: f64,
    frames: Vec<PathBuf>,
}

impl FrameManifest {
    pub fn new(source_id: impl Into<String>, fps: f64, frame_paths: Vec<PathBuf>) -> Result<Self, IngestError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(IngestError::InvalidFps(fps));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = frame_paths.iter().find(|p| !seen.insert(*p)) {
            return Err(IngestError::InvalidManifest(format!(
                "duplicate frame path {}",
                dup.display()
            )));
        }
        Ok(Self {
            source_id: source_id.into(),
            fps,
            frame_count: frame_paths.len(),
            frame_paths,
        })
    }

    /// A manifest describing `frame_count` frames without backing files; used for
    /// keyframe arithmetic only.
    pub fn synthetic(source_id: impl Into<String>, fps: f64, frame_count: usize) -> Result<Self, IngestError> {
        Self::new(
            source_id,
            fps,
            (0..frame_count)
                .map(|i| PathBuf::from(format!("frame_{i:06}.png")))
                .collect(),
        )
    }

    pub fn duration(&self) -> f64 {
        self.frame_count as f64 / self.fps
    }

    /// Reads a manifest JSON file. Frame paths are resolved against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: ManifestFile = serde_json::from_str(&text)
            .map_err(|e| IngestError::InvalidManifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let frames = file.frames.into_iter().map(|p| base.join(p)).collect();
        Self::new(file.source_id, file.fps, frames)
    }

    /// Writes the manifest with frame paths relative to `dir`.
    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let frames = self
            .frame_paths
            .iter()
            .map(|p| p.strip_prefix(base).unwrap_or(p).to_path_buf())
            .collect();
        let file = ManifestFile {
            source_id: self.source_id.clone(),
            fps: self.fps,
            frames,
        };
        let text = serde_json::to_string_pretty(&file).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Keyframe trimming and stride parameters, plus the indices they select.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyframeSelection {
    /// Seconds dropped from the start.
    pub head_trim: f64,
    /// Seconds dropped from the end.
    pub tail_trim: f64,
    pub stride: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub selected_indices: Vec<usize>,
}

impl Default for KeyframeSelection {
    fn default() -> Self {
        Self {
            head_trim: 3.0,
            tail_trim: 3.0,
            stride: 5,
            selected_indices: Vec::new(),
        }
    }
}

impl KeyframeSelection {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.head_trim.is_finite() && self.head_trim >= 0.0) {
            problems.push(format!("ingest.head_trim must be >= 0, got {}", self.head_trim));
        }
        if !(self.tail_trim.is_finite() && self.tail_trim >= 0.0) {
            problems.push(format!("ingest.tail_trim must be >= 0, got {}", self.tail_trim));
        }
        if self.stride == 0 {
            problems.push("ingest.stride must be positive, got 0".to_string());
        }
        problems
    }
}

/// Drops the trimmed head and tail, then keeps every `stride`-th frame starting at the
/// first kept one.
pub fn select_keyframes(
    manifest: &FrameManifest,
    params: &KeyframeSelection,
) -> Result<KeyframeSelection, IngestError> {
    if !(manifest.fps.is_finite() && manifest.fps > 0.0) {
        return Err(IngestError::InvalidFps(manifest.fps));
    }
    let problems = params.validate();
    if !problems.is_empty() {
        return Err(IngestError::InvalidParams(problems.join("; ")));
    }
    let duration = manifest.duration();
    let trimmed = params.head_trim + params.tail_trim;
    if duration <= trimmed {
        return Err(IngestError::VideoTooShort { duration, trimmed });
    }
    let first_kept = (params.head_trim * manifest.fps).ceil() as usize;
    let tail_frames = (params.tail_trim * manifest.fps).ceil() as usize;
    let selected_indices = match (manifest.frame_count - 1).checked_sub(tail_frames) {
        Some(last_kept) if last_kept >= first_kept => {
            (first_kept..=last_kept).step_by(params.stride).collect()
        }
        _ => Vec::new(),
    };
    Ok(KeyframeSelection {
        selected_indices,
        ..params.clone()
    })
}

/// Decodes an 8-bit image file to gray using luma weights 0.299 R + 0.587 G + 0.114 B.
pub fn load_gray(path: &Path) -> Result<GrayImage, ImageError> {
    let decode_err = |message: String| ImageError::Decode {
        path: path.display().to_string(),
        message,
    };
    let dynamic = image::ImageReader::open(path)
        .map_err(|e| decode_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    match dynamic {
        image::DynamicImage::ImageLuma8(buf) => GrayImage::from_u8(w, h, buf.as_raw()),
        image::DynamicImage::ImageLumaA8(buf) => {
            let luma: Vec<u8> = buf.as_raw().chunks_exact(2).map(|px| px[0]).collect();
            GrayImage::from_u8(w, h, &luma)
        }
        other => {
            let rgb = other.to_rgb8();
            let pixels = rgb
                .as_raw()
                .chunks_exact(3)
                .map(|px| luma(px[0], px[1], px[2]))
                .collect();
            GrayImage::new(w, h, pixels)
        }
    }
}

#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)).clamp(0.0, 255.0)
}

/// Loads the selected frames in parallel, preserving index order.
pub fn load_frames(manifest: &FrameManifest, indices: &[usize]) -> Result<Vec<GrayImage>, IngestError> {
    indices
        .par_iter()
        .map(|&i| {
            let path = manifest.frame_paths.get(i).ok_or_else(|| {
                IngestError::InvalidManifest(format!(
                    "frame index {i} out of range for {} frames",
                    manifest.frame_count
                ))
            })?;
            load_gray(path).map_err(IngestError::from)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_default_case() {
        let m = FrameManifest::synthetic("v", 30.0, 360).unwrap();
        let sel = select_keyframes(&m, &KeyframeSelection::default()).unwrap();
        let expected: Vec<usize> = (90..=265).step_by(5).collect();
        assert_eq!(sel.selected_indices, expected);
        assert_eq!(sel.selected_indices.len(), 36);
    }

    #[test]
    fn too_short_and_bad_fps() {
        let m = FrameManifest::synthetic("v", 30.0, 120).unwrap();
        assert!(matches!(
            select_keyframes(&m, &KeyframeSelection::default()),
            Err(IngestError::VideoTooShort { .. })
        ));
        assert!(matches!(
            FrameManifest::synthetic("v", 0.0, 10),
            Err(IngestError::InvalidFps(_))
        ));
        let mut m = FrameManifest::synthetic("v", 30.0, 400).unwrap();
        m.fps = -1.0;
        assert!(matches!(
            select_keyframes(&m, &KeyframeSelection::default()),
            Err(IngestError::InvalidFps(_))
        ));
    }

    #[test]
    fn exactly_trimmed_duration_is_too_short() {
        let m = FrameManifest::synthetic("v", 30.0, 180).unwrap();
        assert!(select_keyframes(&m, &KeyframeSelection::default()).is_err());
        let m = FrameManifest::synthetic("v", 30.0, 181).unwrap();
        let sel = select_keyframes(&m, &KeyframeSelection::default()).unwrap();
        assert_eq!(sel.selected_indices, vec![90]);
    }

    #[test]
    fn reselecting_is_idempotent() {
        let m = FrameManifest::synthetic("v", 25.0, 517).unwrap();
        let once = select_keyframes(&m, &KeyframeSelection::default()).unwrap();
        let twice = select_keyframes(&m, &once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn study_corpus_sized_manifests_ingest() {
        // 20 videos totalling 35,652 frames.
        let mut total = 0;
        for v in 0..20 {
            let frames = 35_652 / 20 + usize::from(v < 35_652 % 20);
            total += frames;
            let m = FrameManifest::synthetic(format!("video_{v:02}"), 30.0, frames).unwrap();
            let sel = select_keyframes(&m, &KeyframeSelection::default()).unwrap();
            assert!(!sel.selected_indices.is_empty());
        }
        assert_eq!(total, 35_652);
    }

    #[test]
    fn duplicate_paths_rejected() {
        let paths = vec![PathBuf::from("a.png"), PathBuf::from("a.png")];
        assert!(matches!(
            FrameManifest::new("v", 30.0, paths),
            Err(IngestError::InvalidManifest(_))
        ));
    }

    #[test]
    fn luma_weights() {
        assert!((luma(255, 0, 0) - 76.245).abs() < 1e-9);
        assert!((luma(255, 255, 255) - 255.0).abs() < 1e-9);
    }
}
