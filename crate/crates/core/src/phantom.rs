//! Seeded synthetic data: a low-contrast rolling tube seen end-on, plus a
//! generic blob texture for detector tests.
//!
//! The tube frame has a dark elliptical lumen at the image center. The wall
//! carries a faint sum of sinusoids in polar coordinates (integer angular
//! frequencies so the pattern closes around the circle). Each frame applies an
//! independent camera roll, which rotates lumen and texture together, and an
//! axial advance, which pushes the texture outward by a fixed radial step.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::GrayImage;
use crate::ingest::{FrameManifest, IngestError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TubeParams {
    pub size: usize,
    pub fps: f64,
    pub frames: usize,
    pub lumen_semi_major: f64,
    pub lumen_semi_minor: f64,
    /// Lumen major-axis angle with zero roll, radians.
    pub base_angle: f64,
    /// Per-frame roll is uniform in `[-roll_range, roll_range]` radians.
    pub roll_range: f64,
    /// Radial texture shift per frame, pixels.
    pub advance_per_frame: f64,
    pub wall_intensity: f64,
    pub lumen_intensity: f64,
    /// Peak amplitude of each texture component, grey levels.
    pub texture_amplitude: f64,
    pub texture_components: usize,
    pub noise_sigma: f64,
}

impl Default for TubeParams {
    fn default() -> Self {
        Self {
            size: 256,
            fps: 10.0,
            frames: 100,
            lumen_semi_major: 30.0,
            lumen_semi_minor: 20.0,
            base_angle: FRAC_PI_2,
            roll_range: 70f64.to_radians(),
            advance_per_frame: 1.5,
            wall_intensity: 180.0,
            lumen_intensity: 20.0,
            texture_amplitude: 6.0,
            texture_components: 24,
            noise_sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    angular: f64,
    /// Radians per pixel along the radius.
    radial: f64,
    phase: f64,
    amplitude: f64,
}

/// Texture shared by every frame of one video.
#[derive(Debug, Clone)]
pub struct TubeTexture {
    waves: Vec<Wave>,
}

impl TubeTexture {
    pub fn random(params: &TubeParams, rng: &mut impl Rng) -> Self {
        let waves = (0..params.texture_components)
            .map(|_| {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                Wave {
                    angular: sign * f64::from(rng.random_range(3..=40)),
                    radial: TAU / rng.random_range(6.0..30.0),
                    phase: rng.random_range(0.0..TAU),
                    amplitude: params.texture_amplitude * rng.random_range(0.5..1.0),
                }
            })
            .collect();
        Self { waves }
    }

    /// Texture value at polar position `(phi, s)` in tube coordinates.
    pub fn value(&self, phi: f64, s: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| w.amplitude * (w.angular * phi + w.radial * s + w.phase).sin())
            .sum()
    }
}

/// Renders one noiseless frame.
pub fn tube_frame(params: &TubeParams, texture: &TubeTexture, index: usize, roll: f64) -> GrayImage {
    let n = params.size;
    let c = (n as f64 - 1.0) / 2.0;
    let advance = params.advance_per_frame * index as f64;
    let (sin, cos) = (params.base_angle + roll).sin_cos();
    let (a, b) = (params.lumen_semi_major, params.lumen_semi_minor);
    let r_max = c;
    GrayImage::from_fn(n, n, |x, y| {
        let (dx, dy) = (x as f64 - c, y as f64 - c);
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        // Elliptical radius in units of the lumen boundary.
        let q = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
        let rho = dx.hypot(dy);
        let phi = dy.atan2(dx) - roll;
        let shading = 0.7 + 0.3 * (rho / r_max).min(1.0);
        let wall = params.wall_intensity * shading + texture.value(phi, rho - advance);
        // Soft lumen edge, about one pixel wide.
        let t = ((q - 1.0) * a.min(b)).clamp(-1.0, 1.0) * 0.5 + 0.5;
        params.lumen_intensity + t * (wall - params.lumen_intensity)
    })
}

#[derive(Debug, Clone)]
pub struct TubeVideo {
    pub frames: Vec<GrayImage>,
    /// Applied roll per frame, radians.
    pub rolls: Vec<f64>,
    pub fps: f64,
}

/// Generates a full video; identical `(params, seed)` give identical frames.
pub fn tube_video(params: &TubeParams, seed: u64) -> TubeVideo {
    let all: Vec<usize> = (0..params.frames).collect();
    let (frames, rolls) = render(params, seed, &all);
    TubeVideo {
        frames,
        rolls,
        fps: params.fps,
    }
}

/// Renders only the listed frames, bit-identical to the same frames of
/// [`tube_video`].
pub fn tube_frames(params: &TubeParams, seed: u64, indices: &[usize]) -> Vec<GrayImage> {
    render(params, seed, indices).0
}

fn render(params: &TubeParams, seed: u64, indices: &[usize]) -> (Vec<GrayImage>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture = TubeTexture::random(params, &mut rng);
    let rolls: Vec<f64> = (0..params.frames)
        .map(|_| rng.random_range(-params.roll_range..=params.roll_range))
        .collect();
    let frames = indices
        .par_iter()
        .map(|&i| {
            let img = tube_frame(params, &texture, i, rolls[i]);
            if params.noise_sigma <= 0.0 {
                return img;
            }
            let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
            noise_rng.set_stream(i as u64 + 1);
            let normal = Normal::new(0.0, params.noise_sigma).expect("finite sigma");
            GrayImage::from_fn(img.width(), img.height(), |x, y| img.get(x, y) + normal.sample(&mut noise_rng))
        })
        .collect();
    (frames, rolls)
}

/// Writes frames as 8-bit PNGs plus `manifest.json` into `dir`.
pub fn write_video(video: &TubeVideo, dir: &Path, source_id: &str) -> Result<FrameManifest, IngestError> {
    fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let names: Vec<String> = (0..video.frames.len())
        .map(|i| format!("frame_{i:05}.png"))
        .collect();
    video
        .frames
        .par_iter()
        .zip(&names)
        .try_for_each(|(img, name)| img.save_png(&dir.join(name)))?;
    let manifest = FrameManifest::new(
        source_id.to_string(),
        video.fps,
        names.iter().map(|n| dir.join(n)).collect(),
    )?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Random isotropic blobs of mixed sign and scale on a mid-grey background.
pub fn blob_texture(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = width * height / 200;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
                rng.random_range(1.5..6.0),
                rng.random_range(70.0..120.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            )
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..height)
        .into_par_iter()
        .map(|y| {
            (0..width)
                .map(|x| {
                    let mut v = 128.0;
                    for &(bx, by, s, amp) in &blobs {
                        let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                        if d2 < 16.0 * s * s {
                            v += amp * (-d2 / (2.0 * s * s)).exp();
                        }
                    }
                    v
                })
                .collect()
        })
        .collect();
    GrayImage::from_fn(width, height, |x, y| rows[y][x])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn video_is_deterministic() {
        let params = TubeParams {
            frames: 3,
            size: 64,
            lumen_semi_major: 10.0,
            lumen_semi_minor: 7.0,
            ..TubeParams::default()
        };
        let a = tube_video(&params, 7);
        let b = tube_video(&params, 7);
        assert_eq!(a.rolls, b.rolls);
        assert_eq!(a.frames, b.frames);
        assert_ne!(tube_video(&params, 8).frames, a.frames);
        assert_eq!(tube_frames(&params, 7, &[2, 0]), vec![a.frames[2].clone(), a.frames[0].clone()]);
    }

    #[test]
    fn lumen_is_dark_and_wall_bright() {
        let params = TubeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tex = TubeTexture::random(&params, &mut rng);
        let img = tube_frame(&params, &tex, 0, 0.0);
        let c = (params.size - 1) / 2;
        assert!(img.get(c, c) < 25.0);
        assert!(img.get(5, c) > 80.0);
    }
}
