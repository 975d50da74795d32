//! Annulus selection and polar flattening.
//!
//! Row `i` of a strip samples radius `r_min + i * (r_max - r_min) / (n_r - 1)` and
//! column `j` samples angle `j * 2pi / n_theta`, measured from +x towards +y
//! (counterclockwise in image coordinates with y pointing down). Source
//! positions follow `x = x0 + r cos(theta)`, `y = y0 + r sin(theta)`.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::{threshold_mask, DepthThreshold};
use crate::image::{GrayImage, Mask};

#[derive(Debug, Error, PartialEq)]
pub enum UnwrapError {
    #[error("center ({0:.2}, {1:.2}) lies outside the image")]
    CenterOutOfBounds(f64, f64),
    #[error("degenerate annulus: r_min {r_min:.2} >= r_max {r_max:.2}")]
    DegenerateAnnulus { r_min: f64, r_max: f64 },
    #[error("unwrap spec does not fit the image: {0}")]
    SpecImageMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnwrapSpec {
    pub center: (f64, f64),
    pub r_min: f64,
    pub r_max: f64,
    pub n_theta: usize,
    pub n_r: usize,
}

impl UnwrapSpec {
    /// Sampling at roughly one pixel per step along both arc and radius.
    pub fn with_auto_resolution(center: (f64, f64), r_min: f64, r_max: f64) -> Self {
        Self {
            center,
            r_min,
            r_max,
            n_theta: ((TAU * r_max).round() as usize).max(8),
            n_r: ((r_max - r_min).round() as usize).max(2),
        }
    }

    pub fn radius_at(&self, row: f64) -> f64 {
        self.r_min + row * (self.r_max - self.r_min) / (self.n_r - 1) as f64
    }

    pub fn angle_at(&self, col: f64) -> f64 {
        col * TAU / self.n_theta as f64
    }

    /// Source position for strip coordinates `(col, row)`.
    pub fn source_position(&self, col: f64, row: f64) -> (f64, f64) {
        let r = self.radius_at(row);
        let (s, c) = self.angle_at(col).sin_cos();
        (self.center.0 + r * c, self.center.1 + r * s)
    }

    /// Checks the intrinsic invariants and the fit against a `width` x `height` image.
    pub fn validate_for(&self, width: usize, height: usize) -> Result<(), UnwrapError> {
        let mismatch = |m: String| Err(UnwrapError::SpecImageMismatch(m));
        let (x0, y0) = self.center;
        if !(x0.is_finite() && y0.is_finite()) {
            return mismatch("center is not finite".into());
        }
        if !(self.r_min >= 0.0 && self.r_min < self.r_max) {
            return mismatch(format!(
                "radii must satisfy 0 <= r_min < r_max, got {} and {}",
                self.r_min, self.r_max
            ));
        }
        if self.n_theta < 8 || self.n_r < 2 {
            return mismatch(format!(
                "need n_theta >= 8 and n_r >= 2, got {} and {}",
                self.n_theta, self.n_r
            ));
        }
        let limit = max_inscribed_radius(width, height, self.center);
        if self.r_max > limit + 1e-9 {
            return mismatch(format!(
                "r_max {:.3} exceeds the distance {:.3} from the center to the image border",
                self.r_max, limit
            ));
        }
        Ok(())
    }
}

fn max_inscribed_radius(width: usize, height: usize, (x0, y0): (f64, f64)) -> f64 {
    x0.min(y0)
        .min(width as f64 - 1.0 - x0)
        .min(height as f64 - 1.0 - y0)
}

pub fn annulus_radii(
    img: &GrayImage,
    center: (f64, f64),
    tau: DepthThreshold,
) -> Result<(f64, f64), UnwrapError> {
    annulus_radii_within(img, center, tau, None)
}

/// `r_max` is the largest circle that stays inside the image; `r_min` is the
/// smallest circle enclosing every below-threshold pixel (restricted to `valid`
/// when given).
pub fn annulus_radii_within(
    img: &GrayImage,
    center: (f64, f64),
    tau: DepthThreshold,
    valid: Option<&Mask>,
) -> Result<(f64, f64), UnwrapError> {
    let (x0, y0) = center;
    let (w, h) = (img.width() as f64, img.height() as f64);
    if !(x0 >= 0.0 && y0 >= 0.0 && x0 <= w - 1.0 && y0 <= h - 1.0) {
        return Err(UnwrapError::CenterOutOfBounds(x0, y0));
    }
    let r_max = max_inscribed_radius(img.width(), img.height(), center);
    let mut dark = threshold_mask(img, tau);
    if let Some(v) = valid {
        dark = dark.and(v);
    }
    let r_min = dark
        .iter_set()
        .map(|(x, y)| ((x as f64 - x0).powi(2) + (y as f64 - y0).powi(2)).sqrt())
        .fold(0.0, f64::max);
    if r_min >= r_max {
        return Err(UnwrapError::DegenerateAnnulus { r_min, r_max });
    }
    Ok((r_min, r_max))
}

/// Flattens the annulus into an `n_r` x `n_theta` strip with bilinear sampling.
pub fn unwrap(img: &GrayImage, spec: &UnwrapSpec) -> Result<GrayImage, UnwrapError> {
    spec.validate_for(img.width(), img.height())?;
    let rows: Vec<Vec<f64>> = (0..spec.n_r)
        .into_par_iter()
        .map(|i| {
            (0..spec.n_theta)
                .map(|j| {
                    let (x, y) = spec.source_position(j as f64, i as f64);
                    // Clamp rounding excursions at the inscribed circle.
                    let x = x.clamp(0.0, (img.width() - 1) as f64);
                    let y = y.clamp(0.0, (img.height() - 1) as f64);
                    img.sample_bilinear(x, y).expect("clamped inside image")
                })
                .collect()
        })
        .collect();
    Ok(GrayImage::from_raw_clamped(
        spec.n_theta,
        spec.n_r,
        rows.concat(),
    ))
}

/// Inverse polar map of a strip onto a `width` x `height` canvas. Pixels outside
/// the annulus are zero. The angular axis wraps.
pub fn rewrap(
    strip: &GrayImage,
    spec: &UnwrapSpec,
    width: usize,
    height: usize,
) -> Result<GrayImage, UnwrapError> {
    if strip.width() != spec.n_theta || strip.height() != spec.n_r {
        return Err(UnwrapError::SpecImageMismatch(format!(
            "strip is {}x{}, spec expects {}x{}",
            strip.width(),
            strip.height(),
            spec.n_theta,
            spec.n_r
        )));
    }
    spec.validate_for(width, height)?;
    let radial_step = (spec.r_max - spec.r_min) / (spec.n_r - 1) as f64;
    let rows: Vec<Vec<f64>> = (0..height)
        .into_par_iter()
        .map(|y| {
            (0..width)
                .map(|x| {
                    let dx = x as f64 - spec.center.0;
                    let dy = y as f64 - spec.center.1;
                    let r = (dx * dx + dy * dy).sqrt();
                    if r < spec.r_min || r > spec.r_max {
                        return 0.0;
                    }
                    let row = ((r - spec.r_min) / radial_step).min((spec.n_r - 1) as f64);
                    let col = dy.atan2(dx).rem_euclid(TAU) * spec.n_theta as f64 / TAU;
                    sample_cyclic(strip, col, row)
                })
                .collect()
        })
        .collect();
    Ok(GrayImage::from_raw_clamped(width, height, rows.concat()))
}

/// Bilinear sample with the column axis periodic and rows clamped.
fn sample_cyclic(strip: &GrayImage, col: f64, row: f64) -> f64 {
    let n = strip.width();
    let c0 = col.floor();
    let fc = col - c0;
    let c0 = (c0 as i64).rem_euclid(n as i64) as usize;
    let c1 = (c0 + 1) % n;
    let r0 = row.floor().max(0.0) as usize;
    let r1 = (r0 + 1).min(strip.height() - 1);
    let fr = row - r0 as f64;
    let top = crate::image::lerp(strip.get(c0, r0), strip.get(c1, r0), fc);
    let bottom = crate::image::lerp(strip.get(c0, r1), strip.get(c1, r1), fc);
    crate::image::lerp(top, bottom, fr)
}
