//! Difference-of-Gaussians detector with gradient-histogram descriptors.
//!
//! The seed image is the input doubled in size. Each octave holds `S + 3`
//! Gaussian layers; extrema are searched over the middle `S` DoG layers, refined
//! with a quadratic fit, filtered for contrast and edge response, assigned one or
//! more dominant orientations, and described by a 4x4x8 histogram.

use std::f64::consts::TAU;

use rayon::prelude::*;

use super::scale_space::{build_pyramid, Octave, Plane, SIGMA_BASE, SIGMA_INPUT};
use super::{
    Descriptor, Feature, FeatureError, FeatureParams, Keypoint, DESCRIPTOR_CLAMP, DESCRIPTOR_LEN,
    MIN_IMAGE_SIDE,
};
use crate::image::GrayImage;

const BORDER: usize = 5;
const MAX_REFINE_STEPS: usize = 5;
const ORI_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f64 = 1.5;
const ORI_RADIUS_FACTOR: f64 = 3.0 * ORI_SIGMA_FACTOR;
const ORI_PEAK_RATIO: f64 = 0.8;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;
const DESC_CELL_FACTOR: f64 = 3.0;

/// Extremum located in octave coordinates.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    octave: usize,
    layer: usize,
    x: f64,
    y: f64,
    /// Fractional layer position.
    scale: f64,
    response: f64,
}

impl Candidate {
    fn octave_sigma(&self, scales: usize) -> f64 {
        SIGMA_BASE * 2f64.powf(self.scale / scales as f64)
    }
}

pub fn detect_and_describe(
    img: &GrayImage,
    params: &FeatureParams,
) -> Result<Vec<Feature>, FeatureError> {
    let problems = params.validate();
    if !problems.is_empty() {
        return Err(FeatureError::InvalidParams(problems.join("; ")));
    }
    if img.width() < MIN_IMAGE_SIDE || img.height() < MIN_IMAGE_SIDE {
        return Err(FeatureError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: MIN_IMAGE_SIDE,
        });
    }
    let scales = params.scales_per_octave;
    let unit = Plane {
        width: img.width(),
        height: img.height(),
        data: img.pixels().iter().map(|&v| (v / 255.0) as f32).collect(),
    };
    let doubled = unit.upsample2();
    let seed_sigma = (SIGMA_BASE * SIGMA_BASE - 4.0 * SIGMA_INPUT * SIGMA_INPUT).sqrt();
    let seed = doubled.gaussian_blur(seed_sigma);
    let pyramid = build_pyramid(seed, params.octaves, scales);

    let mut candidates = Vec::new();
    for (o, octave) in pyramid.iter().enumerate() {
        for layer in 1..=scales {
            candidates.extend(find_extrema(octave, o, layer, params));
        }
    }
    dedup_candidates(&mut candidates);

    let oriented: Vec<(Candidate, f64)> = candidates
        .par_iter()
        .map(|c| {
            orientations(&pyramid[c.octave], c, scales)
                .into_iter()
                .map(|theta| (*c, theta))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat();

    let features = oriented
        .par_iter()
        .filter_map(|(c, theta)| {
            let descriptor = describe(&pyramid[c.octave], c, *theta, scales)?;
            let factor = 2f64.powi(c.octave as i32 - 1);
            let keypoint = Keypoint {
                x: (c.x + 0.5) * factor - 0.5,
                y: (c.y + 0.5) * factor - 0.5,
                sigma: c.octave_sigma(scales) * factor,
                orientation: *theta,
                response: c.response,
            };
            let inside = keypoint.x >= 0.0
                && keypoint.y >= 0.0
                && keypoint.x <= (img.width() - 1) as f64
                && keypoint.y <= (img.height() - 1) as f64;
            inside.then_some(Feature {
                keypoint,
                descriptor,
            })
        })
        .collect();
    Ok(features)
}

fn find_extrema(
    octave: &Octave,
    octave_index: usize,
    layer: usize,
    params: &FeatureParams,
) -> Vec<Candidate> {
    let dog = &octave.dogs;
    let cur = &dog[layer];
    let (w, h) = (cur.width, cur.height);
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return Vec::new();
    }
    let prefilter = (0.5 * params.contrast_threshold) as f32;
    (BORDER..h - BORDER)
        .into_par_iter()
        .flat_map_iter(|y| {
            let mut found = Vec::new();
            for x in BORDER..w - BORDER {
                let v = cur.at(x, y);
                if v.abs() <= prefilter || !is_extremum(dog, layer, x, y, v) {
                    continue;
                }
                if let Some(c) = refine(octave, octave_index, layer, x, y, params) {
                    found.push(c);
                }
            }
            found
        })
        .collect()
}

fn is_extremum(dog: &[Plane], layer: usize, x: usize, y: usize, v: f32) -> bool {
    let maximum = v > 0.0;
    for plane in &dog[layer - 1..=layer + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                let n = plane.at(xx, yy);
                if (maximum && n > v) || (!maximum && n < v) {
                    return false;
                }
            }
        }
    }
    true
}

/// Gradient and Hessian of the DoG stack at an integer sample.
fn derivatives(dog: &[Plane], s: usize, x: usize, y: usize) -> ([f64; 3], [[f64; 3]; 3]) {
    let p = |l: usize, dx: isize, dy: isize| {
        f64::from(dog[l].at((x as isize + dx) as usize, (y as isize + dy) as usize))
    };
    let v = p(s, 0, 0);
    let gx = 0.5 * (p(s, 1, 0) - p(s, -1, 0));
    let gy = 0.5 * (p(s, 0, 1) - p(s, 0, -1));
    let gs = 0.5 * (p(s + 1, 0, 0) - p(s - 1, 0, 0));
    let dxx = p(s, 1, 0) + p(s, -1, 0) - 2.0 * v;
    let dyy = p(s, 0, 1) + p(s, 0, -1) - 2.0 * v;
    let dss = p(s + 1, 0, 0) + p(s - 1, 0, 0) - 2.0 * v;
    let dxy = 0.25 * (p(s, 1, 1) - p(s, -1, 1) - p(s, 1, -1) + p(s, -1, -1));
    let dxs = 0.25 * (p(s + 1, 1, 0) - p(s + 1, -1, 0) - p(s - 1, 1, 0) + p(s - 1, -1, 0));
    let dys = 0.25 * (p(s + 1, 0, 1) - p(s + 1, 0, -1) - p(s - 1, 0, 1) + p(s - 1, 0, -1));
    (
        [gx, gy, gs],
        [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]],
    )
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-15 {
        return None;
    }
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        let mut mi = m;
        for r in 0..3 {
            mi[r][i] = b[r];
        }
        *o = (mi[0][0] * (mi[1][1] * mi[2][2] - mi[1][2] * mi[2][1])
            - mi[0][1] * (mi[1][0] * mi[2][2] - mi[1][2] * mi[2][0])
            + mi[0][2] * (mi[1][0] * mi[2][1] - mi[1][1] * mi[2][0]))
            / det;
    }
    Some(out)
}

fn refine(
    octave: &Octave,
    octave_index: usize,
    layer: usize,
    x: usize,
    y: usize,
    params: &FeatureParams,
) -> Option<Candidate> {
    let dog = &octave.dogs;
    let scales = params.scales_per_octave;
    let (w, h) = (dog[0].width, dog[0].height);
    let (mut x, mut y, mut s) = (x, y, layer);
    for _ in 0..MAX_REFINE_STEPS {
        let (g, hess) = derivatives(dog, s, x, y);
        let offset = solve3(hess, g)?;
        let offset = [-offset[0], -offset[1], -offset[2]];
        if offset.iter().all(|o| o.abs() <= 0.5) {
            let value = f64::from(dog[s].at(x, y))
                + 0.5 * (g[0] * offset[0] + g[1] * offset[1] + g[2] * offset[2]);
            if value.abs() < params.contrast_threshold {
                return None;
            }
            let (dxx, dyy, dxy) = (hess[0][0], hess[1][1], hess[0][1]);
            let trace = dxx + dyy;
            let det = dxx * dyy - dxy * dxy;
            let r = params.edge_ratio_threshold;
            if det <= 0.0 || trace * trace * r >= (r + 1.0).powi(2) * det {
                return None;
            }
            return Some(Candidate {
                octave: octave_index,
                layer: s,
                x: x as f64 + offset[0],
                y: y as f64 + offset[1],
                scale: s as f64 + offset[2],
                response: value.abs(),
            });
        }
        if offset.iter().any(|o| !o.is_finite() || o.abs() > 1e6) {
            return None;
        }
        let nx = x as i64 + offset[0].round() as i64;
        let ny = y as i64 + offset[1].round() as i64;
        let ns = s as i64 + offset[2].round() as i64;
        if ns < 1
            || ns > scales as i64
            || nx < BORDER as i64
            || ny < BORDER as i64
            || nx >= (w - BORDER) as i64
            || ny >= (h - BORDER) as i64
        {
            return None;
        }
        (x, y, s) = (nx as usize, ny as usize, ns as usize);
    }
    None
}

/// Removes candidates that refined onto the same point from neighbouring samples.
fn dedup_candidates(candidates: &mut Vec<Candidate>) {
    let mut keep: Vec<Candidate> = Vec::with_capacity(candidates.len());
    let mut sorted = candidates.clone();
    sorted.sort_by(|a, b| {
        (a.octave, a.layer)
            .cmp(&(b.octave, b.layer))
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    for c in sorted {
        let duplicate = keep.iter().rev().take_while(|k| k.octave == c.octave && c.y - k.y < 0.5).any(|k| {
            (k.x - c.x).abs() < 0.5 && (k.y - c.y).abs() < 0.5 && (k.scale - c.scale).abs() < 0.5
        });
        if !duplicate {
            keep.push(c);
        }
    }
    *candidates = keep;
}

#[inline]
fn gradient(plane: &Plane, x: usize, y: usize) -> (f64, f64) {
    let dx = f64::from(plane.at(x + 1, y)) - f64::from(plane.at(x - 1, y));
    let dy = f64::from(plane.at(x, y + 1)) - f64::from(plane.at(x, y - 1));
    (dx, dy)
}

/// Dominant orientations from a smoothed 36-bin gradient histogram.
fn orientations(octave: &Octave, c: &Candidate, scales: usize) -> Vec<f64> {
    let plane = &octave.gaussians[c.layer];
    let sigma = c.octave_sigma(scales);
    let weight_sigma = ORI_SIGMA_FACTOR * sigma;
    let radius = (ORI_RADIUS_FACTOR * sigma).round() as i64;
    let (cx, cy) = (c.x.round() as i64, c.y.round() as i64);
    let mut hist = [0.0f64; ORI_BINS];
    for dy in -radius..=radius {
        let y = cy + dy;
        if y <= 0 || y >= plane.height as i64 - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let x = cx + dx;
            if x <= 0 || x >= plane.width as i64 - 1 {
                continue;
            }
            let (gx, gy) = gradient(plane, x as usize, y as usize);
            let magnitude = (gx * gx + gy * gy).sqrt();
            if magnitude == 0.0 {
                continue;
            }
            let weight = (-((dx * dx + dy * dy) as f64) / (2.0 * weight_sigma * weight_sigma)).exp();
            let angle = gy.atan2(gx).rem_euclid(TAU);
            let bin = ((angle * ORI_BINS as f64 / TAU).round() as usize) % ORI_BINS;
            hist[bin] += weight * magnitude;
        }
    }
    // Circular [1 4 6 4 1] / 16 smoothing.
    let smoothed: Vec<f64> = (0..ORI_BINS)
        .map(|i| {
            let at = |o: isize| hist[(i as isize + o).rem_euclid(ORI_BINS as isize) as usize];
            (at(-2) + at(2) + 4.0 * (at(-1) + at(1)) + 6.0 * at(0)) / 16.0
        })
        .collect();
    let peak = smoothed.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Vec::new();
    }
    (0..ORI_BINS)
        .filter_map(|i| {
            let left = smoothed[(i + ORI_BINS - 1) % ORI_BINS];
            let right = smoothed[(i + 1) % ORI_BINS];
            let v = smoothed[i];
            if v > left && v > right && v >= ORI_PEAK_RATIO * peak {
                let shift = 0.5 * (left - right) / (left - 2.0 * v + right);
                let bin = i as f64 + shift;
                let theta = (bin * TAU / ORI_BINS as f64).rem_euclid(TAU);
                Some(if theta >= TAU { 0.0 } else { theta })
            } else {
                None
            }
        })
        .collect()
}

/// 4x4x8 descriptor with trilinear binning. Returns `None` when the sampling
/// window leaves the image or the patch has no gradient.
fn describe(octave: &Octave, c: &Candidate, orientation: f64, scales: usize) -> Option<Descriptor> {
    let plane = &octave.gaussians[c.layer];
    let sigma = c.octave_sigma(scales);
    let cell = DESC_CELL_FACTOR * sigma;
    let half = DESC_WIDTH as f64 / 2.0;
    let radius = (cell * std::f64::consts::SQRT_2 * (DESC_WIDTH as f64 + 1.0) * 0.5).round() as i64;
    let (cx, cy) = (c.x.round() as i64, c.y.round() as i64);
    if cx - radius < 1
        || cy - radius < 1
        || cx + radius > plane.width as i64 - 2
        || cy + radius > plane.height as i64 - 2
    {
        return None;
    }
    let (sin, cos) = orientation.sin_cos();
    let weight_denom = 2.0 * (half * cell).powi(2);
    let bins_per_rad = DESC_BINS as f64 / TAU;
    // Spatial bins padded by one on each side to absorb interpolation spill.
    let side = DESC_WIDTH + 2;
    let mut hist = vec![0.0f64; side * side * (DESC_BINS + 1)];
    let (fx, fy) = (c.x - cx as f64, c.y - cy as f64);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (ox, oy) = (dx as f64 - fx, dy as f64 - fy);
            // Rotate into the keypoint frame.
            let rx = (cos * ox + sin * oy) / cell;
            let ry = (-sin * ox + cos * oy) / cell;
            let col = rx + half - 0.5;
            let row = ry + half - 0.5;
            if row <= -1.0 || row >= DESC_WIDTH as f64 || col <= -1.0 || col >= DESC_WIDTH as f64 {
                continue;
            }
            let (gx, gy) = gradient(plane, (cx + dx) as usize, (cy + dy) as usize);
            let magnitude = (gx * gx + gy * gy).sqrt();
            if magnitude == 0.0 {
                continue;
            }
            let angle = (gy.atan2(gx) - orientation).rem_euclid(TAU);
            let weight = (-(rx * rx + ry * ry) * cell * cell / weight_denom).exp() * magnitude;
            let obin = (angle * bins_per_rad).min(DESC_BINS as f64 - 1e-9);
            let (r0, c0, o0) = (row.floor(), col.floor(), obin.floor());
            let (dr, dc, dob) = (row - r0, col - c0, obin - o0);
            let (r0, c0, o0) = ((r0 + 1.0) as usize, (c0 + 1.0) as usize, o0 as usize);
            for (ri, wr) in [(0usize, 1.0 - dr), (1, dr)] {
                for (ci, wc) in [(0usize, 1.0 - dc), (1, dc)] {
                    for (oi, wo) in [(0usize, 1.0 - dob), (1, dob)] {
                        let idx = ((r0 + ri) * side + (c0 + ci)) * (DESC_BINS + 1) + o0 + oi;
                        hist[idx] += weight * wr * wc * wo;
                    }
                }
            }
        }
    }
    let mut values = Vec::with_capacity(DESCRIPTOR_LEN);
    for r in 1..=DESC_WIDTH {
        for col in 1..=DESC_WIDTH {
            let base = (r * side + col) * (DESC_BINS + 1);
            for o in 0..DESC_BINS {
                let mut v = hist[base + o];
                if o == 0 {
                    // Orientation bin DESC_BINS wraps onto bin 0.
                    v += hist[base + DESC_BINS];
                }
                values.push(v);
            }
        }
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return None;
    }
    let clamp = f64::from(DESCRIPTOR_CLAMP);
    for v in &mut values {
        *v = (*v / norm).min(clamp);
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    Some(Descriptor(values.iter().map(|v| (v / norm) as f32).collect()))
}
