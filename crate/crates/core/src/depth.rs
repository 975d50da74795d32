//! Dark-lumen geometry: thresholding, boundary tracing, ellipse fitting,
//! canonical rotation and the averaged deepest point.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{GrayImage, Mask};

/// Axis ratio below which the fitted orientation is treated as meaningless.
pub const DEFAULT_CIRCLE_AMBIGUITY_RATIO: f64 = 1.05;

#[derive(Debug, Error, PartialEq)]
pub enum DepthError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("degenerate contour: {0}")]
    DegenerateContour(String),
    #[error("no pixel is darker than the threshold {0}")]
    NoDarkRegion(f64),
    #[error("threshold {0} outside [0, 255]")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthThreshold(f64);

impl DepthThreshold {
    pub fn new(tau: f64) -> Result<Self, DepthError> {
        if tau.is_finite() && (0.0..=255.0).contains(&tau) {
            Ok(Self(tau))
        } else {
            Err(DepthError::InvalidThreshold(tau))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Otsu's threshold over a 256-bin histogram. The returned value separates the
/// classes as `v < tau`.
pub fn otsu_threshold(img: &GrayImage) -> DepthThreshold {
    let mut hist = [0u64; 256];
    for &v in img.pixels() {
        hist[(v.floor() as usize).min(255)] += 1;
    }
    let total = img.pixels().len() as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mut weight_bg = 0.0;
    let mut sum_bg = 0.0;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (k, &count) in hist.iter().enumerate().take(255) {
        weight_bg += count as f64;
        sum_bg += k as f64 * count as f64;
        let weight_fg = total - weight_bg;
        if weight_bg == 0.0 || weight_fg == 0.0 {
            continue;
        }
        let mean_bg = sum_bg / weight_bg;
        let mean_fg = (sum_all - sum_bg) / weight_fg;
        let between = weight_bg * weight_fg * (mean_bg - mean_fg).powi(2);
        if between > best.0 {
            best = (between, k);
        }
    }
    DepthThreshold((best.1 + 1) as f64)
}

/// `true` where the pixel is strictly darker than `tau`.
pub fn threshold_mask(img: &GrayImage, tau: DepthThreshold) -> Mask {
    Mask::new(
        img.width(),
        img.height(),
        img.pixels().iter().map(|&v| v < tau.0).collect(),
    )
}

/// Ordered, closed boundary of a pixel region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<(i64, i64)>,
}

impl Contour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn as_f64(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .map(|&(x, y)| (x as f64, y as f64))
            .collect()
    }
}

const NEIGHBORS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// Keeps only the largest 8-connected foreground component. Ties go to the
/// component found first in raster order.
pub fn largest_component(mask: &Mask) -> Result<Mask, DepthError> {
    let (w, h) = (mask.width(), mask.height());
    let mut label = vec![0u32; w * h];
    let mut next = 0u32;
    let mut best = (0usize, 0u32);
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits()[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for (dx, dy) in NEIGHBORS {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_signed(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if label[j] == 0 {
                        label[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        if size > best.0 {
            best = (size, next);
        }
    }
    if best.0 == 0 {
        return Err(DepthError::EmptyMask);
    }
    Ok(Mask::new(w, h, label.iter().map(|&l| l == best.1).collect()))
}

/// Moore-neighbor boundary trace of a single region, starting at its first
/// raster-order pixel and stopping when the initial move repeats.
pub fn trace_boundary(region: &Mask) -> Result<Contour, DepthError> {
    let start = region.iter_set().next().ok_or(DepthError::EmptyMask)?;
    let start = (start.0 as i64, start.1 as i64);
    // Clockwise on screen (y down), beginning at west.
    const RING: [(i64, i64); 8] = [
        (-1, 0),
        (-1, -1),
        (0, -1),
        (1, -1),
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
    ];
    let ring_index = |d: (i64, i64)| RING.iter().position(|&r| r == d).expect("unit step");

    let mut points = vec![start];
    let mut current = start;
    // The west neighbour of the first raster pixel is always background.
    let mut backtrack = 0usize;
    let mut first_move: Option<(i64, i64)> = None;
    let limit = 4 * region.count() + 8;
    loop {
        let mut found = None;
        for k in 1..=8 {
            let d = (backtrack + k) % 8;
            let p = (current.0 + RING[d].0, current.1 + RING[d].1);
            if region.get_signed(p.0, p.1) {
                let prev = (backtrack + k - 1) % 8;
                let bg = (current.0 + RING[prev].0, current.1 + RING[prev].1);
                found = Some((p, ring_index((bg.0 - p.0, bg.1 - p.1))));
                break;
            }
        }
        let Some((next, next_backtrack)) = found else {
            // Isolated pixel.
            break;
        };
        if current == start {
            match first_move {
                None => first_move = Some(next),
                Some(m) if m == next => {
                    // Closed loop: drop the repeated start.
                    points.pop();
                    break;
                }
                Some(_) => {}
            }
        }
        current = next;
        backtrack = next_backtrack;
        points.push(current);
        if points.len() > limit {
            break;
        }
    }
    Ok(Contour { points })
}

/// Boundary trace of the largest 8-connected foreground component.
pub fn largest_component_contour(mask: &Mask) -> Result<Contour, DepthError> {
    trace_boundary(&largest_component(mask)?)
}

/// Fitted ellipse. `angle` is the major-axis direction in image coordinates
/// (x right, y down), normalized to `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn axis_ratio(&self) -> f64 {
        self.semi_major / self.semi_minor
    }

    pub fn is_ambiguous(&self, ratio: f64) -> bool {
        self.axis_ratio() < ratio
    }

    /// Point at parametric angle `t`.
    pub fn point_at(&self, t: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (px, py) = (self.semi_major * t.cos(), self.semi_minor * t.sin());
        (
            self.center.0 + c * px - s * py,
            self.center.1 + s * px + c * py,
        )
    }

    /// Whether `(x, y)` lies inside (or on) the ellipse.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.normalized_radius(x, y) <= 1.0
    }

    /// Ellipse-normalized radius: 1 on the boundary.
    pub fn normalized_radius(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        ((u / self.semi_major).powi(2) + (v / self.semi_minor).powi(2)).sqrt()
    }
}

/// Normalizes an orientation to `[0, pi)`.
pub fn normalize_orientation(angle: f64) -> f64 {
    let a = angle.rem_euclid(PI);
    if a >= PI {
        0.0
    } else {
        a
    }
}

/// Smallest angular distance between two orientations modulo pi.
pub fn orientation_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

pub fn fit_ellipse(contour: &Contour) -> Result<Ellipse, DepthError> {
    fit_ellipse_points(&contour.as_f64())
}

/// Direct least-squares conic fit constrained to `4AC - B^2 > 0`, solved with
/// the scatter-matrix partitioning of Halir and Flusser on centered, scaled
/// coordinates.
pub fn fit_ellipse_points(points: &[(f64, f64)]) -> Result<Ellipse, DepthError> {
    if points.len() < 5 {
        return Err(DepthError::DegenerateContour(format!(
            "need at least 5 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let spread = (points
        .iter()
        .map(|p| (p.0 - mx).powi(2) + (p.1 - my).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if !(spread.is_finite() && spread > 1e-12) {
        return Err(DepthError::DegenerateContour("points coincide".into()));
    }
    let scale = spread / std::f64::consts::SQRT_2;

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for &(px, py) in points {
        let x = (px - mx) / scale;
        let y = (py - my) / scale;
        let quad = Vector3::new(x * x, x * y, y * y);
        let lin = Vector3::new(x, y, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .ok_or_else(|| DepthError::DegenerateContour("points are collinear".into()))?;
    let t = -(s3_inv * s2.transpose());
    let m = s1 + s2 * t;
    // Premultiply by the inverse of the constraint block [[0,0,2],[0,-1,0],[2,0,0]].
    let reduced = Matrix3::from_rows(&[
        (m.row(2) / 2.0).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) / 2.0).into_owned(),
    ]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in reduced.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let Some(v) = null_vector(&(reduced - Matrix3::identity() * lambda.re)) else {
            continue;
        };
        // Only one eigenvector satisfies the constraint in exact arithmetic; near
        // a perfect fit round-off can admit others, so keep the cheapest.
        let constraint = 4.0 * v[0] * v[2] - v[1] * v[1];
        if constraint <= 0.0 {
            continue;
        }
        let cost = v.dot(&(m * v)).abs() / constraint;
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, v));
        }
    }
    let (_, quad) = best.ok_or_else(|| {
        DepthError::DegenerateContour("no elliptical solution (collinear or degenerate points)".into())
    })?;
    let lin = t * quad;
    let ellipse = conic_to_ellipse([quad[0], quad[1], quad[2], lin[0], lin[1], lin[2]])
        .ok_or_else(|| DepthError::DegenerateContour("fitted conic is not a real ellipse".into()))?;
    Ok(Ellipse {
        center: (ellipse.center.0 * scale + mx, ellipse.center.1 * scale + my),
        semi_major: ellipse.semi_major * scale,
        semi_minor: ellipse.semi_minor * scale,
        angle: ellipse.angle,
    })
}

/// Unit vector spanning the (numerical) null space of a rank-2 3x3 matrix.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [
        m.row(0).transpose(),
        m.row(1).transpose(),
        m.row(2).transpose(),
    ];
    let candidates = [
        rows[0].cross(&rows[1]),
        rows[0].cross(&rows[2]),
        rows[1].cross(&rows[2]),
    ];
    let best = candidates
        .iter()
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))?;
    let norm = best.norm();
    (norm > 1e-300).then(|| best / norm)
}

/// Geometric parameters of `A x^2 + B xy + C y^2 + D x + E y + F = 0`.
fn conic_to_ellipse(coeffs: [f64; 6]) -> Option<Ellipse> {
    let [a, b, c, d, e, f] = coeffs;
    let det = 4.0 * a * c - b * b;
    if det <= 0.0 {
        return None;
    }
    let x0 = (b * e - 2.0 * c * d) / det;
    let y0 = (b * d - 2.0 * a * e) / det;
    let mut f_center = a * x0 * x0 + b * x0 * y0 + c * y0 * y0 + d * x0 + e * y0 + f;
    let (mut a, mut b, mut c) = (a, b, c);
    if f_center > 0.0 {
        a = -a;
        b = -b;
        c = -c;
        f_center = -f_center;
    }
    let mean = 0.5 * (a + c);
    let radius = (0.25 * (a - c).powi(2) + 0.25 * b * b).sqrt();
    let lambda_big = mean + radius;
    let lambda_small = mean - radius;
    if !(lambda_small > 0.0 && f_center < 0.0) {
        return None;
    }
    let semi_major = (-f_center / lambda_small).sqrt();
    let semi_minor = (-f_center / lambda_big).sqrt();
    // 0.5 * atan2(B, A - C) points along the larger eigenvalue; the major axis is orthogonal.
    let angle = normalize_orientation(0.5 * b.atan2(a - c) + 0.5 * PI);
    Some(Ellipse {
        center: (x0, y0),
        semi_major,
        semi_minor,
        angle,
    })
}

/// Rotates the image about its center so content at direction `alpha` moves to
/// `alpha + angle` (image coordinates, y down). Bilinear, zero fill.
pub fn rotate_image(img: &GrayImage, angle: f64) -> GrayImage {
    if angle == 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = angle.sin_cos();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // Inverse rotation into the source.
            let sx = cx + c * dx + s * dy;
            let sy = cy - s * dx + c * dy;
            out.push(img.sample_bilinear(sx, sy).unwrap_or(0.0));
        }
    }
    GrayImage::from_raw_clamped(w, h, out)
}

/// Pixels of a rotated frame that were sampled from inside the source.
pub fn rotation_coverage(width: usize, height: usize, angle: f64) -> Mask {
    if angle == 0.0 {
        return Mask::filled(width, height, true);
    }
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let (s, c) = angle.sin_cos();
    let (max_x, max_y) = ((width - 1) as f64, (height - 1) as f64);
    Mask::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let sx = cx + c * dx + s * dy;
        let sy = cy - s * dx + c * dy;
        (0.0..=max_x).contains(&sx) && (0.0..=max_y).contains(&sy)
    })
}

pub fn rotate_to_canonical(img: &GrayImage, ellipse: &Ellipse) -> (GrayImage, f64) {
    rotate_to_canonical_with(img, ellipse, DEFAULT_CIRCLE_AMBIGUITY_RATIO)
}

/// Rotates by `-angle` so the fitted major axis becomes horizontal. Returns the
/// applied rotation; near-circular ellipses are left untouched.
pub fn rotate_to_canonical_with(
    img: &GrayImage,
    ellipse: &Ellipse,
    ambiguity_ratio: f64,
) -> (GrayImage, f64) {
    if ellipse.is_ambiguous(ambiguity_ratio) || ellipse.angle == 0.0 {
        return (img.clone(), 0.0);
    }
    let applied = -ellipse.angle;
    (rotate_image(img, applied), applied)
}

pub fn deepest_point(img: &GrayImage, tau: DepthThreshold) -> Result<(f64, f64), DepthError> {
    deepest_point_within(img, tau, None)
}

/// Unweighted centroid of below-threshold pixels, optionally restricted to `valid`.
pub fn deepest_point_within(
    img: &GrayImage,
    tau: DepthThreshold,
    valid: Option<&Mask>,
) -> Result<(f64, f64), DepthError> {
    let mut mask = threshold_mask(img, tau);
    if let Some(v) = valid {
        mask = mask.and(v);
    }
    mask_centroid(&mask).ok_or(DepthError::NoDarkRegion(tau.0))
}

pub fn mask_centroid(mask: &Mask) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (x, y) in mask.iter_set() {
        sx += x as f64;
        sy += y as f64;
        n += 1;
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

/// Draws the ellipse outline (white) over a copy of the image.
pub fn ellipse_overlay(img: &GrayImage, ellipse: &Ellipse) -> GrayImage {
    let mut out = img.clone();
    let steps = (2.0 * PI * ellipse.semi_major).ceil().max(16.0) as usize * 2;
    for i in 0..steps {
        let (x, y) = ellipse.point_at(2.0 * PI * i as f64 / steps as f64);
        let (xi, yi) = (x.round(), y.round());
        if xi >= 0.0 && yi >= 0.0 && (xi as usize) < out.width() && (yi as usize) < out.height() {
            out.set(xi as usize, yi as usize, 255.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tau(v: f64) -> DepthThreshold {
        DepthThreshold::new(v).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let zeros = GrayImage::filled(5, 4, 0.0);
        assert_eq!(threshold_mask(&zeros, tau(10.0)).count(), 20);
        let white = GrayImage::filled(5, 4, 255.0);
        assert_eq!(threshold_mask(&white, tau(10.0)).count(), 0);
        let half = GrayImage::from_fn(10, 6, |x, _| if x < 5 { 0.0 } else { 255.0 });
        let m = threshold_mask(&half, tau(128.0));
        for y in 0..6 {
            for x in 0..10 {
                assert_eq!(m.get(x, y), x < 5);
            }
        }
    }

    #[test]
    fn square_boundary_has_36_points() {
        let mask = Mask::from_fn(20, 20, |x, y| (5..15).contains(&x) && (5..15).contains(&y));
        let c = largest_component_contour(&mask).unwrap();
        assert_eq!(c.len(), 36);
        let mut unique = c.points.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 36);
        for &(x, y) in &c.points {
            assert!(x == 5 || x == 14 || y == 5 || y == 14);
        }
        for pair in c.points.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            assert!((a.0 - b.0).abs() <= 1 && (a.1 - b.1).abs() <= 1, "{a:?} {b:?}");
        }
    }

    #[test]
    fn picks_largest_component() {
        // 50-pixel block and a 5-pixel block.
        let mask = Mask::from_fn(30, 30, |x, y| {
            ((2..12).contains(&x) && (2..7).contains(&y)) || (x >= 20 && x < 25 && y == 20)
        });
        let c = largest_component_contour(&mask).unwrap();
        assert!(c.points.iter().all(|&(x, y)| x < 12 && y < 7));
        assert_eq!(largest_component(&mask).unwrap().count(), 50);
    }

    #[test]
    fn empty_mask_errors() {
        let mask = Mask::filled(4, 4, false);
        assert_eq!(largest_component_contour(&mask), Err(DepthError::EmptyMask));
    }

    #[test]
    fn single_pixel_contour() {
        let mask = Mask::from_fn(5, 5, |x, y| x == 2 && y == 3);
        assert_eq!(largest_component_contour(&mask).unwrap().points, vec![(2, 3)]);
    }

    #[test]
    fn fits_exact_ellipse() {
        let truth = Ellipse {
            center: (100.0, 100.0),
            semi_major: 40.0,
            semi_minor: 20.0,
            angle: 30f64.to_radians(),
        };
        let pts: Vec<_> = (0..100)
            .map(|i| truth.point_at(2.0 * PI * i as f64 / 100.0))
            .collect();
        let fit = fit_ellipse_points(&pts).unwrap();
        assert!((fit.center.0 - 100.0).abs() / 100.0 < 1e-3);
        assert!((fit.center.1 - 100.0).abs() / 100.0 < 1e-3);
        assert!((fit.semi_major - 40.0).abs() / 40.0 < 1e-3);
        assert!((fit.semi_minor - 20.0).abs() / 20.0 < 1e-3);
        assert!(orientation_distance(fit.angle, truth.angle) < 1e-3);
    }

    #[test]
    fn circle_is_flagged_ambiguous() {
        let pts: Vec<_> = (0..60)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / 60.0;
                (50.0 + 25.0 * t.cos(), 40.0 + 25.0 * t.sin())
            })
            .collect();
        let fit = fit_ellipse_points(&pts).unwrap();
        assert!((fit.semi_major - 25.0).abs() < 1e-6);
        assert!((fit.semi_minor - 25.0).abs() < 1e-6);
        assert!(fit.is_ambiguous(DEFAULT_CIRCLE_AMBIGUITY_RATIO));
        let img = GrayImage::from_fn(100, 80, |x, y| ((x * 7 + y * 3) % 256) as f64);
        let (out, applied) = rotate_to_canonical(&img, &fit);
        assert_eq!(applied, 0.0);
        assert_eq!(out, img);
    }

    #[test]
    fn degenerate_inputs() {
        let four = vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
        assert!(matches!(
            fit_ellipse_points(&four),
            Err(DepthError::DegenerateContour(_))
        ));
        let line: Vec<_> = (0..20).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        assert!(matches!(
            fit_ellipse_points(&line),
            Err(DepthError::DegenerateContour(_))
        ));
    }

    #[test]
    fn zero_angle_rotation_is_identity() {
        let img = GrayImage::from_fn(33, 21, |x, y| ((x * 13 + y * 7) % 256) as f64);
        let e = Ellipse {
            center: (16.0, 10.0),
            semi_major: 8.0,
            semi_minor: 4.0,
            angle: 0.0,
        };
        let (out, applied) = rotate_to_canonical(&img, &e);
        assert_eq!(applied, 0.0);
        assert_eq!(out, img);
    }

    #[test]
    fn deepest_point_examples() {
        let mut img = GrayImage::filled(30, 30, 200.0);
        img.set(10, 20, 0.0);
        assert_eq!(deepest_point(&img, tau(50.0)).unwrap(), (10.0, 20.0));

        let img = GrayImage::from_fn(12, 12, |x, y| {
            if (4..=6).contains(&x) && (4..=6).contains(&y) {
                0.0
            } else {
                200.0
            }
        });
        assert_eq!(deepest_point(&img, tau(50.0)).unwrap(), (5.0, 5.0));

        let bright = GrayImage::filled(8, 8, 255.0);
        assert_eq!(
            deepest_point(&bright, tau(10.0)),
            Err(DepthError::NoDarkRegion(10.0))
        );
    }

    #[test]
    fn otsu_splits_bimodal() {
        let img = GrayImage::from_fn(40, 40, |x, _| if x < 20 { 20.0 } else { 180.0 });
        let t = otsu_threshold(&img).value();
        assert!(t > 20.0 && t <= 180.0, "{t}");
        assert_eq!(threshold_mask(&img, otsu_threshold(&img)).count(), 800);
    }

    #[test]
    fn threshold_rejects_out_of_range() {
        assert!(DepthThreshold::new(-1.0).is_err());
        assert!(DepthThreshold::new(256.0).is_err());
    }
}
