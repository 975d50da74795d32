//! Robust motion estimation from ratio-filtered matches.
//!
//! Hypotheses are drawn from minimal samples with a per-iteration ChaCha8
//! stream derived from `(seed, iteration)`, so the result does not depend on how
//! iterations are scheduled across threads.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::MatchPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Translation,
    Homography,
}

impl ModelKind {
    pub fn minimal_sample(self) -> usize {
        match self {
            ModelKind::Translation => 1,
            ModelKind::Homography => 4,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Translation => "translation",
            ModelKind::Homography => "homography",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "translation" => Ok(ModelKind::Translation),
            "homography" => Ok(ModelKind::Homography),
            other => Err(format!("unknown model kind {other:?} (expected translation or homography)")),
        }
    }
}

/// Maps points of the first image onto the second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MotionModel {
    Translation { dx: f64, dy: f64 },
    /// Row-major, normalized so `h[2][2] == 1`.
    Homography { h: [[f64; 3]; 3] },
}

impl MotionModel {
    pub fn identity(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Translation => MotionModel::Translation { dx: 0.0, dy: 0.0 },
            ModelKind::Homography => MotionModel::Homography {
                h: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            },
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            MotionModel::Translation { .. } => ModelKind::Translation,
            MotionModel::Homography { .. } => ModelKind::Homography,
        }
    }

    /// `None` when a homography sends the point to infinity.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        match *self {
            MotionModel::Translation { dx, dy } => Some((x + dx, y + dy)),
            MotionModel::Homography { h } => {
                let w = h[2][0] * x + h[2][1] * y + h[2][2];
                if w.abs() < 1e-12 {
                    return None;
                }
                Some((
                    (h[0][0] * x + h[0][1] * y + h[0][2]) / w,
                    (h[1][0] * x + h[1][1] * y + h[1][2]) / w,
                ))
            }
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        match *self {
            MotionModel::Translation { dx, dy } => {
                Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0)
            }
            MotionModel::Homography { h } => Matrix3::from_fn(|r, c| h[r][c]),
        }
    }

    /// Homography from a matrix, rescaled so the bottom-right entry is 1.
    pub fn from_matrix(m: &Matrix3<f64>) -> Option<Self> {
        let s = m[(2, 2)];
        if !(s.abs() > 1e-12) || m.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut h = [[0.0; 3]; 3];
        for (r, row) in h.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)] / s;
            }
        }
        Some(MotionModel::Homography { h })
    }

    pub fn inverse(&self) -> Option<Self> {
        match *self {
            MotionModel::Translation { dx, dy } => Some(MotionModel::Translation { dx: -dx, dy: -dy }),
            MotionModel::Homography { .. } => {
                let inv = self.matrix().try_inverse()?;
                MotionModel::from_matrix(&inv)
            }
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &MotionModel) -> Option<Self> {
        match (*self, *other) {
            (
                MotionModel::Translation { dx: a, dy: b },
                MotionModel::Translation { dx: c, dy: d },
            ) => Some(MotionModel::Translation { dx: a + c, dy: b + d }),
            _ => MotionModel::from_matrix(&(self.matrix() * other.matrix())),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            MotionModel::Translation { dx, dy } => dx.is_finite() && dy.is_finite(),
            MotionModel::Homography { h } => h.iter().flatten().all(|v| v.is_finite()),
        }
    }

    fn transfer_error(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        match self.apply(a.0, a.1) {
            Some((x, y)) => (x - b.0).hypot(y - b.1),
            None => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacParams {
    pub iterations: usize,
    /// Inliers have transfer error strictly below this, in pixels.
    pub inlier_tolerance: f64,
    pub seed: u64,
    pub min_inliers: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 2000,
            inlier_tolerance: 3.0,
            seed: 0,
            min_inliers: 4,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.iterations == 0 {
            problems.push("ransac.iterations must be positive, got 0".to_string());
        }
        if !(self.inlier_tolerance.is_finite() && self.inlier_tolerance > 0.0) {
            problems.push(format!(
                "ransac.inlier_tolerance must be > 0, got {}",
                self.inlier_tolerance
            ));
        }
        if self.min_inliers == 0 {
            problems.push("ransac.min_inliers must be positive, got 0".to_string());
        }
        problems
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacResult {
    pub model: MotionModel,
    /// Indices into the match list, ascending.
    pub inlier_indices: Vec<usize>,
    pub valid_match_count: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum RansacError {
    #[error("{kind} estimation needs at least {needed} matches, got {got}")]
    InsufficientMatches {
        kind: ModelKind,
        needed: usize,
        got: usize,
    },
    #[error("best consensus has {best} inliers, fewer than the required {required}")]
    NoConsensus { best: usize, required: usize },
    #[error("invalid RANSAC parameters: {0}")]
    InvalidParams(String),
    #[error("match {index} refers to a keypoint outside the supplied point lists")]
    IndexOutOfRange { index: usize },
}

/// The paper's quality metric: the number of RANSAC inliers.
pub fn valid_match_count(result: &RansacResult) -> usize {
    result.inlier_indices.len()
}

pub fn ransac_estimate(
    matches: &[MatchPair],
    pts_a: &[(f64, f64)],
    pts_b: &[(f64, f64)],
    kind: ModelKind,
    params: &RansacParams,
) -> Result<RansacResult, RansacError> {
    let problems = params.validate();
    if !problems.is_empty() {
        return Err(RansacError::InvalidParams(problems.join("; ")));
    }
    let needed = kind.minimal_sample();
    if matches.len() < needed {
        return Err(RansacError::InsufficientMatches {
            kind,
            needed,
            got: matches.len(),
        });
    }
    let mut pairs = Vec::with_capacity(matches.len());
    for (index, m) in matches.iter().enumerate() {
        match (pts_a.get(m.index_a), pts_b.get(m.index_b)) {
            (Some(&a), Some(&b)) => pairs.push((a, b)),
            _ => return Err(RansacError::IndexOutOfRange { index }),
        }
    }
    let tol = params.inlier_tolerance;

    let scores: Vec<(usize, Option<MotionModel>)> = (0..params.iterations)
        .into_par_iter()
        .map(|iter| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(iter as u64);
            let picked: Vec<(_, _)> = sample(&mut rng, pairs.len(), needed)
                .into_iter()
                .map(|i| pairs[i])
                .collect();
            match fit(kind, &picked) {
                Some(model) => (count_inliers(&model, &pairs, tol), Some(model)),
                None => (0, None),
            }
        })
        .collect();
    // First iteration with the highest count wins.
    let mut best: Option<(usize, MotionModel)> = None;
    for (count, model) in scores {
        if let Some(model) = model {
            if best.is_none_or(|(c, _)| count > c) {
                best = Some((count, model));
            }
        }
    }
    let Some((_, mut model)) = best else {
        return Err(RansacError::NoConsensus {
            best: 0,
            required: params.min_inliers,
        });
    };

    let mut inliers = inlier_set(&model, &pairs, tol);
    // Refit on the consensus set while that does not lose support.
    for _ in 0..10 {
        let support: Vec<_> = inliers.iter().map(|&i| pairs[i]).collect();
        let Some(refit) = fit(kind, &support) else { break };
        let next = inlier_set(&refit, &pairs, tol);
        if next.len() < inliers.len() {
            break;
        }
        let stable = next == inliers;
        model = refit;
        inliers = next;
        if stable {
            break;
        }
    }
    if inliers.len() < params.min_inliers {
        return Err(RansacError::NoConsensus {
            best: inliers.len(),
            required: params.min_inliers,
        });
    }
    Ok(RansacResult {
        model,
        valid_match_count: inliers.len(),
        inlier_indices: inliers,
    })
}

fn count_inliers(model: &MotionModel, pairs: &[((f64, f64), (f64, f64))], tol: f64) -> usize {
    pairs
        .iter()
        .filter(|(a, b)| model.transfer_error(*a, *b) < tol)
        .count()
}

fn inlier_set(model: &MotionModel, pairs: &[((f64, f64), (f64, f64))], tol: f64) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, (a, b))| model.transfer_error(*a, *b) < tol)
        .map(|(i, _)| i)
        .collect()
}

/// Least-squares fit; exact for minimal samples.
fn fit(kind: ModelKind, pairs: &[((f64, f64), (f64, f64))]) -> Option<MotionModel> {
    if pairs.is_empty() {
        return None;
    }
    match kind {
        ModelKind::Translation => {
            let n = pairs.len() as f64;
            let (sx, sy) = pairs
                .iter()
                .fold((0.0, 0.0), |(sx, sy), (a, b)| (sx + b.0 - a.0, sy + b.1 - a.1));
            Some(MotionModel::Translation { dx: sx / n, dy: sy / n })
        }
        ModelKind::Homography => fit_homography(pairs),
    }
}

/// Similarity taking points to zero mean and mean distance sqrt(2).
fn normalizer(points: impl Iterator<Item = (f64, f64)> + Clone) -> Option<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (mx, my) = points
        .clone()
        .fold((0.0, 0.0), |(x, y), p| (x + p.0 / n, y + p.1 / n));
    let spread = points.map(|p| (p.0 - mx).hypot(p.1 - my)).sum::<f64>() / n;
    if !(spread > 1e-9) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / spread;
    Some(Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

fn collinear(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> bool {
    let cross = (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    let scale = (q.0 - p.0).hypot(q.1 - p.1) * (r.0 - p.0).hypot(r.1 - p.1);
    cross.abs() <= 1e-6 * scale.max(1e-12)
}

/// Normalized direct linear transform.
fn fit_homography(pairs: &[((f64, f64), (f64, f64))]) -> Option<MotionModel> {
    if pairs.len() < 4 {
        return None;
    }
    if pairs.len() == 4 {
        for side in [0, 1] {
            let p: Vec<(f64, f64)> = pairs.iter().map(|(a, b)| if side == 0 { *a } else { *b }).collect();
            for skip in 0..4 {
                let t: Vec<_> = (0..4).filter(|&i| i != skip).map(|i| p[i]).collect();
                if collinear(t[0], t[1], t[2]) {
                    return None;
                }
            }
        }
    }
    let ta = normalizer(pairs.iter().map(|(a, _)| *a))?;
    let tb = normalizer(pairs.iter().map(|(_, b)| *b))?;
    let norm = |t: &Matrix3<f64>, p: (f64, f64)| (t[(0, 0)] * p.0 + t[(0, 2)], t[(1, 1)] * p.1 + t[(1, 2)]);
    // Zero rows pad the system to at least 9 rows so the SVD yields a full V.
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (pa, pb)) in pairs.iter().enumerate() {
        let (x, y) = norm(&ta, *pa);
        let (u, v) = norm(&tb, *pb);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let full = tb.try_inverse()? * hn * ta;
    let model = MotionModel::from_matrix(&full)?;
    let m = model.matrix();
    let det = m.determinant();
    let upper = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if !(det.abs() > 1e-8) || !(upper.abs() > 1e-8) || !(m.norm() < 1e8) {
        return None;
    }
    Some(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_matches(n: usize) -> Vec<MatchPair> {
        (0..n)
            .map(|i| MatchPair {
                index_a: i,
                index_b: i,
                d1: 0.0,
                d2: 1.0,
            })
            .collect()
    }

    #[test]
    fn exact_translation() {
        let a: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 * 3.7, (i * i) as f64 * 0.9)).collect();
        let b: Vec<(f64, f64)> = a.iter().map(|p| (p.0 + 10.0, p.1)).collect();
        let r = ransac_estimate(&identity_matches(20), &a, &b, ModelKind::Translation, &RansacParams::default())
            .unwrap();
        let MotionModel::Translation { dx, dy } = r.model else { panic!() };
        assert!((dx - 10.0).abs() < 1e-6 && dy.abs() < 1e-6);
        assert_eq!(valid_match_count(&r), 20);
    }

    #[test]
    fn too_few_for_homography() {
        let p = vec![(0.0, 0.0); 3];
        assert_eq!(
            ransac_estimate(&identity_matches(3), &p, &p, ModelKind::Homography, &RansacParams::default()),
            Err(RansacError::InsufficientMatches {
                kind: ModelKind::Homography,
                needed: 4,
                got: 3
            })
        );
    }

    #[test]
    fn exact_homography_from_four_points() {
        let h = MotionModel::from_matrix(&Matrix3::new(1.1, 0.05, 3.0, -0.02, 0.95, -4.0, 1e-4, -2e-4, 1.0))
            .unwrap();
        let a = [(0.0, 0.0), (100.0, 5.0), (90.0, 80.0), (-3.0, 70.0)];
        let pairs: Vec<_> = a.iter().map(|&p| (p, h.apply(p.0, p.1).unwrap())).collect();
        let fitted = fit_homography(&pairs).unwrap();
        for (p, q) in &pairs {
            let r = fitted.apply(p.0, p.1).unwrap();
            assert!((r.0 - q.0).hypot(r.1 - q.1) < 1e-8);
        }
    }

    #[test]
    fn collinear_sample_rejected() {
        let pairs: Vec<_> = (0..4).map(|i| ((i as f64, i as f64), (i as f64, 2.0 * i as f64))).collect();
        assert!(fit_homography(&pairs).is_none());
    }

    #[test]
    fn compose_and_inverse() {
        let t = MotionModel::Translation { dx: 2.0, dy: -3.0 };
        assert_eq!(t.compose(&t.inverse().unwrap()), Some(MotionModel::identity(ModelKind::Translation)));
        let h = MotionModel::from_matrix(&Matrix3::new(1.0, 0.1, 2.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0)).unwrap();
        let back = h.compose(&h.inverse().unwrap()).unwrap();
        let (x, y) = back.apply(7.0, 9.0).unwrap();
        assert!((x - 7.0).abs() < 1e-12 && (y - 9.0).abs() < 1e-12);
    }

    #[test]
    fn kind_round_trip() {
        for k in [ModelKind::Translation, ModelKind::Homography] {
            assert_eq!(k.to_string().parse::<ModelKind>(), Ok(k));
        }
        assert!("affine".parse::<ModelKind>().is_err());
    }
}
