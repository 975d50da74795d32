use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Descriptor;

/// A descriptor in set A paired with its nearest neighbour in set B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub index_a: usize,
    pub index_b: usize,
    /// Distance to the nearest neighbour.
    pub d1: f64,
    /// Distance to the second-nearest neighbour.
    pub d2: f64,
}

/// Euclidean distance between two descriptors of equal length.
pub fn descriptor_distance(a: &Descriptor, b: &Descriptor) -> f64 {
    a.0.iter()
        .zip(&b.0)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Exhaustive nearest-neighbour search with the ratio test `d1 < ratio * d2`.
///
/// Each descriptor in `a` yields at most one match; several may share the same
/// target in `b`. With fewer than two descriptors in `b` no match can pass.
pub fn match_ratio(a: &[Descriptor], b: &[Descriptor], ratio: f64) -> Vec<MatchPair> {
    if b.len() < 2 {
        return Vec::new();
    }
    a.par_iter()
        .enumerate()
        .filter_map(|(i, da)| {
            let mut best = (f64::INFINITY, usize::MAX);
            let mut second = f64::INFINITY;
            for (j, db) in b.iter().enumerate() {
                let d = descriptor_distance(da, db);
                if d < best.0 {
                    second = best.0;
                    best = (d, j);
                } else if d < second {
                    second = d;
                }
            }
            (best.0 < ratio * second).then_some(MatchPair {
                index_a: i,
                index_b: best.1,
                d1: best.0,
                d2: second,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f32]) -> Descriptor {
        Descriptor(v.to_vec())
    }

    #[test]
    fn ratio_is_strict() {
        let a = [d(&[0.0, 0.0])];
        let b = [d(&[3.0, 0.0]), d(&[0.0, 4.0])];
        assert_eq!(match_ratio(&a, &b, 0.75), vec![]);
        let m = match_ratio(&a, &b, 0.76);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].index_b, m[0].d1, m[0].d2), (0, 3.0, 4.0));
    }

    #[test]
    fn single_target_never_matches() {
        let a = [d(&[0.0])];
        assert!(match_ratio(&a, &[d(&[0.0])], 0.99).is_empty());
    }

    #[test]
    fn equal_distances_rejected() {
        let a = [d(&[0.0])];
        let b = [d(&[1.0]), d(&[-1.0])];
        assert!(match_ratio(&a, &b, 0.99).is_empty());
    }
}
