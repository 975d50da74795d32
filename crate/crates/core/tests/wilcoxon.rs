use annustitch::eval::{wilcoxon_signed_rank, wilcoxon_with, PValueMethod, WilcoxonError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(W, p)` by enumerating every sign assignment of the non-zero differences.
fn enumerate(d: &[f64]) -> Option<(f64, f64)> {
    let d: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
    if d.is_empty() {
        return None;
    }
    let mag: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = mag
        .iter()
        .map(|&m| {
            let below = mag.iter().filter(|&&o| o < m).count() as f64;
            let tied = mag.iter().filter(|&&o| o == m).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| *r).sum();
    let w = plus.min(total - plus);
    let n = d.len();
    let mut extreme = 0u64;
    for signs in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s.min(total - s) <= w {
            extreme += 1;
        }
    }
    Some((w, extreme as f64 / (1u64 << n) as f64))
}

#[test]
fn matches_enumeration_for_small_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=10);
        let x: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-6..=6))).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-6..=6))).collect();
        let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        match (wilcoxon_signed_rank(&x, &y), enumerate(&d)) {
            (Ok(r), Some((w, p))) => {
                assert_eq!(r.method, PValueMethod::Exact);
                assert_eq!((r.w, r.p), (w, p), "case {case}: {d:?}");
                checked += 1;
            }
            (Err(WilcoxonError::AllZeroDifferences), None) => {}
            (got, want) => panic!("case {case}: {got:?} vs {want:?}"),
        }
    }
    assert!(checked > 950);
}

#[test]
fn ten_pair_example() {
    let x = [125.0, 115.0, 130.0, 140.0, 140.0, 115.0, 140.0, 125.0, 140.0, 135.0];
    let y = [110.0, 122.0, 125.0, 120.0, 140.0, 124.0, 123.0, 137.0, 135.0, 145.0];
    let r = wilcoxon_signed_rank(&x, &y).unwrap();
    assert_eq!(r.n, 9);
    assert_eq!((r.w_plus, r.w_minus, r.w), (27.0, 18.0, 18.0));
    let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
    assert_eq!(r.p, enumerate(&d).unwrap().1);
    assert!((r.p - 0.6328125).abs() < 1e-12, "{}", r.p);
}

#[test]
fn single_difference() {
    let r = wilcoxon_signed_rank(&[5.0], &[0.0]).unwrap();
    assert_eq!((r.w, r.w_minus, r.p), (0.0, 0.0, 1.0));
    assert_eq!(wilcoxon_signed_rank(&[3.0, 4.0], &[3.0, 4.0]), Err(WilcoxonError::AllZeroDifferences));
    assert_eq!(wilcoxon_signed_rank(&[3.0], &[3.0, 4.0]), Err(WilcoxonError::LengthMismatch(1, 2)));
}

#[test]
fn normal_path_close_to_exact_at_twenty_five() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let shift = rng.random_range(-1.0..1.0);
        let x: Vec<f64> = (0..25).map(|_| rng.random_range(-3.0..3.0) + shift).collect();
        let y = vec![0.0; 25];
        let exact = wilcoxon_with(&x, &y, Some(PValueMethod::Exact)).unwrap();
        let normal = wilcoxon_with(&x, &y, Some(PValueMethod::Normal)).unwrap();
        assert_eq!(exact.w, normal.w);
        worst = worst.max((exact.p - normal.p).abs());
    }
    assert!(worst < 1e-3, "worst |p_exact - p_normal| = {worst:.2e}");
}

#[test]
fn large_samples_use_the_approximation() {
    let x: Vec<f64> = (0..40).map(|i| f64::from(i) * 0.5 - 3.0).collect();
    let r = wilcoxon_signed_rank(&x, &vec![0.0; 40]).unwrap();
    assert_eq!(r.method, PValueMethod::Normal);
    assert!(r.p > 0.0 && r.p < 1.0);
}

proptest! {
    #[test]
    fn swapping_samples_swaps_sums(x in prop::collection::vec(-50i32..50, 1..30), y in prop::collection::vec(-50i32..50, 1..30)) {
        let n = x.len().min(y.len());
        let x: Vec<f64> = x[..n].iter().map(|&v| f64::from(v)).collect();
        let y: Vec<f64> = y[..n].iter().map(|&v| f64::from(v)).collect();
        match (wilcoxon_signed_rank(&x, &y), wilcoxon_signed_rank(&y, &x)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.w_plus, b.w_minus);
                prop_assert_eq!(a.w_minus, b.w_plus);
                prop_assert_eq!(a.p, b.p);
                prop_assert!(a.p > 0.0 && a.p <= 1.0);
                let total = (a.n * (a.n + 1)) as f64 / 2.0;
                prop_assert!((a.w_plus + a.w_minus - total).abs() < 1e-9);
            }
            (Err(a), Err(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn shifting_both_samples_changes_nothing(x in prop::collection::vec(-50i32..50, 2..20), shift in -100i32..100) {
        let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        let y: Vec<f64> = x.iter().rev().copied().collect();
        let xs: Vec<f64> = x.iter().map(|v| v + f64::from(shift)).collect();
        let ys: Vec<f64> = y.iter().map(|v| v + f64::from(shift)).collect();
        prop_assert_eq!(wilcoxon_signed_rank(&x, &y), wilcoxon_signed_rank(&xs, &ys));
    }
}
