use std::f64::consts::PI;

use annustitch::depth::{
    deepest_point, fit_ellipse, fit_ellipse_points, largest_component_contour, normalize_orientation,
    orientation_distance, otsu_threshold, rotate_image, rotate_to_canonical, threshold_mask, DepthThreshold, Ellipse,
};
use annustitch::image::GrayImage;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_ellipse(rng: &mut ChaCha8Rng) -> Ellipse {
    let a = rng.random_range(10.0..=80.0);
    Ellipse {
        center: (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)),
        semi_major: a,
        semi_minor: rng.random_range(5.0..=a),
        angle: rng.random_range(0.0..PI),
    }
}

/// About one sample per pixel of perimeter.
fn sample(e: &Ellipse) -> Vec<(f64, f64)> {
    let n = (PI * (e.semi_major + e.semi_minor)).round() as usize;
    (0..n).map(|k| e.point_at(k as f64 * 2.0 * PI / n as f64)).collect()
}

fn dark_ellipse_frame(size: usize, e: &Ellipse) -> GrayImage {
    GrayImage::from_fn(size, size, |x, y| if e.contains(x as f64, y as f64) { 20.0 } else { 160.0 })
}

#[test]
fn noiseless_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for case in 0..50 {
        let truth = random_ellipse(&mut rng);
        let fit = fit_ellipse_points(&sample(&truth)).unwrap();
        let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1.0);
        assert!(rel(fit.semi_major, truth.semi_major) < 1e-3, "case {case}: {fit:?} vs {truth:?}");
        assert!(rel(fit.semi_minor, truth.semi_minor) < 1e-3, "case {case}: {fit:?} vs {truth:?}");
        assert!((fit.center.0 - truth.center.0).abs() / truth.semi_major < 1e-3, "case {case}");
        assert!((fit.center.1 - truth.center.1).abs() / truth.semi_major < 1e-3, "case {case}");
        // Orientation is undefined for circles.
        if truth.semi_major / truth.semi_minor > 1.0 + 1e-6 {
            assert!(orientation_distance(fit.angle, truth.angle) / PI < 1e-3, "case {case}: {fit:?} vs {truth:?}");
        }
    }
}

/// Orientation is only identifiable when the axes differ by more than the noise
/// allows; this checks clearly elliptical shapes with dense sampling.
#[test]
fn noisy_angle_recovery_for_eccentric_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut checked = 0;
    while checked < 50 {
        let truth = random_ellipse(&mut rng);
        if truth.semi_minor > 0.8 * truth.semi_major {
            continue;
        }
        checked += 1;
        let pts: Vec<(f64, f64)> = (0..1000)
            .map(|k| {
                let (x, y) = truth.point_at(k as f64 * 2.0 * PI / 1000.0);
                (x + noise.sample(&mut rng), y + noise.sample(&mut rng))
            })
            .collect();
        let fit = fit_ellipse_points(&pts).unwrap();
        let err = orientation_distance(fit.angle, truth.angle).to_degrees();
        assert!(err < 2.0, "angle error {err:.2} deg at {truth:?}");
    }
}

#[test]
fn rotation_correction_from_thirty_seven_degrees() {
    let truth = Ellipse {
        center: (100.0, 100.0),
        semi_major: 40.0,
        semi_minor: 22.0,
        angle: 37f64.to_radians(),
    };
    let frame = dark_ellipse_frame(201, &truth);
    let tau = otsu_threshold(&frame);
    let fit = fit_ellipse(&largest_component_contour(&threshold_mask(&frame, tau)).unwrap()).unwrap();
    assert!(orientation_distance(fit.angle, truth.angle).to_degrees() < 1.0, "{fit:?}");
    let (rotated, applied) = rotate_to_canonical(&frame, &fit);
    assert!((applied + fit.angle).abs() < 1e-12);
    let refit = fit_ellipse(&largest_component_contour(&threshold_mask(&rotated, tau)).unwrap()).unwrap();
    assert!(orientation_distance(refit.angle, 0.0).to_degrees() < 1.0, "{refit:?}");
}

#[test]
fn contour_fit_of_rendered_lumen() {
    let truth = Ellipse {
        center: (80.3, 71.6),
        semi_major: 30.0,
        semi_minor: 18.0,
        angle: 2.2,
    };
    let frame = dark_ellipse_frame(160, &truth);
    let tau = DepthThreshold::new(90.0).unwrap();
    let fit = fit_ellipse(&largest_component_contour(&threshold_mask(&frame, tau)).unwrap()).unwrap();
    assert!((fit.center.0 - truth.center.0).abs() < 0.5 && (fit.center.1 - truth.center.1).abs() < 0.5, "{fit:?}");
    assert!((fit.semi_major - truth.semi_major).abs() < 1.0 && (fit.semi_minor - truth.semi_minor).abs() < 1.0, "{fit:?}");
    let (cx, cy) = deepest_point(&frame, tau).unwrap();
    assert!((cx - truth.center.0).abs() < 0.5 && (cy - truth.center.1).abs() < 0.5);
}

#[test]
fn near_circle_is_left_unrotated() {
    let e = Ellipse {
        center: (50.0, 50.0),
        semi_major: 20.5,
        semi_minor: 20.0,
        angle: 1.0,
    };
    let frame = dark_ellipse_frame(101, &e);
    let (out, applied) = rotate_to_canonical(&frame, &e);
    assert_eq!(applied, 0.0);
    assert_eq!(out, frame);
}

proptest! {
    #[test]
    fn orientation_normalization(angle in -20.0f64..20.0) {
        let a = normalize_orientation(angle);
        prop_assert!((0.0..PI).contains(&a));
        prop_assert!(orientation_distance(a, angle) < 1e-9);
    }

    #[test]
    fn fit_is_translation_equivariant(seed in any::<u64>(), dx in -100.0f64..100.0, dy in -100.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_ellipse(&mut rng);
        prop_assume!(e.semi_major / e.semi_minor > 1.05);
        let pts = sample(&e);
        let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
        let (f0, f1) = (fit_ellipse_points(&pts).unwrap(), fit_ellipse_points(&moved).unwrap());
        prop_assert!((f1.center.0 - f0.center.0 - dx).abs() < 1e-6);
        prop_assert!((f1.center.1 - f0.center.1 - dy).abs() < 1e-6);
        prop_assert!(orientation_distance(f0.angle, f1.angle) < 1e-6);
    }

    #[test]
    fn rotated_lumen_turns_by_the_applied_angle(angle in 0.0f64..PI, turn in -1.5f64..1.5) {
        let e = Ellipse { center: (64.0, 64.0), semi_major: 28.0, semi_minor: 14.0, angle };
        let frame = dark_ellipse_frame(129, &e);
        let rotated = rotate_image(&frame, turn);
        let tau = DepthThreshold::new(90.0).unwrap();
        let fit = fit_ellipse(&largest_component_contour(&threshold_mask(&rotated, tau)).unwrap()).unwrap();
        // Contours of a 28 x 14 raster carry about a degree of orientation error.
        prop_assert!(orientation_distance(fit.angle, angle + turn).to_degrees() < 2.0, "{:?}", fit);
    }
}
