use annustitch::image::GrayImage;
use annustitch::ransac::{MotionModel, RansacResult};
use annustitch::stitch::{compose, compose_segments, CompositeOptions, Panorama, StitchError};
use proptest::prelude::*;

fn link(dx: f64, dy: f64) -> Option<RansacResult> {
    Some(RansacResult {
        model: MotionModel::Translation { dx, dy },
        inlier_indices: (0..8).collect(),
        valid_match_count: 8,
    })
}

fn source(w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| {
        (128.0 + 60.0 * (x as f64 * 0.21).sin() + 40.0 * (y as f64 * 0.33).cos()).round()
    })
}

fn crop(img: &GrayImage, x0: usize, y0: usize, w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| img.get(x0 + x, y0 + y))
}

#[test]
fn shifted_pair_widens_canvas() {
    let wide = source(130, 40);
    // `b` is `a` moved 30 px to the right.
    let a = crop(&wide, 30, 0, 100, 40);
    let b = crop(&wide, 0, 0, 100, 40);
    let pano = compose(&[a.clone(), b], &[link(30.0, 0.0)]).unwrap();
    assert_eq!((pano.width(), pano.height()), (130, 40));
    assert_eq!(pano.origin, (-30, 0));
    let canvas = pano.canvas();
    let mut err = 0.0;
    for y in 0..40 {
        for x in 30..100 {
            err += (canvas.get(x, y) - wide.get(x, y)).abs();
        }
    }
    assert!(err / (70.0 * 40.0) < 1.0);
    assert_eq!(pano.seams[0].overlap_pixels, 70 * 40);
}

#[test]
fn broken_link_splits_into_segments() {
    let s = source(60, 30);
    let strips = vec![s.clone(), s.clone(), s.clone()];
    let pairwise = vec![link(2.0, 1.0), None];
    assert_eq!(
        compose(&strips, &pairwise).unwrap_err(),
        StitchError::ChainBroken { breaks: vec![1] }
    );
    let (segments, breaks) = compose_segments(&strips, &pairwise, CompositeOptions::default()).unwrap();
    assert_eq!(breaks, vec![1]);
    assert_eq!(segments.len(), 2);
    assert_eq!(segments[0].panorama.placements.len(), 2);
    assert_eq!(segments[1].first_strip, 2);
    assert_eq!(segments[1].panorama.placements[0].strip_index, 2);
}

#[test]
fn placements_chain() {
    let s = source(50, 20);
    let pano = compose(&[s.clone(), s.clone(), s], &[link(3.0, 4.0), link(-1.0, 2.0)]).unwrap();
    let models: Vec<_> = pano.placements.iter().map(|p| p.model).collect();
    assert_eq!(models[1], MotionModel::Translation { dx: -3.0, dy: -4.0 });
    assert_eq!(models[2], MotionModel::Translation { dx: -2.0, dy: -6.0 });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn non_overlap_is_copied_and_weights_normalized(
        shifts in prop::collection::vec((-30i32..30, -12i32..12), 1..4),
    ) {
        let wide = source(260, 120);
        let (w, h) = (60usize, 30usize);
        // Integer crops of one source image, linked by exact translations.
        let mut pos = (100i32, 45i32);
        let mut strips = vec![crop(&wide, pos.0 as usize, pos.1 as usize, w, h)];
        let mut pairwise = Vec::new();
        for &(sx, sy) in &shifts {
            let next = (pos.0 - sx, pos.1 - sy);
            strips.push(crop(&wide, next.0 as usize, next.1 as usize, w, h));
            pairwise.push(link(sx as f64, sy as f64));
            pos = next;
        }
        let pano = compose(&strips, &pairwise).unwrap();
        let canvas = pano.canvas();
        let coverage = pano.coverage();
        for y in 0..pano.height() {
            for x in 0..pano.width() {
                let weights = pano.blend_weights(x, y);
                prop_assert_eq!(weights.is_empty(), !coverage.get(x, y));
                if weights.is_empty() {
                    continue;
                }
                let total: f64 = weights.iter().map(|w| w.1).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                // All strips come from one image, so every pixel reproduces it.
                let sx = (pano.origin.0 + x as i64 + 100) as usize;
                let sy = (pano.origin.1 + y as i64 + 45) as usize;
                if weights.len() == 1 {
                    prop_assert_eq!(canvas.get(x, y), wide.get(sx, sy));
                } else {
                    prop_assert!((canvas.get(x, y) - wide.get(sx, sy)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn append_is_associative(d1 in (-20.0f64..20.0, -8.0f64..8.0), d2 in (-20.0f64..20.0, -8.0f64..8.0)) {
        let a = source(70, 30);
        let b = GrayImage::from_fn(70, 30, |x, y| ((x * 7 + y * 13) % 255) as f64);
        let c = GrayImage::from_fn(70, 30, |x, y| ((x * x + y) % 200) as f64);
        let whole = compose(&[a.clone(), b.clone(), c.clone()], &[link(d1.0, d1.1), link(d2.0, d2.1)]).unwrap();
        let mut partial: Panorama = compose(&[a, b], &[link(d1.0, d1.1)]).unwrap();
        partial.append(&c, &MotionModel::Translation { dx: d2.0, dy: d2.1 }).unwrap();
        prop_assert_eq!((partial.width(), partial.height()), (whole.width(), whole.height()));
        let (p, q) = (partial.canvas(), whole.canvas());
        for (u, v) in p.pixels().iter().zip(q.pixels()) {
            prop_assert!((u - v).abs() < 1e-6);
        }
    }
}
