//! Tile-based adaptive histogram equalization with optional contrast limiting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{lerp, GrayImage};

#[derive(Debug, Error, PartialEq)]
pub enum EnhanceError {
    #[error("image {width}x{height} is smaller than the {tiles_x}x{tiles_y} tile grid")]
    ImageTooSmall {
        width: usize,
        height: usize,
        tiles_x: usize,
        tiles_y: usize,
    },
    #[error("invalid AHE parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AheParams {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Multiple of the uniform bin height; `0` disables clipping.
    pub clip_limit: f64,
    pub bins: usize,
}

impl Default for AheParams {
    fn default() -> Self {
        Self {
            tiles_x: 8,
            tiles_y: 8,
            clip_limit: 2.0,
            bins: 256,
        }
    }
}

impl AheParams {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.tiles_x == 0 || self.tiles_y == 0 {
            problems.push(format!(
                "ahe.tiles must be positive, got {}x{}",
                self.tiles_x, self.tiles_y
            ));
        }
        if !(self.clip_limit.is_finite() && self.clip_limit >= 0.0) {
            problems.push(format!("ahe.clip_limit must be >= 0, got {}", self.clip_limit));
        }
        if self.bins == 0 || self.bins > 256 {
            problems.push(format!("ahe.bins must be in [1, 256], got {}", self.bins));
        }
        problems
    }
}

/// Per-tile intensity mapping.
#[derive(Debug, Clone)]
enum TileMap {
    /// Histogram concentrated in one bin: nothing to redistribute.
    Identity,
    Lut(Vec<f64>),
}

impl TileMap {
    #[inline]
    fn apply(&self, value: f64, bin: usize) -> f64 {
        match self {
            TileMap::Identity => value,
            TileMap::Lut(lut) => lut[bin],
        }
    }
}

#[inline]
fn bin_of(value: f64, bins: usize) -> usize {
    ((value * bins as f64 / 256.0).floor() as usize).min(bins - 1)
}

/// Tile extents along one axis: equal tiles with the remainder folded into the last.
fn tile_bounds(len: usize, tiles: usize) -> Vec<(usize, usize)> {
    let base = len / tiles;
    (0..tiles)
        .map(|k| {
            let start = k * base;
            let end = if k + 1 == tiles { len } else { start + base };
            (start, end)
        })
        .collect()
}

/// Lower tile index and blend weight towards the next tile for a coordinate.
fn blend_position(pos: f64, centers: &[f64]) -> (usize, usize, f64) {
    let last = centers.len() - 1;
    if pos <= centers[0] {
        return (0, 0, 0.0);
    }
    if pos >= centers[last] {
        return (last, last, 0.0);
    }
    let k = centers.partition_point(|&c| c <= pos) - 1;
    let t = (pos - centers[k]) / (centers[k + 1] - centers[k]);
    (k, k + 1, t)
}

/// Histogram-equalization mapping for one histogram of `total` samples.
fn equalization_map(mut hist: Vec<f64>, total: f64, clip_limit: f64) -> TileMap {
    let bins = hist.len();
    if clip_limit > 0.0 {
        let limit = clip_limit * total / bins as f64;
        let mut excess = 0.0;
        for h in &mut hist {
            if *h > limit {
                excess += *h - limit;
                *h = limit;
            }
        }
        let share = excess / bins as f64;
        for h in &mut hist {
            *h += share;
        }
    }
    let mut cdf = Vec::with_capacity(bins);
    let mut acc = 0.0;
    for &h in &hist {
        acc += h;
        cdf.push(acc);
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0.0).unwrap_or(0.0);
    if total - cdf_min <= 0.0 {
        return TileMap::Identity;
    }
    TileMap::Lut(
        cdf.iter()
            .map(|&c| (255.0 * (c - cdf_min) / (total - cdf_min)).clamp(0.0, 255.0))
            .collect(),
    )
}

/// Equalizes each tile's histogram and blends the four nearest tile mappings
/// bilinearly between tile centers. Pixels outside the outermost centers clamp
/// to the nearest tiles.
pub fn adaptive_hist_eq(img: &GrayImage, params: &AheParams) -> Result<GrayImage, EnhanceError> {
    let problems = params.validate();
    if !problems.is_empty() {
        return Err(EnhanceError::InvalidParams(problems.join("; ")));
    }
    let (w, h) = (img.width(), img.height());
    if w < params.tiles_x || h < params.tiles_y {
        return Err(EnhanceError::ImageTooSmall {
            width: w,
            height: h,
            tiles_x: params.tiles_x,
            tiles_y: params.tiles_y,
        });
    }
    let bins = params.bins;
    let cols = tile_bounds(w, params.tiles_x);
    let rows = tile_bounds(h, params.tiles_y);

    let maps: Vec<TileMap> = rows
        .iter()
        .flat_map(|&ry| cols.iter().map(move |&cx| (ry, cx)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|((y0, y1), (x0, x1))| {
            let mut hist = vec![0.0; bins];
            for y in y0..y1 {
                for &v in &img.row(y)[x0..x1] {
                    hist[bin_of(v, bins)] += 1.0;
                }
            }
            equalization_map(hist, ((y1 - y0) * (x1 - x0)) as f64, params.clip_limit)
        })
        .collect();

    let center = |&(a, b): &(usize, usize)| (a + b - 1) as f64 / 2.0;
    let cx: Vec<f64> = cols.iter().map(center).collect();
    let cy: Vec<f64> = rows.iter().map(center).collect();
    let tiles_x = params.tiles_x;

    let out: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let (ty0, ty1, fy) = blend_position(y as f64, &cy);
            img.row(y)
                .iter()
                .enumerate()
                .map(|(x, &v)| {
                    let (tx0, tx1, fx) = blend_position(x as f64, &cx);
                    let bin = bin_of(v, bins);
                    let at = |ty: usize, tx: usize| maps[ty * tiles_x + tx].apply(v, bin);
                    let top = lerp(at(ty0, tx0), at(ty0, tx1), fx);
                    let bottom = lerp(at(ty1, tx0), at(ty1, tx1), fx);
                    lerp(top, bottom, fy)
                })
                .collect()
        })
        .collect();
    Ok(GrayImage::from_raw_clamped(w, h, out.concat()))
}

/// Shannon entropy (bits) of the 256-level histogram.
pub fn histogram_entropy(img: &GrayImage) -> f64 {
    let mut hist = [0usize; 256];
    for &v in img.pixels() {
        hist[(v.round() as usize).min(255)] += 1;
    }
    let n = img.pixels().len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let img = GrayImage::filled(64, 48, 93.0);
        for clip in [0.0, 2.0] {
            let params = AheParams {
                clip_limit: clip,
                ..AheParams::default()
            };
            let out = adaptive_hist_eq(&img, &params).unwrap();
            let first = out.pixels()[0];
            assert!(out.pixels().iter().all(|&v| v == first));
        }
    }

    #[test]
    fn low_contrast_ramp_is_stretched() {
        let img = GrayImage::from_fn(256, 256, |x, _| 100.0 + 40.0 * x as f64 / 255.0);
        let params = AheParams {
            clip_limit: 0.0,
            ..AheParams::default()
        };
        let out = adaptive_hist_eq(&img, &params).unwrap();
        let (lo, hi) = out.min_max();
        assert!(lo <= 10.0 && hi >= 245.0, "{lo} {hi}");
        assert!(histogram_entropy(&out) >= histogram_entropy(&img));
    }

    #[test]
    fn two_flat_halves_do_not_bleed() {
        let img = GrayImage::from_fn(64, 32, |x, _| if x < 32 { 50.0 } else { 200.0 });
        let params = AheParams {
            tiles_x: 2,
            tiles_y: 1,
            clip_limit: 0.0,
            bins: 256,
        };
        let out = adaptive_hist_eq(&img, &params).unwrap();
        for y in 0..32 {
            for x in 0..64 {
                let expected = if x < 32 { out.get(0, 0) } else { out.get(63, 0) };
                assert_eq!(out.get(x, y), expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn too_small_and_bad_params() {
        let img = GrayImage::filled(4, 4, 0.0);
        assert!(matches!(
            adaptive_hist_eq(&img, &AheParams::default()),
            Err(EnhanceError::ImageTooSmall { .. })
        ));
        let bad = AheParams {
            bins: 300,
            ..AheParams::default()
        };
        assert!(matches!(
            adaptive_hist_eq(&GrayImage::filled(64, 64, 0.0), &bad),
            Err(EnhanceError::InvalidParams(_))
        ));
    }

    #[test]
    fn tile_bounds_cover_remainder() {
        assert_eq!(tile_bounds(10, 3), vec![(0, 3), (3, 6), (6, 10)]);
    }
}
