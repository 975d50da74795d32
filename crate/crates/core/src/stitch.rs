//! Feathered compositing of unwrapped strips into a panorama.
//!
//! Pairwise models map strip `i` onto strip `i + 1`. Strip 0 defines the
//! reference frame; strip `i + 1` is placed with `C[i+1] = C[i] ∘ T[i]⁻¹`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{GrayImage, Mask};
use crate::ransac::{MotionModel, RansacResult};

/// Hard cap on canvas area, guarding against runaway homographies.
pub const MAX_CANVAS_PIXELS: usize = 50_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum StitchError {
    #[error("no strips to compose")]
    Empty,
    #[error("{strips} strips need {expected} pairwise links, got {pairwise}")]
    LengthMismatch {
        strips: usize,
        expected: usize,
        pairwise: usize,
    },
    #[error("chain broken at pair(s) {breaks:?}")]
    ChainBroken { breaks: Vec<usize> },
    #[error("model for strip {0} is not invertible")]
    NonInvertible(usize),
    #[error("canvas {width}x{height} exceeds the size limit")]
    CanvasTooLarge { width: usize, height: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompositeOptions {
    /// Wrap the horizontal axis with this period (the strip's full angular
    /// width); `None` composites on an unbounded plane.
    pub cyclic_period: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub strip_index: usize,
    /// Strip pixel coordinates to reference (strip 0) coordinates.
    pub model: MotionModel,
    pub width: usize,
    pub height: usize,
}

/// Overlap between consecutive strips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamInfo {
    pub strips: (usize, usize),
    pub overlap_pixels: usize,
    /// Canvas bounding box `[x0, y0, x1, y1]`, inclusive; `None` without overlap.
    pub bounds: Option<[usize; 4]>,
    /// Mean normalized weight of the earlier strip inside the overlap.
    pub mean_weight_first: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    sum_w: f64,
    /// Weighted deviations from the first sample, so equal samples blend exactly.
    sum_wd: f64,
    count: u32,
    single: f64,
}

#[derive(Debug, Clone)]
struct Placed {
    strip: GrayImage,
    /// Reference to strip coordinates.
    inverse: MotionModel,
}

#[derive(Debug, Clone)]
pub struct Panorama {
    /// Canvas pixel `(0, 0)` in reference coordinates.
    pub origin: (i64, i64),
    pub placements: Vec<Placement>,
    pub seams: Vec<SeamInfo>,
    pub blend: String,
    options: CompositeOptions,
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    placed: Vec<Placed>,
}

/// Feather weight: normalized distance to the nearest strip edge, per axis.
#[inline]
fn tent(pos: f64, len: usize) -> f64 {
    let len = len as f64;
    (pos + 1.0).min(len - pos) / (0.5 * len).max(1.0)
}

#[inline]
fn strip_weight(x: f64, y: f64, w: usize, h: usize) -> f64 {
    tent(x, w) * tent(y, h)
}

impl Placed {
    /// Strip position and weight for a reference-frame point, if covered.
    fn locate(&self, rx: f64, ry: f64, period: Option<usize>) -> Option<(f64, f64, f64)> {
        let (w, h) = (self.strip.width(), self.strip.height());
        let inside = |(x, y): (f64, f64)| {
            x >= -1e-9 && y >= -1e-9 && x <= (w - 1) as f64 + 1e-9 && y <= (h - 1) as f64 + 1e-9
        };
        let hit = match period {
            None => self.inverse.apply(rx, ry).filter(|&p| inside(p)),
            Some(p) => {
                let p = p as f64;
                let reach = (w as f64 / p).ceil() as i64 + 1;
                (-reach..=reach)
                    .filter_map(|k| self.inverse.apply(rx + k as f64 * p, ry))
                    .find(|&q| inside(q))
            }
        }?;
        let (x, y) = (hit.0.clamp(0.0, (w - 1) as f64), hit.1.clamp(0.0, (h - 1) as f64));
        Some((x, y, strip_weight(x, y, w, h)))
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        self.strip.sample_bilinear(x, y).unwrap_or(0.0)
    }
}

fn corners(model: &MotionModel, w: usize, h: usize) -> Option<[(f64, f64); 4]> {
    let (xm, ym) = ((w - 1) as f64, (h - 1) as f64);
    Some([
        model.apply(0.0, 0.0)?,
        model.apply(xm, 0.0)?,
        model.apply(0.0, ym)?,
        model.apply(xm, ym)?,
    ])
}

impl Panorama {
    /// Starts a panorama from the reference strip.
    pub fn new(strip: &GrayImage, options: CompositeOptions) -> Self {
        let identity = MotionModel::Translation { dx: 0.0, dy: 0.0 };
        let mut pano = Panorama {
            origin: (0, 0),
            placements: Vec::new(),
            seams: Vec::new(),
            blend: "linear-feather".to_string(),
            options,
            width: 0,
            height: 0,
            cells: Vec::new(),
            placed: Vec::new(),
        };
        pano.place(strip, identity, identity)
            .expect("a single strip always fits");
        pano
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Appends a strip given the model mapping the current last strip onto it.
    pub fn append(&mut self, strip: &GrayImage, link: &MotionModel) -> Result<(), StitchError> {
        let index = self.placements.len();
        let last = self.placements.last().expect("non-empty").model;
        let inv_link = link.inverse().ok_or(StitchError::NonInvertible(index))?;
        let cumulative = last
            .compose(&inv_link)
            .ok_or(StitchError::NonInvertible(index))?;
        let inverse = cumulative
            .inverse()
            .ok_or(StitchError::NonInvertible(index))?;
        self.place(strip, cumulative, inverse)
    }

    fn place(&mut self, strip: &GrayImage, cumulative: MotionModel, inverse: MotionModel) -> Result<(), StitchError> {
        let index = self.placements.len();
        let period = self.options.cyclic_period;
        let (sw, sh) = (strip.width(), strip.height());
        let pts = corners(&cumulative, sw, sh).ok_or(StitchError::NonInvertible(index))?;
        let floor = |v: f64| (v + 1e-9).floor() as i64;
        let ceil = |v: f64| (v - 1e-9).ceil() as i64;
        let mut x0 = pts.iter().map(|p| floor(p.0)).min().expect("4 corners");
        let mut x1 = pts.iter().map(|p| ceil(p.0)).max().expect("4 corners");
        let mut y0 = pts.iter().map(|p| floor(p.1)).min().expect("4 corners");
        let mut y1 = pts.iter().map(|p| ceil(p.1)).max().expect("4 corners");
        if let Some(p) = period {
            (x0, x1) = (0, p as i64 - 1);
        }
        if !self.placements.is_empty() {
            x0 = x0.min(self.origin.0);
            y0 = y0.min(self.origin.1);
            x1 = x1.max(self.origin.0 + self.width as i64 - 1);
            y1 = y1.max(self.origin.1 + self.height as i64 - 1);
        }
        let (nw, nh) = ((x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize);
        if nw.saturating_mul(nh) > MAX_CANVAS_PIXELS {
            return Err(StitchError::CanvasTooLarge { width: nw, height: nh });
        }
        if (nw, nh, (x0, y0)) != (self.width, self.height, self.origin) {
            let mut cells = vec![Cell::default(); nw * nh];
            let (dx, dy) = ((self.origin.0 - x0) as usize, (self.origin.1 - y0) as usize);
            for y in 0..self.height {
                let src = &self.cells[y * self.width..(y + 1) * self.width];
                let start = (y + dy) * nw + dx;
                cells[start..start + self.width].copy_from_slice(src);
            }
            self.cells = cells;
            (self.width, self.height, self.origin) = (nw, nh, (x0, y0));
        }

        let placed = Placed {
            strip: strip.clone(),
            inverse,
        };
        let previous = self.placed.last();
        let origin = self.origin;
        let width = self.width;
        // Per row: overlap count, bounds, summed weight share of the previous strip.
        let stats: Vec<(usize, Option<(usize, usize)>, f64)> = self
            .cells
            .par_chunks_mut(width)
            .enumerate()
            .map(|(cy, row)| {
                let ry = (origin.1 + cy as i64) as f64;
                let mut overlap = 0;
                let mut span: Option<(usize, usize)> = None;
                let mut share = 0.0;
                for (cx, cell) in row.iter_mut().enumerate() {
                    let rx = (origin.0 + cx as i64) as f64;
                    let Some((x, y, w)) = placed.locate(rx, ry, period) else {
                        continue;
                    };
                    let v = placed.sample(x, y);
                    if let Some((_, _, wp)) = previous.and_then(|p| p.locate(rx, ry, period)) {
                        overlap += 1;
                        span = Some(span.map_or((cx, cx), |(a, _)| (a, cx)));
                        share += wp / (wp + w);
                    }
                    if cell.count == 0 {
                        cell.single = v;
                    }
                    cell.sum_w += w;
                    cell.sum_wd += w * (v - cell.single);
                    cell.count += 1;
                }
                (overlap, span, share)
            })
            .collect();

        if index > 0 {
            let overlap_pixels: usize = stats.iter().map(|s| s.0).sum();
            let share: f64 = stats.iter().map(|s| s.2).sum();
            let rows: Vec<usize> = (0..stats.len()).filter(|&r| stats[r].0 > 0).collect();
            let bounds = rows.first().map(|&r0| {
                let r1 = *rows.last().expect("non-empty");
                let xa = rows.iter().filter_map(|&r| stats[r].1).map(|s| s.0).min().expect("span");
                let xb = rows.iter().filter_map(|&r| stats[r].1).map(|s| s.1).max().expect("span");
                [xa, r0, xb, r1]
            });
            self.seams.push(SeamInfo {
                strips: (index - 1, index),
                overlap_pixels,
                bounds,
                mean_weight_first: if overlap_pixels > 0 {
                    share / overlap_pixels as f64
                } else {
                    0.0
                },
            });
        }
        self.placements.push(Placement {
            strip_index: index,
            model: cumulative,
            width: sw,
            height: sh,
        });
        self.placed.push(placed);
        Ok(())
    }

    /// Rendered canvas; uncovered pixels are 0. A pixel covered by one strip
    /// carries that strip's sample unchanged.
    pub fn canvas(&self) -> GrayImage {
        let pixels = self
            .cells
            .iter()
            .map(|c| if c.count == 0 { 0.0 } else { c.single + c.sum_wd / c.sum_w })
            .collect();
        GrayImage::from_raw_clamped(self.width, self.height, pixels)
    }

    pub fn coverage(&self) -> Mask {
        Mask::new(
            self.width,
            self.height,
            self.cells.iter().map(|c| c.count > 0).collect(),
        )
    }

    /// Normalized blend weights `(strip index, weight)` at a canvas pixel.
    pub fn blend_weights(&self, x: usize, y: usize) -> Vec<(usize, f64)> {
        let rx = (self.origin.0 + x as i64) as f64;
        let ry = (self.origin.1 + y as i64) as f64;
        let raw: Vec<(usize, f64)> = self
            .placed
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.locate(rx, ry, self.options.cyclic_period).map(|(_, _, w)| (i, w)))
            .collect();
        let total: f64 = raw.iter().map(|r| r.1).sum();
        raw.into_iter().map(|(i, w)| (i, w / total)).collect()
    }
}

/// Composes one unbroken chain.
pub fn compose(strips: &[GrayImage], pairwise: &[Option<RansacResult>]) -> Result<Panorama, StitchError> {
    compose_with(strips, pairwise, CompositeOptions::default())
}

pub fn compose_with(
    strips: &[GrayImage],
    pairwise: &[Option<RansacResult>],
    options: CompositeOptions,
) -> Result<Panorama, StitchError> {
    check_lengths(strips, pairwise)?;
    let breaks: Vec<usize> = (0..pairwise.len()).filter(|&i| pairwise[i].is_none()).collect();
    if !breaks.is_empty() {
        return Err(StitchError::ChainBroken { breaks });
    }
    let mut pano = Panorama::new(&strips[0], options);
    for (strip, link) in strips[1..].iter().zip(pairwise) {
        pano.append(strip, &link.as_ref().expect("checked").model)?;
    }
    Ok(pano)
}

/// A maximal unbroken run of strips.
#[derive(Debug, Clone)]
pub struct Segment {
    /// Index of the segment's first strip in the input list.
    pub first_strip: usize,
    pub panorama: Panorama,
}

/// Splits the chain at missing links and composes each run separately.
pub fn compose_segments(
    strips: &[GrayImage],
    pairwise: &[Option<RansacResult>],
    options: CompositeOptions,
) -> Result<(Vec<Segment>, Vec<usize>), StitchError> {
    check_lengths(strips, pairwise)?;
    let mut segments = Vec::new();
    let mut breaks = Vec::new();
    let mut start = 0;
    for end in 0..strips.len() {
        let closes = end + 1 == strips.len() || pairwise[end].is_none();
        if !closes {
            continue;
        }
        if end + 1 < strips.len() {
            breaks.push(end);
        }
        let mut segment = compose_with(&strips[start..=end], &pairwise[start..end], options)?;
        for p in &mut segment.placements {
            p.strip_index += start;
        }
        for s in &mut segment.seams {
            s.strips = (s.strips.0 + start, s.strips.1 + start);
        }
        segments.push(Segment {
            first_strip: start,
            panorama: segment,
        });
        start = end + 1;
    }
    Ok((segments, breaks))
}

fn check_lengths(strips: &[GrayImage], pairwise: &[Option<RansacResult>]) -> Result<(), StitchError> {
    if strips.is_empty() {
        return Err(StitchError::Empty);
    }
    if pairwise.len() + 1 != strips.len() {
        return Err(StitchError::LengthMismatch {
            strips: strips.len(),
            expected: strips.len() - 1,
            pairwise: pairwise.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(dx: f64, dy: f64) -> Option<RansacResult> {
        Some(RansacResult {
            model: MotionModel::Translation { dx, dy },
            inlier_indices: vec![0, 1, 2, 3],
            valid_match_count: 4,
        })
    }

    #[test]
    fn identical_strips_identity_model() {
        let s = GrayImage::from_fn(40, 20, |x, y| (x * 5 + y * 3) as f64 % 251.0);
        let p = compose(&[s.clone(), s.clone()], &[link(0.0, 0.0)]).unwrap();
        assert_eq!(p.canvas(), s);
        assert_eq!(p.seams[0].overlap_pixels, 800);
    }

    #[test]
    fn tent_is_positive_on_strip() {
        assert!(tent(0.0, 10) > 0.0 && tent(9.0, 10) > 0.0);
        assert_eq!(tent(0.0, 10), tent(9.0, 10));
    }

    #[test]
    fn length_mismatch() {
        let s = GrayImage::filled(8, 8, 1.0);
        assert!(matches!(
            compose(&[s.clone(), s], &[]),
            Err(StitchError::LengthMismatch { .. })
        ));
        assert_eq!(compose(&[], &[]).unwrap_err(), StitchError::Empty);
    }

    #[test]
    fn cyclic_canvas_keeps_width() {
        let s = GrayImage::from_fn(36, 10, |x, _| x as f64);
        let opts = CompositeOptions { cyclic_period: Some(36) };
        let p = compose_with(&[s.clone(), s.clone()], &[link(5.0, 3.0)], opts).unwrap();
        assert_eq!(p.width(), 36);
        assert_eq!(p.height(), 13);
    }
}
