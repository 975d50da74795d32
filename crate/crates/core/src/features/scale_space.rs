//! Gaussian and difference-of-Gaussians pyramids on `f32` planes.

use rayon::prelude::*;

#[derive(Debug, Clone)]
pub(crate) struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    #[cfg(test)]
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Center-aligned 2x bilinear upsampling: output pixel `X` samples input
    /// position `(X + 0.5) / 2 - 0.5`, clamped at the borders.
    pub fn upsample2(&self) -> Plane {
        let (w, h) = (self.width * 2, self.height * 2);
        let coord = |o: usize, len: usize| {
            let p = ((o as f32 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f32);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, p - i0 as f32)
        };
        let xs: Vec<_> = (0..w).map(|x| coord(x, self.width)).collect();
        let mut data = vec![0.0; w * h];
        data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let (y0, y1, fy) = coord(y, self.height);
            for (x, out) in row.iter_mut().enumerate() {
                let (x0, x1, fx) = xs[x];
                let top = self.at(x0, y0) + fx * (self.at(x1, y0) - self.at(x0, y0));
                let bottom = self.at(x0, y1) + fx * (self.at(x1, y1) - self.at(x0, y1));
                *out = top + fy * (bottom - top);
            }
        });
        Plane {
            width: w,
            height: h,
            data,
        }
    }

    /// 2x2 box-average decimation; an odd trailing row or column is dropped.
    pub fn downsample2(&self) -> Plane {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = vec![0.0; w * h];
        data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let (sx, sy) = (2 * x, 2 * y);
                *out = 0.25
                    * (self.at(sx, sy)
                        + self.at(sx + 1, sy)
                        + self.at(sx, sy + 1)
                        + self.at(sx + 1, sy + 1));
            }
        });
        Plane {
            width: w,
            height: h,
            data,
        }
    }

    pub fn sub(&self, other: &Plane) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Separable Gaussian blur with mirrored (reflect-101) borders.
    pub fn gaussian_blur(&self, sigma: f64) -> Plane {
        let kernel = gaussian_kernel(sigma);
        let radius = kernel.len() / 2;
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0f32; w * h];
        tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let src = &self.data[y * w..(y + 1) * w];
            for (x, out) in row.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for (k, &kv) in kernel.iter().enumerate() {
                    let sx = reflect(x as isize + k as isize - radius as isize, w);
                    acc += kv * src[sx];
                }
                *out = acc;
            }
        });
        let mut data = vec![0.0f32; w * h];
        data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (k, &kv) in kernel.iter().enumerate() {
                let sy = reflect(y as isize + k as isize - radius as isize, h);
                let src = &tmp[sy * w..(sy + 1) * w];
                for (out, &s) in row.iter_mut().zip(src) {
                    *out += kv * s;
                }
            }
        });
        Plane {
            width: w,
            height: h,
            data,
        }
    }
}

#[inline]
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let n = len as isize;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (4.0 * sigma).ceil().max(1.0) as usize;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / denom).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|&v| (v / total) as f32).collect()
}

/// One octave: `scales + 3` Gaussian layers and `scales + 2` DoG layers.
pub(crate) struct Octave {
    pub gaussians: Vec<Plane>,
    pub dogs: Vec<Plane>,
}

/// Blur of the seed image, in seed-image pixels.
pub(crate) const SIGMA_BASE: f64 = 1.6;
/// Blur assumed in the input image before doubling.
pub(crate) const SIGMA_INPUT: f64 = 0.5;
/// Octaves stop once the shorter side drops below this.
const MIN_OCTAVE_SIDE: usize = 16;

pub(crate) fn build_pyramid(seed: Plane, max_octaves: usize, scales: usize) -> Vec<Octave> {
    let k = 2f64.powf(1.0 / scales as f64);
    // Incremental blur taking layer i-1 to layer i.
    let increments: Vec<f64> = (1..scales + 3)
        .map(|i| {
            let prev = SIGMA_BASE * k.powi(i as i32 - 1);
            let next = prev * k;
            (next * next - prev * prev).sqrt()
        })
        .collect();
    let mut octaves: Vec<Octave> = Vec::new();
    let mut base = seed;
    for _ in 0..max_octaves {
        if base.width.min(base.height) < MIN_OCTAVE_SIDE {
            break;
        }
        let mut gaussians = Vec::with_capacity(scales + 3);
        gaussians.push(base);
        for &inc in &increments {
            let next = gaussians.last().expect("non-empty").gaussian_blur(inc);
            gaussians.push(next);
        }
        let dogs = gaussians.windows(2).map(|p| p[1].sub(&p[0])).collect();
        base = gaussians[scales].downsample2();
        octaves.push(Octave { gaussians, dogs });
    }
    octaves
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let v: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(v, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn blur_preserves_constant() {
        let p = Plane {
            width: 9,
            height: 7,
            data: vec![0.5; 63],
        };
        let b = p.gaussian_blur(2.0);
        assert!(b.data.iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn down_up_sizes() {
        let p = Plane::zeros(11, 6);
        assert_eq!(p.upsample2().width, 22);
        let d = p.downsample2();
        assert_eq!((d.width, d.height), (5, 3));
    }
}
