//! Seeded synthetic test scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::types::HdrImage;

/// Smooth integer-valued scene built from a few Gaussian bumps over a tilted
/// plane, scaled so no forward difference exceeds `max_step` and the largest
/// value is at most `peak`.
pub fn smooth_scene(
    height: usize,
    width: usize,
    channels: usize,
    peak: f64,
    max_step: f64,
    seed: u64,
) -> Result<HdrImage> {
    if !(peak >= 0.0 && peak.is_finite()) {
        return Err(invalid("peak", "must be nonnegative"));
    }
    if max_step.is_nan() || max_step < 1.0 {
        return Err(invalid("max_step", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planes = Vec::with_capacity(channels);
    for _ in 0..channels {
        let scale = height.max(width) as f64;
        let bumps: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(2..7))
            .map(|_| {
                (
                    rng.random_range(0.0..height as f64),
                    rng.random_range(0.0..width as f64),
                    rng.random_range(0.08..0.4) * scale,
                    rng.random_range(0.2..1.0),
                )
            })
            .collect();
        let (ty, tx) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        let mut p = vec![0.0; height * width];
        for y in 0..height {
            for x in 0..width {
                let mut v = ty * y as f64 / scale + tx * x as f64 / scale;
                for &(cy, cx, s, a) in &bumps {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    v += a * (-d2 / (2.0 * s * s)).exp();
                }
                p[y * width + x] = v;
            }
        }
        let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
        p.iter_mut().for_each(|v| *v -= lo);
        planes.push(p);
    }
    let hi = planes.iter().flatten().cloned().fold(0.0, f64::max);
    let step = planes
        .iter()
        .map(|p| max_forward_difference(p, height, width))
        .fold(0.0, f64::max);
    // rounding can widen a difference by up to 1
    let mut s = if hi > 0.0 { peak / hi } else { 0.0 };
    if step > 0.0 {
        s = s.min((max_step - 1.0) / step);
    }
    let mut data = vec![0.0f32; height * width * channels];
    for (c, p) in planes.iter().enumerate() {
        for (i, v) in p.iter().enumerate() {
            data[i * channels + c] = (v * s).round().min(peak.floor()) as f32;
        }
    }
    HdrImage::new(height, width, channels, data)
}

/// Largest absolute horizontal or vertical neighbour difference in a plane.
pub fn max_forward_difference(p: &[f64], height: usize, width: usize) -> f64 {
    let mut m: f64 = 0.0;
    for y in 0..height {
        for x in 0..width {
            let v = p[y * width + x];
            if x + 1 < width {
                m = m.max((p[y * width + x + 1] - v).abs());
            }
            if y + 1 < height {
                m = m.max((p[(y + 1) * width + x] - v).abs());
            }
        }
    }
    m
}

/// Two-level vertical edge: `left` for columns `< edge`, `right` elsewhere.
pub fn edge_scene(height: usize, width: usize, edge: usize, left: f32, right: f32) -> Result<HdrImage> {
    let data = (0..height * width)
        .map(|i| if i % width < edge { left } else { right })
        .collect();
    HdrImage::new(height, width, 1, data)
}
