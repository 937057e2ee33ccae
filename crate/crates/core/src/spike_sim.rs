//! Integrate-and-fire spike camera simulation.
//!
//! A scene is turned into per-micro-interval irradiance integrals, each
//! pixel integrates them until its threshold is crossed, and the sensor is
//! latched at the readout rate into binary frames. Colour comes from a 2x2
//! macro-pixel with one red, one green and one blue filter; the fourth site
//! is unused, so every output pixel carries co-located RGB at half
//! resolution.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{invalid, Error, Result};
use crate::par::Exec;
use crate::types::{HdrImage, ResetMode, SensorConfig, SpikeStream, Validate};

/// Relative slack on the firing comparison, so accumulated round-off in
/// `sum(q * U_k)` does not swallow a spike that lands exactly on a threshold
/// multiple.
const FIRE_TOLERANCE: f64 = 1e-9;

/// Pixels per work item; a multiple of 8 so tiles own whole bytes of a plane.
const TILE_PIXELS: usize = 4096;

/// Irradiance integrated over each of K micro-intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct IrradianceClip {
    height: usize,
    width: usize,
    channels: usize,
    total_time: f64,
    /// K rasters of `height * width * channels`, channel-interleaved.
    data: Vec<f64>,
}

impl IrradianceClip {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        total_time: f64,
        intervals: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = height * width * channels;
        if n == 0 || intervals.is_empty() {
            return Err(invalid("micro_intervals", "clip must have pixels and at least one interval"));
        }
        if !(total_time > 0.0 && total_time.is_finite()) {
            return Err(invalid("total_time", "must be positive"));
        }
        let mut data = Vec::with_capacity(n * intervals.len());
        for (k, u) in intervals.into_iter().enumerate() {
            if u.len() != n {
                return Err(Error::Shape(format!("interval {k} has {} samples, expected {n}", u.len())));
            }
            if u.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::OutOfRange(format!("interval {k} has a negative or non-finite sample")));
            }
            data.extend(u);
        }
        Ok(Self {
            height,
            width,
            channels,
            total_time,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn samples_per_interval(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn micro_intervals(&self) -> usize {
        self.data.len() / self.samples_per_interval()
    }

    /// U_k for a 0-based interval index.
    pub fn interval(&self, k: usize) -> &[f64] {
        let n = self.samples_per_interval();
        &self.data[k * n..(k + 1) * n]
    }

    /// Sum of U_k over `start..start + len` (0-based), per sample.
    pub fn window_sum(&self, start: usize, len: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.samples_per_interval()];
        for k in start..start + len {
            for (a, u) in acc.iter_mut().zip(self.interval(k)) {
                *a += u;
            }
        }
        acc
    }
}

/// Global motion applied to the base scene, expressed as per-interval rates.
///
/// At interval k the scene is scaled by `1 + k * scale` and rotated by
/// `k * rotation` radians about the image centre, then shifted by
/// `(k * dx, k * dy)` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub dx: f64,
    pub dy: f64,
    pub rotation: f64,
    pub scale: f64,
}

impl Motion {
    pub const IDENTITY: Motion = Motion {
        dx: 0.0,
        dy: 0.0,
        rotation: 0.0,
        scale: 0.0,
    };

    pub fn translate(dx: f64, dy: f64) -> Self {
        Motion { dx, dy, ..Self::IDENTITY }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Maps an output pixel centre back to the base-image position it shows at interval k.
    fn source_point(&self, k: usize, x: f64, y: f64, cx: f64, cy: f64) -> (f64, f64) {
        let k = k as f64;
        let (px, py) = (x - k * self.dx - cx, y - k * self.dy - cy);
        let s = 1.0 + k * self.scale;
        let (sin, cos) = (-k * self.rotation).sin_cos();
        ((cos * px - sin * py) / s + cx, (sin * px + cos * py) / s + cy)
    }
}

impl Default for Motion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            write!(f, "identity")
        } else {
            write!(f, "affine:{},{},{},{}", self.dx, self.dy, self.rotation, self.scale)
        }
    }
}

impl FromStr for Motion {
    type Err = Error;

    /// `identity`, `translate:DX,DY` or `affine:DX,DY,ROT,SCALE`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("identity") || s.is_empty() {
            return Ok(Self::IDENTITY);
        }
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| invalid("motion", format!("unrecognised motion {s:?}")))?;
        let nums = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| invalid("motion", e.to_string()))?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(invalid("motion", "parameters must be finite"));
        }
        match (kind, nums.as_slice()) {
            ("translate", &[dx, dy]) => Ok(Self::translate(dx, dy)),
            ("affine", &[dx, dy, rotation, scale]) => Ok(Motion { dx, dy, rotation, scale }),
            _ => Err(invalid("motion", format!("unrecognised motion {s:?}"))),
        }
    }
}

fn bilinear(img: &HdrImage, x: f64, y: f64, c: usize) -> f64 {
    let (h, w) = (img.height(), img.width());
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |yy, xx| img.get(yy, xx, c) as f64;
    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
    let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Builds `U_k = warp(base, k) * T / K` for every micro-interval.
pub fn synthesize_clip(base: &HdrImage, motion: Motion, cfg: &SensorConfig) -> Result<IrradianceClip> {
    synthesize_clip_with(base, motion, cfg, Exec::default())
}

pub fn synthesize_clip_with(
    base: &HdrImage,
    motion: Motion,
    cfg: &SensorConfig,
    exec: Exec,
) -> Result<IrradianceClip> {
    cfg.validate()?;
    let k_total = cfg.micro_intervals;
    let dt = cfg.interval_seconds();
    let (h, w, ch) = base.dims();
    let (cx, cy) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
    let static_frame: Vec<f64> = base.data().iter().map(|&v| v as f64 * dt).collect();

    let intervals = exec.map_range(k_total, |k| {
        if motion.is_identity() {
            return static_frame.clone();
        }
        let mut u = Vec::with_capacity(h * w * ch);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = motion.source_point(k, x as f64, y as f64, cx, cy);
                u.extend((0..ch).map(|c| bilinear(base, sx, sy, c).max(0.0) * dt));
            }
        }
        u
    });
    IrradianceClip::new(h, w, ch, cfg.total_time, intervals)
}

/// Per-sample count of every threshold crossing, before binary readout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiringTrace {
    /// Channel-interleaved like the clip.
    pub firings: Vec<u64>,
    /// Largest number of firings any sample produced within one readout interval.
    pub max_per_readout: u32,
}

pub fn integrate_and_fire(clip: &IrradianceClip, cfg: &SensorConfig) -> Result<SpikeStream> {
    integrate_and_fire_with(clip, cfg, Exec::default()).map(|(s, _)| s)
}

/// Runs the sensor and also reports the true firing counts.
pub fn integrate_and_fire_with(
    clip: &IrradianceClip,
    cfg: &SensorConfig,
    exec: Exec,
) -> Result<(SpikeStream, FiringTrace)> {
    cfg.validate()?;
    let k_total = clip.micro_intervals();
    if k_total != cfg.micro_intervals {
        return Err(invalid(
            "micro_intervals",
            format!("clip has {k_total} intervals but the sensor expects {}", cfg.micro_intervals),
        ));
    }
    let frames = cfg.readout_frames()?;
    if !k_total.is_multiple_of(frames) {
        return Err(invalid(
            "micro_intervals",
            format!("K = {k_total} is not divisible by R = {frames}"),
        ));
    }
    let per_readout = k_total / frames;
    let (h, w, ch) = (clip.height, clip.width, clip.channels);
    let pixels = h * w;
    let plane = SpikeStream::plane_bytes_for(h, w);
    let eta = cfg.threshold;
    let fire_level = eta * (1.0 - FIRE_TOLERANCE);
    let q = cfg.conversion_gain;

    let tiles = pixels.div_ceil(TILE_PIXELS);
    let results = exec.map_range(tiles, |t| {
        let p0 = t * TILE_PIXELS;
        let p1 = (p0 + TILE_PIXELS).min(pixels);
        let n = (p1 - p0) * ch;
        let tile_bytes = (p1 - p0).div_ceil(8);
        let mut acc = vec![0.0f64; n];
        let mut firings = vec![0u64; n];
        let mut in_readout = vec![0u32; n];
        let mut max_per_readout = 0u32;
        let mut bits = vec![0u8; frames * ch * tile_bytes];
        let mut rngs: Vec<ChaCha8Rng> = if cfg.shot_noise {
            (0..n)
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
                    rng.set_stream((p0 * ch + i) as u64);
                    rng
                })
                .collect()
        } else {
            Vec::new()
        };

        for r in 0..frames {
            in_readout.iter_mut().for_each(|v| *v = 0);
            for k in r * per_readout..(r + 1) * per_readout {
                let u = &clip.interval(k)[p0 * ch..p1 * ch];
                for i in 0..n {
                    let mean = q * u[i];
                    acc[i] += if cfg.shot_noise && mean > 0.0 {
                        Poisson::new(mean)
                            .map(|d| d.sample(&mut rngs[i]))
                            .unwrap_or(mean)
                    } else {
                        mean
                    };
                    while acc[i] >= fire_level {
                        in_readout[i] += 1;
                        match cfg.reset {
                            ResetMode::Subtract => acc[i] = (acc[i] - eta).max(0.0),
                            ResetMode::Zero => {
                                acc[i] = 0.0;
                                break;
                            }
                        }
                    }
                }
            }
            for i in 0..n {
                let fired = in_readout[i];
                if fired > 0 {
                    firings[i] += fired as u64;
                    max_per_readout = max_per_readout.max(fired);
                    let (p, c) = (i / ch, i % ch);
                    bits[(r * ch + c) * tile_bytes + p / 8] |= 1 << (p % 8);
                }
            }
        }
        (bits, firings, max_per_readout, tile_bytes)
    });

    let mut packed = vec![0u8; frames * ch * plane];
    let mut firings = Vec::with_capacity(pixels * ch);
    let mut max_per_readout = 0;
    for (t, (bits, f, m, tile_bytes)) in results.into_iter().enumerate() {
        let offset = t * TILE_PIXELS / 8;
        for rc in 0..frames * ch {
            let dst = rc * plane + offset;
            packed[dst..dst + tile_bytes].copy_from_slice(&bits[rc * tile_bytes..(rc + 1) * tile_bytes]);
        }
        firings.extend(f);
        max_per_readout = max_per_readout.max(m);
    }

    let stream = SpikeStream::from_packed(h, w, ch, cfg.readout_rate_hz, frames, packed)?;
    Ok((
        stream,
        FiringTrace {
            firings,
            max_per_readout,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Filter {
    Red,
    Green,
    Blue,
    Unused,
}

/// Filter assignment of one 2x2 macro-pixel, indexed `[row][col]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MosaicLayout {
    sites: [[Filter; 2]; 2],
}

impl Default for MosaicLayout {
    fn default() -> Self {
        Self {
            sites: [[Filter::Red, Filter::Green], [Filter::Blue, Filter::Unused]],
        }
    }
}

impl MosaicLayout {
    pub fn new(sites: [[Filter; 2]; 2]) -> Result<Self> {
        let flat = sites.concat();
        for f in [Filter::Red, Filter::Green, Filter::Blue, Filter::Unused] {
            if flat.iter().filter(|&&s| s == f).count() != 1 {
                return Err(invalid("mosaic", format!("need exactly one {f:?} site")));
            }
        }
        Ok(Self { sites })
    }

    /// Offset within the macro-pixel of the site carrying output channel `c` (0=R, 1=G, 2=B).
    pub fn site_of(&self, c: usize) -> (usize, usize) {
        let want = [Filter::Red, Filter::Green, Filter::Blue][c];
        for (dy, row) in self.sites.iter().enumerate() {
            for (dx, &f) in row.iter().enumerate() {
                if f == want {
                    return (dy, dx);
                }
            }
        }
        unreachable!("layout validated on construction")
    }
}

/// Samples a full-resolution clip through the colour mosaic.
///
/// Each output pixel takes, for channel c, the value under the c filter of
/// its macro-pixel; a 3-channel input contributes its channel c there, a
/// 1-channel input its only channel.
pub fn mosaic_sample(full: &IrradianceClip, layout: &MosaicLayout) -> Result<IrradianceClip> {
    let (h, w, ch) = (full.height, full.width, full.channels);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("mosaic needs even dimensions, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let sites: Vec<(usize, usize)> = (0..3).map(|c| layout.site_of(c)).collect();
    let intervals = (0..full.micro_intervals())
        .map(|k| {
            let u = full.interval(k);
            let mut out = Vec::with_capacity(oh * ow * 3);
            for y in 0..oh {
                for x in 0..ow {
                    for (c, &(dy, dx)) in sites.iter().enumerate() {
                        let src_c = if ch == 3 { c } else { 0 };
                        out.push(u[((2 * y + dy) * w + 2 * x + dx) * ch + src_c]);
                    }
                }
            }
            out
        })
        .collect();
    IrradianceClip::new(oh, ow, 3, full.total_time, intervals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(frames_hz: u32, total: f64, k: usize) -> SensorConfig {
        SensorConfig {
            readout_rate_hz: frames_hz,
            total_time: total,
            micro_intervals: k,
            ..Default::default()
        }
    }

    fn constant_clip(value: f64, k: usize, total: f64) -> IrradianceClip {
        IrradianceClip::new(1, 1, 1, total, vec![vec![value]; k]).unwrap()
    }

    #[test]
    fn static_scene_intervals() {
        let base = HdrImage::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = cfg(1000, 0.02, 40);
        let clip = synthesize_clip(&base, Motion::IDENTITY, &c).unwrap();
        assert_eq!(clip.micro_intervals(), 40);
        let dt = 0.02 / 40.0;
        for k in 0..40 {
            assert_eq!(clip.interval(k), &[dt, 2.0 * dt, 3.0 * dt, 4.0 * dt]);
        }
        let total = clip.window_sum(0, 40);
        for (t, b) in total.iter().zip(base.data()) {
            assert!((t - *b as f64 * 0.02).abs() < 1e-12);
        }
    }

    #[test]
    fn translating_edge_advances() {
        // left half bright, right half dark; the edge is the first dark column
        let (h, w) = (4, 16);
        let base = HdrImage::new(
            h,
            w,
            1,
            (0..h * w).map(|i| if i % w < 5 { 100.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let c = cfg(100, 1.0, 800);
        let clip = synthesize_clip(&base, Motion::translate(0.01, 0.0), &c).unwrap();
        let edge = |k: usize| {
            let u = clip.interval(k);
            (0..w).find(|&x| u[x] < 0.5 * 100.0 * c.interval_seconds()).unwrap_or(w)
        };
        let positions: Vec<usize> = (0..800).step_by(50).map(edge).collect();
        assert!(positions.windows(2).all(|p| p[0] <= p[1]), "{positions:?}");
        // 1 px per 100 intervals: 7 px after 700 intervals
        assert_eq!(edge(0), 5);
        assert_eq!(edge(700), 12);
    }

    #[test]
    fn motion_parsing() {
        assert_eq!("identity".parse::<Motion>().unwrap(), Motion::IDENTITY);
        assert_eq!("translate:1.5,-2".parse::<Motion>().unwrap(), Motion::translate(1.5, -2.0));
        let m: Motion = "affine:0,0,0.01,0.001".parse().unwrap();
        assert_eq!(m.rotation, 0.01);
        assert_eq!(m.to_string().parse::<Motion>().unwrap(), m);
        assert!("spin:1".parse::<Motion>().is_err());
        assert!("translate:1".parse::<Motion>().is_err());
    }

    #[test]
    fn ten_quanta_give_ten_spikes() {
        // q * total / eta = 10 spread over 80 micro-intervals, R = 40
        let c = cfg(40, 1.0, 80);
        let clip = constant_clip(10.0 / 80.0, 80, 1.0);
        let s = integrate_and_fire(&clip, &c).unwrap();
        assert_eq!(s.frame_count(), 40);
        assert_eq!(s.spike_counts(), vec![10]);
    }

    #[test]
    fn non_dyadic_quanta_still_conserved() {
        // 0.1 per interval is not exact in binary; tolerance keeps 10 spikes
        let c = cfg(20, 1.0, 100);
        let clip = constant_clip(0.1, 100, 1.0);
        let s = integrate_and_fire(&clip, &c).unwrap();
        assert_eq!(s.spike_counts(), vec![10]);
    }

    #[test]
    fn zero_irradiance_is_silent() {
        let c = cfg(20, 1.0, 100);
        let clip = IrradianceClip::new(3, 3, 3, 1.0, vec![vec![0.0; 27]; 100]).unwrap();
        let s = integrate_and_fire(&clip, &c).unwrap();
        assert!(s.packed().iter().all(|&b| b == 0));
    }

    #[test]
    fn overdriven_pixel_collapses() {
        // 2 quanta per readout interval: every bit set, half the firings lost
        let c = cfg(20, 1.0, 100);
        let clip = constant_clip(2.0 / 5.0, 100, 1.0);
        let (s, trace) = integrate_and_fire_with(&clip, &c, Exec::Sequential).unwrap();
        // event-level oracle: total charge 40 quanta, one bit per interval
        let true_firings: u64 = (0..100).map(|_| 0.4).sum::<f64>().round() as u64;
        assert_eq!(trace.firings, vec![true_firings]);
        assert_eq!(s.spike_counts(), vec![20]);
        assert_eq!(trace.max_per_readout, 2);
    }

    #[test]
    fn reset_to_zero_drops_excess() {
        let c = SensorConfig {
            reset: ResetMode::Zero,
            ..cfg(20, 1.0, 100)
        };
        // 0.6 per interval: subtraction fires 60 times, reset-to-zero every other interval
        let clip = constant_clip(0.6, 100, 1.0);
        let (_, trace) = integrate_and_fire_with(&clip, &c, Exec::Sequential).unwrap();
        assert_eq!(trace.firings, vec![50]);
    }

    #[test]
    fn rejects_mismatched_intervals() {
        let c = cfg(20, 1.0, 100);
        let clip = constant_clip(0.1, 50, 1.0);
        assert!(integrate_and_fire(&clip, &c).is_err());
    }

    #[test]
    fn shot_noise_is_seeded() {
        let c = SensorConfig {
            shot_noise: true,
            rng_seed: 42,
            ..cfg(20, 1.0, 100)
        };
        let clip = IrradianceClip::new(4, 4, 3, 1.0, vec![vec![0.05; 48]; 100]).unwrap();
        let a = integrate_and_fire_with(&clip, &c, Exec::Sequential).unwrap();
        let b = integrate_and_fire_with(&clip, &c, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let other = SensorConfig { rng_seed: 43, ..c };
        let d = integrate_and_fire(&clip, &other).unwrap();
        assert_ne!(a.0, d);
    }

    #[test]
    fn tiles_assemble_across_boundaries() {
        // wider than one tile, with a pattern that depends on pixel index
        let (h, w) = (3, 3000);
        let c = cfg(20, 1.0, 20);
        let u: Vec<f64> = (0..h * w).map(|p| if p % 7 == 0 { 1.0 } else { 0.0 }).collect();
        let clip = IrradianceClip::new(h, w, 1, 1.0, vec![u; 20]).unwrap();
        let (s, _) = integrate_and_fire_with(&clip, &c, Exec::Parallel).unwrap();
        let counts = s.spike_counts();
        for (p, &n) in counts.iter().enumerate() {
            assert_eq!(n, if p % 7 == 0 { 20 } else { 0 }, "pixel {p}");
        }
    }

    #[test]
    fn mosaic_uniform_and_selection() {
        let uni = IrradianceClip::new(2, 2, 1, 1.0, vec![vec![3.0; 4]]).unwrap();
        let m = mosaic_sample(&uni, &MosaicLayout::default()).unwrap();
        assert_eq!(m.interval(0), &[3.0, 3.0, 3.0]);

        // 3-channel block with distinct values at every site and channel
        let vals: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let blk = IrradianceClip::new(2, 2, 3, 1.0, vec![vals]).unwrap();
        let m = mosaic_sample(&blk, &MosaicLayout::default()).unwrap();
        // R from site (0,0) ch0 = 0, G from (0,1) ch1 = 4, B from (1,0) ch2 = 8
        assert_eq!(m.interval(0), &[0.0, 4.0, 8.0]);
    }

    #[test]
    fn mosaic_four_by_four() {
        // value = 10*y + x on a single channel
        let vals: Vec<f64> = (0..16).map(|i| (10 * (i / 4) + i % 4) as f64).collect();
        let clip = IrradianceClip::new(4, 4, 1, 1.0, vec![vals]).unwrap();
        let m = mosaic_sample(&clip, &MosaicLayout::default()).unwrap();
        assert_eq!((m.height(), m.width(), m.channels()), (2, 2, 3));
        #[rustfmt::skip]
        let expected = [
            0.0, 1.0, 10.0,    2.0, 3.0, 12.0,
            20.0, 21.0, 30.0,  22.0, 23.0, 32.0,
        ];
        assert_eq!(m.interval(0), &expected);
        let odd = IrradianceClip::new(3, 4, 1, 1.0, vec![vec![0.0; 12]]).unwrap();
        assert!(mosaic_sample(&odd, &MosaicLayout::default()).is_err());
    }

    #[test]
    fn layout_validation() {
        use Filter::*;
        assert!(MosaicLayout::new([[Red, Green], [Green, Blue]]).is_err());
        let l = MosaicLayout::new([[Unused, Blue], [Green, Red]]).unwrap();
        assert_eq!(l.site_of(0), (1, 1));
        assert_eq!(l.site_of(2), (0, 1));
    }
}
