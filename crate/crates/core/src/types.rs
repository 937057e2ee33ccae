//! Shared value types and configuration.
//!
//! Rasters are row-major with channels interleaved (R,G,B order for colour
//! data). Every type validates its invariants on construction and is
//! immutable afterwards.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MAX_BIT_DEPTH: u8 = 16;

/// Anything whose invariants can be checked after deserialization or manual construction.
pub trait Validate {
    fn validate(&self) -> Result<()>;
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(invalid("dims", format!("{height}x{width} raster is empty")));
    }
    if channels != 1 && channels != 3 {
        return Err(invalid("channels", format!("must be 1 or 3, got {channels}")));
    }
    Ok(())
}

fn check_bit_depth(bits: u8) -> Result<()> {
    if bits == 0 || bits > MAX_BIT_DEPTH {
        return Err(invalid(
            "bit_depth",
            format!("must be in 1..={MAX_BIT_DEPTH}, got {bits}"),
        ));
    }
    Ok(())
}

/// Linear-radiance raster in arbitrary nonnegative units.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl HdrImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, channels)?;
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {expected} samples, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::OutOfRange(format!(
                "sample {i} = {} is negative or not finite",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from integer digital counts.
    pub fn from_counts(height: usize, width: usize, channels: usize, counts: &[u64]) -> Result<Self> {
        if let Some(c) = counts.iter().find(|&&c| c > (1 << 24)) {
            return Err(Error::OutOfRange(format!(
                "count {c} is not exactly representable as f32"
            )));
        }
        Self::new(
            height,
            width,
            channels,
            counts.iter().map(|&c| c as f32).collect(),
        )
    }

    /// Assembles an image from per-channel planes. Negative values are rejected.
    pub fn from_planes(planes: &[Array2<f64>]) -> Result<Self> {
        let channels = planes.len();
        let (height, width) = planes
            .first()
            .map(|p| p.dim())
            .ok_or_else(|| Error::Shape("no planes".into()))?;
        if planes.iter().any(|p| p.dim() != (height, width)) {
            return Err(Error::Shape("planes differ in size".into()));
        }
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                data.extend(planes.iter().map(|p| p[[i, j]] as f32));
            }
        }
        Self::new(height, width, channels, data)
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// One channel as a `height x width` plane.
    pub fn channel_plane(&self, c: usize) -> Array2<f64> {
        assert!(c < self.channels, "channel {c} out of range");
        Array2::from_shape_fn((self.height, self.width), |(y, x)| self.get(y, x, c) as f64)
    }

    /// Integer view, present only when every sample is a whole number below 2^16.
    pub fn to_counts(&self) -> Option<Vec<u16>> {
        self.data
            .iter()
            .map(|&v| (v.fract() == 0.0 && v <= u16::MAX as f32).then_some(v as u16))
            .collect()
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }
}

/// N-bit wrapped observation. Samples are held as `u16` for every N.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuloFrame {
    height: usize,
    width: usize,
    channels: usize,
    bit_depth: u8,
    data: Vec<u16>,
}

impl ModuloFrame {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        bit_depth: u8,
        data: Vec<u16>,
    ) -> Result<Self> {
        check_dims(height, width, channels)?;
        check_bit_depth(bit_depth)?;
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} frame needs {expected} samples, got {}",
                data.len()
            )));
        }
        let modulus = 1u32 << bit_depth;
        if let Some(i) = data.iter().position(|&v| v as u32 >= modulus) {
            return Err(Error::OutOfRange(format!(
                "sample {i} = {} does not fit in {bit_depth} bits",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            bit_depth,
            data,
        })
    }

    /// Wraps integer counts modulo 2^N.
    pub fn wrap_counts(
        height: usize,
        width: usize,
        channels: usize,
        bit_depth: u8,
        counts: &[u64],
    ) -> Result<Self> {
        check_bit_depth(bit_depth)?;
        let mask = (1u64 << bit_depth) - 1;
        Self::new(
            height,
            width,
            channels,
            bit_depth,
            counts.iter().map(|&c| (c & mask) as u16).collect(),
        )
    }

    /// Wraps an integer-valued image modulo 2^N.
    pub fn wrap_image(img: &HdrImage, bit_depth: u8) -> Result<Self> {
        let counts = img
            .data()
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 {
                    Ok(v as u64)
                } else {
                    Err(Error::OutOfRange(format!("{v} is not an integer count")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::wrap_counts(img.height, img.width, img.channels, bit_depth, &counts)
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

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn modulus(&self) -> u32 {
        1 << self.bit_depth
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u16 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn channel_plane(&self, c: usize) -> Array2<f64> {
        assert!(c < self.channels, "channel {c} out of range");
        Array2::from_shape_fn((self.height, self.width), |(y, x)| self.get(y, x, c) as f64)
    }

    pub fn to_hdr(&self) -> HdrImage {
        HdrImage {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Synchronous binary spike frames.
///
/// Storage is frame-major, then channel; each `(frame, channel)` plane holds
/// `height * width` bits row-major, LSB-first within a byte, padded with zero
/// bits to a byte boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeStream {
    height: usize,
    width: usize,
    channels: usize,
    frame_count: usize,
    readout_rate_hz: u32,
    bits: Vec<u8>,
}

impl SpikeStream {
    pub fn plane_bytes_for(height: usize, width: usize) -> usize {
        (height * width).div_ceil(8)
    }

    pub fn from_packed(
        height: usize,
        width: usize,
        channels: usize,
        readout_rate_hz: u32,
        frame_count: usize,
        bits: Vec<u8>,
    ) -> Result<Self> {
        check_dims(height, width, channels)?;
        if frame_count == 0 {
            return Err(invalid("frame_count", "must be at least 1"));
        }
        if readout_rate_hz == 0 {
            return Err(invalid("readout_rate", "must be positive"));
        }
        let plane = Self::plane_bytes_for(height, width);
        let expected = plane * channels * frame_count;
        if bits.len() != expected {
            return Err(Error::Shape(format!(
                "{frame_count} frames of {height}x{width}x{channels} need {expected} bytes, got {}",
                bits.len()
            )));
        }
        let tail = (height * width) % 8;
        if tail != 0 {
            let pad_mask = !((1u8 << tail) - 1);
            if bits.chunks(plane).any(|p| p[plane - 1] & pad_mask != 0) {
                return Err(Error::OutOfRange("nonzero padding bits".into()));
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            frame_count,
            readout_rate_hz,
            bits,
        })
    }

    /// Builds a stream from a predicate over `(frame, y, x, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        readout_rate_hz: u32,
        frame_count: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> bool,
    ) -> Result<Self> {
        let plane = Self::plane_bytes_for(height, width);
        let mut bits = vec![0u8; plane * channels * frame_count];
        for r in 0..frame_count {
            for c in 0..channels {
                let base = (r * channels + c) * plane;
                for y in 0..height {
                    for x in 0..width {
                        if f(r, y, x, c) {
                            let p = y * width + x;
                            bits[base + p / 8] |= 1 << (p % 8);
                        }
                    }
                }
            }
        }
        Self::from_packed(height, width, channels, readout_rate_hz, frame_count, bits)
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

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn readout_rate_hz(&self) -> u32 {
        self.readout_rate_hz
    }

    pub fn plane_bytes(&self) -> usize {
        Self::plane_bytes_for(self.height, self.width)
    }

    pub fn packed(&self) -> &[u8] {
        &self.bits
    }

    /// All channel planes of one frame, back to back.
    pub fn frame_bytes(&self, frame: usize) -> &[u8] {
        let n = self.plane_bytes() * self.channels;
        &self.bits[frame * n..(frame + 1) * n]
    }

    pub fn plane(&self, frame: usize, channel: usize) -> &[u8] {
        let n = self.plane_bytes();
        let start = (frame * self.channels + channel) * n;
        &self.bits[start..start + n]
    }

    pub fn get(&self, frame: usize, y: usize, x: usize, channel: usize) -> bool {
        let p = y * self.width + x;
        self.plane(frame, channel)[p / 8] >> (p % 8) & 1 == 1
    }

    /// Total set bits per `(y, x, c)` sample, channel-interleaved.
    pub fn spike_counts(&self) -> Vec<u32> {
        let (h, w, ch) = (self.height, self.width, self.channels);
        let mut counts = vec![0u32; h * w * ch];
        for r in 0..self.frame_count {
            for c in 0..ch {
                let plane = self.plane(r, c);
                for p in 0..h * w {
                    counts[p * ch + c] += (plane[p / 8] >> (p % 8) & 1) as u32;
                }
            }
        }
        counts
    }

    /// Frames `start..end` as a standalone stream.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frame_count {
            return Err(Error::Shape(format!(
                "frame range {start}..{end} invalid for {} frames",
                self.frame_count
            )));
        }
        let n = self.plane_bytes() * self.channels;
        Ok(Self {
            frame_count: end - start,
            bits: self.bits[start * n..end * n].to_vec(),
            ..*self
        })
    }

}

/// What happens to the integrator after a spike fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// Subtract the threshold, keeping any excess charge.
    #[default]
    Subtract,
    /// Discard all charge.
    Zero,
}

/// Integrate-and-fire sensor parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Firing threshold in radiance-time quanta.
    pub threshold: f64,
    pub conversion_gain: f64,
    pub readout_rate_hz: u32,
    /// Total capture time in seconds.
    pub total_time: f64,
    /// Number of simulation micro-intervals over `total_time`.
    pub micro_intervals: usize,
    pub shot_noise: bool,
    pub rng_seed: u64,
    pub reset: ResetMode,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            conversion_gain: 1.0,
            readout_rate_hz: 20_000,
            total_time: 0.01,
            micro_intervals: 800,
            shot_noise: false,
            rng_seed: 0,
            reset: ResetMode::Subtract,
        }
    }
}

impl SensorConfig {
    /// Readout frame count R = f * T.
    pub fn readout_frames(&self) -> Result<usize> {
        let r = self.readout_rate_hz as f64 * self.total_time;
        let rounded = r.round();
        if rounded < 1.0 || (r - rounded).abs() > 1e-6 * rounded.max(1.0) {
            return Err(invalid(
                "total_time",
                format!("readout_rate * total_time = {r} is not a positive whole frame count"),
            ));
        }
        Ok(rounded as usize)
    }

    /// Micro-intervals per readout interval, K / R.
    pub fn intervals_per_readout(&self) -> Result<usize> {
        self.validate()?;
        Ok(self.micro_intervals / self.readout_frames()?)
    }

    pub fn interval_seconds(&self) -> f64 {
        self.total_time / self.micro_intervals as f64
    }
}

impl Validate for SensorConfig {
    fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(invalid("threshold", "threshold must be positive"));
        }
        if !(self.conversion_gain > 0.0 && self.conversion_gain.is_finite()) {
            return Err(invalid("conversion_gain", "conversion gain must be positive"));
        }
        if self.readout_rate_hz == 0 {
            return Err(invalid("readout_rate_hz", "readout rate must be positive"));
        }
        if !(self.total_time > 0.0 && self.total_time.is_finite()) {
            return Err(invalid("total_time", "total time must be positive"));
        }
        let r = self.readout_frames()?;
        if self.micro_intervals < r {
            return Err(invalid(
                "micro_intervals",
                format!("K = {} is below the readout frame count R = {r}", self.micro_intervals),
            ));
        }
        if !self.micro_intervals.is_multiple_of(r) {
            return Err(invalid(
                "micro_intervals",
                format!("K = {} is not divisible by R = {r}", self.micro_intervals),
            ));
        }
        Ok(())
    }
}

/// Sliding-window modulo encoder parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Spike frames per window.
    pub window: usize,
    /// Spike frames between consecutive window starts.
    pub stride: usize,
    pub gain: f64,
    pub bit_depth: u8,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            window: 25,
            stride: 20,
            gain: 15.0,
            bit_depth: 8,
        }
    }
}

impl Validate for EncoderConfig {
    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window > u16::MAX as usize {
            return Err(invalid("window", format!("must be in 1..=65535, got {}", self.window)));
        }
        if self.stride == 0 {
            return Err(invalid("stride", "stride must be at least 1"));
        }
        if self.stride > self.window {
            return Err(invalid(
                "stride",
                format!("stride exceeds window ({} > {})", self.stride, self.window),
            ));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(invalid("gain", "gain must be positive"));
        }
        check_bit_depth(self.bit_depth)
    }
}

/// Ideal-domain query over micro-interval integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    /// Micro-intervals per window (L).
    pub window_length: usize,
    /// Micro-intervals between window starts (V).
    pub stride: usize,
    /// Radiometric-to-digital conversion gain.
    pub conversion_gain: f64,
}

impl QuerySpec {
    /// Checks the spec against a clip with `micro_intervals` intervals.
    pub fn validate_for(&self, micro_intervals: usize) -> Result<()> {
        self.validate()?;
        if self.window_length > micro_intervals {
            return Err(invalid(
                "window_length",
                format!(
                    "window of {} exceeds the {micro_intervals} available micro-intervals",
                    self.window_length
                ),
            ));
        }
        Ok(())
    }
}

impl Validate for QuerySpec {
    fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(invalid("stride", "stride must be at least 1"));
        }
        if self.stride > self.window_length {
            return Err(invalid(
                "stride",
                format!("stride exceeds window ({} > {})", self.stride, self.window_length),
            ));
        }
        if !(self.conversion_gain > 0.0 && self.conversion_gain.is_finite()) {
            return Err(invalid("conversion_gain", "conversion gain must be positive"));
        }
        Ok(())
    }
}

/// Ordered modulo frames produced by one encoding run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuloSequence {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub bit_depth: u8,
    pub window: usize,
    pub stride: usize,
    pub gain: f32,
    /// Rate of the frames (or micro-intervals) the windows slide over.
    pub source_rate_hz: u32,
    pub frames: Vec<ModuloFrame>,
}

impl ModuloSequence {
    pub fn effective_rate_hz(&self) -> f64 {
        self.source_rate_hz as f64 / self.stride as f64
    }

    /// Number of complete windows over `source_frames` frames.
    pub fn expected_frames(source_frames: usize, window: usize, stride: usize) -> usize {
        if source_frames < window {
            0
        } else {
            (source_frames - window) / stride + 1
        }
    }
}

impl Validate for ModuloSequence {
    fn validate(&self) -> Result<()> {
        check_dims(self.height, self.width, self.channels)?;
        check_bit_depth(self.bit_depth)?;
        if self.window == 0 || self.stride == 0 || self.stride > self.window {
            return Err(invalid(
                "stride",
                format!("need 1 <= stride <= window, got {}/{}", self.stride, self.window),
            ));
        }
        if self.window > u16::MAX as usize {
            return Err(invalid("window", "does not fit in 16 bits"));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(invalid("gain", "gain must be positive"));
        }
        let dims = (self.height, self.width, self.channels);
        for (j, f) in self.frames.iter().enumerate() {
            if f.dims() != dims || f.bit_depth() != self.bit_depth {
                return Err(Error::Shape(format!("frame {j} does not match the sequence")));
            }
        }
        Ok(())
    }
}
