//! Modulo queries over integrated irradiance and over spike streams.
//!
//! `query_ideal` evaluates the exposure-decoupled measurement directly on
//! micro-interval integrals. `encode_stream` and [`StreamEncoder`] do the
//! same on binary spike frames: per pixel they keep a running spike count
//! over the last `window` frames, amplify it by `gain`, floor it and wrap it
//! to `bit_depth` bits. A frame is emitted every `stride` spike frames once
//! the first window is full; partial trailing windows are never emitted.

use std::ops::RangeInclusive;

use crate::error::{invalid, Error, Result};
use crate::par::Exec;
use crate::spike_sim::IrradianceClip;
use crate::types::{EncoderConfig, ModuloFrame, ModuloSequence, QuerySpec, SensorConfig, SpikeStream, Validate};

/// Pixels per encoder tile; a multiple of 8 so a tile owns whole plane bytes.
const TILE_PIXELS: usize = 4096;

/// Pre-wrap digital values `floor(h * sum U_k)` for every window, each channel-interleaved.
pub fn query_ideal_counts(clip: &IrradianceClip, spec: &QuerySpec) -> Result<Vec<Vec<u64>>> {
    query_ideal_counts_with(clip, spec, Exec::default())
}

pub fn query_ideal_counts_with(clip: &IrradianceClip, spec: &QuerySpec, exec: Exec) -> Result<Vec<Vec<u64>>> {
    let k = clip.micro_intervals();
    spec.validate_for(k)?;
    let n = ModuloSequence::expected_frames(k, spec.window_length, spec.stride);
    Ok(exec.map_range(n, |i| {
        clip.window_sum(i * spec.stride, spec.window_length)
            .into_iter()
            .map(|s| (spec.conversion_gain * s).floor() as u64)
            .collect()
    }))
}

/// Wrapped ideal measurements; window and stride are counted in micro-intervals.
pub fn query_ideal(clip: &IrradianceClip, spec: &QuerySpec, bit_depth: u8) -> Result<ModuloSequence> {
    let counts = query_ideal_counts(clip, spec)?;
    let (h, w, c) = (clip.height(), clip.width(), clip.channels());
    let frames = counts
        .iter()
        .map(|v| ModuloFrame::wrap_counts(h, w, c, bit_depth, v))
        .collect::<Result<Vec<_>>>()?;
    let k = clip.micro_intervals();
    Ok(ModuloSequence {
        height: h,
        width: w,
        channels: c,
        bit_depth,
        window: spec.window_length,
        stride: spec.stride,
        gain: spec.conversion_gain as f32,
        source_rate_hz: (k as f64 / clip.total_time()).round() as u32,
        frames,
    })
}

/// Conventional exposure-coupled capture: back-to-back windows of `window_length` intervals.
pub fn query_coupled(
    clip: &IrradianceClip,
    window_length: usize,
    conversion_gain: f64,
    bit_depth: u8,
) -> Result<ModuloSequence> {
    let spec = QuerySpec {
        window_length,
        stride: window_length,
        conversion_gain,
    };
    query_ideal(clip, &spec, bit_depth)
}

/// The ideal query matching an encoder run on a simulated sensor: windows
/// and strides scaled by K/R, and conversion gain `g * q / eta`.
pub fn aligned_query_spec(sensor: &SensorConfig, enc: &EncoderConfig) -> Result<QuerySpec> {
    let per_readout = sensor.intervals_per_readout()?;
    enc.validate()?;
    Ok(QuerySpec {
        window_length: enc.window * per_readout,
        stride: enc.stride * per_readout,
        conversion_gain: enc.gain * sensor.conversion_gain / sensor.threshold,
    })
}

/// 1-based readout frames whose intervals overlap the 1-based micro-interval
/// window `b .. b + len - 1`: all r with `b - 1 < r K / R <= b + len - 1`.
pub fn readout_index_set(b: usize, len: usize, k: usize, r: usize) -> RangeInclusive<usize> {
    // r K / R > b - 1  <=>  r > (b - 1) R / K
    let lo = ((b - 1) * r) / k + 1;
    let hi = ((b + len - 1) * r) / k;
    lo..=hi
}

/// A run of packed spike frames starting at a known stream position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeChunk {
    /// 0-based index of the first frame in the stream.
    pub first_frame: u64,
    /// Whole frames in the [`SpikeStream`] packed layout; may be empty.
    pub data: Vec<u8>,
}

impl SpikeChunk {
    /// Splits `stream` at the given frame offsets (sorted, within `0..=frame_count`).
    pub fn split(stream: &SpikeStream, cuts: &[usize]) -> Vec<SpikeChunk> {
        let frame_bytes = stream.plane_bytes() * stream.channels();
        let mut bounds = vec![0];
        bounds.extend(cuts.iter().copied().filter(|&c| c <= stream.frame_count()));
        bounds.push(stream.frame_count());
        bounds
            .windows(2)
            .filter(|b| b[0] <= b[1])
            .map(|b| SpikeChunk {
                first_frame: b[0] as u64,
                data: stream.packed()[b[0] * frame_bytes..b[1] * frame_bytes].to_vec(),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Tile {
    channel: usize,
    p0: usize,
    p1: usize,
    counts: Vec<u32>,
    /// Values for frames emitted during the current push.
    out: Vec<Vec<u16>>,
}

/// Incremental sliding-window encoder for spike frames that arrive in order.
#[derive(Debug, Clone)]
pub struct StreamEncoder {
    cfg: EncoderConfig,
    height: usize,
    width: usize,
    channels: usize,
    readout_rate_hz: u32,
    plane_bytes: usize,
    exec: Exec,
    /// `lut[n] = floor(gain * n) mod 2^N`.
    lut: Vec<u16>,
    tiles: Vec<Tile>,
    /// The last `window` frames seen, oldest first.
    history: Vec<u8>,
    next_frame: u64,
    emitted: Vec<ModuloFrame>,
}

impl StreamEncoder {
    pub fn new(
        cfg: EncoderConfig,
        height: usize,
        width: usize,
        channels: usize,
        readout_rate_hz: u32,
    ) -> Result<Self> {
        Self::with_exec(cfg, height, width, channels, readout_rate_hz, Exec::default())
    }

    pub fn with_exec(
        cfg: EncoderConfig,
        height: usize,
        width: usize,
        channels: usize,
        readout_rate_hz: u32,
        exec: Exec,
    ) -> Result<Self> {
        cfg.validate()?;
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Shape(format!("bad stream shape {height}x{width}x{channels}")));
        }
        if readout_rate_hz == 0 {
            return Err(invalid("readout_rate", "must be positive"));
        }
        let mask = (1u64 << cfg.bit_depth) - 1;
        let lut = (0..=cfg.window)
            .map(|n| ((cfg.gain * n as f64).floor() as u64 & mask) as u16)
            .collect();
        let pixels = height * width;
        let mut tiles = Vec::new();
        for channel in 0..channels {
            for p0 in (0..pixels).step_by(TILE_PIXELS) {
                let p1 = (p0 + TILE_PIXELS).min(pixels);
                tiles.push(Tile {
                    channel,
                    p0,
                    p1,
                    counts: vec![0; p1 - p0],
                    out: Vec::new(),
                });
            }
        }
        Ok(Self {
            cfg,
            height,
            width,
            channels,
            readout_rate_hz,
            plane_bytes: SpikeStream::plane_bytes_for(height, width),
            exec,
            lut,
            tiles,
            history: Vec::new(),
            next_frame: 0,
            emitted: Vec::new(),
        })
    }

    pub fn frame_bytes(&self) -> usize {
        self.plane_bytes * self.channels
    }

    /// Spike frames consumed so far.
    pub fn frames_seen(&self) -> u64 {
        self.next_frame
    }

    pub fn emitted(&self) -> &[ModuloFrame] {
        &self.emitted
    }

    /// Feeds a whole stream as the next chunk.
    pub fn push_stream(&mut self, first_frame: u64, stream: &SpikeStream) -> Result<&[ModuloFrame]> {
        if (stream.height(), stream.width(), stream.channels()) != (self.height, self.width, self.channels) {
            return Err(Error::Shape("stream shape does not match encoder".into()));
        }
        if stream.readout_rate_hz() != self.readout_rate_hz {
            return Err(invalid("readout_rate", "stream rate does not match encoder"));
        }
        self.push(first_frame, stream.packed())
    }

    pub fn push_chunk(&mut self, chunk: &SpikeChunk) -> Result<&[ModuloFrame]> {
        self.push(chunk.first_frame, &chunk.data)
    }

    /// Consumes packed frames starting at stream frame `first_frame` and
    /// returns the modulo frames completed by them.
    pub fn push(&mut self, first_frame: u64, data: &[u8]) -> Result<&[ModuloFrame]> {
        if first_frame != self.next_frame {
            return Err(Error::OutOfOrderChunk {
                expected: self.next_frame,
                got: first_frame,
            });
        }
        let fb = self.frame_bytes();
        if !data.len().is_multiple_of(fb) {
            return Err(Error::Shape(format!(
                "chunk of {} bytes is not a whole number of {fb}-byte frames",
                data.len()
            )));
        }
        let tail = (self.height * self.width) % 8;
        if tail != 0 {
            let pad_mask = !((1u8 << tail) - 1);
            let pb = self.plane_bytes;
            if data.chunks(pb).any(|plane| plane[pb - 1] & pad_mask != 0) {
                return Err(Error::OutOfRange("nonzero padding bits".into()));
            }
        }
        let new_frames = data.len() / fb;
        let already = self.emitted.len();
        if new_frames == 0 {
            return Ok(&self.emitted[already..]);
        }

        let (w, p) = (self.cfg.window as u64, self.cfg.stride as u64);
        let start = self.next_frame;
        let hist_frames = (self.history.len() / fb) as u64;
        let hist_start = start - hist_frames;
        let history = &self.history;
        let frame_at = |r: u64| -> &[u8] {
            if r >= start {
                let i = (r - start) as usize;
                &data[i * fb..(i + 1) * fb]
            } else {
                let i = (r - hist_start) as usize;
                &history[i * fb..(i + 1) * fb]
            }
        };
        let emits = |r: u64| r + 1 >= w && (r + 1 - w).is_multiple_of(p);
        let plane_bytes = self.plane_bytes;
        let lut = &self.lut;

        self.exec.for_each_chunk_mut(&mut self.tiles, 1, |_, tiles| {
            let tile = &mut tiles[0];
            tile.out.clear();
            let (b0, b1) = (tile.p0 / 8, tile.p1.div_ceil(8));
            let plane_off = tile.channel * plane_bytes;
            for r in start..start + new_frames as u64 {
                let enter = &frame_at(r)[plane_off + b0..plane_off + b1];
                let leave = (r >= w).then(|| &frame_at(r - w)[plane_off + b0..plane_off + b1]);
                for (i, &e) in enter.iter().enumerate() {
                    let l = leave.map_or(0, |s| s[i]);
                    let (mut add, mut sub) = (e & !l, l & !e);
                    while add != 0 {
                        tile.counts[i * 8 + add.trailing_zeros() as usize] += 1;
                        add &= add - 1;
                    }
                    while sub != 0 {
                        tile.counts[i * 8 + sub.trailing_zeros() as usize] -= 1;
                        sub &= sub - 1;
                    }
                }
                if emits(r) {
                    tile.out.push(tile.counts.iter().map(|&n| lut[n as usize]).collect());
                }
            }
        });

        let emitted_now = self.tiles.first().map_or(0, |t| t.out.len());
        let (pixels, ch) = (self.height * self.width, self.channels);
        for e in 0..emitted_now {
            let mut data = vec![0u16; pixels * ch];
            for t in &self.tiles {
                for (i, &v) in t.out[e].iter().enumerate() {
                    data[(t.p0 + i) * ch + t.channel] = v;
                }
            }
            self.emitted.push(ModuloFrame::new(
                self.height,
                self.width,
                ch,
                self.cfg.bit_depth,
                data,
            )?);
        }

        // keep only the frames a later window can still drop
        let total = (self.history.len() + data.len()) / fb;
        let keep = total.min(self.cfg.window);
        let mut joined = std::mem::take(&mut self.history);
        joined.extend_from_slice(data);
        self.history = joined.split_off((total - keep) * fb);
        self.next_frame += new_frames as u64;
        Ok(&self.emitted[already..])
    }

    pub fn finish(self) -> ModuloSequence {
        ModuloSequence {
            height: self.height,
            width: self.width,
            channels: self.channels,
            bit_depth: self.cfg.bit_depth,
            window: self.cfg.window,
            stride: self.cfg.stride,
            gain: self.cfg.gain as f32,
            source_rate_hz: self.readout_rate_hz,
            frames: self.emitted,
        }
    }
}

pub fn encode_stream(stream: &SpikeStream, cfg: &EncoderConfig) -> Result<ModuloSequence> {
    encode_stream_with(stream, cfg, Exec::default())
}

pub fn encode_stream_with(stream: &SpikeStream, cfg: &EncoderConfig, exec: Exec) -> Result<ModuloSequence> {
    cfg.validate()?;
    if stream.frame_count() < cfg.window {
        return Err(Error::StreamTooShort {
            frames: stream.frame_count(),
            window: cfg.window,
        });
    }
    let mut enc = StreamEncoder::with_exec(
        *cfg,
        stream.height(),
        stream.width(),
        stream.channels(),
        stream.readout_rate_hz(),
        exec,
    )?;
    enc.push_stream(0, stream)?;
    Ok(enc.finish())
}

/// Encodes a stream delivered as ordered chunks.
pub fn encode_streaming_chunked<I>(
    chunks: I,
    cfg: &EncoderConfig,
    height: usize,
    width: usize,
    channels: usize,
    readout_rate_hz: u32,
) -> Result<ModuloSequence>
where
    I: IntoIterator<Item = SpikeChunk>,
{
    let mut enc = StreamEncoder::new(*cfg, height, width, channels, readout_rate_hz)?;
    for chunk in chunks {
        enc.push_chunk(&chunk)?;
    }
    Ok(enc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Recomputes every window sum straight from the unpacked bits.
    fn naive_encode(s: &SpikeStream, cfg: &EncoderConfig) -> Vec<Vec<u16>> {
        let n = ModuloSequence::expected_frames(s.frame_count(), cfg.window, cfg.stride);
        let m = 1u64 << cfg.bit_depth;
        (0..n)
            .map(|j| {
                let a = j * cfg.stride;
                let mut out = Vec::new();
                for y in 0..s.height() {
                    for x in 0..s.width() {
                        for c in 0..s.channels() {
                            let cnt = (a..a + cfg.window).filter(|&r| s.get(r, y, x, c)).count();
                            out.push(((cfg.gain * cnt as f64).floor() as u64 % m) as u16);
                        }
                    }
                }
                out
            })
            .collect()
    }

    fn lcg_stream(h: usize, w: usize, c: usize, frames: usize, seed: u64) -> SpikeStream {
        let mut state = seed;
        SpikeStream::from_fn(h, w, c, 20_000, frames, |_, _, _, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33).is_multiple_of(3)
        })
        .unwrap()
    }

    #[test]
    fn frame_count_and_starts() {
        let clip = IrradianceClip::new(1, 1, 1, 1.0, vec![vec![1.0]; 100]).unwrap();
        let spec = QuerySpec {
            window_length: 25,
            stride: 20,
            conversion_gain: 1.0,
        };
        let counts = query_ideal_counts(&clip, &spec).unwrap();
        assert_eq!(counts.len(), 4);
        // windows starting at b = 1, 21, 41, 61 each sum 25 unit intervals
        assert!(counts.iter().all(|c| c == &vec![25]));
        let seq = query_ideal(&clip, &spec, 8).unwrap();
        assert_eq!(seq.source_rate_hz, 100);
        assert_eq!(seq.effective_rate_hz(), 5.0);
    }

    #[test]
    fn constant_clip_wraps_to_44() {
        // 25 intervals of 12 counts = 300 per window
        let clip = IrradianceClip::new(2, 2, 1, 1.0, vec![vec![12.0; 4]; 100]).unwrap();
        let spec = QuerySpec {
            window_length: 25,
            stride: 20,
            conversion_gain: 1.0,
        };
        let seq = query_ideal(&clip, &spec, 8).unwrap();
        for f in &seq.frames {
            assert!(f.data().iter().all(|&v| v == 44));
        }
        assert!(query_ideal(&clip, &QuerySpec { window_length: 101, ..spec }, 8).is_err());
    }

    #[test]
    fn coupled_mode_matches_direct_evaluation() {
        let k = 60;
        let intervals: Vec<Vec<f64>> = (0..k).map(|i| vec![(i % 7) as f64 * 3.3, 50.0 + i as f64]).collect();
        let clip = IrradianceClip::new(1, 2, 1, 1.0, intervals.clone()).unwrap();
        let seq = query_coupled(&clip, 12, 1.7, 8).unwrap();
        assert_eq!(seq.frames.len(), 5);
        for (i, f) in seq.frames.iter().enumerate() {
            for (p, &got) in f.data().iter().enumerate() {
                let integral: f64 = intervals[i * 12..(i + 1) * 12].iter().map(|u| u[p]).sum();
                let expected = ((1.7 * integral).floor() as u64 % 256) as u16;
                assert_eq!(got, expected);
            }
        }
    }

    #[test]
    fn encoder_examples() {
        let cfg = EncoderConfig::default();
        let zero = SpikeStream::from_fn(2, 2, 3, 20_000, 30, |_, _, _, _| false).unwrap();
        let seq = encode_stream(&zero, &cfg).unwrap();
        assert_eq!(seq.frames.len(), 1);
        assert!(seq.frames[0].data().iter().all(|&v| v == 0));

        // pixel 0 has 17 spikes in the first window, pixel 1 has 18
        let s = SpikeStream::from_fn(1, 2, 1, 20_000, 25, |r, _, x, _| r < 17 + x).unwrap();
        let seq = encode_stream(&s, &cfg).unwrap();
        assert_eq!(seq.frames[0].data(), &[255, 14]);

        let short = SpikeStream::from_fn(1, 1, 1, 20_000, 24, |_, _, _, _| true).unwrap();
        assert!(matches!(
            encode_stream(&short, &cfg),
            Err(Error::StreamTooShort { frames: 24, window: 25 })
        ));
    }

    #[test]
    fn matches_naive_recount() {
        let cfg = EncoderConfig {
            window: 7,
            stride: 3,
            gain: 2.5,
            bit_depth: 4,
        };
        let s = lcg_stream(5, 9, 3, 40, 1);
        let seq = encode_stream(&s, &cfg).unwrap();
        let naive = naive_encode(&s, &cfg);
        assert_eq!(seq.frames.len(), naive.len());
        for (f, n) in seq.frames.iter().zip(&naive) {
            assert_eq!(f.data(), n.as_slice());
        }
    }

    #[test]
    fn multi_tile_planes() {
        let cfg = EncoderConfig {
            window: 4,
            stride: 2,
            gain: 1.0,
            bit_depth: 8,
        };
        let s = lcg_stream(3, 2001, 1, 9, 5);
        let seq = encode_stream_with(&s, &cfg, Exec::Parallel).unwrap();
        let seq2 = encode_stream_with(&s, &cfg, Exec::Sequential).unwrap();
        assert_eq!(seq, seq2);
        for (f, n) in seq.frames.iter().zip(naive_encode(&s, &cfg)) {
            assert_eq!(f.data(), n.as_slice());
        }
    }

    #[test]
    fn chunk_boundary_inside_window() {
        let cfg = EncoderConfig::default();
        let s = lcg_stream(4, 4, 3, 90, 9);
        let whole = encode_stream(&s, &cfg).unwrap();
        // a_2 = 20 (0-based), cut one frame into that window
        for cuts in [vec![21], vec![45], vec![1, 2, 3, 44, 89], vec![90]] {
            let chunks = SpikeChunk::split(&s, &cuts);
            let got = encode_streaming_chunked(chunks, &cfg, 4, 4, 3, 20_000).unwrap();
            assert_eq!(got, whole, "cuts {cuts:?}");
        }
    }

    #[test]
    fn empty_and_out_of_order_chunks() {
        let cfg = EncoderConfig::default();
        let s = lcg_stream(2, 3, 1, 45, 2);
        let mut enc = StreamEncoder::new(cfg, 2, 3, 1, 20_000).unwrap();
        assert_eq!(enc.push_stream(0, &s).unwrap().len(), 2);
        assert!(enc.push(45, &[]).unwrap().is_empty());
        assert!(matches!(
            enc.push(44, &[0]),
            Err(Error::OutOfOrderChunk { expected: 45, got: 44 })
        ));
        assert!(matches!(enc.push(45, &[0x40]), Err(Error::OutOfRange(_))));
        let other = lcg_stream(2, 4, 1, 5, 1);
        assert!(matches!(enc.push_stream(45, &other), Err(Error::Shape(_))));
        assert_eq!(enc.finish(), encode_stream(&s, &cfg).unwrap());
    }

    #[test]
    fn index_set_alignment() {
        // K = 400, R = 100: four micro-intervals per readout
        let (k, r) = (400, 100);
        for i in 1..=10 {
            let b = (i - 1) * 80 + 1;
            let set = readout_index_set(b, 100, k, r);
            assert_eq!(set.clone().count() * k, 100 * r, "window {i}");
            assert_eq!(*set.start(), (i - 1) * 20 + 1);
        }
    }

    #[test]
    fn aligned_spec_scaling() {
        let sensor = SensorConfig {
            threshold: 2.0,
            conversion_gain: 0.5,
            ..Default::default()
        };
        let spec = aligned_query_spec(&sensor, &EncoderConfig::default()).unwrap();
        assert_eq!(spec.window_length, 100);
        assert_eq!(spec.stride, 80);
        assert_eq!(spec.conversion_gain, 15.0 * 0.5 / 2.0);
    }
}
