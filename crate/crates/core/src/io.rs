//! Little-endian binary containers.
//!
//! Every file starts with a 4-byte magic, a `u16` version and `u32` height,
//! width and channels:
//!
//! - `LHDR` ([`HdrImage`]): dtype tag (`0` = f32, `1` = u16), then samples.
//! - `SPKB` ([`SpikeStream`]): `u32` frame count, `u32` readout rate, then the
//!   packed planes exactly as [`SpikeStream::packed`] stores them.
//! - `MODQ` ([`ModuloSequence`]): `u8` N, `u16` window, `u16` stride, `f32`
//!   gain, `u32` source rate, `u32` frame count, then one byte per sample when
//!   N <= 8 and two otherwise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::types::{HdrImage, ModuloFrame, ModuloSequence, SpikeStream, Validate};

pub const VERSION: u16 = 1;
pub const HDR_MAGIC: [u8; 4] = *b"LHDR";
pub const SPIKE_MAGIC: [u8; 4] = *b"SPKB";
pub const MODULO_MAGIC: [u8; 4] = *b"MODQ";

const HEADER_LEN: usize = 4 + 2 + 12;

/// Sample type of an `LHDR` payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdrDtype {
    F32 = 0,
    U16 = 1,
}

impl HdrDtype {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Self::F32),
            1 => Ok(Self::U16),
            t => Err(Error::UnknownDtype(t)),
        }
    }
}

fn magic_str(m: &[u8]) -> String {
    String::from_utf8_lossy(m).into_owned()
}

fn u32_dim(v: usize, what: &'static str) -> Result<u32> {
    u32::try_from(v).map_err(|_| invalid(what, "does not fit in 32 bits"))
}

fn put_header(out: &mut Vec<u8>, magic: [u8; 4], dims: (usize, usize, usize)) -> Result<()> {
    out.extend_from_slice(&magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_dim(dims.0, "height")?.to_le_bytes());
    out.extend_from_slice(&u32_dim(dims.1, "width")?.to_le_bytes());
    out.extend_from_slice(&u32_dim(dims.2, "channels")?.to_le_bytes());
    Ok(())
}

/// Bounds-checked little-endian cursor.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                expected: self.pos.saturating_add(n),
                found: self.buf.len(),
            }),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// Takes exactly `n` bytes and requires that nothing follows them.
    fn rest(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.take(n)?;
        let left = self.buf.len() - self.pos;
        if left != 0 {
            return Err(Error::TrailingBytes(left));
        }
        Ok(s)
    }
}

fn read_header(buf: &[u8], magic: [u8; 4]) -> Result<(Cursor<'_>, usize, usize, usize)> {
    if buf.len() < 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: buf.len(),
        });
    }
    if buf[..4] != magic {
        return Err(Error::BadMagic {
            expected: magic_str(&magic),
            found: magic_str(&buf[..4]),
        });
    }
    let mut c = Cursor { buf, pos: 4 };
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let h = c.u32()? as usize;
    let w = c.u32()? as usize;
    let ch = c.u32()? as usize;
    Ok((c, h, w, ch))
}

fn payload_len(parts: &[usize]) -> Result<usize> {
    parts
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(p))
        .ok_or_else(|| Error::Shape("payload size overflows".into()))
}

pub fn encode_hdr(img: &HdrImage, dtype: HdrDtype) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 1 + img.data().len() * 4);
    put_header(&mut out, HDR_MAGIC, img.dims())?;
    out.push(dtype as u8);
    match dtype {
        HdrDtype::F32 => {
            for v in img.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        HdrDtype::U16 => {
            let counts = img.to_counts().ok_or_else(|| {
                Error::OutOfRange("u16 payload needs integer samples below 65536".into())
            })?;
            for v in counts {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_hdr(buf: &[u8]) -> Result<HdrImage> {
    let (mut c, h, w, ch) = read_header(buf, HDR_MAGIC)?;
    let dtype = HdrDtype::from_tag(c.u8()?)?;
    let n = payload_len(&[h, w, ch])?;
    let data = match dtype {
        HdrDtype::F32 => c
            .rest(payload_len(&[n, 4])?)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        HdrDtype::U16 => c
            .rest(payload_len(&[n, 2])?)?
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes(b.try_into().unwrap()) as f32)
            .collect(),
    };
    HdrImage::new(h, w, ch, data)
}

pub fn encode_spikes(stream: &SpikeStream) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 + stream.packed().len());
    put_header(
        &mut out,
        SPIKE_MAGIC,
        (stream.height(), stream.width(), stream.channels()),
    )?;
    out.extend_from_slice(&u32_dim(stream.frame_count(), "frame_count")?.to_le_bytes());
    out.extend_from_slice(&stream.readout_rate_hz().to_le_bytes());
    out.extend_from_slice(stream.packed());
    Ok(out)
}

pub fn decode_spikes(buf: &[u8]) -> Result<SpikeStream> {
    let (mut c, h, w, ch) = read_header(buf, SPIKE_MAGIC)?;
    let frames = c.u32()? as usize;
    let rate = c.u32()?;
    let plane = SpikeStream::plane_bytes_for(h, w);
    let bits = c.rest(payload_len(&[plane, ch, frames])?)?.to_vec();
    SpikeStream::from_packed(h, w, ch, rate, frames, bits)
}

pub fn encode_modulo(seq: &ModuloSequence) -> Result<Vec<u8>> {
    seq.validate()?;
    let wide = seq.bit_depth > 8;
    let samples = seq.height * seq.width * seq.channels;
    let mut out =
        Vec::with_capacity(HEADER_LEN + 17 + seq.frames.len() * samples * (1 + wide as usize));
    put_header(&mut out, MODULO_MAGIC, (seq.height, seq.width, seq.channels))?;
    out.push(seq.bit_depth);
    out.extend_from_slice(&(seq.window as u16).to_le_bytes());
    out.extend_from_slice(&(seq.stride as u16).to_le_bytes());
    out.extend_from_slice(&seq.gain.to_le_bytes());
    out.extend_from_slice(&seq.source_rate_hz.to_le_bytes());
    out.extend_from_slice(&u32_dim(seq.frames.len(), "frame_count")?.to_le_bytes());
    for f in &seq.frames {
        for &v in f.data() {
            if wide {
                out.extend_from_slice(&v.to_le_bytes());
            } else {
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

pub fn decode_modulo(buf: &[u8]) -> Result<ModuloSequence> {
    let (mut c, h, w, ch) = read_header(buf, MODULO_MAGIC)?;
    let bit_depth = c.u8()?;
    let window = c.u16()? as usize;
    let stride = c.u16()? as usize;
    let gain = c.f32()?;
    let source_rate_hz = c.u32()?;
    let count = c.u32()? as usize;
    let wide = bit_depth > 8;
    let samples = payload_len(&[h, w, ch])?;
    let bytes_per = 1 + wide as usize;
    let payload = c.rest(payload_len(&[samples, count, bytes_per])?)?;
    let frames = if samples == 0 {
        Vec::new()
    } else {
        payload
            .chunks_exact(samples * bytes_per)
            .map(|fb| {
                let data = if wide {
                    fb.chunks_exact(2)
                        .map(|b| u16::from_le_bytes([b[0], b[1]]))
                        .collect()
                } else {
                    fb.iter().map(|&b| b as u16).collect()
                };
                ModuloFrame::new(h, w, ch, bit_depth, data)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let seq = ModuloSequence {
        height: h,
        width: w,
        channels: ch,
        bit_depth,
        window,
        stride,
        gain,
        source_rate_hz,
        frames,
    };
    seq.validate()?;
    Ok(seq)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    Ok(buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_hdr(path: impl AsRef<Path>) -> Result<HdrImage> {
    decode_hdr(&read_file(path.as_ref())?)
}

pub fn write_hdr(path: impl AsRef<Path>, img: &HdrImage, dtype: HdrDtype) -> Result<()> {
    write_file(path.as_ref(), &encode_hdr(img, dtype)?)
}

pub fn read_spikes(path: impl AsRef<Path>) -> Result<SpikeStream> {
    decode_spikes(&read_file(path.as_ref())?)
}

pub fn write_spikes(path: impl AsRef<Path>, stream: &SpikeStream) -> Result<()> {
    write_file(path.as_ref(), &encode_spikes(stream)?)
}

pub fn read_modulo(path: impl AsRef<Path>) -> Result<ModuloSequence> {
    decode_modulo(&read_file(path.as_ref())?)
}

pub fn write_modulo(path: impl AsRef<Path>, seq: &ModuloSequence) -> Result<()> {
    write_file(path.as_ref(), &encode_modulo(seq)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_seq(bits: u8, frames: usize) -> ModuloSequence {
        let m = 1u64 << bits;
        ModuloSequence {
            height: 3,
            width: 4,
            channels: 3,
            bit_depth: bits,
            window: 25,
            stride: 20,
            gain: 15.0,
            source_rate_hz: 20_000,
            frames: (0..frames)
                .map(|j| {
                    let counts: Vec<u64> = (0..36).map(|i| (i * 97 + j as u64 * 13) % m).collect();
                    ModuloFrame::wrap_counts(3, 4, 3, bits, &counts).unwrap()
                })
                .collect(),
        }
    }

    #[test]
    fn hdr_round_trips() {
        let img = HdrImage::new(2, 3, 1, vec![0.0, 1.5, 1e-30, 3.25e7, 7.0, 0.1]).unwrap();
        let back = decode_hdr(&encode_hdr(&img, HdrDtype::F32).unwrap()).unwrap();
        assert_eq!(
            back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            img.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let counts = HdrImage::new(1, 3, 1, vec![0.0, 4095.0, 17.0]).unwrap();
        let bytes = encode_hdr(&counts, HdrDtype::U16).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 1 + 6);
        assert_eq!(decode_hdr(&bytes).unwrap(), counts);
        assert!(encode_hdr(&img, HdrDtype::U16).is_err());
    }

    #[test]
    fn hdr_errors() {
        let img = HdrImage::filled(2, 2, 3, 1.0).unwrap();
        let bytes = encode_hdr(&img, HdrDtype::F32).unwrap();
        assert!(matches!(
            decode_hdr(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_hdr(&extra), Err(Error::TrailingBytes(1))));
        let mut bad = bytes.clone();
        bad[HEADER_LEN] = 7;
        assert!(matches!(decode_hdr(&bad), Err(Error::UnknownDtype(7))));
        let mut ver = bytes;
        ver[4] = 2;
        assert!(matches!(decode_hdr(&ver), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn all_ones_9x9_plane_is_11_bytes() {
        let s = SpikeStream::from_fn(9, 9, 1, 20_000, 2, |_, _, _, _| true).unwrap();
        let bytes = encode_spikes(&s).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8 + 2 * 11);
        let plane = &bytes[HEADER_LEN + 8..HEADER_LEN + 8 + 11];
        assert_eq!(&plane[..10], &[0xFF; 10]);
        assert_eq!(plane[10], 0x01);
        assert_eq!(decode_spikes(&bytes).unwrap(), s);
    }

    #[test]
    fn spike_frame_count_mismatch() {
        let s = SpikeStream::from_fn(4, 4, 1, 1000, 3, |r, y, x, _| (r + y + x) % 2 == 0).unwrap();
        let mut bytes = encode_spikes(&s).unwrap();
        bytes[HEADER_LEN] = 4;
        assert!(matches!(decode_spikes(&bytes), Err(Error::Truncated { .. })));
        bytes[HEADER_LEN] = 2;
        assert!(matches!(decode_spikes(&bytes), Err(Error::TrailingBytes(2))));
    }

    #[test]
    fn modulo_payload_sizes() {
        let seq = sample_seq(8, 2);
        let bytes = encode_modulo(&seq).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 17 + 2 * 3 * 4 * 3);
        assert_eq!(decode_modulo(&bytes).unwrap(), seq);
        let wide = sample_seq(12, 3);
        let bytes = encode_modulo(&wide).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 17 + 3 * 36 * 2);
        assert_eq!(decode_modulo(&bytes).unwrap(), wide);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let bytes = encode_modulo(&sample_seq(8, 1)).unwrap();
        match decode_spikes(&bytes) {
            Err(Error::BadMagic { expected, found }) => {
                assert_eq!(expected, "SPKB");
                assert_eq!(found, "MODQ");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_hdr(b"LH"), Err(Error::Truncated { .. })));
    }

    #[test]
    fn modulo_sample_out_of_range() {
        let mut bytes = encode_modulo(&sample_seq(4, 1)).unwrap();
        bytes[HEADER_LEN + 17] = 16;
        assert!(matches!(decode_modulo(&bytes), Err(Error::OutOfRange(_))));
    }
}
