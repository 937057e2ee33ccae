//! Reconstruction quality metrics and output bandwidth accounting.

use crate::error::{invalid, Error, Result};
use crate::types::HdrImage;
use crate::unwrap::mu_law;

/// Returned by the PSNR functions when the two images are identical.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_dims(a: &HdrImage, b: &HdrImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &HdrImage, b: &HdrImage) -> Result<f64> {
    same_dims(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(peak^2 / MSE)`, or [`PSNR_IDENTICAL`] when the MSE is zero.
pub fn psnr_linear(a: &HdrImage, b: &HdrImage, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(invalid("peak", "must be positive"));
    }
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

/// PSNR after mu-law tone mapping both images with the same `peak`.
pub fn psnr_mu(a: &HdrImage, b: &HdrImage, mu: f64, peak: f64) -> Result<f64> {
    same_dims(a, b)?;
    psnr_linear(&mu_law(a, mu, peak)?, &mu_law(b, mu, peak)?, 1.0)
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over every window fully inside the plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|k| g[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11x11 Gaussian windows and channels.
pub fn ssim_linear(a: &HdrImage, b: &HdrImage, peak: f64) -> Result<f64> {
    same_dims(a, b)?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(invalid("peak", "must be positive"));
    }
    let (h, w, ch) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..ch {
        let pa: Vec<f64> = a.channel_plane(c).into_iter().collect();
        let pb: Vec<f64> = b.channel_plane(c).into_iter().collect();
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, h, w, &g);
        let mu_b = filter_valid(&pb, h, w, &g);
        let e_aa = filter_valid(&prod(&pa, &pa), h, w, &g);
        let e_bb = filter_valid(&prod(&pb, &pb), h, w, &g);
        let e_ab = filter_valid(&prod(&pa, &pb), h, w, &g);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Raw spike-stream versus modulo-output data rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthReport {
    /// Full-resolution single-channel spike stream, bits per second.
    pub raw_bps: u64,
    /// Bits in one encoded modulo frame.
    pub modulo_bits_per_frame: u64,
    pub readout_hz: u64,
    pub stride: u64,
    /// Encoded output, bits per second.
    pub modulo_bps: f64,
    pub reduction_ratio: f64,
}

impl BandwidthReport {
    /// Encoded rate as an integer, when `readout_hz * bits_per_frame` divides evenly by the stride.
    pub fn modulo_bps_exact(&self) -> Option<u64> {
        let num = self.modulo_bits_per_frame as u128 * self.readout_hz as u128;
        num.is_multiple_of(self.stride as u128).then(|| (num / self.stride as u128) as u64)
    }

    pub fn raw_gbps(&self) -> f64 {
        self.raw_bps as f64 / 1e9
    }

    pub fn modulo_gbps(&self) -> f64 {
        self.modulo_bps / 1e9
    }

    pub fn output_frame_rate(&self) -> f64 {
        self.readout_hz as f64 / self.stride as f64
    }
}

/// Bandwidth of a `height x width` sensor read out at `readout_hz`.
///
/// The raw baseline is one bit per pixel per readout (a single-channel
/// Bayer-style stream). With `mosaic` the encoder sees `(h/2) x (w/2) x 3`
/// samples; otherwise `h x w x channels`.
pub fn bandwidth_report(
    height: u64,
    width: u64,
    channels: u64,
    readout_hz: u64,
    bit_depth: u64,
    stride: u64,
    mosaic: bool,
) -> Result<BandwidthReport> {
    if height == 0 || width == 0 || readout_hz == 0 || bit_depth == 0 || stride == 0 {
        return Err(invalid("bandwidth", "all parameters must be positive"));
    }
    if mosaic && (!height.is_multiple_of(2) || !width.is_multiple_of(2)) {
        return Err(invalid("bandwidth", "mosaic needs even height and width"));
    }
    if !mosaic && channels == 0 {
        return Err(invalid("channels", "must be positive"));
    }
    let raw_bps = height * width * readout_hz;
    let samples = if mosaic {
        (height / 2) * (width / 2) * 3
    } else {
        height * width * channels
    };
    let modulo_bits_per_frame = samples * bit_depth;
    let num = modulo_bits_per_frame as u128 * readout_hz as u128;
    let modulo_bps = num as f64 / stride as f64;
    // 1 - modulo/raw with a single rounding
    let raw_num = raw_bps as u128 * stride as u128;
    let reduction_ratio = (raw_num as i128 - num as i128) as f64 / raw_num as f64;
    Ok(BandwidthReport {
        raw_bps,
        modulo_bits_per_frame,
        readout_hz,
        stride,
        modulo_bps,
        reduction_ratio,
    })
}
