//! Iteration-free classical unwrapping of a single modulo frame.
//!
//! Per channel: wrap the forward differences of the observation with LAR,
//! integrate them with the Neumann Poisson solver, and snap the real-valued
//! estimate onto the integers congruent to the observation. The snapped
//! output is congruent to the input by construction; whether it is the true
//! scene depends on the scene's neighbouring differences staying inside half
//! a wrap period.

use crate::error::{Error, Result};
use crate::lar::{
    divergence, gradient, gradient_l1, lar, lar_gradient, lar_raster, laplacian, PoissonSolver, Raster,
};
use crate::par::Exec;
use crate::types::{HdrImage, ModuloFrame};

/// Every residual must fall below this for a result to count as converged.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;

/// Zeroth-, first- and second-order consistency with the observation, as
/// mean absolute values over all samples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub l_mod: f64,
    pub l_grad: f64,
    pub l_lap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.l_mod.max(self.l_grad).max(self.l_lap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnwrapResult {
    pub hdr: HdrImage,
    /// Wrap count per sample, channel-interleaved; `hdr = frame + k * 2^N`.
    pub rollover_map: Vec<u32>,
    pub residuals: Residuals,
    /// Mean `|grad(hdr) - lar(grad(frame))|`. Zero iff the reconstruction's
    /// own differences are the LAR differences, i.e. it satisfies the
    /// half-period condition the method assumes. The congruence residuals
    /// above cannot see this, since they are blind to multiples of 2^N.
    pub gradient_mismatch: f64,
    pub converged: bool,
}

/// Mean over samples of each consistency term between `hdr` and `frame`.
pub fn consistency_residuals(hdr: &HdrImage, frame: &ModuloFrame) -> Result<Residuals> {
    if hdr.dims() != frame.dims() {
        return Err(Error::Shape(format!(
            "image is {:?} but frame is {:?}",
            hdr.dims(),
            frame.dims()
        )));
    }
    let m = frame.modulus() as f64;
    let (h, w, ch) = frame.dims();
    let n = (h * w * ch) as f64;
    let mut acc = Residuals::default();
    for c in 0..ch {
        let a = hdr.channel_plane(c);
        let b = frame.channel_plane(c);
        acc.l_mod += (&a - &b).iter().map(|&d| lar(d, m).abs()).sum::<f64>();
        let ga = lar_gradient(&gradient(&a), m);
        let gb = lar_gradient(&gradient(&b), m);
        acc.l_grad += gradient_l1(&ga, &gb);
        let la = lar_raster(&laplacian(&a), m);
        let lb = lar_raster(&laplacian(&b), m);
        acc.l_lap += (&la - &lb).iter().map(|d| d.abs()).sum::<f64>();
    }
    Ok(Residuals {
        l_mod: acc.l_mod / n,
        l_grad: acc.l_grad / n,
        l_lap: acc.l_lap / n,
    })
}

/// Integer offset in `0..m` minimising `sum |lar(d + c)|`; ties go to the smaller offset.
///
/// Sorting the residues of `d` and keeping prefix sums makes every candidate
/// an O(log n) evaluation, so the exhaustive search stays cheap at 16 bits.
pub fn best_offset(d: &[f64], m: u32) -> u32 {
    let mf = m as f64;
    let mut r: Vec<f64> = d
        .iter()
        .map(|&v| {
            let x = v.rem_euclid(mf);
            if x >= mf { x - mf } else { x }
        })
        .collect();
    r.sort_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(r.len() + 1);
    prefix.push(0.0);
    for v in &r {
        prefix.push(prefix.last().unwrap() + v);
    }
    let below = |t: f64| r.partition_point(|&v| v < t);
    let sum = |a: usize, b: usize| prefix[b] - prefix[a];

    let mut best = (f64::INFINITY, 0);
    for c in 0..m {
        let cf = c as f64;
        // y = r + c in [0, 2m): |lar(y)| is y, |y - m| or 2m - y by band
        let i1 = below(0.5 * mf - cf);
        let i2 = below(mf - cf);
        let i3 = below(1.5 * mf - cf);
        let n = r.len();
        let low = sum(0, i1) + i1 as f64 * cf;
        let mid_below = (i2 - i1) as f64 * (mf - cf) - sum(i1, i2);
        let mid_above = sum(i2, i3) + (i3 - i2) as f64 * (cf - mf);
        let high = (n - i3) as f64 * (2.0 * mf - cf) - sum(i3, n);
        let cost = low + mid_below + mid_above + high;
        if cost < best.0 {
            best = (cost, c);
        }
    }
    best.1
}

struct ChannelUnwrap {
    values: Vec<f64>,
    rollovers: Vec<u32>,
    mismatch: f64,
}

fn unwrap_channel(obs: &Raster, m: u32, solver: &PoissonSolver, exec: Exec) -> ChannelUnwrap {
    let mf = m as f64;
    let g_hat = lar_gradient(&gradient(obs), mf);
    let estimate = solver.solve(&divergence(&g_hat), exec);

    let d: Vec<f64> = estimate.iter().zip(obs.iter()).map(|(x, o)| x - o).collect();
    let c = best_offset(&d, m) as f64;
    // f64::round breaks ties away from zero
    let raw: Vec<i64> = d.iter().map(|v| ((v + c) / mf).round() as i64).collect();
    // the darkest sample of a properly exposed scene has not wrapped
    let anchor = raw.iter().copied().min().unwrap_or(0);
    let rollovers: Vec<u32> = raw.iter().map(|&k| (k - anchor).max(0) as u32).collect();
    let values: Vec<f64> = obs
        .iter()
        .zip(&rollovers)
        .map(|(o, &k)| o + k as f64 * mf)
        .collect();

    let (h, w) = obs.dim();
    let rec = Raster::from_shape_vec((h, w), values.clone()).expect("same shape");
    let mismatch = gradient_l1(&gradient(&rec), &g_hat);
    ChannelUnwrap {
        values,
        rollovers,
        mismatch,
    }
}

pub fn unwrap_poisson(frame: &ModuloFrame) -> Result<UnwrapResult> {
    unwrap_poisson_with(frame, Exec::default())
}

pub fn unwrap_poisson_with(frame: &ModuloFrame, exec: Exec) -> Result<UnwrapResult> {
    let (h, w, ch) = frame.dims();
    let m = frame.modulus();
    let solver = PoissonSolver::new(h, w);
    // channels run one after another; the solver parallelises within each
    let channels: Vec<ChannelUnwrap> = (0..ch)
        .map(|c| unwrap_channel(&frame.channel_plane(c), m, &solver, exec))
        .collect();

    let mut data = vec![0f32; h * w * ch];
    let mut rollover_map = vec![0u32; h * w * ch];
    let mut mismatch = 0.0;
    for (c, cu) in channels.iter().enumerate() {
        for p in 0..h * w {
            data[p * ch + c] = cu.values[p] as f32;
            rollover_map[p * ch + c] = cu.rollovers[p];
        }
        mismatch += cu.mismatch;
    }
    let hdr = HdrImage::new(h, w, ch, data)?;
    let residuals = consistency_residuals(&hdr, frame)?;
    let gradient_mismatch = mismatch / (h * w * ch) as f64;
    let converged = residuals.max() < CONVERGENCE_TOLERANCE && gradient_mismatch < CONVERGENCE_TOLERANCE;
    Ok(UnwrapResult {
        hdr,
        rollover_map,
        residuals,
        gradient_mismatch,
        converged,
    })
}

/// Unwraps every frame of a sequence.
pub fn unwrap_sequence(frames: &[ModuloFrame], exec: Exec) -> Result<Vec<UnwrapResult>> {
    exec.map_range(frames.len(), |i| unwrap_poisson_with(&frames[i], Exec::Sequential))
        .into_iter()
        .collect()
}

/// Sinusoidal embedding of the wrap phase: `(sin 2 pi phi, cos 2 pi phi)`
/// with `phi = mod(hdr, 2^N) / 2^N`, channel-interleaved like `hdr`.
pub fn cyclic_encode(hdr: &HdrImage, bit_depth: u8) -> (Vec<f64>, Vec<f64>) {
    let m = (1u32 << bit_depth) as f64;
    hdr.data()
        .iter()
        .map(|&v| {
            let phi = (v as f64).rem_euclid(m) / m;
            let (s, c) = (2.0 * std::f64::consts::PI * phi).sin_cos();
            (s, c)
        })
        .unzip()
}

/// mu-law compression of `hdr / peak`.
pub fn mu_law(hdr: &HdrImage, mu: f64, peak: f64) -> Result<HdrImage> {
    check_mu(mu, peak)?;
    let denom = mu.ln_1p();
    let data = hdr
        .data()
        .iter()
        .map(|&v| ((mu * v as f64 / peak).ln_1p() / denom) as f32)
        .collect();
    HdrImage::new(hdr.height(), hdr.width(), hdr.channels(), data)
}

/// Exact inverse of [`mu_law`], back to linear units.
pub fn mu_law_inverse(mapped: &HdrImage, mu: f64, peak: f64) -> Result<HdrImage> {
    check_mu(mu, peak)?;
    let denom = mu.ln_1p();
    let data = mapped
        .data()
        .iter()
        .map(|&v| ((v as f64 * denom).exp_m1() / mu * peak) as f32)
        .collect();
    HdrImage::new(mapped.height(), mapped.width(), mapped.channels(), data)
}

/// Scalar mu-law pair in f64, used where f32 rounding would dominate.
pub fn mu_law_scalar(x: f64, mu: f64) -> f64 {
    (mu * x).ln_1p() / mu.ln_1p()
}

pub fn mu_law_inverse_scalar(y: f64, mu: f64) -> f64 {
    (y * mu.ln_1p()).exp_m1() / mu
}

fn check_mu(mu: f64, peak: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(crate::error::invalid("mu", "must be positive"));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(crate::error::invalid("peak", "must be positive"));
    }
    Ok(())
}
