//! Unnormalized DCT-II and its exact inverse, computed through one complex
//! FFT of the even/odd reordered input (Makhoul's method).
//!
//! Forward: `X[k] = sum_n x[n] cos(pi k (2n + 1) / 2N)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Dct2 {
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// exp(-i pi k / 2N)
    twiddles: Vec<Complex<f64>>,
}

impl std::fmt::Debug for Dct2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dct2").field("len", &self.len).finish()
    }
}

impl Dct2 {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "empty transform");
        let mut planner = FftPlanner::new();
        let twiddles = (0..len)
            .map(|k| Complex::from_polar(1.0, -PI * k as f64 / (2 * len) as f64))
            .collect();
        Self {
            len,
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
            twiddles,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, data: &mut [f64]) {
        let n = self.len;
        assert_eq!(data.len(), n);
        let mut v = vec![Complex::new(0.0, 0.0); n];
        for i in 0..n.div_ceil(2) {
            v[i].re = data[2 * i];
        }
        for i in 0..n / 2 {
            v[n - 1 - i].re = data[2 * i + 1];
        }
        self.fwd.process(&mut v);
        for (k, out) in data.iter_mut().enumerate() {
            *out = (self.twiddles[k] * v[k]).re;
        }
    }

    /// Exact inverse of [`Dct2::forward`].
    pub fn inverse(&self, data: &mut [f64]) {
        let n = self.len;
        assert_eq!(data.len(), n);
        let mut v: Vec<Complex<f64>> = (0..n)
            .map(|k| {
                let mirror = if k == 0 { 0.0 } else { data[n - k] };
                self.twiddles[k].conj() * Complex::new(data[k], -mirror)
            })
            .collect();
        self.inv.process(&mut v);
        let scale = 1.0 / n as f64;
        for i in 0..n.div_ceil(2) {
            data[2 * i] = v[i].re * scale;
        }
        for i in 0..n / 2 {
            data[2 * i + 1] = v[n - 1 - i].re * scale;
        }
    }
}
