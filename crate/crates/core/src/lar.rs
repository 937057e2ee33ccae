//! Discrete differential operators, the least-absolute-remainder (LAR) map
//! and a Neumann Poisson solver.
//!
//! Gradients are forward differences with a zeroed last row/column, and the
//! divergence is their negative adjoint (backward differences), so
//! `divergence(gradient(x))` is exactly the 5-point Laplacian with reflecting
//! (Neumann) boundaries. The DCT-II basis diagonalizes that operator, which
//! is what `poisson_solve` relies on.

use std::f64::consts::PI;

use ndarray::{Array2, Zip};

use crate::dct::Dct2;
use crate::par::Exec;

/// Real-valued single-channel raster.
pub type Raster = Array2<f64>;

/// Per-axis forward differences of a raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    /// Difference along the width; last column is zero.
    pub gx: Raster,
    /// Difference along the height; last row is zero.
    pub gy: Raster,
}

impl GradientField {
    pub fn dim(&self) -> (usize, usize) {
        self.gx.dim()
    }

    /// Applies `f` to every component of both axes.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> GradientField {
        GradientField {
            gx: self.gx.mapv(&f),
            gy: self.gy.mapv(&f),
        }
    }
}

pub fn gradient(img: &Raster) -> GradientField {
    let (h, w) = img.dim();
    let mut gx = Raster::zeros((h, w));
    let mut gy = Raster::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            if j + 1 < w {
                gx[[i, j]] = img[[i, j + 1]] - img[[i, j]];
            }
            if i + 1 < h {
                gy[[i, j]] = img[[i + 1, j]] - img[[i, j]];
            }
        }
    }
    GradientField { gx, gy }
}

/// Backward-difference divergence, the negative adjoint of [`gradient`].
///
/// The last column of `gx` and last row of `gy` are treated as zero whatever
/// they hold, which is what makes the boundary rows Neumann.
pub fn divergence(gf: &GradientField) -> Raster {
    let (h, w) = gf.dim();
    let gx = |i: usize, j: usize| if j + 1 < w { gf.gx[[i, j]] } else { 0.0 };
    let gy = |i: usize, j: usize| if i + 1 < h { gf.gy[[i, j]] } else { 0.0 };
    Raster::from_shape_fn((h, w), |(i, j)| {
        let dx = gx(i, j) - if j > 0 { gx(i, j - 1) } else { 0.0 };
        let dy = gy(i, j) - if i > 0 { gy(i - 1, j) } else { 0.0 };
        dx + dy
    })
}

/// 5-point Neumann Laplacian, `divergence(gradient(img))`.
pub fn laplacian(img: &Raster) -> Raster {
    divergence(&gradient(img))
}

/// Least absolute remainder: the representative of `o` modulo `m` in `[-m/2, m/2)`.
#[inline]
pub fn lar(o: f64, m: f64) -> f64 {
    let half = 0.5 * m;
    let mut r = (o + half).rem_euclid(m);
    // rem_euclid can round up to exactly m for tiny negative inputs
    if r >= m {
        r -= m;
    }
    r - half
}

pub fn lar_raster(o: &Raster, m: f64) -> Raster {
    o.mapv(|v| lar(v, m))
}

pub fn lar_gradient(gf: &GradientField, m: f64) -> GradientField {
    gf.map(|v| lar(v, m))
}

/// Cached DCT plans for one raster size.
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    height: usize,
    width: usize,
    row_plan: Dct2,
    col_plan: Dct2,
    /// Reciprocal eigenvalues, zero at the DC term.
    inv_eigen: Raster,
}

impl PoissonSolver {
    pub fn new(height: usize, width: usize) -> Self {
        let row_plan = Dct2::new(width.max(1));
        let col_plan = Dct2::new(height.max(1));
        let ky: Vec<f64> = (0..height)
            .map(|k| 2.0 * (PI * k as f64 / height as f64).cos() - 2.0)
            .collect();
        let kx: Vec<f64> = (0..width)
            .map(|l| 2.0 * (PI * l as f64 / width as f64).cos() - 2.0)
            .collect();
        let inv_eigen = Raster::from_shape_fn((height, width), |(k, l)| {
            if k == 0 && l == 0 {
                0.0
            } else {
                1.0 / (ky[k] + kx[l])
            }
        });
        Self {
            height,
            width,
            row_plan,
            col_plan,
            inv_eigen,
        }
    }

    /// Least-squares solution of `laplacian(x) = rhs` with `mean(x) = 0`.
    ///
    /// The mean of `rhs` is projected out first, since only mean-zero
    /// right-hand sides are compatible with Neumann boundaries.
    pub fn solve(&self, rhs: &Raster, exec: Exec) -> Raster {
        let (h, w) = (self.height, self.width);
        assert_eq!(rhs.dim(), (h, w), "rhs does not match solver size");
        if h * w <= 1 {
            return Raster::zeros((h, w));
        }

        let mean = rhs.mean().unwrap_or(0.0);
        let mut buf: Vec<f64> = rhs.iter().map(|v| v - mean).collect();

        transform_rows(&mut buf, w, exec, |row| self.row_plan.forward(row));
        let mut t = transpose(&buf, h, w);
        transform_rows(&mut t, h, exec, |col| self.col_plan.forward(col));

        // t is width x height here
        for l in 0..w {
            for k in 0..h {
                t[l * h + k] *= self.inv_eigen[[k, l]];
            }
        }

        transform_rows(&mut t, h, exec, |col| self.col_plan.inverse(col));
        let mut out = transpose(&t, w, h);
        transform_rows(&mut out, w, exec, |row| self.row_plan.inverse(row));

        let mut x = Raster::from_shape_vec((h, w), out).expect("shape preserved");
        let m = x.mean().unwrap_or(0.0);
        x.mapv_inplace(|v| v - m);
        x
    }
}

fn transform_rows(buf: &mut [f64], len: usize, exec: Exec, f: impl Fn(&mut [f64]) + Send + Sync) {
    exec.for_each_chunk_mut(buf, len, |_, row| f(row));
}

fn transpose(buf: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[j * h + i] = buf[i * w + j];
        }
    }
    out
}

/// One-shot [`PoissonSolver::solve`] with the default execution strategy.
pub fn poisson_solve(rhs: &Raster) -> Raster {
    poisson_solve_with(rhs, Exec::default())
}

pub fn poisson_solve_with(rhs: &Raster, exec: Exec) -> Raster {
    let (h, w) = rhs.dim();
    PoissonSolver::new(h, w).solve(rhs, exec)
}

/// Whether every forward difference lies in `[-m/2, m/2)`, in which case
/// `lar(gradient(x)) == gradient(x)`.
pub fn satisfies_itoh(img: &Raster, m: f64) -> bool {
    let g = gradient(img);
    let ok = |v: &f64| *v >= -0.5 * m && *v < 0.5 * m;
    g.gx.iter().all(ok) && g.gy.iter().all(ok)
}

/// Elementwise `|a - b|` summed over both axes of two gradient fields.
pub(crate) fn gradient_l1(a: &GradientField, b: &GradientField) -> f64 {
    let sum = |x: &Raster, y: &Raster| {
        Zip::from(x)
            .and(y)
            .fold(0.0, |acc, &p, &q| acc + (p - q).abs())
    };
    sum(&a.gx, &b.gx) + sum(&a.gy, &b.gy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Explicit 5-point stencil with reflecting boundaries: each pixel sums
    /// (neighbour - self) over the neighbours that exist.
    fn stencil_oracle(x: &Raster) -> Raster {
        let (h, w) = x.dim();
        Raster::from_shape_fn((h, w), |(i, j)| {
            let mut acc = 0.0;
            let c = x[[i, j]];
            if i > 0 {
                acc += x[[i - 1, j]] - c;
            }
            if i + 1 < h {
                acc += x[[i + 1, j]] - c;
            }
            if j > 0 {
                acc += x[[i, j - 1]] - c;
            }
            if j + 1 < w {
                acc += x[[i, j + 1]] - c;
            }
            acc
        })
    }

    fn random_raster(h: usize, w: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_shape_fn((h, w), |_| rng.random_range(-100.0..100.0))
    }

    fn smooth_raster(h: usize, w: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.random_range(0.2..3.0),
                    rng.random_range(0.2..3.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(-50.0..50.0),
                )
            })
            .collect();
        Raster::from_shape_fn((h, w), |(i, j)| {
            modes
                .iter()
                .map(|&(fy, fx, ph, a)| {
                    a * (fy * i as f64 / h as f64 * 3.0 + fx * j as f64 / w as f64 * 3.0 + ph).sin()
                })
                .sum()
        })
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = gradient(&Raster::from_elem((5, 7), 3.5));
        assert!(g.gx.iter().chain(g.gy.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn row_differences() {
        let g = gradient(&array![[0.0, 5.0, 7.0]]);
        assert_eq!(g.gx, array![[5.0, 2.0, 0.0]]);
        assert_eq!(g.gy, array![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn ramp_gradient() {
        let ramp = Raster::from_shape_fn((4, 4), |(_, j)| j as f64);
        let g = gradient(&ramp);
        for ((i, j), &v) in g.gx.indexed_iter() {
            assert_eq!(v, if j == 3 { 0.0 } else { 1.0 }, "gx[{i},{j}]");
        }
        assert!(g.gy.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_of_zero_and_ramp() {
        let zero = GradientField {
            gx: Raster::zeros((3, 3)),
            gy: Raster::zeros((3, 3)),
        };
        assert!(divergence(&zero).iter().all(|&v| v == 0.0));
        // 1x4 ramp: gx = [1, 1, 1, 0] so div = [1, 0, 0, -1]
        let ramp = array![[0.0, 1.0, 2.0, 3.0]];
        assert_eq!(divergence(&gradient(&ramp)), array![[1.0, 0.0, 0.0, -1.0]]);
    }

    #[test]
    fn laplacian_matches_stencil() {
        let x = random_raster(8, 8, 7);
        let lap = laplacian(&x);
        let oracle = stencil_oracle(&x);
        for (a, b) in lap.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn laplacian_basic_cases() {
        assert!(laplacian(&Raster::from_elem((4, 6), 9.0)).iter().all(|&v| v == 0.0));
        let sq = Raster::from_shape_fn((1, 5), |(_, j)| (j * j) as f64);
        let lap = laplacian(&sq);
        for j in 1..4 {
            assert_eq!(lap[[0, j]], 2.0);
        }
        let sum: f64 = laplacian(&random_raster(16, 16, 3)).sum();
        assert!(sum.abs() < 1e-9, "sum {sum}");
    }

    #[test]
    fn lar_examples() {
        assert_eq!(lar(300.0, 256.0), 44.0);
        assert_eq!(lar(200.0, 256.0), -56.0);
        assert_eq!(lar(-128.0, 256.0), -128.0);
        assert_eq!(lar(128.0, 256.0), -128.0);
        assert!((-128.0..128.0).contains(&lar(-1e-17, 256.0)));
    }

    #[test]
    fn poisson_zero_rhs() {
        let x = poisson_solve(&Raster::zeros((9, 13)));
        assert!(x.iter().all(|&v| v.abs() < 1e-15));
        assert_eq!(poisson_solve(&Raster::from_elem((1, 1), 5.0)), Raster::zeros((1, 1)));
    }

    #[test]
    fn poisson_recovers_smooth_field() {
        let x = smooth_raster(32, 32, 11);
        let xm = &x - x.mean().unwrap();
        let rec = poisson_solve(&laplacian(&x));
        let range = x.fold(f64::MIN, |a, &b| a.max(b)) - x.fold(f64::MAX, |a, &b| a.min(b));
        let err = (&rec - &xm).fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(err <= 1e-6 * range, "err {err} range {range}");
    }

    #[test]
    fn poisson_cosine_eigenmode() {
        let (h, w) = (16, 10);
        let x = Raster::from_shape_fn((h, w), |(i, _)| (PI * i as f64 / h as f64).cos());
        let xm = &x - x.mean().unwrap();
        let rec = poisson_solve(&laplacian(&x));
        let err = (&rec - &xm).fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(err < 1e-12, "err {err}");
        let centred = Raster::from_shape_fn((h, w), |(i, _)| (PI * (i as f64 + 0.5) / h as f64).cos());
        let lam = 2.0 * (PI / h as f64).cos() - 2.0;
        let lap = laplacian(&centred);
        for (a, b) in lap.iter().zip(centred.iter()) {
            assert!((a - lam * b).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_mean_zero_and_strategy_independent() {
        let rhs = random_raster(12, 20, 5);
        let a = poisson_solve_with(&rhs, Exec::Sequential);
        let b = poisson_solve_with(&rhs, Exec::Parallel);
        assert_eq!(a, b);
        assert!(a.mean().unwrap().abs() < 1e-9);
    }

    #[test]
    fn degenerate_strips() {
        let x = Raster::from_shape_fn((1, 9), |(_, j)| (j as f64 * 0.7).sin() * 10.0);
        let rec = poisson_solve(&laplacian(&x));
        let xm = &x - x.mean().unwrap();
        assert!((&rec - &xm).iter().all(|v| v.abs() < 1e-9));
        let xt = x.t().to_owned();
        let rec = poisson_solve(&laplacian(&xt));
        assert!((&rec - &xm.t()).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn itoh_predicate() {
        assert!(satisfies_itoh(&array![[0.0, 127.0, 0.0]], 256.0));
        assert!(!satisfies_itoh(&array![[0.0, 128.0]], 256.0));
        assert!(satisfies_itoh(&array![[128.0, 0.0]], 256.0));
    }
}
