//! Periodic spectral grid on `[-L/2, L/2)`.
//!
//! All spatial derivatives, the inverse Laplacian on zero-mean fields,
//! quadrature and the energy-space norms go through [`Grid`]. Quadrature is
//! the rectangle rule `h * sum`, which is spectrally accurate for smooth
//! periodic integrands.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{KgzError, Result};

pub type FieldR = Vec<f64>;
pub type FieldC = Vec<Complex64>;

/// Relative tolerance for the zero-mean test in front of the inverse Laplacian.
pub const MEAN_TOL: f64 = 1e-10;

pub struct Grid {
    length: f64,
    points: usize,
    spacing: f64,
    nodes: Vec<f64>,
    wavenumbers: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    backward: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("length", &self.length)
            .field("points", &self.points)
            .finish()
    }
}

/// Builds a grid with `points` nodes on a periodic box of the given length.
pub fn make_grid(length: f64, points: usize) -> Result<Arc<Grid>> {
    Grid::new(length, points)
}

impl Grid {
    pub fn new(length: f64, points: usize) -> Result<Arc<Self>> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(KgzError::InvalidGrid(format!("length must be positive, got {length}")));
        }
        if points < 16 || points % 2 != 0 {
            return Err(KgzError::InvalidGrid(format!(
                "point count must be even and at least 16, got {points}"
            )));
        }
        let spacing = length / points as f64;
        let nodes = (0..points).map(|j| -0.5 * length + j as f64 * spacing).collect();
        let dk = 2.0 * PI / length;
        let wavenumbers = (0..points)
            .map(|j| {
                let m = if j < points / 2 { j as i64 } else { j as i64 - points as i64 };
                m as f64 * dk
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Arc::new(Grid {
            length,
            points,
            spacing,
            nodes,
            wavenumbers,
            forward: planner.plan_fft_forward(points),
            backward: planner.plan_fft_inverse(points),
        }))
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    /// Index of the Nyquist mode in the FFT ordering.
    pub fn nyquist(&self) -> usize {
        self.points / 2
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.points == other.points && self.length == other.length
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.points {
            return Err(KgzError::GridMismatch { expected: self.points, found: len });
        }
        Ok(())
    }

    /// Unnormalized forward DFT.
    pub fn fft(&self, f: &[Complex64]) -> FieldC {
        let mut buf = f.to_vec();
        self.forward.process(&mut buf);
        buf
    }

    pub fn fft_real(&self, f: &[f64]) -> FieldC {
        let mut buf: FieldC = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse DFT including the `1/N` normalization.
    pub fn ifft(&self, mut spec: FieldC) -> FieldC {
        self.backward.process(&mut spec);
        let scale = 1.0 / self.points as f64;
        spec.iter_mut().for_each(|c| *c *= scale);
        spec
    }

    pub fn ifft_real(&self, spec: FieldC) -> FieldR {
        self.ifft(spec).into_iter().map(|c| c.re).collect()
    }

    /// Multiplies the spectrum of `f` by `symbol(j, k_j)` and transforms back.
    pub fn apply_symbol_c(&self, f: &[Complex64], symbol: impl Fn(usize, f64) -> Complex64) -> FieldC {
        let mut spec = self.fft(f);
        for (j, (c, &k)) in spec.iter_mut().zip(&self.wavenumbers).enumerate() {
            *c *= symbol(j, k);
        }
        self.ifft(spec)
    }

    pub fn apply_symbol_r(&self, f: &[f64], symbol: impl Fn(usize, f64) -> Complex64) -> FieldR {
        let mut spec = self.fft_real(f);
        for (j, (c, &k)) in spec.iter_mut().zip(&self.wavenumbers).enumerate() {
            *c *= symbol(j, k);
        }
        self.ifft_real(spec)
    }

    fn derivative_symbol(&self, order: u32) -> impl Fn(usize, f64) -> Complex64 {
        let nyq = self.nyquist();
        move |j, k| {
            if order % 2 == 1 && j == nyq {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, k).powu(order)
            }
        }
    }

    /// Spectral derivative of a complex field. The Nyquist mode is dropped for odd orders.
    pub fn derivative_c(&self, f: &[Complex64], order: u32) -> Result<FieldC> {
        self.check_len(f.len())?;
        if order == 0 {
            return Ok(f.to_vec());
        }
        Ok(self.apply_symbol_c(f, self.derivative_symbol(order)))
    }

    /// Spectral derivative of a real field; output stays real.
    pub fn derivative_r(&self, f: &[f64], order: u32) -> Result<FieldR> {
        self.check_len(f.len())?;
        if order == 0 {
            return Ok(f.to_vec());
        }
        Ok(self.apply_symbol_r(f, self.derivative_symbol(order)))
    }

    pub fn mean(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() / self.points as f64
    }

    /// Zero-mean solution `g` of `-g'' = f`.
    pub fn inverse_neg_laplacian(&self, f: &[f64]) -> Result<FieldR> {
        self.check_zero_mean(f)?;
        Ok(self.apply_symbol_r(f, |j, k| {
            if j == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(1.0 / (k * k), 0.0)
            }
        }))
    }

    /// Zero-mean antiderivative of a zero-mean field, `-d/dx (-Δ)^{-1} f`.
    pub fn antiderivative(&self, f: &[f64]) -> Result<FieldR> {
        let g = self.inverse_neg_laplacian(f)?;
        Ok(self.derivative_r(&g, 1)?.into_iter().map(|x| -x).collect())
    }

    pub fn check_zero_mean(&self, f: &[f64]) -> Result<()> {
        self.check_len(f.len())?;
        let mean = self.mean(f);
        let tol = MEAN_TOL * self.norm_r(f);
        if mean.abs() > tol {
            return Err(KgzError::MeanNotZero { mean, tol });
        }
        Ok(())
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.spacing * f.iter().sum::<f64>()
    }

    pub fn integrate_c(&self, f: &[Complex64]) -> Complex64 {
        f.iter().sum::<Complex64>() * self.spacing
    }

    pub fn inner_r(&self, a: &[f64], b: &[f64]) -> f64 {
        self.spacing * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    /// `Re ∫ a conj(b) dx`.
    pub fn inner_c(&self, a: &[Complex64], b: &[Complex64]) -> f64 {
        self.spacing * a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum::<f64>()
    }

    pub fn norm_r(&self, f: &[f64]) -> f64 {
        self.inner_r(f, f).sqrt()
    }

    pub fn norm_c(&self, f: &[Complex64]) -> f64 {
        self.inner_c(f, f).sqrt()
    }

    /// `f(x - y)` by spectral interpolation.
    pub fn shift_c(&self, f: &[Complex64], y: f64) -> FieldC {
        if y == 0.0 {
            return f.to_vec();
        }
        let nyq = self.nyquist();
        self.apply_symbol_c(f, |j, k| {
            if j == nyq {
                Complex64::new((k * y).cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, -k * y)
            }
        })
    }

    pub fn shift_r(&self, f: &[f64], y: f64) -> FieldR {
        if y == 0.0 {
            return f.to_vec();
        }
        let nyq = self.nyquist();
        self.apply_symbol_r(f, |j, k| {
            if j == nyq {
                Complex64::new((k * y).cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, -k * y)
            }
        })
    }

    /// `f(-x)` on the node set (exact index permutation).
    pub fn reflect<T: Copy>(&self, f: &[T]) -> Vec<T> {
        let n = self.points;
        (0..n).map(|j| f[(n - j) % n]).collect()
    }

    /// Whether mode `j` survives the 2/3 dealiasing rule.
    pub fn keeps_mode(&self, j: usize) -> bool {
        let m = if j <= self.points / 2 { j } else { self.points - j };
        3 * m <= self.points
    }

    /// Wraps a displacement into `[-L/2, L/2)`.
    pub fn wrap(&self, d: f64) -> f64 {
        (d + 0.5 * self.length).rem_euclid(self.length) - 0.5 * self.length
    }
}

/// A 4-tuple `(f, g, h, k)` in `H¹ × L² × L² × Ḣ⁻¹` with complex `f, g` and real `h, k`.
///
/// Used both for states `(u, u_t, n, n_t)` and for tangent vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Quad {
    pub f: FieldC,
    pub g: FieldC,
    pub h: FieldR,
    pub k: FieldR,
}

impl Quad {
    pub fn zeros(n: usize) -> Self {
        Quad {
            f: vec![Complex64::new(0.0, 0.0); n],
            g: vec![Complex64::new(0.0, 0.0); n],
            h: vec![0.0; n],
            k: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        grid.check_len(self.f.len())?;
        grid.check_len(self.g.len())?;
        grid.check_len(self.h.len())?;
        grid.check_len(self.k.len())
    }

    pub fn scaled(&self, a: f64) -> Quad {
        Quad {
            f: self.f.iter().map(|x| x * a).collect(),
            g: self.g.iter().map(|x| x * a).collect(),
            h: self.h.iter().map(|x| x * a).collect(),
            k: self.k.iter().map(|x| x * a).collect(),
        }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Quad) -> Quad {
        Quad {
            f: self.f.iter().zip(&other.f).map(|(x, y)| x + y * a).collect(),
            g: self.g.iter().zip(&other.g).map(|(x, y)| x + y * a).collect(),
            h: self.h.iter().zip(&other.h).map(|(x, y)| x + y * a).collect(),
            k: self.k.iter().zip(&other.k).map(|(x, y)| x + y * a).collect(),
        }
    }

    pub fn sub(&self, other: &Quad) -> Quad {
        self.axpy(-1.0, other)
    }

    pub fn add(&self, other: &Quad) -> Quad {
        self.axpy(1.0, other)
    }

    /// Multiplies the two complex components by `i` (the generator of the phase rotation).
    pub fn times_i(&self) -> Quad {
        let i = Complex64::new(0.0, 1.0);
        Quad {
            f: self.f.iter().map(|x| x * i).collect(),
            g: self.g.iter().map(|x| x * i).collect(),
            h: vec![0.0; self.h.len()],
            k: vec![0.0; self.k.len()],
        }
    }

    pub fn max_abs(&self) -> f64 {
        let c = self.f.iter().chain(&self.g).map(|z| z.norm()).fold(0.0, f64::max);
        let r = self.h.iter().chain(&self.k).map(|x| x.abs()).fold(0.0, f64::max);
        c.max(r)
    }
}

/// Componentwise real inner product `Re ∫ a · conj(b) dx`.
pub fn inner(grid: &Grid, a: &Quad, b: &Quad) -> f64 {
    grid.inner_c(&a.f, &b.f) + grid.inner_c(&a.g, &b.g) + grid.inner_r(&a.h, &b.h) + grid.inner_r(&a.k, &b.k)
}

/// Plain L² norm of a 4-tuple (all components in L²).
pub fn l2_norm(grid: &Grid, a: &Quad) -> f64 {
    inner(grid, a, a).sqrt()
}

/// Energy-space norm on `H¹ × L² × L² × Ḣ⁻¹`.
pub fn x_norm(grid: &Grid, xi: &Quad) -> Result<f64> {
    xi.check_grid(grid)?;
    let fx = grid.derivative_c(&xi.f, 1)?;
    let anti = grid.antiderivative(&xi.k)?;
    let sq = grid.inner_c(&xi.f, &xi.f)
        + grid.inner_c(&fx, &fx)
        + grid.inner_c(&xi.g, &xi.g)
        + grid.inner_r(&xi.h, &xi.h)
        + grid.inner_r(&anti, &anti);
    Ok(sq.sqrt())
}
