//! The Hessian `S″_ω(Φ_ω)` of the action at a standing wave and the scalar
//! operators `L₊`, `L₋` hidden in it.
//!
//! The operator acts on `(f, g, h, k)`; in real form the unknowns are
//! `(Re f, Im f, Re g, Im g, h, k)`. The `k` block
//! `(1/2c₀²)(-Δ)^{-1}` decouples from the rest, so it is stored separately
//! and only ever acts on zero-mean `k`.
//!
//! Spectra are computed in the energy metric: with `G` the Gram matrix of the
//! `X` norm (`H¹` on `f`, `L²` on `g, h`, `Ḣ⁻¹` on `k`), the reported
//! eigenvalues solve `A v = μ G v`. Inertia (negative count, kernel
//! dimension) is the same as for the plain matrix; the metric only keeps the
//! positive spectrum bounded away from zero, which is what makes a relative
//! kernel tolerance meaningful.

use std::sync::Arc;

use faer::{Mat, Side};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KgzError, Result};
use crate::grid::{inner, FieldR, Grid, Quad};
use crate::soliton::Profile;

/// Kernel tolerance relative to the largest eigenvalue magnitude.
pub const KERNEL_REL_TOL: f64 = 1e-6;

/// Nodal matrix of a real, even Fourier multiplier.
pub fn spectral_matrix(grid: &Grid, symbol: impl Fn(usize, f64) -> f64) -> Mat<f64> {
    let n = grid.points();
    let mut m = Mat::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = grid.apply_symbol_r(&e, |i, k| Complex64::new(symbol(i, k), 0.0));
        for (i, v) in col.iter().enumerate() {
            m.write(i, j, *v);
        }
        e[j] = 0.0;
    }
    // circulant with an even real symbol: symmetric up to round-off
    let sym = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (m.read(i, j) + m.read(j, i)));
    sym
}

fn second_derivative_matrix(grid: &Grid) -> Mat<f64> {
    spectral_matrix(grid, |_, k| -k * k)
}

fn nonzero_omega(omega: f64) -> Result<()> {
    if !omega.is_finite() || omega.abs() >= 1.0 {
        return Err(KgzError::FrequencyOutOfRange(omega));
    }
    Ok(())
}

/// `-∂² + (1-ω²) - c φ²` as a dense matrix.
fn schrodinger_matrix(d2: &Mat<f64>, shift: f64, coef: f64, phi: &[f64]) -> Mat<f64> {
    let n = phi.len();
    Mat::<f64>::from_fn(n, n, |i, j| {
        let mut v = -d2.read(i, j);
        if i == j {
            v += shift - coef * phi[i] * phi[i];
        }
        v
    })
}

/// Dense `L₊ = -∂² + (1-ω²) - 3φ²` and `L₋ = -∂² + (1-ω²) - φ²`.
pub fn assemble_lpm(grid: &Grid, omega: f64) -> Result<(Mat<f64>, Mat<f64>)> {
    nonzero_omega(omega)?;
    let profile = Profile::new(grid, omega)?;
    let d2 = second_derivative_matrix(grid);
    let c = 1.0 - omega * omega;
    Ok((
        schrodinger_matrix(&d2, c, 3.0, &profile.phi),
        schrodinger_matrix(&d2, c, 1.0, &profile.phi),
    ))
}

/// Matrix-free `S″_ω(Φ_ω) q` straight from the operator formula:
/// `(-f_xx + f - φ²f + φh + iωg, g - iωf, ½h + φ Re f, (1/2c₀²)(-Δ)^{-1}k)`.
pub fn hessian_action(grid: &Grid, profile: &Profile, c0: f64, q: &Quad) -> Result<Quad> {
    q.check_grid(grid)?;
    let w = profile.omega;
    let iw = Complex64::new(0.0, w);
    let phi = &profile.phi;
    let fxx = grid.derivative_c(&q.f, 2)?;
    let f = (0..phi.len())
        .map(|j| -fxx[j] + q.f[j] * (1.0 - phi[j] * phi[j]) + phi[j] * q.h[j] + iw * q.g[j])
        .collect();
    let g = q.g.iter().zip(&q.f).map(|(g, f)| g - iw * f).collect();
    let h = (0..phi.len()).map(|j| 0.5 * q.h[j] + phi[j] * q.f[j].re).collect();
    let kinv = grid.inverse_neg_laplacian(&q.k)?;
    let k = kinv.iter().map(|v| v / (2.0 * c0 * c0)).collect();
    Ok(Quad { f, g, h, k })
}

/// Dense real form of `S″_ω(Φ_ω)`.
#[derive(Clone, Debug)]
pub struct RealBlockOperator {
    pub omega: f64,
    pub c0: f64,
    grid: Arc<Grid>,
    profile: Profile,
    /// Blocks on `(Re f, Im f, Re g, Im g, h)`, size `5N × 5N`.
    coupled: Mat<f64>,
    /// `(1/2c₀²)(-Δ)^{-1}` on `k`, size `N × N`.
    k_block: Mat<f64>,
}

fn quad_to_real(q: &Quad) -> Vec<f64> {
    let mut out = Vec::with_capacity(5 * q.len());
    out.extend(q.f.iter().map(|z| z.re));
    out.extend(q.f.iter().map(|z| z.im));
    out.extend(q.g.iter().map(|z| z.re));
    out.extend(q.g.iter().map(|z| z.im));
    out.extend(q.h.iter().copied());
    out
}

fn real_to_quad(x: &[f64], k: FieldR) -> Quad {
    let n = k.len();
    let c = |a: usize, b: usize| -> Vec<Complex64> {
        (0..n).map(|j| Complex64::new(x[a * n + j], x[b * n + j])).collect()
    };
    Quad { f: c(0, 1), g: c(2, 3), h: x[4 * n..5 * n].to_vec(), k }
}

fn mat_vec(m: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m.read(i, j) * x[j]).sum())
        .collect()
}

pub fn assemble_hessian(grid: &Arc<Grid>, omega: f64, c0: f64) -> Result<RealBlockOperator> {
    nonzero_omega(omega)?;
    let profile = Profile::new(grid, omega)?;
    RealBlockOperator::from_profile(grid, profile, c0)
}

impl RealBlockOperator {
    pub fn from_profile(grid: &Arc<Grid>, profile: Profile, c0: f64) -> Result<Self> {
        grid.check_len(profile.phi.len())?;
        let n = grid.points();
        let w = profile.omega;
        let phi = &profile.phi;
        let d2 = second_derivative_matrix(grid);
        let l = schrodinger_matrix(&d2, 1.0, 1.0, phi);
        let mut a = Mat::<f64>::zeros(5 * n, 5 * n);
        let (f1, f2, g1, g2, h) = (0, n, 2 * n, 3 * n, 4 * n);
        for i in 0..n {
            for j in 0..n {
                let v = l.read(i, j);
                a.write(f1 + i, f1 + j, v);
                a.write(f2 + i, f2 + j, v);
            }
            // Re: L f1 - ω g2 + φ h ; Im: L f2 + ω g1
            a.write(f1 + i, g2 + i, -w);
            a.write(g2 + i, f1 + i, -w);
            a.write(f2 + i, g1 + i, w);
            a.write(g1 + i, f2 + i, w);
            a.write(f1 + i, h + i, phi[i]);
            a.write(h + i, f1 + i, phi[i]);
            a.write(g1 + i, g1 + i, 1.0);
            a.write(g2 + i, g2 + i, 1.0);
            a.write(h + i, h + i, 0.5);
        }
        let scale = 1.0 / (2.0 * c0 * c0);
        let k_block = spectral_matrix(grid, |j, k| if j == 0 { 0.0 } else { scale / (k * k) });
        Ok(RealBlockOperator {
            omega: w,
            c0,
            grid: Arc::clone(grid),
            profile,
            coupled: a,
            k_block,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn dimension(&self) -> usize {
        6 * self.grid.points()
    }

    /// Largest `|A - Aᵀ|` entry relative to the largest `|A|` entry.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut big: f64 = 0.0;
        for m in [&self.coupled, &self.k_block] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    worst = worst.max((m.read(i, j) - m.read(j, i)).abs());
                    big = big.max(m.read(i, j).abs());
                }
            }
        }
        worst / big
    }

    /// Applies the assembled matrix; `q.k` must have zero mean.
    pub fn apply(&self, q: &Quad) -> Result<Quad> {
        q.check_grid(&self.grid)?;
        self.grid.check_zero_mean(&q.k)?;
        let y = mat_vec(&self.coupled, &quad_to_real(q));
        let k = mat_vec(&self.k_block, &q.k);
        Ok(real_to_quad(&y, k))
    }

    /// `⟨S″a, b⟩`.
    pub fn bilinear(&self, a: &Quad, b: &Quad) -> Result<f64> {
        Ok(inner(&self.grid, &self.apply(a)?, b))
    }

    /// `diag(W₁, W₁, I, I, I)` with `W₁ = (1 - ∂²)^{-1/2}`: maps whitened
    /// coordinates to nodal values so that `‖ξ‖²_X = h |z|²` on the coupled block.
    fn whitening(&self) -> Mat<f64> {
        let n = self.grid.points();
        let w1 = spectral_matrix(&self.grid, |_, k| 1.0 / (1.0 + k * k).sqrt());
        let mut w = Mat::<f64>::zeros(5 * n, 5 * n);
        for i in 0..n {
            for j in 0..n {
                let v = w1.read(i, j);
                w.write(i, j, v);
                w.write(n + i, n + j, v);
            }
        }
        for i in 2 * n..5 * n {
            w.write(i, i, 1.0);
        }
        w
    }

    /// Coupled block in whitened coordinates.
    fn whitened_coupled(&self) -> (Mat<f64>, Mat<f64>) {
        let w = self.whitening();
        let b = &w * &self.coupled * &w;
        let n = b.nrows();
        let b = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (b.read(i, j) + b.read(j, i)));
        (b, w)
    }

    /// Eigenvalues of the `k` block on zero-mean fields, in the `Ḣ⁻¹` metric.
    fn k_block_eigenvalues(&self) -> Result<Vec<f64>> {
        let n = self.grid.points();
        let wk = spectral_matrix(&self.grid, |_, k| k.abs());
        let m = &wk * &self.k_block * &wk;
        // Householder reflector sending the constant vector to e₀; its other
        // columns span the zero-mean subspace.
        let s = 1.0 / (n as f64).sqrt();
        let mut v = vec![s; n];
        v[0] += 1.0;
        let vn: f64 = v.iter().map(|x| x * x).sum::<f64>();
        let hh = Mat::<f64>::from_fn(n, n, |i, j| {
            let d = if i == j { 1.0 } else { 0.0 };
            d - 2.0 * v[i] * v[j] / vn
        });
        let red = &hh * &m * &hh;
        let sub = Mat::<f64>::from_fn(n - 1, n - 1, |i, j| 0.5 * (red.read(i + 1, j + 1) + red.read(j + 1, i + 1)));
        symmetric_eigenvalues(&sub)
    }
}

fn symmetric_eigenvalues(m: &Mat<f64>) -> Result<Vec<f64>> {
    let ev = m.selfadjoint_eigenvalues(Side::Lower);
    if ev.iter().any(|v| !v.is_finite()) {
        return Err(KgzError::EigensolveFailure("non-finite eigenvalue".into()));
    }
    let mut ev = ev;
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

/// Classification of the low spectrum of `S″_ω(Φ_ω)` in the energy metric.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpectrumReport {
    pub omega: f64,
    pub c0: f64,
    pub length: f64,
    pub points: usize,
    /// Lowest `count` eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub n_negative: usize,
    pub negative_eigenvalues: Vec<f64>,
    pub kernel_dimension: usize,
    pub n_positive: usize,
    pub smallest_positive: f64,
    pub kernel_tol: f64,
    /// Minimum of the constrained Rayleigh quotient; absent at `ω = 0`.
    pub coercivity_min: Option<f64>,
    /// `min(1/2, 1/(2c₀²))`, the coercivity floor of the constant-coefficient part.
    pub delta_floor: f64,
    /// `|⟨Γ, F_ω⟩| / (‖Γ‖ ‖F_ω‖)` for the most negative eigenvector `Γ`.
    pub negative_overlap_with_f: f64,
}

/// Lowest `count` eigenvalues of `op`, classified as negative / kernel / positive.
pub fn spectrum(op: &RealBlockOperator, count: usize) -> Result<SpectrumReport> {
    let (b, w) = op.whitened_coupled();
    let decomp = b.selfadjoint_eigendecomposition(Side::Lower);
    let s = decomp.s().column_vector();
    let u = decomp.u();
    let mut order: Vec<usize> = (0..b.nrows()).collect();
    order.sort_by(|&i, &j| s.read(i).total_cmp(&s.read(j)));
    let coupled: Vec<f64> = order.iter().map(|&i| s.read(i)).collect();
    if coupled.iter().any(|v| !v.is_finite()) {
        return Err(KgzError::EigensolveFailure("non-finite eigenvalue".into()));
    }

    // most negative eigenvector, mapped back to nodal values
    let lowest = order[0];
    let z: Vec<f64> = (0..b.nrows()).map(|i| u.read(i, lowest)).collect();
    let gamma = real_to_quad(&mat_vec(&w, &z), vec![0.0; op.grid.points()]);
    let fdir = op.profile.negative_direction();
    let overlap = {
        let g = &op.grid;
        let denom = (inner(g, &gamma, &gamma) * inner(g, &fdir, &fdir)).sqrt();
        if denom > 0.0 {
            inner(g, &gamma, &fdir).abs() / denom
        } else {
            0.0
        }
    };

    let mut all = coupled;
    all.extend(op.k_block_eigenvalues()?);
    all.sort_by(|a, b| a.total_cmp(b));
    let largest = all.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let kernel_tol = KERNEL_REL_TOL * largest;
    let lowest: Vec<f64> = all.iter().take(count).copied().collect();
    let negative: Vec<f64> = lowest.iter().copied().filter(|v| *v < -kernel_tol).collect();
    let kernel_dimension = lowest.iter().filter(|v| v.abs() <= kernel_tol).count();
    let n_positive = lowest.len() - negative.len() - kernel_dimension;
    let smallest_positive = all.iter().copied().find(|v| *v > kernel_tol).unwrap_or(f64::NAN);

    let coercivity_min = if op.omega == 0.0 { None } else { Some(constrained_minimum(op, &b, &w)?) };

    Ok(SpectrumReport {
        omega: op.omega,
        c0: op.c0,
        length: op.grid.length(),
        points: op.grid.points(),
        eigenvalues: lowest,
        n_negative: negative.len(),
        negative_eigenvalues: negative,
        kernel_dimension,
        n_positive,
        smallest_positive,
        kernel_tol,
        coercivity_min,
        delta_floor: 0.5f64.min(1.0 / (2.0 * op.c0 * op.c0)),
        negative_overlap_with_f: overlap,
    })
}

/// Orthonormal (Euclidean) basis, in whitened coordinates, of the constraint
/// directions `Υ_ω`, `∂ₓΦ_ω`, `Ψ_ω`.
fn constraint_basis(op: &RealBlockOperator, w: &Mat<f64>) -> Vec<Vec<f64>> {
    let p = &op.profile;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for c in [p.upsilon(), p.dx_standing_wave(), p.psi()] {
        // ⟨ξ, c⟩ = h zᵀ W c, W symmetric
        let mut d = mat_vec(w, &quad_to_real(&c));
        for _ in 0..2 {
            for e in &basis {
                let proj: f64 = d.iter().zip(e).map(|(a, b)| a * b).sum();
                d.iter_mut().zip(e).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let nrm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 0.0 {
            basis.push(d.iter().map(|x| x / nrm).collect());
        }
    }
    basis
}

/// `min ⟨S″ξ, ξ⟩ / ‖ξ‖²_X` over `ξ ⟂ {Υ_ω, ∂ₓΦ_ω, Ψ_ω}`.
fn constrained_minimum(op: &RealBlockOperator, b: &Mat<f64>, w: &Mat<f64>) -> Result<f64> {
    let basis = constraint_basis(op, w);
    let dim = b.nrows();
    // P B P + σ (I - P): the constraint directions get the sentinel σ
    let proj = Mat::<f64>::from_fn(dim, dim, |i, j| {
        let d = if i == j { 1.0 } else { 0.0 };
        d - basis.iter().map(|e| e[i] * e[j]).sum::<f64>()
    });
    let pbp = &proj * b * &proj;
    let sigma = 10.0 * (1.0 + b.norm_max());
    let c = Mat::<f64>::from_fn(dim, dim, |i, j| {
        let d = if i == j { 1.0 } else { 0.0 };
        0.5 * (pbp.read(i, j) + pbp.read(j, i)) + sigma * (d - proj.read(i, j))
    });
    let ev = symmetric_eigenvalues(&c)?;
    let k_min = op.k_block_eigenvalues()?.first().copied().unwrap_or(f64::INFINITY);
    Ok(ev[0].min(k_min))
}

/// Coercivity constant of `S″_ω(Φ_ω)` on the complement of `Υ_ω, ∂ₓΦ_ω, Ψ_ω`,
/// measured in the `X` norm. Undefined at `ω = 0`.
pub fn coercivity_check(grid: &Arc<Grid>, omega: f64, c0: f64) -> Result<f64> {
    if omega == 0.0 {
        return Err(KgzError::FrequencyOutOfRange(omega));
    }
    let op = assemble_hessian(grid, omega, c0)?;
    let (b, w) = op.whitened_coupled();
    constrained_minimum(&op, &b, &w)
}

/// Rayleigh quotient `⟨S″ξ, ξ⟩ / ‖ξ‖²_X`.
pub fn rayleigh_quotient(op: &RealBlockOperator, xi: &Quad) -> Result<f64> {
    let num = op.bilinear(xi, xi)?;
    let den = crate::grid::x_norm(&op.grid, xi)?.powi(2);
    Ok(num / den)
}

/// `a b' - a' b`.
pub fn wronskian(grid: &Grid, a: &[f64], b: &[f64]) -> Result<FieldR> {
    let da = grid.derivative_r(a, 1)?;
    let db = grid.derivative_r(b, 1)?;
    Ok((0..a.len()).map(|j| a[j] * db[j] - da[j] * b[j]).collect())
}

/// Eigenvectors of the kernel of the coupled block, as 4-tuples.
pub fn kernel_vectors(op: &RealBlockOperator) -> Result<Vec<Quad>> {
    let (b, w) = op.whitened_coupled();
    let decomp = b.selfadjoint_eigendecomposition(Side::Lower);
    let s = decomp.s().column_vector();
    let largest = (0..b.nrows()).fold(0.0f64, |m, i| m.max(s.read(i).abs()));
    let tol = KERNEL_REL_TOL * largest;
    let n = op.grid.points();
    Ok((0..b.nrows())
        .filter(|&i| s.read(i).abs() <= tol)
        .map(|i| {
            let z: Vec<f64> = (0..b.nrows()).map(|r| decomp.u().read(r, i)).collect();
            real_to_quad(&mat_vec(&w, &z), vec![0.0; n])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_norm, make_grid};
    use crate::soliton::family;
    use faer::prelude::SpSolver;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn grid40(n: usize) -> Arc<Grid> {
        make_grid(40.0, n).unwrap()
    }

    fn rel(a: &Quad, b: &Quad, g: &Grid) -> f64 {
        l2_norm(g, &a.sub(b)) / l2_norm(g, b)
    }

    #[test]
    fn lpm_kernels_and_morse_index() {
        let g = grid40(256);
        let fam = family(&g, 0.3).unwrap();
        let (lp, lm) = assemble_lpm(&g, 0.3).unwrap();
        let lm_phi = mat_vec(&lm, fam.phi());
        assert!(g.norm_r(&lm_phi) < 1e-8 * g.norm_r(fam.phi()));
        let lp_dphi = mat_vec(&lp, fam.dphi());
        assert!(g.norm_r(&lp_dphi) < 1e-7 * g.norm_r(fam.dphi()));
        let ev = symmetric_eigenvalues(&lp).unwrap();
        assert_eq!(ev.iter().filter(|v| **v < -1e-8).count(), 1);
    }

    #[test]
    fn matrix_matches_formula() {
        let g = grid40(64);
        let op = assemble_hessian(&g, 0.4, 1.3).unwrap();
        let mut q = Quad::zeros(64);
        for (j, x) in g.nodes().iter().enumerate() {
            q.f[j] = Complex64::new((0.3 * x).sin() / (1.0 + x * x), (-x * x / 9.0).exp());
            q.g[j] = Complex64::new((-x * x / 4.0).exp(), x / (1.0 + x * x));
            q.h[j] = (0.5 * x).cos() / (1.0 + 0.1 * x * x);
            q.k[j] = (2.0 * std::f64::consts::PI * x / 40.0).sin();
        }
        let a = op.apply(&q).unwrap();
        let b = hessian_action(&g, op.profile(), 1.3, &q).unwrap();
        assert!(rel(&a, &b, &g) < 1e-12);
    }

    #[test]
    fn symmetric_assembly() {
        let g = grid40(64);
        let op = assemble_hessian(&g, 0.7, 1.0).unwrap();
        assert!(op.symmetry_defect() < 1e-12);
    }

    #[test]
    fn kernel_and_negative_direction() {
        let g = grid40(256);
        for &w in &[0.3, FRAC_1_SQRT_2] {
            let fam = family(&g, w).unwrap();
            let op = assemble_hessian(&g, w, 1.0).unwrap();
            for v in [fam.upsilon(), fam.dx_standing_wave()] {
                let r = op.apply(v).unwrap();
                assert!(l2_norm(&g, &r) < 1e-7 * l2_norm(&g, v));
            }
            let sf = op.apply(fam.negative_direction()).unwrap();
            assert!(rel(&sf, fam.psi(), &g) < 1e-7);
        }
        let fam = family(&g, FRAC_1_SQRT_2).unwrap();
        let op = assemble_hessian(&g, FRAC_1_SQRT_2, 1.0).unwrap();
        let qf = op.bilinear(fam.negative_direction(), fam.negative_direction()).unwrap();
        assert!((qf + 2.0 * 2f64.sqrt()).abs() < 1e-6 * 2.0 * 2f64.sqrt());
    }

    #[test]
    fn negative_direction_is_flat_at_zero_frequency() {
        let g = grid40(128);
        let fam = family(&g, 0.0).unwrap();
        let op = assemble_hessian(&g, 0.0, 1.0).unwrap();
        let qf = op.bilinear(fam.negative_direction(), fam.negative_direction()).unwrap();
        assert_eq!(qf, 0.0);
    }

    #[test]
    fn spectrum_counts() {
        let g = grid40(128);
        for &w in &[0.3, 0.9] {
            let op = assemble_hessian(&g, w, 1.0).unwrap();
            let rep = spectrum(&op, 12).unwrap();
            assert_eq!(rep.n_negative, 1, "omega {w}: {:?}", rep.eigenvalues);
            assert_eq!(rep.kernel_dimension, 2, "omega {w}: {:?}", rep.eigenvalues);
            assert_eq!(rep.n_negative + rep.kernel_dimension + rep.n_positive, 12);
            assert!(rep.coercivity_min.unwrap() > 0.0);
            assert!(rep.negative_overlap_with_f > 0.1);
        }
    }

    #[test]
    fn k_block_is_flat_in_energy_metric() {
        let g = grid40(32);
        let op = assemble_hessian(&g, 0.5, 2.0).unwrap();
        let ev = op.k_block_eigenvalues().unwrap();
        assert_eq!(ev.len(), 31);
        assert!(ev.iter().all(|v| (v - 1.0 / 8.0).abs() < 1e-12));
    }

    #[test]
    fn coercivity_rejects_zero_frequency() {
        let g = grid40(64);
        assert!(matches!(coercivity_check(&g, 0.0, 1.0), Err(KgzError::FrequencyOutOfRange(_))));
    }

    #[test]
    fn random_constrained_rayleigh_above_minimum() {
        let g = grid40(64);
        let w = 0.5;
        let op = assemble_hessian(&g, w, 1.0).unwrap();
        let min = coercivity_check(&g, w, 1.0).unwrap();
        let p = op.profile().clone();
        let dirs = [p.upsilon(), p.dx_standing_wave(), p.psi()];
        for seed in 0..8u64 {
            let mut q = Quad::zeros(64);
            for (j, x) in g.nodes().iter().enumerate() {
                let t = (seed as f64 + 1.0) * 0.37;
                q.f[j] = Complex64::new((t * x).sin(), (1.3 * t * x).cos()) * (-x * x / 50.0).exp();
                q.g[j] = Complex64::new((0.7 * t * x + 1.0).cos(), (t * x).sin() * 0.5) * (-x * x / 60.0).exp();
                q.h[j] = (t * x * 0.9).sin() * (-x * x / 40.0).exp();
            }
            // enforce the three orthogonality conditions in the plain inner product
            let gram = Mat::<f64>::from_fn(3, 3, |a, b| inner(&g, &dirs[a], &dirs[b]));
            let rhs = Mat::<f64>::from_fn(3, 1, |a, _| inner(&g, &q, &dirs[a]));
            let coef = gram.partial_piv_lu().solve(&rhs);
            for (a, d) in dirs.iter().enumerate() {
                q = q.axpy(-coef.read(a, 0), d);
            }
            for d in &dirs {
                assert!(inner(&g, &q, d).abs() < 1e-10);
            }
            let rq = rayleigh_quotient(&op, &q).unwrap();
            assert!(rq >= min - 1e-10, "seed {seed}: {rq} < {min}");
        }
    }

    #[test]
    fn kernel_reduction_and_wronskians() {
        let g = grid40(256);
        let w = 0.3;
        let op = assemble_hessian(&g, w, 1.0).unwrap();
        let (lp, lm) = assemble_lpm(&g, w).unwrap();
        let p = op.profile().clone();
        let kernel = kernel_vectors(&op).unwrap();
        assert_eq!(kernel.len(), 2);
        for v in &kernel {
            // kernel vectors have the form (f, iωf, -2φ Re f, 0)
            let f1: FieldR = v.f.iter().map(|z| z.re).collect();
            let f2: FieldR = v.f.iter().map(|z| z.im).collect();
            let scale = l2_norm(&g, v);
            assert!(g.norm_r(&mat_vec(&lp, &f1)) < 1e-7 * scale);
            assert!(g.norm_r(&mat_vec(&lm, &f2)) < 1e-7 * scale);
            let wp = wronskian(&g, &f1, &p.dphi).unwrap();
            let wm = wronskian(&g, &f2, &p.phi).unwrap();
            let amp = scale * g.norm_r(&p.phi);
            assert!(wp.iter().all(|x| x.abs() < 1e-6 * amp));
            assert!(wm.iter().all(|x| x.abs() < 1e-6 * amp));
        }
    }
}
