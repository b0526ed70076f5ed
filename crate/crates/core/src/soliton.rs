//! Standing-wave profiles `φ_ω` and the tangent directions of the orbit.
//!
//! `φ_ω` is the positive even solution of `-φ'' + (1-ω²)φ - φ³ = 0` on the
//! periodic grid. It is seeded with `√2 κ sech(κx)`, `κ = √(1-ω²)`, and then
//! certified by Newton iteration on the discretized equation, so every
//! identity downstream holds for the discrete problem rather than for the
//! line soliton sampled on a box.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{KgzError, Result};
use crate::grid::{FieldC, FieldR, Grid, Quad};
use crate::krylov::gmres;

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-12;
/// Accept a stagnated Newton iteration once the residual is below this.
const NEWTON_FLOOR: f64 = 1e-10;

fn check_frequency(omega: f64) -> Result<f64> {
    if !omega.is_finite() || omega.abs() >= 1.0 {
        return Err(KgzError::FrequencyOutOfRange(omega));
    }
    Ok((1.0 - omega * omega).sqrt())
}

/// `-φ'' + (1-ω²)φ - φ³`.
pub fn ode_residual(grid: &Grid, phi: &[f64], omega: f64) -> Result<FieldR> {
    let c2 = 1.0 - omega * omega;
    let d2 = grid.derivative_r(phi, 2)?;
    Ok(phi.iter().zip(&d2).map(|(p, d)| -d + c2 * p - p * p * p).collect())
}

/// `L₊ x = -x'' + c2 x - 3φ² x`.
fn apply_l_plus(grid: &Grid, c2: f64, phi_sq: &[f64], x: &[f64]) -> FieldR {
    let d2 = grid.apply_symbol_r(x, |_, k| Complex64::new(-k * k, 0.0));
    x.iter()
        .zip(&d2)
        .zip(phi_sq)
        .map(|((xi, d), p2)| -d + c2 * xi - 3.0 * p2 * xi)
        .collect()
}

/// Solves `L₊ x = rhs` for even right-hand sides.
///
/// On even functions `L₊` is invertible (its kernel `φ'` is odd), and the
/// constant-coefficient part `-∂² + c2` is an exact spectral preconditioner.
fn solve_l_plus(grid: &Grid, c2: f64, phi: &[f64], rhs: &[f64]) -> Result<FieldR> {
    let phi_sq: FieldR = phi.iter().map(|p| p * p).collect();
    // Round-off leaves an odd part in `rhs` that the near-null `φ'` would
    // amplify, so the whole solve is restricted to even functions.
    let rhs = symmetrize(grid, rhs);
    let out = gmres(
        |v| symmetrize(grid, &apply_l_plus(grid, c2, &phi_sq, v)),
        |v| grid.apply_symbol_r(v, |_, k| Complex64::new(1.0 / (k * k + c2), 0.0)),
        &rhs,
        1e-12,
        80,
        800,
    )?;
    if out.residual > NEWTON_FLOOR {
        return Err(KgzError::NoConvergence { what: "L+ solve", iterations: 800, residual: out.residual });
    }
    let x = out.x;
    Ok(symmetrize(grid, &x))
}

fn symmetrize(grid: &Grid, f: &[f64]) -> FieldR {
    let r = grid.reflect(f);
    f.iter().zip(&r).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// The line soliton `√2 κ sech(κx)` sampled on the nodes.
pub fn seed_profile(grid: &Grid, omega: f64) -> Result<FieldR> {
    let kappa = check_frequency(omega)?;
    Ok(grid
        .nodes()
        .iter()
        .map(|&x| 2f64.sqrt() * kappa / (kappa * x).cosh())
        .collect())
}

/// Newton-polished profile at frequency `omega`; returns the profile, the
/// iteration count and the final relative residual.
fn solve_profile(grid: &Grid, omega: f64) -> Result<(FieldR, usize, f64)> {
    let kappa = check_frequency(omega)?;
    let c2 = kappa * kappa;
    let mut phi = seed_profile(grid, omega)?;
    let mut last = f64::INFINITY;
    for it in 0..=NEWTON_MAX_ITER {
        let res = ode_residual(grid, &phi, omega)?;
        let rel = grid.norm_r(&res) / grid.norm_r(&phi);
        if rel < NEWTON_TOL || (rel < NEWTON_FLOOR && rel > 0.5 * last) {
            return Ok((phi, it, rel));
        }
        if it == NEWTON_MAX_ITER {
            return Err(KgzError::NoConvergence {
                what: "ground-state Newton",
                iterations: it,
                residual: rel,
            });
        }
        let neg: FieldR = res.iter().map(|r| -r).collect();
        let step = solve_l_plus(grid, c2, &phi, &neg)?;
        phi.iter_mut().zip(&step).for_each(|(p, s)| *p += s);
        last = rel;
    }
    unreachable!()
}

/// Ground state `φ₀` of `-φ'' + φ - φ³ = 0` on the grid.
pub fn ground_state(grid: &Grid) -> Result<FieldR> {
    Ok(solve_profile(grid, 0.0)?.0)
}

/// `∂_ω φ_ω` of the line soliton, from `φ_ω(x) = κ φ₀(κx)`:
/// `-(ω/κ)[φ₀(κx) + κx φ₀'(κx)]`.
///
/// On a finite box this is only accurate up to the tail size of `φ_ω` at the
/// boundary; [`SolitonFamily`] uses the implicit derivative instead.
pub fn analytic_domega_phi(grid: &Grid, omega: f64) -> Result<FieldR> {
    let kappa = check_frequency(omega)?;
    let s2 = 2f64.sqrt();
    Ok(grid
        .nodes()
        .iter()
        .map(|&x| {
            let z = kappa * x;
            let phi0 = s2 / z.cosh();
            let dphi0 = -s2 * z.tanh() / z.cosh();
            -(omega / kappa) * (phi0 + z * dphi0)
        })
        .collect())
}

fn real_to_c(f: &[f64], scale: Complex64) -> FieldC {
    f.iter().map(|&x| scale * x).collect()
}

/// Profile data at one frequency: `φ`, `φ'` and `∂_ω φ`.
#[derive(Clone, Debug)]
pub struct Profile {
    pub omega: f64,
    pub phi: FieldR,
    pub dphi: FieldR,
    pub domega_phi: FieldR,
    pub newton_iterations: usize,
    pub residual: f64,
}

impl Profile {
    pub fn new(grid: &Grid, omega: f64) -> Result<Self> {
        let (phi, newton_iterations, residual) = solve_profile(grid, omega)?;
        let dphi = grid.derivative_r(&phi, 1)?;
        // ∂_ω of the discrete equation: L₊ ∂_ωφ = 2ωφ.
        let domega_phi = if omega == 0.0 {
            vec![0.0; phi.len()]
        } else {
            let rhs: FieldR = phi.iter().map(|p| 2.0 * omega * p).collect();
            solve_l_plus(grid, 1.0 - omega * omega, &phi, &rhs)?
        };
        Ok(Profile { omega, phi, dphi, domega_phi, newton_iterations, residual })
    }

    /// `Φ_ω = (φ, iωφ, -φ², 0)`.
    pub fn standing_wave(&self) -> Quad {
        let w = self.omega;
        Quad {
            f: real_to_c(&self.phi, Complex64::new(1.0, 0.0)),
            g: real_to_c(&self.phi, Complex64::new(0.0, w)),
            h: self.phi.iter().map(|p| -p * p).collect(),
            k: vec![0.0; self.phi.len()],
        }
    }

    /// `Υ_ω = (iφ, -ωφ, 0, 0)`, the phase-rotation generator.
    pub fn upsilon(&self) -> Quad {
        let n = self.phi.len();
        Quad {
            f: real_to_c(&self.phi, Complex64::new(0.0, 1.0)),
            g: real_to_c(&self.phi, Complex64::new(-self.omega, 0.0)),
            h: vec![0.0; n],
            k: vec![0.0; n],
        }
    }

    /// `∂ₓΦ_ω = (φ', iωφ', -2φφ', 0)`.
    pub fn dx_standing_wave(&self) -> Quad {
        Quad {
            f: real_to_c(&self.dphi, Complex64::new(1.0, 0.0)),
            g: real_to_c(&self.dphi, Complex64::new(0.0, self.omega)),
            h: self.phi.iter().zip(&self.dphi).map(|(p, d)| -2.0 * p * d).collect(),
            k: vec![0.0; self.phi.len()],
        }
    }

    /// `Ψ_ω = (2ωφ, 0, 0, 0)`.
    pub fn psi(&self) -> Quad {
        let n = self.phi.len();
        let mut q = Quad::zeros(n);
        q.f = real_to_c(&self.phi, Complex64::new(2.0 * self.omega, 0.0));
        q
    }

    /// `F_ω = (∂_ωφ, iω∂_ωφ, -2φ∂_ωφ, 0)`, the direction with `S″F = Ψ`.
    pub fn negative_direction(&self) -> Quad {
        Quad {
            f: real_to_c(&self.domega_phi, Complex64::new(1.0, 0.0)),
            g: real_to_c(&self.domega_phi, Complex64::new(0.0, self.omega)),
            h: self.phi.iter().zip(&self.domega_phi).map(|(p, d)| -2.0 * p * d).collect(),
            k: vec![0.0; self.phi.len()],
        }
    }

    /// `∂_ω Φ_ω = (∂_ωφ, i(φ + ω∂_ωφ), -2φ∂_ωφ, 0)`.
    pub fn domega_standing_wave(&self) -> Quad {
        let w = self.omega;
        Quad {
            f: real_to_c(&self.domega_phi, Complex64::new(1.0, 0.0)),
            g: self
                .phi
                .iter()
                .zip(&self.domega_phi)
                .map(|(p, d)| Complex64::new(0.0, p + w * d))
                .collect(),
            h: self.phi.iter().zip(&self.domega_phi).map(|(p, d)| -2.0 * p * d).collect(),
            k: vec![0.0; self.phi.len()],
        }
    }
}

/// The standing wave at one frequency together with its tangent directions.
#[derive(Clone, Debug)]
pub struct SolitonFamily {
    grid: Arc<Grid>,
    profile: Profile,
    standing_wave: Quad,
    upsilon: Quad,
    dx_standing_wave: Quad,
    psi: Quad,
    negative_direction: Quad,
}

pub fn family(grid: &Arc<Grid>, omega: f64) -> Result<SolitonFamily> {
    SolitonFamily::new(grid, omega)
}

impl SolitonFamily {
    pub fn new(grid: &Arc<Grid>, omega: f64) -> Result<Self> {
        check_frequency(omega)?;
        let profile = Profile::new(grid, omega)?;
        Ok(SolitonFamily {
            grid: Arc::clone(grid),
            standing_wave: profile.standing_wave(),
            upsilon: profile.upsilon(),
            dx_standing_wave: profile.dx_standing_wave(),
            psi: profile.psi(),
            negative_direction: profile.negative_direction(),
            profile,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn omega(&self) -> f64 {
        self.profile.omega
    }

    pub fn kappa(&self) -> f64 {
        (1.0 - self.omega() * self.omega()).sqrt()
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn phi(&self) -> &[f64] {
        &self.profile.phi
    }

    pub fn dphi(&self) -> &[f64] {
        &self.profile.dphi
    }

    pub fn domega_phi(&self) -> &[f64] {
        &self.profile.domega_phi
    }

    pub fn standing_wave(&self) -> &Quad {
        &self.standing_wave
    }

    pub fn upsilon(&self) -> &Quad {
        &self.upsilon
    }

    pub fn dx_standing_wave(&self) -> &Quad {
        &self.dx_standing_wave
    }

    pub fn psi(&self) -> &Quad {
        &self.psi
    }

    pub fn negative_direction(&self) -> &Quad {
        &self.negative_direction
    }

    /// `(1+a)Φ_ω`, the perturbed initial datum of the instability experiment.
    pub fn scaled_standing_wave(&self, a: f64) -> Quad {
        self.standing_wave.scaled(1.0 + a)
    }

    /// Writes `x, phi, dphi, domega_phi` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "phi", "dphi", "domega_phi"])?;
        for (j, x) in self.grid.nodes().iter().enumerate() {
            w.write_record(&[
                format!("{x:.17e}"),
                format!("{:.17e}", self.profile.phi[j]),
                format!("{:.17e}", self.profile.dphi[j]),
                format!("{:.17e}", self.profile.domega_phi[j]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `T(θ) q (· - y)`: phase on the complex components, periodic shift on all four.
pub fn translate_rotate(grid: &Grid, q: &Quad, theta: f64, y: f64) -> Quad {
    let rot = Complex64::from_polar(1.0, theta);
    let f: FieldC = q.f.iter().map(|z| z * rot).collect();
    let g: FieldC = q.g.iter().map(|z| z * rot).collect();
    Quad {
        f: grid.shift_c(&f, y),
        g: grid.shift_c(&g, y),
        h: grid.shift_r(&q.h, y),
        k: grid.shift_r(&q.k, y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_norm, make_grid};
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn grid60() -> Arc<Grid> {
        make_grid(60.0, 1024).unwrap()
    }

    #[test]
    fn ground_state_closed_form_values() {
        let g = grid60();
        let phi0 = ground_state(&g).unwrap();
        let mid = g.points() / 2;
        assert_eq!(g.nodes()[mid], 0.0);
        assert!((phi0[mid] - 2f64.sqrt()).abs() < 1e-10);
        assert!((g.inner_r(&phi0, &phi0) - 4.0).abs() < 1e-9);
        let l4: f64 = g.integrate(&phi0.iter().map(|p| p.powi(4)).collect::<Vec<_>>());
        assert!((l4 - 16.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn profile_is_positive_even_single_peaked() {
        let g = grid60();
        let fam = family(&g, 0.3).unwrap();
        let phi = fam.phi();
        assert!(phi.iter().all(|&p| p > 0.0));
        let refl = g.reflect(phi);
        assert!(phi.iter().zip(&refl).all(|(a, b)| (a - b).abs() < 1e-14));
        let mid = g.points() / 2;
        assert!(phi[..mid].windows(2).all(|w| w[0] < w[1]));
        assert!(phi[mid..].windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn residual_and_scaling() {
        let g = grid60();
        for &w in &[0.0, 0.3, -0.3, FRAC_1_SQRT_2, 0.9] {
            let fam = family(&g, w).unwrap();
            let res = ode_residual(&g, fam.phi(), w).unwrap();
            assert!(g.norm_r(&res) < 1e-9 * g.norm_r(fam.phi()), "omega {w}");
            let mass = g.inner_r(fam.phi(), fam.phi());
            assert!((mass - (1.0 - w * w).sqrt() * 4.0).abs() < 1e-8, "omega {w}: {mass}");
        }
        let fam = family(&g, FRAC_1_SQRT_2).unwrap();
        assert!((g.inner_r(fam.phi(), fam.phi()) - 4.0 / 2f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn pohozaev_relations() {
        let g = grid60();
        for &w in &[0.0, 0.3, FRAC_1_SQRT_2, 0.9] {
            let fam = family(&g, w).unwrap();
            let mass = g.inner_r(fam.phi(), fam.phi());
            let grad = g.inner_r(fam.dphi(), fam.dphi());
            let l4 = g.integrate(&fam.phi().iter().map(|p| p.powi(4)).collect::<Vec<_>>());
            let c = 1.0 - w * w;
            assert!((grad - c / 3.0 * mass).abs() < 1e-8 * mass);
            assert!((l4 - 4.0 * c / 3.0 * mass).abs() < 1e-8 * mass);
        }
    }

    #[test]
    fn omega_zero_family() {
        let g = grid60();
        let fam = family(&g, 0.0).unwrap();
        let phi0 = ground_state(&g).unwrap();
        assert_eq!(fam.phi(), &phi0[..]);
        let ups = fam.upsilon();
        assert!(ups.f.iter().zip(&phi0).all(|(z, p)| z.re == 0.0 && z.im == *p));
        assert!(ups.g.iter().all(|z| z.norm() == 0.0));
        assert!(fam.domega_phi().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn implicit_derivative_matches_rescaling_on_large_box() {
        let g = grid60();
        let w = 0.3;
        let fam = family(&g, w).unwrap();
        let analytic = analytic_domega_phi(&g, w).unwrap();
        let diff: FieldR = fam.domega_phi().iter().zip(&analytic).map(|(a, b)| a - b).collect();
        assert!(g.norm_r(&diff) < 1e-8 * g.norm_r(&analytic));
    }

    #[test]
    fn implicit_derivative_matches_frequency_difference() {
        let g = make_grid(40.0, 256).unwrap();
        let w = 0.8;
        let h = 1e-5;
        let fam = family(&g, w).unwrap();
        let p = Profile::new(&g, w + h).unwrap();
        let m = Profile::new(&g, w - h).unwrap();
        let fd: FieldR = p.phi.iter().zip(&m.phi).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let diff: FieldR = fd.iter().zip(fam.domega_phi()).map(|(a, b)| a - b).collect();
        assert!(g.norm_r(&diff) < 1e-7 * g.norm_r(&fd));
    }

    #[test]
    fn rejects_out_of_range_frequency() {
        let g = make_grid(40.0, 64).unwrap();
        assert!(matches!(family(&g, 1.0), Err(KgzError::FrequencyOutOfRange(_))));
        assert!(matches!(family(&g, -1.2), Err(KgzError::FrequencyOutOfRange(_))));
    }

    #[test]
    fn translate_rotate_examples() {
        let g = grid60();
        let fam = family(&g, 0.5).unwrap();
        let phi_q = fam.standing_wave();
        assert_eq!(&translate_rotate(&g, phi_q, 0.0, 0.0), phi_q);

        let rot = translate_rotate(&g, phi_q, PI, 0.0);
        for (j, p) in fam.phi().iter().enumerate() {
            assert!((rot.f[j] - Complex64::new(-p, 0.0)).norm() < 1e-15);
            assert!((rot.g[j] - Complex64::new(0.0, -0.5 * p)).norm() < 1e-15);
            assert_eq!(rot.h[j], -p * p);
        }

        let full = translate_rotate(&g, phi_q, 0.0, 60.0);
        assert!(l2_norm(&g, &full.sub(phi_q)) < 1e-11);
    }

    #[test]
    fn csv_dump_has_expected_columns() {
        let g = make_grid(20.0, 32).unwrap();
        let fam = family(&g, 0.2).unwrap();
        let mut buf = Vec::new();
        fam.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x,phi,dphi,domega_phi");
        assert_eq!(lines.count(), 32);
    }
}
