//! Conserved quantities `E`, `Q`, `P`, the action `S_ω = E - ωQ`, and the
//! closed-form standing-wave identities they satisfy.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::Grid;
use crate::soliton::{ground_state, SolitonFamily};
use crate::state::KgzState;

/// Frequency step for the central difference of `Q(Φ_ω)`.
pub const DQ_STEP: f64 = 1e-4;

/// `½‖v‖² + ‖m_x‖²/(4c₀²) + ½‖u_x‖² + ½‖u‖² + ¼‖n‖² + ½∫n|u|²`.
pub fn energy(grid: &Grid, s: &KgzState, c0: f64) -> Result<f64> {
    s.check_grid(grid)?;
    let ux = grid.derivative_c(&s.u, 1)?;
    let mx = grid.derivative_r(&s.m, 1)?;
    let coupling: f64 = grid.integrate(&s.n.iter().zip(&s.u).map(|(n, u)| n * u.norm_sqr()).collect::<Vec<_>>());
    Ok(0.5 * grid.inner_c(&s.v, &s.v)
        + grid.inner_r(&mx, &mx) / (4.0 * c0 * c0)
        + 0.5 * grid.inner_c(&ux, &ux)
        + 0.5 * grid.inner_c(&s.u, &s.u)
        + 0.25 * grid.inner_r(&s.n, &s.n)
        + 0.5 * coupling)
}

/// `Im ∫ conj(u) v dx`.
pub fn charge(grid: &Grid, s: &KgzState) -> f64 {
    grid.spacing() * s.u.iter().zip(&s.v).map(|(u, v)| (u.conj() * v).im).sum::<f64>()
}

/// `2 Re ∫ u_t conj(u_x) dx + (1/c₀²) ∫ n m_x dx`.
pub fn momentum(grid: &Grid, s: &KgzState, c0: f64) -> Result<f64> {
    s.check_grid(grid)?;
    let ux = grid.derivative_c(&s.u, 1)?;
    let mx = grid.derivative_r(&s.m, 1)?;
    Ok(2.0 * grid.inner_c(&s.v, &ux) + grid.inner_r(&s.n, &mx) / (c0 * c0))
}

/// `S_ω = E - ωQ`.
pub fn action(grid: &Grid, s: &KgzState, omega: f64, c0: f64) -> Result<f64> {
    Ok(energy(grid, s, c0)? - omega * charge(grid, s))
}

/// `|a - b| / max(|b|, 1)`: relative error, absolute for quantities below unit scale.
pub fn defect(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Standing-wave identities at one frequency, with their closed forms.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IdentityReport {
    pub omega: f64,
    pub q_value: f64,
    pub q_closed: f64,
    pub q_defect: f64,
    pub dq_domega_fd: f64,
    pub dq_domega_closed: f64,
    pub dq_domega_defect: f64,
    #[serde(rename = "threeE_minus_4wQ")]
    pub three_e_minus_4wq: f64,
    #[serde(rename = "threeE_closed")]
    pub three_e_closed: f64,
    pub three_e_defect: f64,
    pub pohozaev_grad_defect: f64,
    pub pohozaev_l4_defect: f64,
}

impl IdentityReport {
    pub fn max_identity_defect(&self) -> f64 {
        self.q_defect
            .max(self.three_e_defect)
            .max(self.pohozaev_grad_defect)
            .max(self.pohozaev_l4_defect)
    }
}

fn standing_state(grid: &Grid, fam: &SolitonFamily) -> Result<KgzState> {
    KgzState::from_quad(grid, fam.standing_wave())
}

/// Evaluates `Q(Φ_ω)`, `dQ/dω` (central difference over independently built
/// families), `3E - 4ωQ` and both Pohozaev relations on the given grid.
pub fn identity_report(grid: &Arc<Grid>, omega: f64) -> Result<IdentityReport> {
    let c0 = 1.0;
    let fam = SolitonFamily::new(grid, omega)?;
    let phi0 = ground_state(grid)?;
    let mass0 = grid.inner_r(&phi0, &phi0);
    let kappa = (1.0 - omega * omega).sqrt();

    let s = standing_state(grid, &fam)?;
    let q = charge(grid, &s);
    let e = energy(grid, &s, c0)?;
    let q_closed = omega * kappa * mass0;

    let q_at = |w: f64| -> Result<f64> {
        let f = SolitonFamily::new(grid, w)?;
        Ok(charge(grid, &standing_state(grid, &f)?))
    };
    let dq_fd = (q_at(omega + DQ_STEP)? - q_at(omega - DQ_STEP)?) / (2.0 * DQ_STEP);
    let dq_closed = (1.0 - 2.0 * omega * omega) / kappa * mass0;

    let three_e = 3.0 * e - 4.0 * omega * q;
    let three_e_closed = (1.0 - 2.0 * omega * omega) * kappa * mass0;

    let phi = fam.phi();
    let mass = grid.inner_r(phi, phi);
    let grad = grid.inner_r(fam.dphi(), fam.dphi());
    let l4 = grid.integrate(&phi.iter().map(|p| p.powi(4)).collect::<Vec<_>>());
    let c = kappa * kappa;

    Ok(IdentityReport {
        omega,
        q_value: q,
        q_closed,
        q_defect: defect(q, q_closed),
        dq_domega_fd: dq_fd,
        dq_domega_closed: dq_closed,
        dq_domega_defect: defect(dq_fd, dq_closed),
        three_e_minus_4wq: three_e,
        three_e_closed,
        three_e_defect: defect(three_e, three_e_closed),
        pohozaev_grad_defect: defect(grad, c / 3.0 * mass),
        pohozaev_l4_defect: defect(l4, 4.0 * c / 3.0 * mass),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, FieldC, Quad};
    use crate::soliton::{family, translate_rotate};
    use num_complex::Complex64;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn grid60() -> Arc<Grid> {
        make_grid(60.0, 1024).unwrap()
    }

    fn state_of(g: &Grid, q: &Quad) -> KgzState {
        KgzState::from_quad(g, q).unwrap()
    }

    #[test]
    fn zero_state() {
        let g = grid60();
        let s = KgzState::zeros(1024);
        assert_eq!(energy(&g, &s, 1.0).unwrap(), 0.0);
        assert_eq!(charge(&g, &s), 0.0);
        assert_eq!(momentum(&g, &s, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn standing_wave_energy_and_charge() {
        let g = grid60();
        let fam = family(&g, FRAC_1_SQRT_2).unwrap();
        let s = state_of(&g, fam.standing_wave());
        assert!((charge(&g, &s) - 2.0).abs() < 1e-8);
        let expected = 4.0 * FRAC_1_SQRT_2 * 2.0 / 3.0;
        assert!((energy(&g, &s, 1.0).unwrap() - expected).abs() < 1e-8);

        let fam0 = family(&g, 0.0).unwrap();
        let s0 = state_of(&g, fam0.standing_wave());
        assert!((energy(&g, &s0, 1.0).unwrap() - 4.0 / 3.0).abs() < 1e-8);
        assert_eq!(charge(&g, &s0), 0.0);
    }

    #[test]
    fn charge_of_scaled_standing_wave_is_exactly_quadratic() {
        let g = grid60();
        let (w, a) = (0.5, 0.01);
        let fam = family(&g, w).unwrap();
        let mass = g.inner_r(fam.phi(), fam.phi());
        let q0 = charge(&g, &state_of(&g, fam.standing_wave()));
        let q = charge(&g, &state_of(&g, &fam.scaled_standing_wave(a)));
        assert!((q - (1.0 + a) * (1.0 + a) * w * (1.0 - w * w).sqrt() * 4.0).abs() < 1e-8);
        let remainder = q - q0 - 2.0 * a * w * mass;
        assert!((remainder - a * a * w * mass).abs() < 1e-12);
    }

    #[test]
    fn momentum_examples() {
        let g = grid60();
        let fam = family(&g, 0.4).unwrap();
        for a in [0.0, 0.01, -0.2, 0.5] {
            let p = momentum(&g, &state_of(&g, &fam.scaled_standing_wave(a)), 1.0).unwrap();
            assert!(p.abs() < 1e-10, "a = {a}: {p}");
        }
        let k = 2.0 * PI / 60.0;
        let u: FieldC = g.nodes().iter().map(|&x| Complex64::from_polar(1.0, k * x)).collect();
        let mut q = Quad::zeros(1024);
        q.f = u.clone();
        q.g = u.clone();
        // Re of a purely imaginary integrand
        assert!(momentum(&g, &state_of(&g, &q), 1.0).unwrap().abs() < 1e-12);
        q.g = u.iter().map(|z| z * Complex64::new(0.0, 1.0)).collect();
        assert!((momentum(&g, &state_of(&g, &q), 1.0).unwrap() - 4.0 * PI).abs() < 1e-11);
    }

    #[test]
    fn shifted_action_gap_slope() {
        let g = grid60();
        let (w, lam) = (0.5, 1.1);
        let fam = family(&g, w).unwrap();
        let mass = g.inner_r(fam.phi(), fam.phi());
        let base = action(&g, &state_of(&g, fam.standing_wave()), lam * w, 1.0).unwrap();
        let gap = |a: f64| action(&g, &state_of(&g, &fam.scaled_standing_wave(a)), lam * w, 1.0).unwrap() - base;
        let (a1, a2) = (1e-3, 1e-4);
        // gap(a)/a = slope + c a + O(a²); eliminate c
        let slope = (gap(a2) / a2 * a1 - gap(a1) / a1 * a2) / (a1 - a2);
        let expected = -2.0 * (lam - 1.0) * w * w * mass;
        assert!((slope - expected).abs() < 1e-5 * expected.abs(), "{slope} vs {expected}");
    }

    #[test]
    fn action_is_phase_invariant() {
        let g = grid60();
        let w = 0.6;
        let fam = family(&g, w).unwrap();
        let base = action(&g, &state_of(&g, fam.standing_wave()), 1.05 * w, 1.0).unwrap();
        for theta in [0.3, 1.7, -2.5] {
            let rotated = translate_rotate(&g, fam.standing_wave(), theta, 0.0);
            let s = action(&g, &state_of(&g, &rotated), 1.05 * w, 1.0).unwrap();
            assert!((s - base).abs() < 1e-10);
        }
    }

    #[test]
    fn charge_is_symmetry_invariant() {
        let g = grid60();
        let fam = family(&g, 0.3).unwrap();
        let q0 = charge(&g, &state_of(&g, fam.standing_wave()));
        let moved = translate_rotate(&g, fam.standing_wave(), 0.8, -4.2);
        assert!((charge(&g, &state_of(&g, &moved)) - q0).abs() < 1e-12);
    }

    #[test]
    fn identity_report_examples() {
        let g = grid60();
        let r = identity_report(&g, FRAC_1_SQRT_2).unwrap();
        assert!(r.three_e_minus_4wq.abs() < 1e-8);
        assert!(r.dq_domega_closed.abs() < 1e-14);
        assert!(r.dq_domega_fd.abs() < 1e-6);

        let r = identity_report(&g, 0.3).unwrap();
        let expected = (1.0 - 0.18) / 0.91f64.sqrt() * 4.0;
        assert!((r.dq_domega_closed - expected).abs() < 1e-8);
        assert!((r.dq_domega_fd - r.dq_domega_closed).abs() < 1e-5);
        assert!(r.max_identity_defect() < 1e-7);
    }

    #[test]
    fn stability_sign_dichotomy() {
        let g = make_grid(40.0, 256).unwrap();
        for w in [0.1, 0.5, 0.7, 0.72, 0.8, 0.95] {
            let r = identity_report(&g, w).unwrap();
            assert_eq!(r.dq_domega_closed > 0.0, w * w < 0.5, "omega {w}");
        }
    }
}
