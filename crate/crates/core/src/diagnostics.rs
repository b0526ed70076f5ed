//! Instruments applied along trajectories: the localized virial quantities
//! `I`, `Ĩ` and the right side of their time derivative, the modulation
//! decomposition `ū = T(θ)Φ_{λω}(· - y) + ξ`, and the distance to the
//! standing-wave orbit.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KgzError, Result};
use crate::functionals::{charge, energy, momentum};
use crate::grid::{inner, x_norm, FieldC, FieldR, Grid, Quad};
use crate::soliton::{translate_rotate, Profile, SolitonFamily};
use crate::state::KgzState;

/// Quintic smoothstep falling from 1 at `s = 1` to 0 at `s = 2`, and its derivative.
fn falloff(s: f64) -> (f64, f64) {
    if s <= 1.0 {
        (1.0, 0.0)
    } else if s >= 2.0 {
        (0.0, 0.0)
    } else {
        let t = s - 1.0;
        let t3 = t * t * t;
        (1.0 - t3 * (10.0 - 15.0 * t + 6.0 * t * t), -30.0 * t * t * (t - 1.0) * (t - 1.0))
    }
}

/// `φ_R(x) = x χ(|x|/R)`: the identity on `|x| ≤ R`, zero for `|x| ≥ 2R`, `C²`.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffProfile {
    pub radius: f64,
    /// `φ_R` at the grid nodes.
    pub phi_r: FieldR,
    /// `φ_R'` at the grid nodes.
    pub dphi_r: FieldR,
}

pub fn cutoff(grid: &Grid, radius: f64) -> Result<CutoffProfile> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(KgzError::InvalidConfig(format!("cutoff radius must be positive, got {radius}")));
    }
    if 2.0 * radius >= 0.5 * grid.length() {
        return Err(KgzError::CutoffTooLarge { radius, half_length: 0.5 * grid.length() });
    }
    let (phi_r, dphi_r) = grid.nodes().iter().map(|&x| cutoff_value(radius, x)).unzip();
    Ok(CutoffProfile { radius, phi_r, dphi_r })
}

/// `(φ_R(x), φ_R'(x))`.
pub fn cutoff_value(radius: f64, x: f64) -> (f64, f64) {
    let s = x.abs() / radius;
    let (chi, dchi) = falloff(s);
    (x * chi, chi + s * dchi)
}

impl CutoffProfile {
    /// `φ_R(x - y)` and `φ_R'(x - y)` on the nodes, with `x - y` taken periodically.
    pub fn centered_at(&self, grid: &Grid, y: f64) -> (FieldR, FieldR) {
        if y == 0.0 {
            return (self.phi_r.clone(), self.dphi_r.clone());
        }
        grid.nodes().iter().map(|&x| cutoff_value(self.radius, grid.wrap(x - y))).unzip()
    }
}

fn weighted(grid: &Grid, w: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    grid.spacing() * w.iter().enumerate().map(|(j, wj)| wj * f(j)).sum::<f64>()
}

/// `I = Re∫u ū_t + 2Re∫φ_R(x-y) u_x ū_t + (1/c₀²)∫φ_R(x-y) n m_x`.
pub fn virial_i(grid: &Grid, s: &KgzState, y: f64, cut: &CutoffProfile, c0: f64) -> Result<f64> {
    s.check_grid(grid)?;
    let (phi_r, _) = cut.centered_at(grid, y);
    let ux = grid.derivative_c(&s.u, 1)?;
    let mx = grid.derivative_r(&s.m, 1)?;
    Ok(grid.inner_c(&s.u, &s.v)
        + 2.0 * weighted(grid, &phi_r, |j| (ux[j] * s.v[j].conj()).re)
        + weighted(grid, &phi_r, |j| s.n[j] * mx[j]) / (c0 * c0))
}

/// `Ĩ = I + Re∫u ū_t - (1/c₀²)∫n m`; requires `∫ν = 0`.
pub fn virial_i_tilde(grid: &Grid, s: &KgzState, y: f64, cut: &CutoffProfile, c0: f64) -> Result<f64> {
    grid.check_zero_mean(&s.nu(grid)?)?;
    Ok(virial_i(grid, s, y, cut, c0)? + grid.inner_c(&s.u, &s.v) - grid.inner_r(&s.n, &s.m) / (c0 * c0))
}

/// Virial quantities at one time, with `dĨ/dt = rhs_static + ẏ · ydot_coeff`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VirialTerms {
    pub i_virial: f64,
    pub i_tilde: f64,
    pub rhs_static: f64,
    pub ydot_coeff: f64,
}

/// Evaluates `I`, `Ĩ` and the right side of
///
/// ```text
/// Ĩ' = ẏ(-P + ∫(1-φ_R')[2Re(u_x ū_t) + n m_x/c₀²])
///    + ∫(1-φ_R')[|u_t|² + |u_x|² - |u|² + m_x²/(2c₀²) + n²/2]
///    - 6E + 8ωQ + 4‖u_t - iωu‖² + (2-4ω²)‖u‖² + (2/c₀²)‖m_x‖²
///    + (1/L)∫n ∫(n + |u|²)
/// ```
///
/// The last line is [`box_mean_term`]. At `ω² = 1/2` the `‖u‖²` term drops out.
pub fn virial_terms(
    grid: &Grid,
    s: &KgzState,
    y: f64,
    cut: &CutoffProfile,
    omega: f64,
    c0: f64,
) -> Result<VirialTerms> {
    let i_virial = virial_i(grid, s, y, cut, c0)?;
    let i_tilde = virial_i_tilde(grid, s, y, cut, c0)?;
    let (_, dphi_r) = cut.centered_at(grid, y);
    let outer: FieldR = dphi_r.iter().map(|d| 1.0 - d).collect();
    let ux = grid.derivative_c(&s.u, 1)?;
    let mx = grid.derivative_r(&s.m, 1)?;
    let c2 = c0 * c0;
    let local = weighted(grid, &outer, |j| {
        s.v[j].norm_sqr() + ux[j].norm_sqr() - s.u[j].norm_sqr() + mx[j] * mx[j] / (2.0 * c2) + 0.5 * s.n[j] * s.n[j]
    });
    let iw = Complex64::new(0.0, omega);
    let rot: FieldC = s.v.iter().zip(&s.u).map(|(v, u)| v - iw * u).collect();
    let rhs_static = local - 6.0 * energy(grid, s, c0)? + 8.0 * omega * charge(grid, s)
        + 4.0 * grid.inner_c(&rot, &rot)
        + (2.0 - 4.0 * omega * omega) * grid.inner_c(&s.u, &s.u)
        + 2.0 / c2 * grid.inner_r(&mx, &mx)
        + box_mean_term(grid, s);
    let ydot_coeff = -momentum(grid, s, c0)?
        + weighted(grid, &outer, |j| 2.0 * (ux[j] * s.v[j].conj()).re + s.n[j] * mx[j] / c2);
    Ok(VirialTerms { i_virial, i_tilde, rhs_static, ydot_coeff })
}

/// `(1/L)∫n · ∫(n + |u|²)`: keeping `m` mean-free on the box subtracts the
/// mean of `n + |u|²` from `m_t`, which feeds this into `d/dt ∫n m`. It
/// vanishes as `L → ∞` and for `∫n = 0`.
pub fn box_mean_term(grid: &Grid, s: &KgzState) -> f64 {
    let n_int = grid.integrate(&s.n);
    let source: FieldR = s.n.iter().zip(&s.u).map(|(n, u)| n + u.norm_sqr()).collect();
    n_int * grid.integrate(&source) / grid.length()
}

/// Minimum number of samples for the five-point difference.
pub const MIN_WINDOW: usize = 5;

fn check_uniform(t: &[f64]) -> Result<f64> {
    if t.len() < MIN_WINDOW {
        return Err(KgzError::WindowTooShort { len: t.len(), min: MIN_WINDOW });
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let uniform = t.windows(2).all(|p| ((p[1] - p[0]) - dt).abs() <= 1e-9 * dt.abs().max(1.0));
    if !(dt > 0.0) || !uniform {
        return Err(KgzError::InvalidConfig("samples must be uniformly spaced in time".into()));
    }
    Ok(dt)
}

/// Fourth-order centered difference `(-f₊₂ + 8f₊₁ - 8f₋₁ + f₋₂)/(12Δt)` at
/// the interior points `2..n-2`.
pub fn centered_derivative(f: &[f64], dt: f64) -> Vec<f64> {
    (2..f.len().saturating_sub(2))
        .map(|i| (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) / (12.0 * dt))
        .collect()
}

/// One sample of the virial window.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VirialPoint {
    pub t: f64,
    pub y: f64,
    pub terms: VirialTerms,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VirialResidual {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VirialCheck {
    pub max_residual: f64,
    pub points: Vec<VirialResidual>,
}

/// Compares the finite-difference `dĨ/dt` with the right side, `ẏ` also by
/// finite differences of the sampled `y`.
pub fn virial_rhs_check(window: &[VirialPoint], length: f64) -> Result<VirialCheck> {
    let t: Vec<f64> = window.iter().map(|p| p.t).collect();
    let dt = check_uniform(&t)?;
    let it: Vec<f64> = window.iter().map(|p| p.terms.i_tilde).collect();
    let ys = unwrap_periodic(&window.iter().map(|p| p.y).collect::<Vec<_>>(), length);
    let lhs = centered_derivative(&it, dt);
    let ydot = centered_derivative(&ys, dt);
    let points: Vec<VirialResidual> = lhs
        .iter()
        .zip(&ydot)
        .enumerate()
        .map(|(i, (l, yd))| {
            let p = &window[i + 2];
            VirialResidual { t: p.t, lhs: *l, rhs: p.terms.rhs_static + yd * p.terms.ydot_coeff }
        })
        .collect();
    let max_residual = points.iter().map(|p| (p.lhs - p.rhs).abs()).fold(0.0, f64::max);
    Ok(VirialCheck { max_residual, points })
}

/// Removes jumps larger than half a period.
pub fn unwrap_periodic(x: &[f64], period: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(x.len());
    let mut offset: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        if i > 0 {
            let d: f64 = v + offset - out[i - 1];
            offset -= period * (d / period).round();
        }
        out.push(v + offset);
    }
    out
}

/// `θ` in `(-π, π]`.
pub fn wrap_phase(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

pub const FIT_MAX_ITER: usize = 50;
/// Convergence threshold for the orthogonality conditions, relative to `‖Φ_ω‖²_X`.
pub const FIT_TOL_REL: f64 = 1e-11;

/// The decomposition `ū = T(θ)Φ_{λω}(· - y) + ξ` with `ξ` orthogonal to
/// `T(θ)Υ_{λω}(· - y)`, `T(θ)∂ₓΦ_{λω}(· - y)` and `T(θ)Ψ_{λω}(· - y)`.
#[derive(Clone, Debug)]
pub struct ModulationFit {
    pub theta: f64,
    pub y: f64,
    pub lambda: f64,
    pub xi: Quad,
    pub xi_norm: f64,
    pub ortho_defects: [f64; 3],
    /// `‖J⁻¹‖_∞ · max_i ‖Z_i‖_X · ‖ξ‖_X`, a bound for `|θ̇ - λω| + |ẏ| + |λ̇|`
    /// up to `O(‖ξ‖²)`.
    pub mod_bound: f64,
    pub iterations: usize,
    /// Jacobian of the orthogonality conditions in `(θ, y, λ)` at the solution.
    pub jacobian: [[f64; 3]; 3],
}

struct FitFrame {
    profile: Profile,
    standing: Quad,
    dirs: [Quad; 3],
    /// `∂_Ω` of the three directions.
    ddirs: [Quad; 3],
}

fn real_c(f: &[f64], z: Complex64) -> FieldC {
    f.iter().map(|&x| z * x).collect()
}

fn fit_frame(grid: &Grid, big_omega: f64) -> Result<FitFrame> {
    let p = Profile::new(grid, big_omega)?;
    let n = p.phi.len();
    let w = big_omega;
    let d = &p.domega_phi;
    let dd = grid.derivative_r(d, 1)?;
    let zero = vec![0.0; n];
    let d_upsilon = Quad {
        f: real_c(d, Complex64::new(0.0, 1.0)),
        g: p.phi.iter().zip(d).map(|(a, b)| Complex64::new(-a - w * b, 0.0)).collect(),
        h: zero.clone(),
        k: zero.clone(),
    };
    let d_dx = Quad {
        f: real_c(&dd, Complex64::new(1.0, 0.0)),
        g: p.dphi.iter().zip(&dd).map(|(a, b)| Complex64::new(0.0, a + w * b)).collect(),
        h: (0..n).map(|j| -2.0 * (p.dphi[j] * d[j] + p.phi[j] * dd[j])).collect(),
        k: zero.clone(),
    };
    let d_psi = Quad {
        f: p.phi.iter().zip(d).map(|(a, b)| Complex64::new(2.0 * a + 2.0 * w * b, 0.0)).collect(),
        g: vec![Complex64::new(0.0, 0.0); n],
        h: zero.clone(),
        k: zero,
    };
    Ok(FitFrame {
        standing: p.standing_wave(),
        dirs: [p.upsilon(), p.dx_standing_wave(), p.psi()],
        ddirs: [d_upsilon, d_dx, d_psi],
        profile: p,
    })
}

fn derivative_quad(grid: &Grid, q: &Quad) -> Result<Quad> {
    Ok(Quad {
        f: grid.derivative_c(&q.f, 1)?,
        g: grid.derivative_c(&q.g, 1)?,
        h: grid.derivative_r(&q.h, 1)?,
        k: grid.derivative_r(&q.k, 1)?,
    })
}

fn residuals(grid: &Grid, s: &Quad, frame: &FitFrame, theta: f64, y: f64) -> [f64; 3] {
    let pulled = translate_rotate(grid, s, -theta, -y);
    let diff = pulled.sub(&frame.standing);
    [0, 1, 2].map(|i| inner(grid, &diff, &frame.dirs[i]))
}

fn jacobian(grid: &Grid, s: &Quad, frame: &FitFrame, omega: f64, theta: f64, y: f64) -> Result<[[f64; 3]; 3]> {
    let pulled = translate_rotate(grid, s, -theta, -y);
    let diff = pulled.sub(&frame.standing);
    let d_theta = pulled.times_i().scaled(-1.0);
    let d_y = derivative_quad(grid, &pulled)?;
    let d_standing = frame.profile.domega_standing_wave();
    let mut jac = [[0.0; 3]; 3];
    for i in 0..3 {
        let z = &frame.dirs[i];
        jac[i][0] = inner(grid, &d_theta, z);
        jac[i][1] = inner(grid, &d_y, z);
        jac[i][2] = omega * (inner(grid, &diff, &frame.ddirs[i]) - inner(grid, &d_standing, z));
    }
    Ok(jac)
}

/// Solves a 3×3 system by Gaussian elimination with partial pivoting.
fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        m.swap(c, p);
        if m[c][c] == 0.0 || !m[c][c].is_finite() {
            return None;
        }
        for r in c + 1..3 {
            let f = m[r][c] / m[c][c];
            for k in c..4 {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][3] - s) / m[r][r];
    }
    Some(x)
}

fn inverse_inf_norm(a: [[f64; 3]; 3]) -> f64 {
    let cols = [0, 1, 2].map(|c| {
        let mut e = [0.0; 3];
        e[c] = 1.0;
        solve3(a, e).unwrap_or([f64::INFINITY; 3])
    });
    (0..3).map(|r| (0..3).map(|c| cols[c][r].abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn norm3(v: [f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Jacobian of the orthogonality conditions at `(θ, y, λ) = (0, 0, 1)` and `ū = Φ_ω`.
pub fn base_jacobian(grid: &Grid, omega: f64) -> Result<[[f64; 3]; 3]> {
    let frame = fit_frame(grid, omega)?;
    jacobian(grid, &frame.standing.clone(), &frame, omega, 0.0, 0.0)
}

/// Newton iteration on the three orthogonality conditions in `(θ, y, λ)`,
/// halving the step while the residual grows.
///
/// Without a guess, `(θ, y)` start at the orbit-distance minimizer and `λ` at 1.
pub fn modulation_fit(
    grid: &Arc<Grid>,
    s: &Quad,
    omega: f64,
    guess: Option<(f64, f64, f64)>,
) -> Result<ModulationFit> {
    s.check_grid(grid)?;
    if omega == 0.0 || !omega.is_finite() || omega.abs() >= 1.0 {
        return Err(KgzError::FrequencyOutOfRange(omega));
    }
    let base = fit_frame(grid, omega)?;
    let tol = FIT_TOL_REL * x_norm(grid, &base.standing)?.powi(2);
    let (mut theta, mut y, mut lambda) = match guess {
        Some(g) => g,
        None => {
            let f0 = residuals(grid, s, &base, 0.0, 0.0);
            if norm3(f0) < tol {
                (0.0, 0.0, 1.0)
            } else {
                let od = orbit_distance_to(grid, s, &base.standing)?;
                (od.theta, od.y, 1.0)
            }
        }
    };
    let mut frame = if lambda == 1.0 { base } else { fit_frame(grid, lambda * omega)? };
    let mut f = residuals(grid, s, &frame, theta, y);
    let mut iterations = 0;
    while norm3(f) >= tol {
        if iterations == FIT_MAX_ITER {
            return Err(KgzError::NoConvergence { what: "modulation fit", iterations, residual: norm3(f) });
        }
        iterations += 1;
        let jac = jacobian(grid, s, &frame, omega, theta, y)?;
        let step = solve3(jac, f.map(|v| -v)).ok_or(KgzError::NoConvergence {
            what: "modulation fit (singular Jacobian)",
            iterations,
            residual: norm3(f),
        })?;
        // keep the trial frequency at most halfway to |λω| = 1
        let room = 0.5 * (1.0 - (lambda * omega).abs()) / omega.abs();
        let mut scale = if step[2].abs() > room { room / step[2].abs() } else { 1.0 };
        let mut accepted = None;
        for _ in 0..30 {
            let (t1, y1, l1) = (theta + scale * step[0], y + scale * step[1], lambda + scale * step[2]);
            // a trial frequency whose profile cannot be computed counts as a rejected step
            if let Ok(fr) = fit_frame(grid, l1 * omega) {
                let f1 = residuals(grid, s, &fr, t1, y1);
                if norm3(f1) < norm3(f) {
                    accepted = Some((t1, y1, l1, fr, f1));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((t1, y1, l1, fr, f1)) = accepted else {
            return Err(KgzError::NoConvergence { what: "modulation fit (line search)", iterations, residual: norm3(f) });
        };
        (theta, y, lambda, frame, f) = (t1, y1, l1, fr, f1);
    }
    let jac = jacobian(grid, s, &frame, omega, theta, y)?;
    let theta = wrap_phase(theta);
    let y = grid.wrap(y);
    let fitted = translate_rotate(grid, &frame.standing, theta, y);
    let xi = s.sub(&fitted);
    let xi_norm = x_norm(grid, &xi)?;
    let ortho_defects = [0, 1, 2].map(|i| inner(grid, &xi, &translate_rotate(grid, &frame.dirs[i], theta, y)).abs());
    let z_max = frame.dirs.iter().map(|z| x_norm(grid, z)).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    Ok(ModulationFit {
        theta,
        y,
        lambda,
        xi,
        xi_norm,
        ortho_defects,
        mod_bound: inverse_inf_norm(jac) * z_max * xi_norm,
        iterations,
        jacobian: jac,
    })
}

/// `(θ̇ - λω, ẏ, λ̇)` at one time.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModulationVelocity {
    pub t: f64,
    pub theta_dot_minus_lambda_omega: f64,
    pub y_dot: f64,
    pub lambda_dot: f64,
}

/// Modulation velocities from uniformly sampled `(t, θ, y, λ)`, by five-point
/// centered differences after unwrapping `θ` (period `2π`) and `y` (period `L`).
pub fn velocity_estimates(samples: &[(f64, f64, f64, f64)], omega: f64, length: f64) -> Result<Vec<ModulationVelocity>> {
    let t: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let dt = check_uniform(&t)?;
    let theta = unwrap_periodic(&samples.iter().map(|s| s.1).collect::<Vec<_>>(), 2.0 * PI);
    let y = unwrap_periodic(&samples.iter().map(|s| s.2).collect::<Vec<_>>(), length);
    let lambda: Vec<f64> = samples.iter().map(|s| s.3).collect();
    let (dth, dy, dl) = (centered_derivative(&theta, dt), centered_derivative(&y, dt), centered_derivative(&lambda, dt));
    Ok((0..dth.len())
        .map(|i| ModulationVelocity {
            t: t[i + 2],
            theta_dot_minus_lambda_omega: dth[i] - lambda[i + 2] * omega,
            y_dot: dy[i],
            lambda_dot: dl[i],
        })
        .collect())
}

/// `inf_{θ,y} ‖ū - T(θ)Φ_ω(· - y)‖_X` and its minimizer.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OrbitDistance {
    pub distance: f64,
    pub theta: f64,
    pub y: f64,
}

/// Overlap `C(y) = ⟨u, Φ₁(·-y)⟩_{H¹} + ⟨v, Φ₂(·-y)⟩` (complex) and
/// `D(y) = ⟨n, Φ₃(·-y)⟩` as trigonometric polynomials in `y`.
struct Overlap {
    wavenumbers: Vec<f64>,
    nyquist: usize,
    c: FieldC,
    d: FieldC,
}

impl Overlap {
    fn new(grid: &Grid, s: &Quad, target: &Quad) -> Self {
        let scale = grid.spacing() / grid.points() as f64;
        let (s1, s2, s3) = (grid.fft(&s.f), grid.fft(&s.g), grid.fft_real(&s.h));
        let (p1, p2, p3) = (grid.fft(&target.f), grid.fft(&target.g), grid.fft_real(&target.h));
        let k = grid.wavenumbers().to_vec();
        let c = (0..k.len())
            .map(|j| scale * ((1.0 + k[j] * k[j]) * s1[j] * p1[j].conj() + s2[j] * p2[j].conj()))
            .collect();
        let d = (0..k.len()).map(|j| scale * s3[j] * p3[j].conj()).collect();
        Overlap { wavenumbers: k, nyquist: grid.nyquist(), c, d }
    }

    /// Value and first two `y`-derivatives of a trigonometric polynomial.
    fn eval(&self, coef: &[Complex64], y: f64) -> [Complex64; 3] {
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for (j, (a, &k)) in coef.iter().zip(&self.wavenumbers).enumerate() {
            if j == self.nyquist {
                out[0] += a * (k * y).cos();
                out[1] -= a * k * (k * y).sin();
                out[2] -= a * k * k * (k * y).cos();
            } else {
                let e = Complex64::from_polar(1.0, k * y);
                let ik = Complex64::new(0.0, k);
                out[0] += a * e;
                out[1] += a * ik * e;
                out[2] += a * ik * ik * e;
            }
        }
        out
    }

    /// `f(y) = |C(y)| + Re D(y)` with `f'` and `f''`.
    fn objective(&self, y: f64) -> (f64, f64, f64, Complex64) {
        let [c, c1, c2] = self.eval(&self.c, y);
        let [d, d1, d2] = self.eval(&self.d, y);
        let r = c.norm();
        if r == 0.0 {
            return (d.re, d1.re, d2.re, c);
        }
        let g = (c.conj() * c1).re;
        let f1 = g / r + d1.re;
        let f2 = (c1.norm_sqr() + (c.conj() * c2).re) / r - g * g / (r * r * r) + d2.re;
        (r + d.re, f1, f2, c)
    }
}

pub fn orbit_distance(grid: &Grid, s: &Quad, fam: &SolitonFamily) -> Result<OrbitDistance> {
    orbit_distance_to(grid, s, fam.standing_wave())
}

fn orbit_distance_to(grid: &Grid, s: &Quad, standing: &Quad) -> Result<OrbitDistance> {
    s.check_grid(grid)?;
    let ov = Overlap::new(grid, s, standing);
    let n = grid.points();
    let h = grid.spacing();
    // coarse scan over the node shifts y = jh
    let cs = grid.ifft(ov.c.clone());
    let ds = grid.ifft(ov.d.clone());
    let best = (0..n)
        .max_by(|&i, &j| {
            let fi = cs[i].norm() + ds[i].re;
            let fj = cs[j].norm() + ds[j].re;
            fi.total_cmp(&fj)
        })
        .unwrap_or(0);
    let y0 = best as f64 * h;
    let mut y = y0;
    for _ in 0..30 {
        let (_, f1, f2, _) = ov.objective(y);
        if !(f2 < 0.0) {
            break;
        }
        let step = (-f1 / f2).clamp(-h, h);
        y += step;
        if step.abs() < 1e-15 * grid.length() {
            break;
        }
    }
    if (y - y0).abs() > h {
        y = y0;
    }
    let (_, _, _, c) = ov.objective(y);
    let theta = if c.norm() > 0.0 { c.arg() } else { 0.0 };
    let y = grid.wrap(y);
    let fitted = translate_rotate(grid, standing, theta, y);
    let distance = x_norm(grid, &s.sub(&fitted))?;
    Ok(OrbitDistance { distance, theta, y })
}
