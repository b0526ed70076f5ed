//! Fixed-step RK4 integration of the first-order KGZ system
//!
//! ```text
//! u_t = v,  v_t = u_xx - u - n u,  n_t = m_xx,  m_t = c₀²(n + |u|²) - mean
//! ```
//!
//! with spectral space derivatives and optional 2/3-rule dealiasing of the
//! two quadratic products.

use std::ops::ControlFlow;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KgzError, Result};
use crate::functionals::{charge, energy, momentum};
use crate::grid::{FieldC, FieldR, Grid};
use crate::state::KgzState;

/// Any field entry above this magnitude aborts the run.
pub const BLOW_UP_LEVEL: f64 = 1e6;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvolveConfig {
    pub c0: f64,
    pub dt: f64,
    pub t_final: f64,
    pub record_every: usize,
    pub dealias: bool,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig { c0: 1.0, dt: 5e-3, t_final: 20.0, record_every: 20, dealias: true }
    }
}

/// `0.5 h / max(1, c₀)`.
pub fn dt_max(grid: &Grid, c0: f64) -> f64 {
    0.5 * grid.spacing() / c0.max(1.0)
}

impl EvolveConfig {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let bad = |m: String| Err(KgzError::InvalidConfig(m));
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return bad(format!("c0 must be positive, got {}", self.c0));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("T must be positive, got {}", self.t_final));
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        let limit = dt_max(grid, self.c0);
        if self.dt > limit {
            return bad(format!("dt = {} exceeds the stability limit {limit}", self.dt));
        }
        Ok(())
    }

    /// Number of steps, rounding `T/dt` to the nearest integer.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

fn dealias_c(grid: &Grid, f: &[Complex64]) -> FieldC {
    grid.apply_symbol_c(f, |j, _| Complex64::new(if grid.keeps_mode(j) { 1.0 } else { 0.0 }, 0.0))
}

fn dealias_r(grid: &Grid, f: &[f64]) -> FieldR {
    grid.apply_symbol_r(f, |j, _| Complex64::new(if grid.keeps_mode(j) { 1.0 } else { 0.0 }, 0.0))
}

/// Time derivative `(v, u_xx - u - nu, m_xx, c₀²(n + |u|²) - mean)`.
pub fn rhs(grid: &Grid, s: &KgzState, c0: f64, dealias: bool) -> Result<KgzState> {
    s.check_grid(grid)?;
    let uxx = grid.derivative_c(&s.u, 2)?;
    let mxx = grid.derivative_r(&s.m, 2)?;
    let (nu, u2): (FieldC, FieldR) = if dealias {
        let u = dealias_c(grid, &s.u);
        let n = dealias_r(grid, &s.n);
        let nu: FieldC = n.iter().zip(&u).map(|(a, b)| b * a).collect();
        let u2: FieldR = u.iter().map(|z| z.norm_sqr()).collect();
        (dealias_c(grid, &nu), dealias_r(grid, &u2))
    } else {
        (
            s.n.iter().zip(&s.u).map(|(a, b)| b * a).collect(),
            s.u.iter().map(|z| z.norm_sqr()).collect(),
        )
    };
    let v_t = (0..s.u.len()).map(|j| uxx[j] - s.u[j] - nu[j]).collect();
    let mut m_t: FieldR = s.n.iter().zip(&u2).map(|(n, a)| c0 * c0 * (n + a)).collect();
    let mean = grid.mean(&m_t);
    m_t.iter_mut().for_each(|x| *x -= mean);
    Ok(KgzState { u: s.v.clone(), v: v_t, n: mxx, m: m_t })
}

/// One classical RK4 step of size `dt`.
pub fn rk4_step(grid: &Grid, s: &KgzState, dt: f64, c0: f64, dealias: bool) -> Result<KgzState> {
    let k1 = rhs(grid, s, c0, dealias)?;
    let k2 = rhs(grid, &s.axpy(0.5 * dt, &k1), c0, dealias)?;
    let k3 = rhs(grid, &s.axpy(0.5 * dt, &k2), c0, dealias)?;
    let k4 = rhs(grid, &s.axpy(dt, &k3), c0, dealias)?;
    Ok(s.axpy(dt / 6.0, &k1).axpy(dt / 3.0, &k2).axpy(dt / 3.0, &k3).axpy(dt / 6.0, &k4))
}

/// One step under `cfg`, failing with `BlowUp` on non-finite or huge fields.
pub fn step(grid: &Grid, s: &KgzState, cfg: &EvolveConfig, t: f64) -> Result<KgzState> {
    let next = rk4_step(grid, s, cfg.dt, cfg.c0, cfg.dealias)?;
    let magnitude = next.max_abs();
    if !next.is_finite() || magnitude > BLOW_UP_LEVEL {
        return Err(KgzError::BlowUp { t: t + cfg.dt, magnitude });
    }
    Ok(next)
}

/// Called at `t = 0`, every `record_every` steps and at the final time.
pub trait Observer {
    fn observe(&mut self, t: f64, s: &KgzState) -> Result<ControlFlow<()>>;
}

/// Conserved quantities and the first two moments of `ν` at one time.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub energy: f64,
    pub charge: f64,
    pub momentum: f64,
    /// `∫ν dx`.
    pub moment0: f64,
    /// `∫xν dx`.
    pub moment1: f64,
}

pub fn sample(grid: &Grid, t: f64, s: &KgzState, c0: f64) -> Result<Sample> {
    let nu = s.nu(grid)?;
    let xnu: FieldR = grid.nodes().iter().zip(&nu).map(|(x, v)| x * v).collect();
    Ok(Sample {
        t,
        energy: energy(grid, s, c0)?,
        charge: charge(grid, s),
        momentum: momentum(grid, s, c0)?,
        moment0: grid.integrate(&nu),
        moment1: grid.integrate(&xnu),
    })
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub final_state: KgzState,
    pub final_time: f64,
    /// An observer asked to stop before `T`.
    pub stopped_early: bool,
}

impl Trajectory {
    pub fn initial(&self) -> &Sample {
        &self.samples[0]
    }

    /// Largest relative deviation of `E`, `Q`, `P` from their initial values;
    /// quantities below unit size are measured absolutely.
    pub fn max_drift(&self) -> (f64, f64, f64) {
        let s0 = self.initial();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        self.samples.iter().fold((0.0, 0.0, 0.0), |(e, q, p), s| {
            (
                f64::max(e, rel(s.energy, s0.energy)),
                f64::max(q, rel(s.charge, s0.charge)),
                f64::max(p, rel(s.momentum, s0.momentum)),
            )
        })
    }
}

/// Integrates `s0` to `cfg.t_final`, sampling every `record_every` steps.
pub fn evolve(
    grid: &Grid,
    s0: &KgzState,
    cfg: &EvolveConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    cfg.validate(grid)?;
    s0.check_grid(grid)?;
    grid.check_zero_mean(&s0.nu(grid)?)?;
    let steps = cfg.steps();
    let mut s = s0.clone();
    let mut samples = vec![sample(grid, 0.0, &s, cfg.c0)?];
    let mut stop = notify(observers, 0.0, &s)?;
    let mut t = 0.0;
    let mut done = 0;
    while done < steps && !stop {
        s = step(grid, &s, cfg, t)?;
        done += 1;
        t = done as f64 * cfg.dt;
        if done % cfg.record_every == 0 || done == steps {
            samples.push(sample(grid, t, &s, cfg.c0)?);
            stop = notify(observers, t, &s)?;
        }
    }
    Ok(Trajectory { samples, final_state: s, final_time: t, stopped_early: stop && done < steps })
}

fn notify(observers: &mut [&mut dyn Observer], t: f64, s: &KgzState) -> Result<bool> {
    let mut stop = false;
    for o in observers.iter_mut() {
        stop |= o.observe(t, s)?.is_break();
    }
    Ok(stop)
}

/// `(u, v, n, m) ↦ (u, -v, n, -m)`: reverses the direction of time.
pub fn time_reversed(s: &KgzState) -> KgzState {
    KgzState {
        u: s.u.clone(),
        v: s.v.iter().map(|z| -z).collect(),
        n: s.n.clone(),
        m: s.m.iter().map(|x| -x).collect(),
    }
}
