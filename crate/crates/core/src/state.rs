use num_complex::Complex64;

use crate::error::Result;
use crate::grid::{FieldC, FieldR, Grid, Quad};

/// A KGZ state `(u, u_t, n, m)` with `m = -(-Δ)^{-1} n_t` kept zero-mean.
///
/// The physical 4-tuple `(u, v, n, ν)` is recovered with [`KgzState::to_quad`],
/// where `ν = m_xx`.
#[derive(Clone, Debug, PartialEq)]
pub struct KgzState {
    pub u: FieldC,
    pub v: FieldC,
    pub n: FieldR,
    pub m: FieldR,
}

impl KgzState {
    pub fn zeros(points: usize) -> Self {
        KgzState {
            u: vec![Complex64::new(0.0, 0.0); points],
            v: vec![Complex64::new(0.0, 0.0); points],
            n: vec![0.0; points],
            m: vec![0.0; points],
        }
    }

    /// Builds a state from `(u, v, n, ν)`; `ν` must have zero mean.
    pub fn from_quad(grid: &Grid, q: &Quad) -> Result<Self> {
        q.check_grid(grid)?;
        let m: FieldR = grid.inverse_neg_laplacian(&q.k)?.into_iter().map(|x| -x).collect();
        Ok(KgzState { u: q.f.clone(), v: q.g.clone(), n: q.h.clone(), m })
    }

    pub fn nu(&self, grid: &Grid) -> Result<FieldR> {
        grid.derivative_r(&self.m, 2)
    }

    pub fn to_quad(&self, grid: &Grid) -> Result<Quad> {
        Ok(Quad { f: self.u.clone(), g: self.v.clone(), h: self.n.clone(), k: self.nu(grid)? })
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        grid.check_len(self.u.len())?;
        grid.check_len(self.v.len())?;
        grid.check_len(self.n.len())?;
        grid.check_len(self.m.len())
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &KgzState) -> KgzState {
        KgzState {
            u: self.u.iter().zip(&other.u).map(|(x, y)| x + y * a).collect(),
            v: self.v.iter().zip(&other.v).map(|(x, y)| x + y * a).collect(),
            n: self.n.iter().zip(&other.n).map(|(x, y)| x + y * a).collect(),
            m: self.m.iter().zip(&other.m).map(|(x, y)| x + y * a).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        let c = self.u.iter().chain(&self.v).map(|z| z.norm()).fold(0.0, f64::max);
        let r = self.n.iter().chain(&self.m).map(|x| x.abs()).fold(0.0, f64::max);
        c.max(r)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|z| z.re.is_finite() && z.im.is_finite())
            && self.n.iter().chain(&self.m).all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn m_field_inverts_to_nu() {
        let g = make_grid(20.0, 128).unwrap();
        let k = 2.0 * std::f64::consts::PI / 20.0;
        let mut q = Quad::zeros(128);
        q.k = g.nodes().iter().map(|x| (2.0 * k * x).cos() + 0.3 * (k * x).sin()).collect();
        let s = KgzState::from_quad(&g, &q).unwrap();
        let nu = s.nu(&g).unwrap();
        for (a, b) in nu.iter().zip(&q.k) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(g.mean(&s.m).abs() < 1e-15);
    }

    #[test]
    fn nonzero_mean_velocity_is_rejected() {
        let g = make_grid(20.0, 32).unwrap();
        let mut q = Quad::zeros(32);
        q.k = vec![0.1; 32];
        assert!(KgzState::from_quad(&g, &q).is_err());
    }
}
