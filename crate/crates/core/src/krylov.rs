//! Right-preconditioned GMRES for the small real systems behind the
//! ground-state Newton solver.

use crate::error::{KgzError, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Result of a GMRES solve that either converged or stopped at its
/// attainable accuracy.
pub(crate) struct GmresOutcome {
    pub x: Vec<f64>,
    /// `‖b - A x‖ / ‖b‖`.
    pub residual: f64,
}

/// Solves `A x = b` with `A = apply`, preconditioner `M^{-1} = precond`, starting from zero.
///
/// Converges when `‖b - A x‖ <= tol * ‖b‖`. Restarts every `restart` inner
/// iterations, up to `max_iter` total. A restart cycle that fails to reduce
/// the true residual ends the solve early with the best iterate.
pub(crate) fn gmres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<GmresOutcome> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(GmresOutcome { x, residual: 0.0 });
    }
    let mut total = 0;
    let mut r = b.to_vec();
    loop {
        let beta = norm(&r);
        if beta <= tol * bnorm {
            return Ok(GmresOutcome { x, residual: beta / bnorm });
        }
        let m = restart.min(max_iter - total).max(1);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut hess = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut rhs = vec![0.0; m + 1];
        rhs[0] = beta;
        let mut used = 0;
        for j in 0..m {
            let mut w = apply(&precond(&basis[j]));
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                hess[i][j] = hij;
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= hij * vi);
            }
            let hnext = norm(&w);
            hess[j + 1][j] = hnext;
            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let d = hess[j][j].hypot(hess[j + 1][j]);
            cs[j] = hess[j][j] / d;
            sn[j] = hess[j + 1][j] / d;
            hess[j][j] = d;
            hess[j + 1][j] = 0.0;
            rhs[j + 1] = -sn[j] * rhs[j];
            rhs[j] *= cs[j];
            used = j + 1;
            total += 1;
            if rhs[j + 1].abs() <= tol * bnorm || hnext == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        let mut coef = vec![0.0; used];
        for i in (0..used).rev() {
            let s: f64 = (i + 1..used).map(|l| hess[i][l] * coef[l]).sum();
            coef[i] = (rhs[i] - s) / hess[i][i];
        }
        let mut update = vec![0.0; n];
        for (c, v) in coef.iter().zip(&basis) {
            update.iter_mut().zip(v).for_each(|(u, vi)| *u += c * vi);
        }
        let dx = precond(&update);
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(xi, d)| xi + d).collect();
        let ax = apply(&trial);
        let r_new: Vec<f64> = b.iter().zip(&ax).map(|(bi, a)| bi - a).collect();
        let res_new = norm(&r_new);
        if res_new > 0.5 * beta {
            // stagnation at round-off level
            let (x, res) = if res_new < beta { (trial, res_new) } else { (x, beta) };
            return Ok(GmresOutcome { x, residual: res / bnorm });
        }
        x = trial;
        r = r_new;
        if res_new <= tol * bnorm {
            return Ok(GmresOutcome { x, residual: res_new / bnorm });
        }
        if total >= max_iter {
            return Err(KgzError::NoConvergence {
                what: "gmres",
                iterations: total,
                residual: norm(&r) / bnorm,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_indefinite_system() {
        let n = 40;
        let diag: Vec<f64> = (0..n).map(|i| if i == 3 { -2.0 } else { 1.0 + i as f64 }).collect();
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut v = diag[i] * x[i];
                    if i > 0 {
                        v += 0.3 * x[i - 1];
                    }
                    if i + 1 < n {
                        v += 0.3 * x[i + 1];
                    }
                    v
                })
                .collect()
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let out = gmres(apply, |v| v.to_vec(), &b, 1e-13, 15, 400).unwrap();
        assert!(out.residual < 1e-13);
        let x = out.x;
        let r: f64 = apply(&x).iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(r < 1e-11);
    }

    #[test]
    fn zero_rhs() {
        let x = gmres(|v| v.to_vec(), |v| v.to_vec(), &[0.0; 5], 1e-12, 5, 5).unwrap().x;
        assert!(x.iter().all(|v| *v == 0.0));
    }
}
