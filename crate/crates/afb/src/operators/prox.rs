//! Proximal operators: closed forms where available, an internal projected
//! gradient solve for box-constrained problems otherwise.

use nalgebra::DVector;

use crate::block::slice_norm;
use crate::error::{Error, Result};

use super::BoxQpBlock;

/// Default fixed-point tolerance of the inner projected-gradient solver; far
/// below the outer tolerances so agent proxes behave as exact evaluations.
pub const DEFAULT_INNER_TOL: f64 = 1e-10;

/// Prox of `f(x) = sum_j q_diag_j x_j^2 / 2 + q_lin_j x_j`, coordinate-wise:
/// `(v_j - gamma * q_lin_j) / (1 + gamma * q_diag_j)`.
pub fn prox_separable_quadratic(q_diag: &[f64], q_lin: &[f64], gamma: f64, v: &[f64]) -> Result<Vec<f64>> {
    if gamma <= 0.0 {
        return Err(Error::InvalidParameter(format!("prox step must be > 0, got {gamma}")));
    }
    if q_diag.len() != v.len() || q_lin.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: v.len(), got: q_diag.len() });
    }
    if q_diag.iter().any(|d| *d < 0.0) {
        return Err(Error::InvalidParameter("q_diag must be >= 0".into()));
    }
    Ok(v.iter()
        .zip(q_diag.iter().zip(q_lin))
        .map(|(vj, (dj, lj))| (vj - gamma * lj) / (1.0 + gamma * dj))
        .collect())
}

fn clamp_into(u: &[f64], lo: &[f64], hi: &[f64], out: &mut [f64]) {
    for i in 0..u.len() {
        out[i] = u[i].max(lo[i]).min(hi[i]);
    }
}

/// Projected-gradient solve of `argmin_u g(u) + ||u - v||^2 / (2 gamma)` over
/// the box `[lo, hi]`, for a smooth convex `g` given through its gradient and
/// a Lipschitz bound `lip` on that gradient.
///
/// Runs the fixed-point iteration `u <- clamp(u - s * (grad g(u) + (u-v)/gamma))`
/// with step `s = 1/(lip + 1/gamma)` until the update norm drops below `tol`.
pub fn prox_box_smooth(
    grad: &dyn Fn(&[f64], &mut [f64]),
    lip: f64,
    lo: &[f64],
    hi: &[f64],
    gamma: f64,
    v: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    if gamma <= 0.0 {
        return Err(Error::InvalidParameter(format!("prox step must be > 0, got {gamma}")));
    }
    if tol <= 0.0 {
        return Err(Error::InvalidParameter("inner tolerance must be > 0".into()));
    }
    let n = v.len();
    if lo.len() != n || hi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: lo.len() });
    }
    if lo.iter().zip(hi).any(|(a, b)| a > b) {
        return Err(Error::InvalidParameter("box needs lo <= hi".into()));
    }
    let step = 1.0 / (lip.max(0.0) + 1.0 / gamma);

    let mut u = vec![0.0; n];
    clamp_into(v, lo, hi, &mut u);
    let mut g = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        grad(&u, &mut g);
        for i in 0..n {
            trial[i] = u[i] - step * (g[i] + (u[i] - v[i]) / gamma);
        }
        clamp_into(&trial, lo, hi, &mut next);
        residual = u.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        std::mem::swap(&mut u, &mut next);
        if residual <= tol {
            return Ok(u);
        }
    }
    Err(Error::ConvergenceFailure { residual, iterations: max_iter })
}

/// Conservative iteration budget `50 * dim * condition estimate` for the
/// projected-gradient inner solve.
pub fn default_max_iter(dim: usize, lip: f64, gamma: f64) -> usize {
    let cond = 1.0 + gamma * lip.max(0.0);
    let budget = 50.0 * dim as f64 * cond;
    (budget.ceil() as usize).clamp(1_000, 50_000_000)
}

/// Prox of `g(x) = x'Qx/2 + q'x + indicator(lo <= x <= hi)` via projected
/// gradient with step `1/(lambda_max(Q) + 1/gamma)`.
pub fn prox_box_qp(
    q: &nalgebra::DMatrix<f64>,
    q_lin: &[f64],
    lo: &[f64],
    hi: &[f64],
    gamma: f64,
    v: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = v.len();
    if q.nrows() != n || q.ncols() != n || q_lin.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: q.nrows() });
    }
    let mv = |x: &[f64]| {
        let xv = DVector::from_column_slice(x);
        (q * xv).as_slice().to_vec()
    };
    let lambda_max = super::power_iteration(n, mv, 1e-8);
    let grad = |u: &[f64], out: &mut [f64]| {
        let uv = DVector::from_column_slice(u);
        let qu = q * uv;
        for i in 0..u.len() {
            out[i] = qu[i] + q_lin[i];
        }
    };
    prox_box_smooth(&grad, lambda_max, lo, hi, gamma, v, tol, max_iter)
}

/// Same as [`prox_box_qp`] but reusing the cached spectral bound of a catalog
/// block and its stored tolerance.
pub fn prox_box_qp_cached(block: &BoxQpBlock, gamma: f64, v: &[f64]) -> Result<Vec<f64>> {
    let grad = |u: &[f64], out: &mut [f64]| {
        let uv = DVector::from_column_slice(u);
        let qu = &block.q * uv;
        for i in 0..u.len() {
            out[i] = qu[i] + block.lin[i];
        }
    };
    let max_iter = default_max_iter(v.len(), block.lambda_max(), gamma);
    prox_box_smooth(
        &grad,
        block.lambda_max(),
        &block.lo,
        &block.hi,
        gamma,
        v,
        block.tol,
        max_iter,
    )
}

/// Fixed-point residual of the projected-gradient map at `u`; this is the
/// certificate quantity of the inner solver.
pub fn box_qp_certificate(
    q: &nalgebra::DMatrix<f64>,
    q_lin: &[f64],
    lo: &[f64],
    hi: &[f64],
    gamma: f64,
    v: &[f64],
    u: &[f64],
) -> f64 {
    let n = u.len();
    let mv = |x: &[f64]| {
        let xv = DVector::from_column_slice(x);
        (q * xv).as_slice().to_vec()
    };
    let lambda_max = super::power_iteration(n, mv, 1e-8);
    let step = 1.0 / (lambda_max + 1.0 / gamma);
    let qu = mv(u);
    let mut next = vec![0.0; n];
    for i in 0..n {
        next[i] = (u[i] - step * (qu[i] + q_lin[i] + (u[i] - v[i]) / gamma)).max(lo[i]).min(hi[i]);
    }
    let diff: Vec<f64> = u.iter().zip(&next).map(|(a, b)| a - b).collect();
    slice_norm(&diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn separable_prox_identity_when_free() {
        let v = vec![1.5, -2.0];
        let out = prox_separable_quadratic(&[0.0, 0.0], &[0.0, 0.0], 1.0, &v).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn separable_prox_closed_forms() {
        // f(x) = x^2/2, gamma=1, v=2 -> 1
        let out = prox_separable_quadratic(&[1.0], &[0.0], 1.0, &[2.0]).unwrap();
        assert_relative_eq!(out[0], 1.0);
        // f(x) = x^2/2 + x, gamma=1, v=0 -> -0.5
        let out = prox_separable_quadratic(&[1.0], &[1.0], 1.0, &[0.0]).unwrap();
        assert_relative_eq!(out[0], -0.5);
    }

    #[test]
    fn separable_prox_rejects_nonpositive_gamma() {
        assert!(prox_separable_quadratic(&[1.0], &[0.0], 0.0, &[1.0]).is_err());
    }

    #[test]
    fn box_qp_free_problem_returns_v() {
        let q = DMatrix::zeros(2, 2);
        let v = vec![3.0, -7.0];
        let out = prox_box_qp(
            &q,
            &[0.0, 0.0],
            &[f64::NEG_INFINITY, f64::NEG_INFINITY],
            &[f64::INFINITY, f64::INFINITY],
            1.0,
            &v,
            1e-12,
            100_000,
        )
        .unwrap();
        assert_relative_eq!(out[0], v[0], epsilon = 1e-10);
        assert_relative_eq!(out[1], v[1], epsilon = 1e-10);
    }

    #[test]
    fn box_qp_clamps_unconstrained_solution() {
        // Q = 1 (1-d), q = 0, box [0,1], gamma=1, v=4: free prox is 2, clamped to 1.
        let q = DMatrix::from_element(1, 1, 1.0);
        let out = prox_box_qp(&q, &[0.0], &[0.0], &[1.0], 1.0, &[4.0], 1e-12, 100_000).unwrap();
        assert_relative_eq!(out[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn box_qp_interior_stationarity() {
        // Q = I, q = (-1,-1), box [0,10]^2, gamma=0.5, v=0: each coord 1/3.
        let q = DMatrix::identity(2, 2);
        let out = prox_box_qp(
            &q,
            &[-1.0, -1.0],
            &[0.0, 0.0],
            &[10.0, 10.0],
            0.5,
            &[0.0, 0.0],
            1e-12,
            100_000,
        )
        .unwrap();
        assert_relative_eq!(out[0], 1.0 / 3.0, epsilon = 1e-9);
        assert_relative_eq!(out[1], 1.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn box_qp_reports_convergence_failure() {
        // Ill-conditioned curvature keeps the projected gradient busy well
        // past two iterations.
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 100.0]));
        let err = prox_box_qp(
            &q,
            &[0.0, 0.0],
            &[-100.0, -100.0],
            &[100.0, 100.0],
            1.0,
            &[10.0, 10.0],
            1e-14,
            2,
        );
        match err {
            Err(crate::error::Error::ConvergenceFailure { residual, iterations }) => {
                assert!(residual > 0.0);
                assert_eq!(iterations, 2);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn box_qp_matches_separable_when_diagonal_and_inactive() {
        let tol = 1e-12;
        let diag = vec![0.7, 1.3, 2.0];
        let lin = vec![0.2, -0.4, 0.9];
        let v = vec![0.5, 0.1, -0.3];
        let gamma = 0.8;
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag.clone()));
        let wide_lo = vec![-1e6; 3];
        let wide_hi = vec![1e6; 3];
        let a = prox_box_qp(&q, &lin, &wide_lo, &wide_hi, gamma, &v, tol, 1_000_000).unwrap();
        let b = prox_separable_quadratic(&diag, &lin, gamma, &v).unwrap();
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() <= 10.0 * tol);
        }
    }
}
