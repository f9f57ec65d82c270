//! Preconditioned conjugate gradients for the condensed systems, dense
//! per-block solves, and the indefinite solvers used by the saddle-point
//! oracle.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    pub wall_time: f64,
}

/// Solves `M x = b` for SPD `M`, given as an action, with Jacobi
/// preconditioning from `diagonal`. Stops when `‖b - Mx‖ ≤ tol ‖b‖`.
/// `max_iter = None` means `10 · n`.
pub fn cg_spd<F>(
    apply: F,
    diagonal: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: Option<usize>,
) -> Result<(Vec<f64>, SolveReport)>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidArgument(format!("tolerance must lie in (0, 1), got {tol}")));
    }
    let start = Instant::now();
    let n = b.len();
    let max_iter = max_iter.unwrap_or(10 * n.max(1));
    let inv_diag: Vec<f64> = diagonal.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    let report = |iterations, res: f64, wall: Instant| SolveReport {
        iterations,
        relative_residual: if b_norm > 0.0 { res / b_norm } else { 0.0 },
        converged: res <= tol * b_norm,
        wall_time: wall.elapsed().as_secs_f64(),
    };
    if b_norm == 0.0 {
        return Ok((x, report(0, 0.0, start)));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = b_norm;
    for it in 1..=max_iter {
        let q = apply(&p);
        let curvature = dot(&p, &q);
        if !(curvature > 0.0) {
            return Err(Error::Indefinite { iteration: it, curvature });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        res = norm(&r);
        if res <= tol * b_norm {
            let ax = apply(&x);
            let true_res = norm(&b.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>());
            log::debug!("cg converged: recursive {:.3e}, true {:.3e}", res / b_norm, true_res / b_norm);
            return Ok((x, report(it, res, start)));
        }
        if it % 1000 == 0 {
            log::trace!("cg iteration {it}: relative residual {:.3e}", res / b_norm);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok((x, report(max_iter, res, start)))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cholesky factor of a symmetric block, or LU when Cholesky fails.
#[derive(Debug, Clone)]
pub enum DenseFactor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl DenseFactor {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            DenseFactor::Cholesky(c) => c.solve(b),
            DenseFactor::Lu(lu) => lu.solve(b).expect("factor checked invertible"),
        }
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            DenseFactor::Cholesky(c) => c.solve(b),
            DenseFactor::Lu(lu) => lu.solve(b).expect("factor checked invertible"),
        }
    }

    /// `L⁻¹ b` for a Cholesky factor `L Lᵀ`, so that `bᵀ M⁻¹ b = (L⁻¹b)ᵀ(L⁻¹b)`.
    pub fn half_solve(&self, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        match self {
            DenseFactor::Cholesky(c) => c.l_dirty().solve_lower_triangular(b),
            DenseFactor::Lu(_) => None,
        }
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        match self {
            DenseFactor::Cholesky(c) => c.inverse(),
            DenseFactor::Lu(lu) => lu.try_inverse().expect("factor checked invertible"),
        }
    }
}

/// Factors a symmetric block, preferring Cholesky. A block that is not
/// positive definite but still invertible is factored by LU with a warning;
/// a singular block is an error tagged with `vertex`.
pub fn factor_symmetric(block: &DMatrix<f64>, vertex: usize) -> Result<DenseFactor> {
    if let Some(c) = nalgebra::Cholesky::new(block.clone()) {
        return Ok(DenseFactor::Cholesky(c));
    }
    let lu = block.clone().lu();
    let scale = block.abs().max().max(f64::MIN_POSITIVE);
    let min_pivot = (0..block.nrows()).map(|i| lu.u()[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if block.nrows() > 0 && min_pivot <= 1e-14 * scale {
        return Err(Error::NotSpd { vertex });
    }
    log::warn!("block at vertex {vertex} is not positive definite; falling back to LU");
    Ok(DenseFactor::Lu(lu))
}

/// Cholesky solve of a symmetric positive definite system.
pub fn dense_spd_solve(block: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    nalgebra::Cholesky::new(block.clone()).map(|c| c.solve(rhs)).ok_or(Error::NotSpd { vertex: usize::MAX })
}

/// Dense LU solve of a general square system.
pub fn dense_lu_solve(matrix: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    matrix.lu().solve(rhs).ok_or_else(|| Error::NonConvergence("singular dense system".into()))
}

/// Unpreconditioned MINRES for symmetric (possibly indefinite) systems.
pub fn minres<F>(apply: F, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let start = Instant::now();
    let n = b.len();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((x, SolveReport { iterations: 0, relative_residual: 0.0, converged: true, wall_time: 0.0 }));
    }
    // Lanczos vectors and Givens-rotation state.
    let mut v_prev = vec![0.0; n];
    let mut v: Vec<f64> = b.iter().map(|x| x / b_norm).collect();
    let (mut c_prev, mut s_prev, mut c, mut s) = (1.0, 0.0, 1.0, 0.0);
    let mut w_prev = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut eta = b_norm;
    let mut res = b_norm;
    let mut beta_k = 0.0;
    for it in 1..=max_iter {
        let av = apply(&v);
        let alpha = dot(&v, &av);
        let mut v_next: Vec<f64> = (0..n).map(|i| av[i] - alpha * v[i] - beta_k * v_prev[i]).collect();
        let beta_next = norm(&v_next);
        if beta_next > 0.0 {
            v_next.iter_mut().for_each(|x| *x /= beta_next);
        }
        // Apply previous rotations to the new column of T.
        let eps = s_prev * beta_k;
        let delta_bar = c_prev * beta_k;
        let delta = c * delta_bar + s * alpha;
        let gamma_bar = -s * delta_bar + c * alpha;
        let gamma = (gamma_bar * gamma_bar + beta_next * beta_next).sqrt();
        if gamma == 0.0 {
            return Err(Error::NonConvergence("MINRES breakdown".into()));
        }
        let (c_new, s_new) = (gamma_bar / gamma, beta_next / gamma);
        let w_next: Vec<f64> = (0..n).map(|i| (v[i] - delta * w[i] - eps * w_prev[i]) / gamma).collect();
        for i in 0..n {
            x[i] += c_new * eta * w_next[i];
        }
        eta *= -s_new;
        res = eta.abs();
        w_prev = std::mem::replace(&mut w, w_next);
        v_prev = std::mem::replace(&mut v, v_next);
        beta_k = beta_next;
        c_prev = c;
        s_prev = s;
        c = c_new;
        s = s_new;
        if res <= tol * b_norm {
            return Ok((
                x,
                SolveReport {
                    iterations: it,
                    relative_residual: res / b_norm,
                    converged: true,
                    wall_time: start.elapsed().as_secs_f64(),
                },
            ));
        }
    }
    Ok((
        x,
        SolveReport {
            iterations: max_iter,
            relative_residual: res / b_norm,
            converged: false,
            wall_time: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Largest system the oracle solves densely.
pub const DENSE_LIMIT: usize = 4000;

#[cfg(test)]
mod tests {
    use super::*;

    fn matvec(m: &DMatrix<f64>) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
        move |x| (m * DVector::from_column_slice(x)).data.into()
    }

    #[test]
    fn cg_identity_one_iteration() {
        let b = vec![1.0, -2.0, 3.0];
        let (x, rep) = cg_spd(|x| x.to_vec(), &[1.0; 3], &b, 1e-10, None).unwrap();
        assert_eq!(x, b);
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
    }

    #[test]
    fn cg_two_eigenvalues() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        // Unpreconditioned so the two-eigenvalue bound applies.
        let (x, rep) = cg_spd(matvec(&m), &[1.0, 1.0], &[1.0, 1.0], 1e-12, None).unwrap();
        assert!(rep.iterations <= 2);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn cg_rejects_indefinite_and_bad_tolerance() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(cg_spd(matvec(&m), &[1.0, 1.0], &[0.0, 1.0], 1e-10, None), Err(Error::Indefinite { .. })));
        assert!(cg_spd(|x| x.to_vec(), &[1.0], &[1.0], 0.0, None).is_err());
        assert!(cg_spd(|x| x.to_vec(), &[1.0], &[1.0], 1.0, None).is_err());
        let (x, rep) = cg_spd(|x| x.to_vec(), &[1.0], &[0.0], 1e-10, None).unwrap();
        assert_eq!((x, rep.iterations, rep.converged), (vec![0.0], 0, true));
    }

    #[test]
    fn dense_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(dense_spd_solve(&id, &b).unwrap(), b);
        let hilbert = DMatrix::from_fn(3, 3, |i, j| 1.0 / (i + j + 1) as f64);
        let rows = DVector::from_fn(3, |i, _| hilbert.row(i).sum());
        let x = dense_spd_solve(&hilbert, &rows).unwrap();
        assert!((x - DVector::from_element(3, 1.0)).abs().max() < 1e-12);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(dense_spd_solve(&bad, &DVector::zeros(2)), Err(Error::NotSpd { .. })));
        assert!(matches!(factor_symmetric(&bad, 3), Ok(DenseFactor::Lu(_))));
        assert!(matches!(factor_symmetric(&DMatrix::zeros(2, 2), 7), Err(Error::NotSpd { vertex: 7 })));
    }

    #[test]
    fn minres_on_saddle() {
        // [2 1; 1 0] is symmetric indefinite.
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 0.0, 3.0, 1.0, 1.0, 1.0, 0.0]);
        let want = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        let b = &m * &want;
        let (x, rep) = minres(matvec(&m), b.as_slice(), 1e-12, 50).unwrap();
        assert!(rep.converged);
        assert!((DVector::from_vec(x) - want).abs().max() < 1e-10);
        let lu = dense_lu_solve(m, &b).unwrap();
        assert!((lu - DVector::from_vec(vec![1.0, -1.0, 2.0])).abs().max() < 1e-12);
    }
}
