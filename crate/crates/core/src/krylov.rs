//! Matrix-free Krylov solvers and a small block eigensolver.
//!
//! All reductions use fixed-size chunks so results do not depend on the thread count.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::{Error, Result};

const CHUNK: usize = 4096;

pub trait LinearOperator: Sync {
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl<F> LinearOperator for F
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self(x, y)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    partial.iter().sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_chunks_mut(CHUNK)
        .zip(x.par_chunks(CHUNK))
        .for_each(|(ys, xs)| ys.iter_mut().zip(xs).for_each(|(a, b)| *a += alpha * b));
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    x.par_chunks_mut(CHUNK)
        .for_each(|xs| xs.iter_mut().for_each(|a| *a *= alpha));
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradients for a symmetric positive definite operator, started from zero.
pub fn cg(op: &dyn LinearOperator, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, KrylovStats)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok((x, KrylovStats { iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::LinearSolveStall {
                iterations: it,
                residual: rr.sqrt() / b_norm,
            });
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let rel = rr_new.sqrt() / b_norm;
        if rel <= tol {
            return Ok((x, KrylovStats { iterations: it, relative_residual: rel }));
        }
        let beta = rr_new / rr;
        rr = rr_new;
        p.par_chunks_mut(CHUNK)
            .zip(r.par_chunks(CHUNK))
            .for_each(|(ps, rs)| ps.iter_mut().zip(rs).for_each(|(pi, ri)| *pi = ri + beta * *pi));
    }
    Err(Error::LinearSolveStall {
        iterations: max_iter,
        residual: rr.sqrt() / b_norm,
    })
}

/// MINRES for a symmetric, possibly indefinite operator, started from zero.
///
/// The returned residual is the recurrence estimate of `||b - A x|| / ||b||`.
pub fn minres(op: &dyn LinearOperator, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, KrylovStats)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let beta1 = norm(b);
    if beta1 == 0.0 {
        return Ok((x, KrylovStats { iterations: 0, relative_residual: 0.0 }));
    }
    let mut v_prev = vec![0.0; n];
    let mut v: Vec<f64> = b.iter().map(|bi| bi / beta1).collect();
    let mut w_prev = vec![0.0; n];
    let mut w_prev2 = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut beta = 0.0;
    let (mut c_prev, mut s_prev) = (1.0, 0.0);
    let (mut c, mut s) = (1.0, 0.0);
    let mut eta = beta1;
    for it in 1..=max_iter {
        op.apply(&v, &mut p);
        let alpha = dot(&v, &p);
        axpy(-alpha, &v, &mut p);
        axpy(-beta, &v_prev, &mut p);
        let beta_next = norm(&p);

        let eps = s_prev * beta;
        let delta_bar = c_prev * beta;
        let delta = c * delta_bar + s * alpha;
        let gamma_bar = -s * delta_bar + c * alpha;
        let gamma = gamma_bar.hypot(beta_next);
        if gamma == 0.0 {
            return Err(Error::LinearSolveStall {
                iterations: it,
                residual: eta.abs() / beta1,
            });
        }
        let (c_new, s_new) = (gamma_bar / gamma, beta_next / gamma);
        let tau = c_new * eta;
        eta *= -s_new;

        // w = (v - delta w_prev - eps w_prev2) / gamma
        let mut w = std::mem::take(&mut w_prev2);
        w.par_chunks_mut(CHUNK)
            .zip(v.par_chunks(CHUNK))
            .zip(w_prev.par_chunks(CHUNK))
            .for_each(|((ws, vs), wp)| {
                for ((wi, vi), wpi) in ws.iter_mut().zip(vs).zip(wp) {
                    *wi = (vi - delta * wpi - eps * *wi) / gamma;
                }
            });
        axpy(tau, &w, &mut x);
        w_prev2 = std::mem::replace(&mut w_prev, w);

        let rel = eta.abs() / beta1;
        if rel <= tol {
            return Ok((x, KrylovStats { iterations: it, relative_residual: rel }));
        }
        if beta_next == 0.0 {
            // Invariant subspace found but the residual is not small: inconsistent system.
            return Err(Error::LinearSolveStall { iterations: it, residual: rel });
        }
        scale(1.0 / beta_next, &mut p);
        v_prev = std::mem::replace(&mut v, std::mem::take(&mut p));
        p = vec![0.0; n];
        beta = beta_next;
        c_prev = c;
        s_prev = s;
        c = c_new;
        s = s_new;
    }
    Err(Error::LinearSolveStall {
        iterations: max_iter,
        residual: eta.abs() / beta1,
    })
}

/// Result of [`lobpcg_smallest`].
#[derive(Debug, Clone)]
pub struct EigenEstimate {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    /// `sqrt(r^T P T r)`, `P` the projector onto the constrained space, for the final residual `r = A x - λ B x` with `x^T B x = 1`.
    pub residual: f64,
}

/// Smallest eigenpair of the pencil `(A, B)` restricted to the `B`-orthogonal complement
/// of `constraints`, by block-size-one LOBPCG with preconditioner `precond`.
pub fn lobpcg_smallest(
    a: &dyn LinearOperator,
    b: &dyn LinearOperator,
    precond: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
    constraints: &[Vec<f64>],
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<EigenEstimate> {
    let n = start.len();
    let apply = |op: &dyn LinearOperator, x: &[f64]| {
        let mut y = vec![0.0; n];
        op.apply(x, &mut y);
        y
    };
    let by: Vec<Vec<f64>> = constraints.iter().map(|y| apply(b, y)).collect();
    let k = constraints.len();
    let gram = DMatrix::from_fn(k, k, |i, j| dot(&constraints[i], &by[j]));
    let gram_inv = if k > 0 {
        gram.clone()
            .try_inverse()
            .ok_or(Error::DegenerateBasis(f64::INFINITY))?
    } else {
        gram
    };
    let project = |x: &mut Vec<f64>| {
        if k == 0 {
            return;
        }
        let rhs = DVector::from_fn(k, |i, _| dot(&by[i], x));
        let coef = &gram_inv * rhs;
        for (i, y) in constraints.iter().enumerate() {
            axpy(-coef[i], y, x);
        }
    };

    let mut x = start.to_vec();
    project(&mut x);
    let mut bx = apply(b, &x);
    let xbx = dot(&x, &bx);
    if !(xbx > 0.0) {
        return Err(Error::InvalidArgument("LOBPCG start vector lies in the constraint span".into()));
    }
    let norm_x = xbx.sqrt();
    scale(1.0 / norm_x, &mut x);
    scale(1.0 / norm_x, &mut bx);
    let mut ax = apply(a, &x);
    let mut lambda = dot(&x, &ax);
    let mut p: Option<Vec<f64>> = None;

    for it in 0..max_iter {
        let mut r = ax.clone();
        axpy(-lambda, &bx, &mut r);
        let mut w = precond(&r)?;
        // Only the part of the residual inside the constrained space counts.
        project(&mut w);
        let residual = dot(&r, &w).max(0.0).sqrt();
        if residual <= tol * lambda.abs().max(1.0) {
            return Ok(EigenEstimate {
                value: lambda,
                vector: x,
                iterations: it,
                residual,
            });
        }

        // B-orthonormal basis of span{x, w, p}.
        let mut basis: Vec<Vec<f64>> = vec![x.clone()];
        let mut bbasis: Vec<Vec<f64>> = vec![bx.clone()];
        for mut cand in std::iter::once(w).chain(p.take()) {
            let before = {
                let bc = apply(b, &cand);
                dot(&cand, &bc)
            };
            for _ in 0..2 {
                for (q, bq) in basis.iter().zip(&bbasis) {
                    let c = dot(bq, &cand);
                    axpy(-c, q, &mut cand);
                }
            }
            // Cancellation against x amplifies its constraint defect; project again.
            project(&mut cand);
            let bc = apply(b, &cand);
            let nrm2 = dot(&cand, &bc);
            if nrm2 > 1e-20 * before && nrm2 > 1e-300 {
                let s = 1.0 / nrm2.sqrt();
                let mut q = cand;
                scale(s, &mut q);
                let mut bq = bc;
                scale(s, &mut bq);
                basis.push(q);
                bbasis.push(bq);
            }
        }
        let abasis: Vec<Vec<f64>> = basis.iter().map(|q| apply(a, q)).collect();
        let m = basis.len();
        let small = DMatrix::from_fn(m, m, |i, j| 0.5 * (dot(&basis[i], &abasis[j]) + dot(&basis[j], &abasis[i])));
        let eig = SymmetricEigen::new(small);
        let imin = eig.eigenvalues.imin();
        let coef = eig.eigenvectors.column(imin).into_owned();

        let combine = |vecs: &[Vec<f64>], from: usize| {
            let mut out = vec![0.0; n];
            for (i, v) in vecs.iter().enumerate().skip(from) {
                axpy(coef[i], v, &mut out);
            }
            out
        };
        let new_p = if m > 1 { Some(combine(&basis, 1)) } else { None };
        x = combine(&basis, 0);
        ax = combine(&abasis, 0);
        bx = combine(&bbasis, 0);
        lambda = eig.eigenvalues[imin];
        p = new_p;
        if m == 1 {
            return Ok(EigenEstimate {
                value: lambda,
                vector: x,
                iterations: it + 1,
                residual,
            });
        }
    }
    Err(Error::EigEstimateStall(max_iter))
}
