//! The discrete energy
//!
//! ```text
//! f_eps(u) = ½ Σ_edges |Δu|^2/h^2 h^N + Σ_nodes [½ V(eps x) u^2 - K(eps x)|u|^{p+1}/(p+1)
//!            - Q(eps x)|u|^{σ+1}/(σ+1)] h^N
//! ```
//!
//! its strong-form gradient and Hessian action. The frozen functional is the same object
//! with constant `V`, `K` and `Q = 0`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::grid::{self, Field, Grid};
use crate::krylov::LinearOperator;
use crate::model::Model;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Functional {
    pub grid: Arc<Grid>,
    pub eps: f64,
    pub p: f64,
    pub sigma: f64,
    v: Vec<f64>,
    k: Vec<f64>,
    q: Vec<f64>,
}

/// `|u|^e`, with the integer cases done by repeated multiplication.
#[inline]
pub(crate) fn pow_abs(u: f64, e: f64) -> f64 {
    let a = u.abs();
    if e == e.trunc() && (0.0..=16.0).contains(&e) {
        a.powi(e as i32)
    } else {
        a.powf(e)
    }
}

impl Functional {
    /// Samples `V(eps x)`, `K(eps x)`, `Q(eps x)` at the grid nodes.
    pub fn new(model: &Model, grid: &Arc<Grid>, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        if grid.dim() != model.dim {
            return Err(Error::InvalidArgument("grid and model dimensions differ".into()));
        }
        let coeffs: Vec<[f64; 3]> = (0..grid.len())
            .into_par_iter()
            .map(|flat| {
                let x: Vec<f64> = grid.coords(flat).iter().map(|c| eps * c).collect();
                let c = model.triple.evaluate(&x);
                [c.v, c.k, c.q]
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            eps,
            p: model.p,
            sigma: model.sigma,
            v: coeffs.iter().map(|c| c[0]).collect(),
            k: coeffs.iter().map(|c| c[1]).collect(),
            q: coeffs.iter().map(|c| c[2]).collect(),
        })
    }

    /// `F(u) = ½∫|∇u|^2 + ½ V_xi ∫u^2 - K_xi/(p+1) ∫|u|^{p+1}`.
    pub fn frozen(grid: &Arc<Grid>, v_xi: f64, k_xi: f64, p: f64) -> Result<Self> {
        if !(v_xi > 0.0 && k_xi > 0.0) {
            return Err(Error::Domain(format!("frozen coefficients V={v_xi}, K={k_xi}")));
        }
        let n = grid.len();
        Ok(Self {
            grid: grid.clone(),
            eps: 0.0,
            p,
            sigma: p + 1.0,
            v: vec![v_xi; n],
            k: vec![k_xi; n],
            q: vec![0.0; n],
        })
    }

    pub fn coefficient_v(&self) -> &[f64] {
        &self.v
    }

    pub fn coefficient_k(&self) -> &[f64] {
        &self.k
    }

    pub fn coefficient_q(&self) -> &[f64] {
        &self.q
    }

    fn check(&self, u: &Field) -> Result<()> {
        if *u.grid != *self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    pub fn energy(&self, u: &Field) -> Result<f64> {
        self.check(u)?;
        let (p, s) = (self.p, self.sigma);
        let partial: Vec<f64> = u
            .values
            .par_chunks(4096)
            .enumerate()
            .map(|(c, chunk)| {
                let base = c * 4096;
                chunk
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| {
                        let i = base + j;
                        let a = x.abs();
                        0.5 * self.v[i] * x * x
                            - self.k[i] * pow_abs(a, p + 1.0) / (p + 1.0)
                            - if self.q[i] != 0.0 { self.q[i] * pow_abs(a, s + 1.0) / (s + 1.0) } else { 0.0 }
                    })
                    .sum::<f64>()
            })
            .collect();
        Ok(grid::dirichlet_energy(&self.grid, &u.values) + partial.iter().sum::<f64>() * self.grid.cell_volume())
    }

    /// Node values of `-Δ_h u + V u - K|u|^{p-1}u - Q|u|^{σ-1}u`, zero on the boundary.
    pub fn gradient(&self, u: &Field) -> Result<Field> {
        self.check(u)?;
        let mut out = vec![0.0; self.grid.len()];
        grid::apply_shifted_laplacian(&self.grid, &u.values, Some(&self.v), &mut out);
        let (p, s) = (self.p, self.sigma);
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let x = u.values[i];
            let mut nl = self.k[i] * pow_abs(x, p - 1.0) * x;
            if self.q[i] != 0.0 {
                nl += self.q[i] * pow_abs(x, s - 1.0) * x;
            }
            *o -= nl;
        });
        grid::zero_boundary(&self.grid, &mut out);
        Field::from_values(&self.grid, out)
    }

    /// The Hessian at `u` as a matrix-free operator.
    pub fn hessian(&self, u: &Field) -> Result<Hessian> {
        self.check(u)?;
        let (p, s) = (self.p, self.sigma);
        let coeff = (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let x = u.values[i];
                let mut c = self.v[i] - p * self.k[i] * pow_abs(x, p - 1.0);
                if self.q[i] != 0.0 {
                    c -= s * self.q[i] * pow_abs(x, s - 1.0);
                }
                c
            })
            .collect();
        Ok(Hessian {
            grid: self.grid.clone(),
            coeff,
        })
    }

    pub fn hessian_apply(&self, u: &Field, v: &Field) -> Result<Field> {
        self.check(v)?;
        self.hessian(u)?.apply_field(v)
    }
}

/// `v ↦ -Δ_h v + c v` with a nodal coefficient `c`.
#[derive(Debug, Clone)]
pub struct Hessian {
    pub grid: Arc<Grid>,
    pub coeff: Vec<f64>,
}

impl Hessian {
    pub fn apply_field(&self, v: &Field) -> Result<Field> {
        if *v.grid != *self.grid {
            return Err(Error::GridMismatch);
        }
        let mut out = vec![0.0; self.grid.len()];
        self.apply(&v.values, &mut out);
        Field::from_values(&self.grid, out)
    }
}

impl LinearOperator for Hessian {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        grid::apply_shifted_laplacian(&self.grid, x, Some(&self.coeff), y);
    }
}
