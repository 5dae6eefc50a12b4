//! Almost-solutions `z_ξ(x) = α(εξ) U(β(εξ)|x - ξ|)` with `α = (V/K)^{1/(p-1)}`,
//! `β = V^{1/2}`, and their exact `ξ`-derivatives.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::functional::Functional;
use crate::grid::{dual_norm, Field, Grid};
use crate::model::Model;
use crate::{Error, Result};

/// Minimum distance, in units of `1/β`, between the peak and the box faces.
pub const MARGIN_DECAY_LENGTHS: f64 = 5.0;

pub fn alpha_beta(v: f64, k: f64, p: f64) -> Result<(f64, f64)> {
    if !(v > 0.0 && k > 0.0) {
        return Err(Error::Domain(format!("V={v} and K={k} must be positive")));
    }
    Ok(((v / k).powf(1.0 / (p - 1.0)), v.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    pub xi: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    /// `V(εξ)` and `K(εξ)`.
    pub v: f64,
    pub k: f64,
    /// `∂α/∂ξ_i` and `∂β/∂ξ_i`, including the factor `ε`.
    pub dalpha: Vec<f64>,
    pub dbeta: Vec<f64>,
}

impl PeakParams {
    pub fn new(model: &Model, eps: f64, xi: &[f64]) -> Result<Self> {
        if xi.len() != model.dim {
            return Err(Error::InvalidArgument("ξ has wrong dimension".into()));
        }
        let y: Vec<f64> = xi.iter().map(|c| eps * c).collect();
        let [vj, kj, _] = model.triple.derivatives(&y);
        let (alpha, beta) = alpha_beta(vj.value, kj.value, model.p)?;
        let dalpha = (0..model.dim)
            .map(|i| eps * alpha / (model.p - 1.0) * (vj.grad[i] / vj.value - kj.grad[i] / kj.value))
            .collect();
        let dbeta = (0..model.dim)
            .map(|i| eps * 0.5 * beta * vj.grad[i] / vj.value)
            .collect();
        Ok(Self {
            xi: xi.to_vec(),
            alpha,
            beta,
            eps,
            v: vj.value,
            k: kj.value,
            dalpha,
            dbeta,
        })
    }

    /// Recomputes `α`, `β` from the stored coefficients and compares to `1e-12`.
    pub fn is_consistent(&self, p: f64) -> bool {
        alpha_beta(self.v, self.k, p).is_ok_and(|(a, b)| {
            (a - self.alpha).abs() <= 1e-12 * a && (b - self.beta).abs() <= 1e-12 * b
        })
    }
}

/// Fails unless every coordinate of `ξ` is at least `5/β` inside the box.
pub fn check_margin(grid: &Grid, xi: &[f64], beta: f64) -> Result<()> {
    let margin = MARGIN_DECAY_LENGTHS / beta;
    let inside = xi
        .iter()
        .zip(&grid.center)
        .all(|(x, c)| (x - c).abs() + margin <= grid.half_width());
    if inside {
        Ok(())
    } else {
        Err(Error::Margin {
            xi: xi.to_vec(),
            margin,
        })
    }
}

pub fn build_ansatz(grid: &Arc<Grid>, model: &Model, eps: f64, xi: &[f64]) -> Result<Field> {
    let params = PeakParams::new(model, eps, xi)?;
    check_margin(grid, xi, params.beta)?;
    let profile = &model.profile;
    Ok(Field::from_fn(grid, |x| {
        let r = dist(x, xi);
        params.alpha * profile.value(params.beta * r)
    }))
}

/// `∂z_ξ/∂ξ_i` for `i = 0..N` by the chain rule through `α(εξ)`, `β(εξ)` and `x - ξ`.
pub fn tangent_basis(grid: &Arc<Grid>, model: &Model, eps: f64, xi: &[f64]) -> Result<Vec<Field>> {
    let params = PeakParams::new(model, eps, xi)?;
    check_margin(grid, xi, params.beta)?;
    Ok(tangents_from_params(grid, model, &params, false))
}

/// `-∂_{x_i} z_ξ`, the tangent vectors with `α`, `β` held fixed.
pub fn translation_basis(grid: &Arc<Grid>, model: &Model, eps: f64, xi: &[f64]) -> Result<Vec<Field>> {
    let params = PeakParams::new(model, eps, xi)?;
    check_margin(grid, xi, params.beta)?;
    Ok(tangents_from_params(grid, model, &params, true))
}

fn tangents_from_params(grid: &Arc<Grid>, model: &Model, params: &PeakParams, translation_only: bool) -> Vec<Field> {
    let dim = model.dim;
    let profile = &model.profile;
    let xi = &params.xi;
    let mut out: Vec<Vec<f64>> = vec![vec![0.0; grid.len()]; dim];
    let columns: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let idx = grid.multi_index(flat);
            if grid.is_boundary(&idx) {
                return vec![0.0; dim];
            }
            let x = grid.coords(flat);
            let r = dist(&x, xi);
            let (u, du) = profile.eval(params.beta * r);
            (0..dim)
                .map(|i| {
                    let radial = if r > 0.0 { -(x[i] - xi[i]) / r } else { 0.0 };
                    let mut t = params.alpha * du * params.beta * radial;
                    if !translation_only {
                        t += params.dalpha[i] * u + params.alpha * du * params.dbeta[i] * r;
                    }
                    t
                })
                .collect()
        })
        .collect();
    for (flat, col) in columns.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            out[i][flat] = v;
        }
    }
    out.into_iter()
        .map(|values| Field {
            grid: grid.clone(),
            values,
        })
        .collect()
}

/// `||∇f_ε(z)||_{H^{-1}}` for a given almost-solution `z` on its grid.
pub fn residual_of(model: &Model, eps: f64, z: &Field) -> Result<f64> {
    let functional = Functional::new(model, &z.grid, eps)?;
    dual_norm(&functional.gradient(z)?)
}

/// Dual norm of `∇f_ε` at the sampled ansatz.
pub fn ansatz_residual(grid: &Arc<Grid>, model: &Model, eps: f64, xi: &[f64]) -> Result<f64> {
    let z = build_ansatz(grid, model, eps, xi)?;
    residual_of(model, eps, &z)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{h1_norm, pairing, GridSpec};
    use crate::ground_state::{solve_ground_state, ShootingOptions};
    use crate::potential::{PotentialSpec, PotentialTriple};
    use crate::convergence::fit_order;

    fn model(dim: usize, triple: PotentialTriple) -> Model {
        let profile = solve_ground_state(dim, 3.0, &ShootingOptions::default()).unwrap();
        Model::new(3.0, 5.0, triple, Arc::new(profile)).unwrap()
    }

    fn gaussian_triple(dim: usize) -> PotentialTriple {
        let mut c = vec![0.0; dim];
        c[0] = 0.7;
        let mut d = vec![0.0; dim];
        d[dim - 1] = -0.4;
        PotentialTriple::new(
            PotentialSpec::gaussian_bump(c.clone(), 0.5, 1.0, 1.0),
            PotentialSpec::gaussian_bump(d, -0.3, 1.2, 1.0),
            PotentialSpec::gaussian_bump(c, 1.0, 1.0, 0.0).vanishing_at_origin(dim),
            1e-3,
        )
    }

    #[test]
    fn alpha_beta_examples() {
        assert_eq!(alpha_beta(1.0, 1.0, 3.0).unwrap(), (1.0, 1.0));
        assert_eq!(alpha_beta(4.0, 1.0, 3.0).unwrap(), (2.0, 2.0));
        assert_eq!(alpha_beta(1.0, 4.0, 3.0).unwrap(), (0.5, 1.0));
        assert!(matches!(alpha_beta(0.0, 1.0, 3.0), Err(Error::Domain(_))));
    }

    #[test]
    fn unit_ansatz_is_the_sampled_ground_state() {
        let m = model(3, PotentialTriple::unit_vk(PotentialSpec::constant(0.0)));
        let grid = Grid::new(GridSpec::new(3, 8.0, 33).unwrap()).unwrap();
        let z = build_ansatz(&grid, &m, 0.1, &[0.0; 3]).unwrap();
        let mid = grid.flat_index(&[16, 16, 16]);
        assert_eq!(z.values[mid], m.profile.shoot_height);
        assert_eq!(z.max(), m.profile.shoot_height);
        assert!(z.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn peak_sits_at_nearest_node() {
        let m = model(2, PotentialTriple::unit_vk(PotentialSpec::constant(0.0)));
        let grid = Grid::new(GridSpec::new(2, 8.0, 41).unwrap()).unwrap();
        let xi = [0.33, -1.12];
        let z = build_ansatz(&grid, &m, 0.1, &xi).unwrap();
        let argmax = (0..grid.len()).max_by(|a, b| z.values[*a].total_cmp(&z.values[*b])).unwrap();
        assert_eq!(grid.multi_index(argmax), grid.nearest_node(&xi));
    }

    #[test]
    fn mass_scales_by_change_of_variables() {
        let triple = PotentialTriple::new(
            PotentialSpec::constant(4.0),
            PotentialSpec::constant(1.0),
            PotentialSpec::constant(0.0),
            1e-3,
        );
        let m = model(1, triple);
        let grid = Grid::new(GridSpec::new(1, 12.0, 6001).unwrap()).unwrap();
        let z = build_ansatz(&grid, &m, 0.1, &[0.4]).unwrap();
        let mass = pairing(&z, &z).unwrap();
        let expected = 4.0 / 2.0 * m.profile.moment(2.0);
        assert!((mass - expected).abs() <= 1e-4 * expected, "{mass} vs {expected}");
    }

    #[test]
    fn margin_is_enforced() {
        let m = model(2, PotentialTriple::unit_vk(PotentialSpec::constant(0.0)));
        let grid = Grid::new(GridSpec::new(2, 6.0, 25).unwrap()).unwrap();
        assert!(matches!(build_ansatz(&grid, &m, 0.1, &[1.5, 0.0]), Err(Error::Margin { .. })));
    }

    #[test]
    fn constant_coefficients_give_pure_translations() {
        let m = model(2, PotentialTriple::unit_vk(PotentialSpec::gaussian_bump(vec![0.5, 0.0], 1.0, 1.0, 0.0).vanishing_at_origin(2)));
        let grid = Grid::new(GridSpec::new(2, 8.0, 33).unwrap()).unwrap();
        let t = tangent_basis(&grid, &m, 0.2, &[0.3, 0.1]).unwrap();
        let s = translation_basis(&grid, &m, 0.2, &[0.3, 0.1]).unwrap();
        assert_eq!(t, s);
    }

    #[test]
    fn tangents_match_finite_differences_in_xi() {
        let m = model(2, gaussian_triple(2));
        let grid = Grid::new(GridSpec::new(2, 9.0, 61).unwrap()).unwrap();
        let (eps, xi) = (0.3, [0.4, -0.2]);
        let basis = tangent_basis(&grid, &m, eps, &xi).unwrap();
        let step = 1e-5;
        for (i, t) in basis.iter().enumerate() {
            let mut xp = xi;
            let mut xm = xi;
            xp[i] += step;
            xm[i] -= step;
            let zp = build_ansatz(&grid, &m, eps, &xp).unwrap();
            let zm = build_ansatz(&grid, &m, eps, &xm).unwrap();
            let fd: Vec<f64> = zp.values.iter().zip(&zm.values).map(|(a, b)| (a - b) / (2.0 * step)).collect();
            let err: f64 = fd.iter().zip(&t.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let size: f64 = t.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-6 * size, "axis {i}: {err} vs {size}");
        }
    }

    #[test]
    fn tangent_correction_is_first_order_in_eps() {
        let m = model(3, gaussian_triple(3));
        let grid = Grid::new(GridSpec::new(3, 7.0, 29).unwrap()).unwrap();
        let xi = [0.5, 0.0, -0.5];
        let pairs: Vec<(f64, f64)> = [0.4, 0.2, 0.1, 0.05]
            .iter()
            .map(|&eps| {
                let t = tangent_basis(&grid, &m, eps, &xi).unwrap();
                let s = translation_basis(&grid, &m, eps, &xi).unwrap();
                let diff = Field {
                    grid: grid.clone(),
                    values: t[0].values.iter().zip(&s[0].values).map(|(a, b)| a - b).collect(),
                };
                (eps, h1_norm(&diff))
            })
            .collect();
        let fit = fit_order(&pairs).unwrap();
        assert!(fit.slope >= 0.9, "{fit:?}");
    }

    #[test]
    fn sampled_residual_is_first_order_in_eps() {
        // 1D with a fine grid keeps the discretization floor far below the eps effects.
        let m = model(1, gaussian_triple(1));
        let grid = Grid::new(GridSpec::new(1, 16.0, 3201).unwrap()).unwrap();
        let pairs: Vec<(f64, f64)> = [0.4, 0.2, 0.1, 0.05]
            .iter()
            .map(|&eps| (eps, ansatz_residual(&grid, &m, eps, &[0.0]).unwrap()))
            .collect();
        let fit = fit_order(&pairs).unwrap();
        assert!(fit.slope >= 0.9 && fit.r_squared >= 0.98, "{fit:?}");
    }

    #[test]
    fn unperturbed_residual_is_discretization_only() {
        let m = model(1, PotentialTriple::unit_vk(PotentialSpec::constant(0.0)));
        let res = |n: usize| {
            let grid = Grid::new(GridSpec::new(1, 16.0, n).unwrap()).unwrap();
            ansatz_residual(&grid, &m, 0.2, &[0.0]).unwrap()
        };
        let order = (res(201) / res(401)).log2();
        assert!((order - 2.0).abs() < 0.15, "{order}");
    }

    #[test]
    fn residual_is_translation_equivariant() {
        // Shift ξ and every coefficient centre by a lattice vector of the grid (in x),
        // which is eps times that vector in the coefficient variable.
        let eps = 0.25;
        let shift = [2.0, -1.0];
        let base = gaussian_triple(2);
        let moved = |spec: &PotentialSpec| {
            let mut s = spec.clone();
            for b in &mut s.parameters {
                for (c, d) in b.center.iter_mut().zip(&shift) {
                    *c += eps * d;
                }
            }
            s
        };
        let shifted = PotentialTriple::new(moved(&base.v), moved(&base.k), moved(&base.q), 1e-3);
        let (m0, m1) = (model(2, base), model(2, shifted));
        let spec = GridSpec::new(2, 8.0, 33).unwrap();
        let g0 = Grid::new(spec).unwrap();
        let g1 = Grid::centered(spec, &shift).unwrap();
        let r0 = ansatz_residual(&g0, &m0, eps, &[0.0, 0.0]).unwrap();
        let r1 = ansatz_residual(&g1, &m1, eps, &shift).unwrap();
        assert!((r0 - r1).abs() <= 1e-12 * r0, "{r0} vs {r1}");
    }

    #[test]
    fn peak_params_are_consistent() {
        let m = model(2, gaussian_triple(2));
        let params = PeakParams::new(&m, 0.3, &[0.2, 0.7]).unwrap();
        assert!(params.is_consistent(3.0));
    }
}
