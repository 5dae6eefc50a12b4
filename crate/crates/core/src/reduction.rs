//! Lyapunov-Schmidt reduction around the almost-solutions `z_ξ`.
//!
//! Every evaluation at a peak position `ξ` uses a grid of fixed size centred at `ξ`, so
//! the discrete problem seen from the peak does not depend on where `ξ` sits relative
//! to a fixed lattice. The complement `X = (T_z Z)^⊥` is taken in the discrete `H^1`
//! inner product. Writing `G = -Δ_h + 1` and `t_i` for the tangent vectors,
//! `X = {w : Σ (G t_i) w = 0}`; restricted equations on `X` are solved in the
//! pairing form `Π H Π δ = -Π g`, where `Π` is the Euclidean projector onto
//! `{G t_i}^⊥`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{check_margin, tangent_basis, translation_basis, PeakParams};
use crate::functional::{pow_abs, Functional, Hessian};
use crate::grid::{self, dual_norm, h1_norm, riesz, Field, Grid, GridSpec, H1Operator};
use crate::ground_state::GroundStateConstants;
use crate::krylov::{self, axpy, dot, LinearOperator};
use crate::landscape::Landscape;
use crate::model::Model;
use crate::{Error, Result};

/// Largest accepted condition number of the tangent Gram matrix.
pub const MAX_GRAM_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReductionOptions {
    /// Size of the grid centred at each `ξ`.
    pub grid: GridSpec,
    /// Successive corrections must differ by at most this much in `H^1`.
    pub fixed_point_tol: f64,
    pub max_fixed_point_iters: usize,
    /// Relative tolerance of each inner MINRES solve.
    pub linear_tol: f64,
    pub max_linear_iters: usize,
    /// Replace the sampled profile by the exact solution of the discrete frozen equation.
    pub relax_ansatz: bool,
    pub xi_step: f64,
    pub eig_tol: f64,
    pub eig_max_iters: usize,
}

impl Default for ReductionOptions {
    fn default() -> Self {
        Self {
            grid: GridSpec {
                dim: 3,
                half_width: 12.0,
                points_per_axis: 49,
            },
            fixed_point_tol: 1e-10,
            max_fixed_point_iters: 60,
            linear_tol: 1e-8,
            max_linear_iters: 4000,
            relax_ansatz: true,
            xi_step: 1e-4,
            eig_tol: 1e-6,
            eig_max_iters: 500,
        }
    }
}

/// Projections associated with a set of tangent vectors.
pub struct TangentProjector {
    basis: Vec<Vec<f64>>,
    duals: Vec<Vec<f64>>,
    gram_inv: DMatrix<f64>,
    dual_gram_inv: DMatrix<f64>,
    gram_diag: Vec<f64>,
    pub condition: f64,
}

impl TangentProjector {
    pub fn new(basis: &[Field]) -> Result<Self> {
        let grid = basis
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty tangent basis".into()))?
            .grid
            .clone();
        for b in basis {
            b.same_grid(&basis[0])?;
        }
        let op = H1Operator { grid: &grid };
        let duals: Vec<Vec<f64>> = basis
            .iter()
            .map(|t| {
                let mut s = vec![0.0; grid.len()];
                op.apply(&t.values, &mut s);
                s
            })
            .collect();
        let k = basis.len();
        let gram = DMatrix::from_fn(k, k, |i, j| 0.5 * (dot(&duals[i], &basis[j].values) + dot(&duals[j], &basis[i].values)));
        let eig = SymmetricEigen::new(gram.clone());
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(*v), hi.max(v.abs())));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition < MAX_GRAM_CONDITION) {
            return Err(Error::DegenerateBasis(condition));
        }
        let dual_gram = DMatrix::from_fn(k, k, |i, j| dot(&duals[i], &duals[j]));
        let dual_gram_inv = dual_gram
            .try_inverse()
            .ok_or(Error::DegenerateBasis(f64::INFINITY))?;
        Ok(Self {
            gram_diag: (0..k).map(|i| gram[(i, i)]).collect(),
            gram_inv: gram.try_inverse().ok_or(Error::DegenerateBasis(condition))?,
            dual_gram_inv,
            basis: basis.iter().map(|b| b.values.clone()).collect(),
            duals,
            condition,
        })
    }

    /// Removes the `H^1`-orthogonal projection onto the tangent span.
    pub fn project_h1(&self, v: &mut [f64]) {
        let k = self.basis.len();
        let rhs = DVector::from_fn(k, |i, _| dot(&self.duals[i], v));
        let c = &self.gram_inv * rhs;
        for (i, t) in self.basis.iter().enumerate() {
            axpy(-c[i], t, v);
        }
    }

    /// Euclidean projector onto `{G t_i}^⊥`, the pairing dual of `X`.
    pub fn project_dual(&self, g: &mut [f64]) {
        let k = self.basis.len();
        let rhs = DVector::from_fn(k, |i, _| dot(&self.duals[i], g));
        let c = &self.dual_gram_inv * rhs;
        for (i, s) in self.duals.iter().enumerate() {
            axpy(-c[i], s, g);
        }
    }

    /// `max_i |(v, t_i)_{H^1}| / (||v|| ||t_i||)`.
    pub fn orthogonality_defect(&self, v: &Field) -> f64 {
        let nv = h1_norm(v);
        if nv == 0.0 {
            return 0.0;
        }
        let h_n = v.grid.cell_volume();
        self.duals
            .iter()
            .zip(&self.gram_diag)
            .map(|(s, gii)| (dot(s, &v.values) * h_n).abs() / (nv * (gii * h_n).sqrt()))
            .fold(0.0, f64::max)
    }
}

/// `v` minus its `H^1` projection onto `span(basis)`.
pub fn project_perp(v: &Field, basis: &[Field]) -> Result<Field> {
    for b in basis {
        v.same_grid(b)?;
    }
    let projector = TangentProjector::new(basis)?;
    let mut out = v.clone();
    projector.project_h1(&mut out.values);
    Ok(out)
}

/// Petviashvili iteration for the positive solution of `-Δ_h u + v u = k u^p`:
/// `u ← M^γ (-Δ_h + v)^{-1} (k u^p)` with `M = (u, (-Δ_h + v) u) / (u, k u^p)` and
/// `γ = p / (p - 1)`. Converges to the ground state from positive data where plain Newton
/// may land on a sign-changing solution.
fn petviashvili(grid: &Grid, u: &mut [f64], v: f64, k: f64, p: f64) -> Result<()> {
    let op = |x: &[f64], y: &mut [f64]| grid::apply_shifted_laplacian_const(grid, x, v, y);
    let gamma = p / (p - 1.0);
    let mut lu = vec![0.0; u.len()];
    for _ in 0..PETVIASHVILI_MAX_ITERS {
        let mut rhs: Vec<f64> = u.iter().map(|x| k * pow_abs(*x, p - 1.0) * x).collect();
        grid::zero_boundary(grid, &mut rhs);
        op(u, &mut lu);
        let m = dot(u, &lu) / dot(u, &rhs);
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::NewtonDivergence(format!("Petviashvili stabilizer {m}")));
        }
        let (next, _) = krylov::cg(&op, &rhs, 1e-13, 20_000)?;
        let factor = m.powf(gamma);
        let mut change = 0.0_f64;
        let mut size = 0.0_f64;
        for (a, b) in u.iter_mut().zip(&next) {
            let new = factor * b;
            change = change.max((new - *a).abs());
            size = size.max(new.abs());
            *a = new;
        }
        if change <= 1e-11 * size {
            return Ok(());
        }
    }
    Err(Error::NewtonDivergence("Petviashvili iteration did not settle".into()))
}

pub const PETVIASHVILI_MAX_ITERS: usize = 500;

/// `-∂_{x_i} z + (∂_i α / α) z + (∂_i β / β) (x - ξ)·∇z` with centred differences, where
/// `z` is centred at `params.xi`.
fn discrete_tangents(z: &Field, params: &PeakParams) -> Vec<Field> {
    let grid = &z.grid;
    let dim = grid.dim();
    let strides = grid.strides();
    let h = grid.h;
    let grads: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let idx = grid.multi_index(flat);
            if grid.is_boundary(&idx) {
                return vec![0.0; dim];
            }
            (0..dim)
                .map(|i| (z.values[flat + strides[i]] - z.values[flat - strides[i]]) / (2.0 * h))
                .collect()
        })
        .collect();
    (0..dim)
        .map(|i| {
            let values = (0..grid.len())
                .into_par_iter()
                .map(|flat| {
                    let g = &grads[flat];
                    let x = grid.coords(flat);
                    let radial: f64 = (0..dim).map(|j| (x[j] - params.xi[j]) * g[j]).sum();
                    -g[i] + params.dalpha[i] / params.alpha * z.values[flat] + params.dbeta[i] / params.beta * radial
                })
                .collect();
            Field {
                grid: grid.clone(),
                values,
            }
        })
        .collect()
}

/// `Π H Π` as an operator.
struct ProjectedOperator<'a> {
    hessian: &'a Hessian,
    projector: &'a TangentProjector,
}

impl LinearOperator for ProjectedOperator<'_> {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut px = x.to_vec();
        self.projector.project_dual(&mut px);
        self.hessian.apply(&px, y);
        self.projector.project_dual(y);
    }
}

/// Relative size of the round-off in `Π g`, measured against `||g||`.
pub const PROJECTION_ROUNDOFF: f64 = 1e-13;

/// Solves `Π H Π δ = -Π g` for `δ ∈ X`. The residual target never goes below the round-off
/// level of the projected right-hand side.
fn projected_solve(
    hessian: &Hessian,
    projector: &TangentProjector,
    g: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let mut rhs: Vec<f64> = g.iter().map(|v| -v).collect();
    projector.project_dual(&mut rhs);
    let op = ProjectedOperator { hessian, projector };
    let rhs_norm = krylov::norm(&rhs);
    let tol = if rhs_norm > 0.0 {
        tol.max(PROJECTION_ROUNDOFF * krylov::norm(g) / rhs_norm)
    } else {
        tol
    };
    let (mut delta, stats) = krylov::minres(&op, &rhs, tol, max_iter)?;
    // Round-off can leave components in the null space span{G t_i} of the operator.
    projector.project_dual(&mut delta);
    Ok((delta, stats.iterations))
}

#[derive(Debug, Clone)]
pub struct ReductionOutcome {
    pub xi: Vec<f64>,
    pub eps: f64,
    pub params: PeakParams,
    /// The almost-solution the correction is built on.
    pub z: Field,
    pub w: Field,
    pub w_norm: f64,
    /// `f_ε(z + w)`.
    pub phi: f64,
    /// Filled by [`Reducer::phi_value_and_grad`]; empty otherwise.
    pub phi_grad: Vec<f64>,
    /// `||P ∇f_ε(z + w)||_{H^1}` with `∇f_ε` as a Riesz vector.
    pub projected_residual: f64,
    /// `||∇f_ε(z + w)||_{H^{-1}}`.
    pub full_residual: f64,
    /// `||∇f_ε(z)||_{H^{-1}}`.
    pub ansatz_residual: f64,
    pub fixed_point_iters: usize,
    pub linear_iters: usize,
    /// Largest relative `H^1` inner product of `w` with a tangent vector.
    pub orthogonality: f64,
    pub sigma_term: f64,
    pub theta_term: f64,
    pub lambda_term: f64,
}

impl ReductionOutcome {
    pub fn solution_guess(&self) -> Field {
        let mut u = self.z.clone();
        axpy(1.0, &self.w.values, &mut u.values);
        u
    }
}

/// `Σ = (1/2 - 1/(p+1)) K(εξ) ∫z^{p+1}`, `Θ = -Q(εξ)/(σ+1) ∫z^{σ+1}`, `Λ = Φ - Σ - Θ`.
pub fn phi_decomposition(model: &Model, eps: f64, xi: &[f64], z: &Field, phi: f64) -> (f64, f64, f64) {
    let (p, s) = (model.p, model.sigma);
    let y: Vec<f64> = xi.iter().map(|c| eps * c).collect();
    let c = model.triple.evaluate(&y);
    let h_n = z.grid.cell_volume();
    let (mp, ms) = z
        .values
        .par_iter()
        .map(|v| (pow_abs(*v, p + 1.0), pow_abs(*v, s + 1.0)))
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let sigma = (0.5 - 1.0 / (p + 1.0)) * c.k * mp * h_n;
    let theta = -c.q / (s + 1.0) * ms * h_n;
    (sigma, theta, phi - sigma - theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDiagnostics {
    /// `(H z, z) / ||z||^2_{H^1}`.
    pub rayleigh_z: f64,
    /// Smallest `|λ|` of `(H, G)` on the `H^1` complement of `{z, t_1, ..., t_N}`.
    pub complement_gap: f64,
    pub iterations: usize,
}

/// Discrete frozen profiles indexed by `(α, β)`.
type ProfileCache = Mutex<HashMap<(u64, u64), Arc<Vec<f64>>>>;

pub struct Reducer<'m> {
    pub model: &'m Model,
    pub options: ReductionOptions,
    cache: ProfileCache,
}

impl<'m> Reducer<'m> {
    pub fn new(model: &'m Model, options: ReductionOptions) -> Result<Self> {
        options.grid.check()?;
        if options.grid.dim != model.dim {
            return Err(Error::InvalidArgument(format!(
                "reduction grid has dimension {}, model has {}",
                options.grid.dim, model.dim
            )));
        }
        Ok(Self {
            model,
            options,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn grid_at(&self, xi: &[f64]) -> Result<Arc<Grid>> {
        Grid::centered(self.options.grid, xi)
    }

    /// The almost-solution `z_ξ` on the grid centred at `ξ`.
    pub fn ansatz(&self, eps: f64, xi: &[f64]) -> Result<(Arc<Grid>, Field, PeakParams)> {
        let params = PeakParams::new(self.model, eps, xi)?;
        let grid = self.grid_at(xi)?;
        check_margin(&grid, xi, params.beta)?;
        let z = if self.options.relax_ansatz {
            let values = self.relaxed_profile(params.v, params.k)?;
            Field::from_values(&grid, values.as_ref().clone())?
        } else {
            crate::ansatz::build_ansatz(&grid, self.model, eps, xi)?
        };
        Ok((grid, z, params))
    }

    /// Solution of `-Δ_h z + V z = K z^p` on the origin-centred grid, found by projected
    /// Newton from the sampled `α U(β|x|)` with the translation modes held fixed.
    pub fn relaxed_profile(&self, v: f64, k: f64) -> Result<Arc<Vec<f64>>> {
        let key = (v.to_bits(), k.to_bits());
        if let Some(found) = self.cache.lock().unwrap().get(&key) {
            return Ok(found.clone());
        }
        let grid = Grid::new(self.options.grid)?;
        let zero = vec![0.0; self.model.dim];
        let unit = Model {
            triple: crate::potential::PotentialTriple::new(
                crate::potential::PotentialSpec::constant(v),
                crate::potential::PotentialSpec::constant(k),
                crate::potential::PotentialSpec::constant(0.0),
                self.model.triple.lower_bound_c,
            ),
            ..self.model.clone()
        };
        let mut z = crate::ansatz::build_ansatz(&grid, &unit, 1.0, &zero)?;
        let frozen = Functional::frozen(&grid, v, k, self.model.p)?;
        petviashvili(&grid, &mut z.values, v, k, self.model.p)?;
        // Newton polish; the translation modes are held fixed, the rest of the symmetric
        // solution is reached quadratically from the Petviashvili iterate.
        let projector = TangentProjector::new(&translation_basis(&grid, &unit, 1.0, &zero)?)?;
        let mut converged = false;
        for _ in 0..10 {
            let g = frozen.gradient(&z)?;
            let hess = frozen.hessian(&z)?;
            let (delta, _) = projected_solve(&hess, &projector, &g.values, 1e-12, self.options.max_linear_iters)?;
            axpy(1.0, &delta, &mut z.values);
            let step = grid::h1_inner_raw(&grid, &delta, &delta).sqrt();
            if step <= 1e-12 * h1_norm(&z).max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged || z.min() < -1e-10 * z.max() {
            return Err(Error::NewtonDivergence("relaxation of the frozen profile did not converge".into()));
        }
        let values = Arc::new(z.values);
        self.cache.lock().unwrap().insert(key, values.clone());
        Ok(values)
    }

    /// Landscape constants from the discrete unit profile: moments of the relaxed
    /// solution of `-Δ_h z + z = z^p` on the reduction grid. Without relaxation these are
    /// the continuum constants.
    pub fn grid_constants(&self) -> Result<GroundStateConstants> {
        if !self.options.relax_ansatz {
            return Ok(self.model.constants);
        }
        let z = self.relaxed_profile(1.0, 1.0)?;
        let (p, s) = (self.model.p, self.model.sigma);
        let h_n = self.options.grid.spacing().powi(self.model.dim as i32);
        let moment_p1: f64 = z.iter().map(|v| pow_abs(*v, p + 1.0)).sum::<f64>() * h_n;
        let moment_s1: f64 = z.iter().map(|v| pow_abs(*v, s + 1.0)).sum::<f64>() * h_n;
        Ok(GroundStateConstants {
            moment_p1,
            moment_s1,
            cbar1: (0.5 - 1.0 / (p + 1.0)) * moment_p1,
            cbar2: moment_s1 / (s + 1.0),
        })
    }

    /// `Γ` built with [`Reducer::grid_constants`].
    pub fn landscape(&self) -> Result<Landscape<'m>> {
        Ok(Landscape::new(self.model, self.grid_constants()?))
    }

    /// `||∇f_ε(z_ξ)||_{H^{-1}}` for the ansatz used by the reduction.
    pub fn ansatz_residual(&self, eps: f64, xi: &[f64]) -> Result<f64> {
        let (grid, z, _) = self.ansatz(eps, xi)?;
        let f = Functional::new(self.model, &grid, eps)?;
        dual_norm(&f.gradient(&z)?)
    }

    /// Tangents of `ξ ↦ z_ξ`. With relaxation they are built from centred differences of
    /// the relaxed profile, so they follow the discrete translation modes.
    pub fn tangents(&self, eps: f64, xi: &[f64], z: &Field, params: &PeakParams) -> Result<Vec<Field>> {
        if !self.options.relax_ansatz {
            return tangent_basis(&z.grid, self.model, eps, xi);
        }
        Ok(discrete_tangents(z, params))
    }

    pub fn solve_correction(&self, eps: f64, xi: &[f64]) -> Result<ReductionOutcome> {
        self.solve_correction_from(eps, xi, None)
    }

    /// Chord iteration `w ← w + δ`, `Π H(z) Π δ = -Π ∇f_ε(z + w)`, with `w` re-projected
    /// onto `X` after every step. `warm` holds node values of a starting correction.
    pub fn solve_correction_from(&self, eps: f64, xi: &[f64], warm: Option<&[f64]>) -> Result<ReductionOutcome> {
        let (grid, z, params) = self.ansatz(eps, xi)?;
        let basis = self.tangents(eps, xi, &z, &params)?;
        let projector = TangentProjector::new(&basis)?;
        let f = Functional::new(self.model, &grid, eps)?;
        let hessian = f.hessian(&z)?;
        let ansatz_residual = dual_norm(&f.gradient(&z)?)?;

        let mut w = match warm {
            Some(values) => Field::from_values(&grid, values.to_vec())?,
            None => Field::zeros(&grid),
        };
        projector.project_h1(&mut w.values);
        let z_norm = h1_norm(&z);
        let mut orthogonality = projector.orthogonality_defect(&w);
        let mut linear_iters = 0;
        let mut previous = f64::INFINITY;
        let mut growth = 0;
        let mut iters = 0;
        loop {
            iters += 1;
            if iters > self.options.max_fixed_point_iters {
                return Err(Error::ContractionFailure(format!(
                    "no convergence in {} iterations at eps={eps}, last step {previous:e}",
                    self.options.max_fixed_point_iters
                )));
            }
            let mut u = z.clone();
            axpy(1.0, &w.values, &mut u.values);
            let g = f.gradient(&u)?;
                        let (delta, its) = projected_solve(
                &hessian,
                &projector,
                &g.values,
                self.options.linear_tol,
                self.options.max_linear_iters,
            )?;
            linear_iters += its;
            axpy(1.0, &delta, &mut w.values);
            projector.project_h1(&mut w.values);
            orthogonality = orthogonality.max(projector.orthogonality_defect(&w));
            let step = grid::h1_inner_raw(&grid, &delta, &delta).max(0.0).sqrt();
            if !step.is_finite() || step > 1e3 * z_norm.max(1.0) {
                return Err(Error::ContractionFailure(format!(
                    "correction blew up at eps={eps} (step {step:e})"
                )));
            }
            if step <= self.options.fixed_point_tol {
                break;
            }
            if step > previous {
                growth += 1;
                if growth >= 3 {
                    return Err(Error::ContractionFailure(format!(
                        "steps grow at eps={eps}: {previous:e} -> {step:e}"
                    )));
                }
            }
            previous = step;
        }

        let mut u = z.clone();
        axpy(1.0, &w.values, &mut u.values);
        let g = f.gradient(&u)?;
        let full_residual = dual_norm(&g)?;
        let mut r = riesz(&g)?;
        projector.project_h1(&mut r.values);
        let projected_residual = h1_norm(&r);
        let phi = f.energy(&u)?;
        let (sigma_term, theta_term, lambda_term) = phi_decomposition(self.model, eps, xi, &z, phi);
        Ok(ReductionOutcome {
            xi: xi.to_vec(),
            eps,
            params,
            w_norm: h1_norm(&w),
            z,
            w,
            phi,
            phi_grad: Vec::new(),
            projected_residual,
            full_residual,
            ansatz_residual,
            fixed_point_iters: iters,
            linear_iters,
            orthogonality,
            sigma_term,
            theta_term,
            lambda_term,
        })
    }

    /// `Φ_ε(ξ)` and its gradient by central differences with step `xi_step`. The stencil
    /// solves start from the centre correction.
    pub fn phi_value_and_grad(&self, eps: f64, xi: &[f64]) -> Result<ReductionOutcome> {
        let mut outcome = self.solve_correction(eps, xi)?;
        outcome.phi_grad = self.phi_grad_from(eps, xi, &outcome.w.values)?;
        Ok(outcome)
    }

    pub(crate) fn phi_grad_from(&self, eps: f64, xi: &[f64], warm: &[f64]) -> Result<Vec<f64>> {
        let step = self.options.xi_step;
        let stencil: Vec<(usize, f64)> = (0..xi.len()).flat_map(|i| [(i, step), (i, -step)]).collect();
        let values: Vec<f64> = stencil
            .par_iter()
            .map(|&(i, d)| {
                let mut x = xi.to_vec();
                x[i] += d;
                Ok(self.solve_correction_from(eps, &x, Some(warm))?.phi)
            })
            .collect::<Result<_>>()?;
        Ok(values.chunks(2).map(|pm| (pm[0] - pm[1]) / (2.0 * step)).collect())
    }

    /// `rayleigh_z` and the smallest `|λ|` of `(H, G)` on the `H^1` complement `C` of
    /// `{z, t_1, ..., t_N}`. With `P` the `G`-orthogonal projector onto `C`, the squares
    /// `λ^2` are the eigenvalues of `(H P G^{-1} H, G)` on `C`, whose bottom LOBPCG finds.
    pub fn spectral_diagnostics(&self, eps: f64, xi: &[f64]) -> Result<SpectralDiagnostics> {
        let (grid, z, params) = self.ansatz(eps, xi)?;
        let f = Functional::new(self.model, &grid, eps)?;
        let hessian = f.hessian(&z)?;
        let gop = H1Operator { grid: &grid };
        let mut hz = vec![0.0; grid.len()];
        hessian.apply(&z.values, &mut hz);
        let mut gz = vec![0.0; grid.len()];
        gop.apply(&z.values, &mut gz);
        let rayleigh_z = dot(&hz, &z.values) / dot(&gz, &z.values);

        let mut constraints = vec![z.clone()];
        constraints.extend(self.tangents(eps, xi, &z, &params)?);
        let projector = TangentProjector::new(&constraints)?;
        let solve_g = |r: &[f64]| -> Result<Vec<f64>> {
            let mut rhs = r.to_vec();
            grid::zero_boundary(&grid, &mut rhs);
            Ok(krylov::cg(&gop, &rhs, 1e-10, 10_000)?.0)
        };
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        let squared = |x: &[f64], y: &mut [f64]| {
            let mut hx = vec![0.0; x.len()];
            hessian.apply(x, &mut hx);
            match solve_g(&hx) {
                Ok(mut s) => {
                    projector.project_h1(&mut s);
                    hessian.apply(&s, y);
                }
                Err(e) => {
                    failure.lock().unwrap().get_or_insert(e);
                    y.fill(0.0);
                }
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut start: Vec<f64> = z.values.iter().map(|v| v * rng.gen_range(-1.0..1.0)).collect();
        grid::zero_boundary(&grid, &mut start);
        let constraint_values: Vec<Vec<f64>> = constraints.into_iter().map(|c| c.values).collect();
        let est = krylov::lobpcg_smallest(
            &squared,
            &gop,
            &solve_g,
            &constraint_values,
            &start,
            self.options.eig_tol,
            self.options.eig_max_iters,
        );
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        let est = est?;
        Ok(SpectralDiagnostics {
            rayleigh_z,
            complement_gap: est.value.max(0.0).sqrt(),
            iterations: est.iterations,
        })
    }
}
