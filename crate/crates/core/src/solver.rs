//! Full discrete solves from the reduced ansatz, peak location, tail fits, ε-sweeps and
//! multistart scans of `Φ_ε`.

use nalgebra::{DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::functional::Functional;
use crate::grid::{dual_norm, Field};
use crate::krylov::{self, axpy};
use crate::landscape::{dist, CriticalKind, Landscape, DEGENERACY_RATIO};
use crate::reduction::{Reducer, ReductionOutcome};
use crate::region::BoxRegion;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonOptions {
    /// Stop once the dual residual drops below `tol` times its initial value.
    pub tol: f64,
    /// Absolute floor on the stopping residual.
    pub abs_floor: f64,
    pub max_iters: usize,
    pub linear_tol: f64,
    pub max_linear_iters: usize,
    /// Consecutive steps without residual decrease before giving up.
    pub max_stalls: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            abs_floor: 1e-12,
            max_iters: 30,
            linear_tol: 1e-10,
            max_linear_iters: 5000,
            max_stalls: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: Field,
    pub newton_iters: usize,
    pub linear_iters: usize,
    pub initial_residual: f64,
    /// `||∇f_ε(u)||_{H^{-1}}`.
    pub final_residual: f64,
    /// Sup norm of the strong-form residual.
    pub residual_sup: f64,
    pub positive: bool,
    /// Sub-grid peak location, absent when the field has no isolated interior maximum.
    pub peak: Option<Vec<f64>>,
    pub peak_height: f64,
    pub tail_decay_rate: Option<f64>,
}

/// Damped Newton on `∇f_ε = 0`. Each step solves `H δ = -∇f_ε` by MINRES and halves the
/// step until the dual residual decreases.
pub fn newton_solve(functional: &Functional, initial: &Field, options: &NewtonOptions) -> Result<SolveResult> {
    if initial.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial field is not finite".into()));
    }
    if !(options.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {}", options.tol)));
    }
    let mut u = initial.clone();
    u.zero_boundary();
    let mut g = functional.gradient(&u)?;
    let initial_residual = dual_norm(&g)?;
    let target = (options.tol * initial_residual).max(options.abs_floor);
    let mut residual = initial_residual;
    let mut iters = 0;
    let mut linear_iters = 0;
    let mut stalls = 0;
    while residual > target {
        if iters >= options.max_iters {
            return Err(Error::NewtonDivergence(format!(
                "residual {residual:e} above {target:e} after {iters} steps"
            )));
        }
        iters += 1;
        let hessian = functional.hessian(&u)?;
        let rhs: Vec<f64> = g.values.iter().map(|v| -v).collect();
        let (delta, stats) = krylov::minres(&hessian, &rhs, options.linear_tol, options.max_linear_iters)?;
        linear_iters += stats.iterations;
        let mut t = 1.0;
        let mut accepted = None;
        while t >= 1.0 / 1024.0 {
            let mut trial = u.clone();
            axpy(t, &delta, &mut trial.values);
            let tg = functional.gradient(&trial)?;
            let tr = dual_norm(&tg)?;
            if tr < residual {
                accepted = Some((trial, tg, tr));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, tg, tr)) => {
                u = trial;
                g = tg;
                residual = tr;
                stalls = 0;
            }
            None => {
                // Take the smallest damped step anyway; repeated failures end the solve.
                axpy(t, &delta, &mut u.values);
                g = functional.gradient(&u)?;
                residual = dual_norm(&g)?;
                stalls += 1;
                if stalls >= options.max_stalls {
                    return Err(Error::NewtonDivergence(format!(
                        "residual failed to decrease for {stalls} consecutive steps"
                    )));
                }
            }
        }
    }
    let residual_sup = g.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let peak_height = u.max();
    let positive = u.min() > -1e-10 * peak_height;
    let peak = locate_peak(&u).ok();
    let tail_decay_rate = match (&peak, positive) {
        (Some(_), true) => decay_check(&u).ok(),
        _ => None,
    };
    Ok(SolveResult {
        peak: peak.map(|(x, _)| x),
        u,
        newton_iters: iters,
        linear_iters,
        initial_residual,
        final_residual: residual,
        residual_sup,
        positive,
        peak_height,
        tail_decay_rate,
    })
}

/// Nodes this close to a face are the boundary layer for [`locate_peak`].
pub const PEAK_BOUNDARY_LAYERS: usize = 3;

/// The maximal node refined by a parabola through it and its two neighbours on each axis.
pub fn locate_peak(u: &Field) -> Result<(Vec<f64>, f64)> {
    let grid = &u.grid;
    let (imax, &vmax) = u
        .values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Error::DegeneratePeak)?;
    if !(vmax > 0.0) {
        return Err(Error::DegeneratePeak);
    }
    let idx = grid.multi_index(imax);
    let strides = grid.strides();
    // A strict maximum needs every existing neighbour strictly lower.
    for (axis, &s) in strides.iter().enumerate() {
        let lower = idx[axis] == 0 || u.values[imax - s] < vmax;
        let upper = idx[axis] + 1 == grid.n() || u.values[imax + s] < vmax;
        if !(lower && upper) {
            return Err(Error::DegeneratePeak);
        }
    }
    if !grid.is_inside_layer(&idx, PEAK_BOUNDARY_LAYERS) {
        return Err(Error::BoundaryPeak(idx));
    }
    let mut x = grid.coords(imax);
    let mut height = vmax;
    for (axis, &s) in strides.iter().enumerate() {
        let (lo, hi) = (u.values[imax - s], u.values[imax + s]);
        let curvature = lo - 2.0 * vmax + hi;
        let offset = 0.5 * (lo - hi) / curvature;
        x[axis] += offset * grid.h;
        height -= 0.125 * (lo - hi).powi(2) / curvature;
    }
    Ok((x, height))
}

/// Lower and upper ends of the tail window, relative to the peak height.
pub const TAIL_WINDOW: (f64, f64) = (1e-6, 1e-2);

/// Decay rate of `u` along the 2N axis rays from its peak node, fitted as
/// `log(u r^{(N-1)/2}) = c - rate r` over samples in [`TAIL_WINDOW`].
pub fn decay_check(u: &Field) -> Result<f64> {
    let grid = &u.grid;
    let (imax, &peak) = u
        .values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Error::InsufficientTail)?;
    if !(peak > 0.0) {
        return Err(Error::InsufficientTail);
    }
    let idx = grid.multi_index(imax);
    let algebraic = 0.5 * (grid.dim() as f64 - 1.0);
    let n = grid.n() as isize;
    let mut samples = Vec::new();
    for axis in 0..grid.dim() {
        for dir in [-1isize, 1] {
            let mut node = idx.clone();
            for step in 1.. {
                let i = idx[axis] as isize + dir * step;
                // The Dirichlet layer bends the tail down; stay clear of it.
                if i < PEAK_BOUNDARY_LAYERS as isize || i >= n - PEAK_BOUNDARY_LAYERS as isize {
                    break;
                }
                node[axis] = i as usize;
                let v = u.values[grid.flat_index(&node)];
                let ratio = v / peak;
                if ratio < TAIL_WINDOW.0 {
                    break;
                }
                if ratio <= TAIL_WINDOW.1 {
                    let r = step as f64 * grid.h;
                    samples.push((r, v.ln() + algebraic * r.ln()));
                }
            }
        }
    }
    if samples.len() < 3 {
        return Err(Error::InsufficientTail);
    }
    let m = samples.len() as f64;
    let mr = samples.iter().map(|s| s.0).sum::<f64>() / m;
    let ml = samples.iter().map(|s| s.1).sum::<f64>() / m;
    let srr: f64 = samples.iter().map(|s| (s.0 - mr).powi(2)).sum();
    let srl: f64 = samples.iter().map(|s| (s.0 - mr) * (s.1 - ml)).sum();
    if srr == 0.0 {
        return Err(Error::InsufficientTail);
    }
    Ok(-srl / srr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub reduced_max_iters: usize,
    /// Reduced Newton stops when the `ξ` step falls below this (rescaled units).
    pub reduced_step_tol: f64,
    /// Longest `ξ` step allowed (rescaled units).
    pub max_reduced_step: f64,
    pub newton: NewtonOptions,
    /// Differences below this count as equal when checking monotonicity.
    pub noise_floor: f64,
    /// Basin jumps are consecutive `εξ` further apart than this fraction of `|ξ₀|`.
    pub jump_fraction: f64,
    /// Distinct solutions in a multiplicity scan have peaks at least this far apart
    /// (original coordinates).
    pub cluster_radius: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            reduced_max_iters: 20,
            reduced_step_tol: 1e-5,
            max_reduced_step: 1.0,
            newton: NewtonOptions::default(),
            noise_floor: 1e-9,
            jump_fraction: 0.25,
            cluster_radius: 1e-2,
        }
    }
}

/// A critical point of `Φ_ε` together with its correction.
#[derive(Debug, Clone)]
pub struct ReducedCritical {
    pub xi: Vec<f64>,
    pub outcome: ReductionOutcome,
    pub grad_norm: f64,
    pub iterations: usize,
    /// False when `D²Γ` was degenerate and `ξ` was left at the seed.
    pub moved: bool,
}

/// Newton on `∇Φ_ε(ξ) = 0` with the model Hessian `ε² D²Γ(εξ)` and the finite-difference
/// gradient of `Φ_ε`.
pub fn reduced_critical_point(
    reducer: &Reducer,
    landscape: &Landscape,
    eps: f64,
    seed: &[f64],
    options: &SweepOptions,
) -> Result<ReducedCritical> {
    let mut xi = seed.to_vec();
    let mut warm: Option<Vec<f64>> = None;
    for iteration in 1..=options.reduced_max_iters {
        let mut outcome = reducer.solve_correction_from(eps, &xi, warm.as_deref())?;
        let grad = reducer.phi_grad_from(eps, &xi, &outcome.w.values)?;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        outcome.phi_grad = grad.clone();
        let y: Vec<f64> = xi.iter().map(|v| eps * v).collect();
        let hessian = landscape.at(&y)?.hessian * (eps * eps);
        let eig = SymmetricEigen::new(hessian.clone());
        let scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let smallest = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if !(smallest > DEGENERACY_RATIO * scale) {
            return Ok(ReducedCritical {
                xi,
                outcome,
                grad_norm,
                iterations: iteration,
                moved: false,
            });
        }
        let step = hessian
            .lu()
            .solve(&(-DVector::from_vec(grad)))
            .ok_or(Error::DegenerateBasis(f64::INFINITY))?;
        let length = step.norm();
        let shrink = if length > options.max_reduced_step {
            options.max_reduced_step / length
        } else {
            1.0
        };
        for (x, s) in xi.iter_mut().zip(step.iter()) {
            *x += shrink * s;
        }
        if length <= options.reduced_step_tol {
            // The last step is below tolerance; report the correction at the final point.
            let mut outcome = reducer.solve_correction_from(eps, &xi, Some(&outcome.w.values))?;
            let grad = reducer.phi_grad_from(eps, &xi, &outcome.w.values)?;
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            outcome.phi_grad = grad;
            return Ok(ReducedCritical {
                xi,
                outcome,
                grad_norm,
                iterations: iteration,
                moved: true,
            });
        }
        warm = Some(outcome.w.values);
    }
    Err(Error::NewtonDivergence(format!(
        "reduced Newton on grad Phi did not settle in {} steps at eps={eps}",
        options.reduced_max_iters
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub eps: f64,
    /// Critical point of `Φ_ε` in rescaled coordinates.
    pub xi_critical: Vec<f64>,
    /// `ε·peak`, the concentration point in original coordinates.
    pub peak_original: Vec<f64>,
    pub distance_to_xi0: f64,
    /// `|peak - ξ|` in rescaled coordinates: how far the full solve moved the peak.
    pub peak_shift: f64,
    pub reduced_iters: usize,
    pub grad_phi_norm: f64,
    pub newton_iters: usize,
    pub final_residual: f64,
    pub positive: bool,
    pub tail_decay_rate: Option<f64>,
    /// `β(εξ)`, the decay rate inherited from the frozen profile.
    pub beta: f64,
    pub phi: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationTrace {
    pub scenario: String,
    pub target_xi0: Vec<f64>,
    /// Sorted by decreasing `eps`.
    pub rows: Vec<TraceRow>,
    /// Log-log slope of the distance against `eps`; absent when the distances sit at the
    /// noise floor.
    pub fitted_order: Option<f64>,
    /// Distances over the last three rows never grow by more than the noise floor.
    pub tail_non_increasing: bool,
}

/// One full pipeline step at a fixed `eps`: reduced critical point from `ξ₀/ε`, then the
/// full Newton solve from `z_ξ + w`.
fn sweep_row(
    reducer: &Reducer,
    landscape: &Landscape,
    eps: f64,
    xi0: &[f64],
    options: &SweepOptions,
) -> Result<(TraceRow, SolveResult)> {
    let seed: Vec<f64> = xi0.iter().map(|v| v / eps).collect();
    let critical = reduced_critical_point(reducer, landscape, eps, &seed, options)?;
    let outcome = &critical.outcome;
    let functional = Functional::new(reducer.model, &outcome.z.grid, eps)?;
    let solved = newton_solve(&functional, &outcome.solution_guess(), &options.newton)?;
    let peak = solved
        .peak
        .clone()
        .ok_or_else(|| Error::NewtonDivergence(format!("solution at eps={eps} has no isolated peak")))?;
    let peak_original: Vec<f64> = peak.iter().map(|v| eps * v).collect();
    let row = TraceRow {
        eps,
        distance_to_xi0: dist(&peak_original, xi0),
        peak_shift: dist(&peak, &critical.xi),
        xi_critical: critical.xi.clone(),
        peak_original,
        reduced_iters: critical.iterations,
        grad_phi_norm: critical.grad_norm,
        newton_iters: solved.newton_iters,
        final_residual: solved.final_residual,
        positive: solved.positive,
        tail_decay_rate: solved.tail_decay_rate,
        beta: outcome.params.beta,
        phi: outcome.phi,
        energy: functional.energy(&solved.u)?,
    };
    Ok((row, solved))
}

/// Runs [`sweep_row`] for every `eps` concurrently and checks the trace for basin jumps.
pub fn concentration_sweep(
    reducer: &Reducer,
    scenario: &str,
    eps_list: &[f64],
    xi0_seed: &[f64],
    options: &SweepOptions,
) -> Result<ConcentrationTrace> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| !(w[1] < w[0])) || !(eps_list[eps_list.len() - 1] > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps list must be positive and strictly decreasing, got {eps_list:?}"
        )));
    }
    if xi0_seed.len() != reducer.model.dim {
        return Err(Error::InvalidArgument("seed dimension differs from the model".into()));
    }
    let landscape = reducer.landscape()?;
    let rows: Vec<TraceRow> = eps_list
        .par_iter()
        .map(|&eps| sweep_row(reducer, &landscape, eps, xi0_seed, options).map(|(row, _)| row))
        .collect::<Result<_>>()?;

    let scale = krylov::norm(xi0_seed);
    let threshold = options.jump_fraction * if scale > 0.0 { scale } else { 1.0 };
    for pair in rows.windows(2) {
        let a: Vec<f64> = pair[0].xi_critical.iter().map(|v| pair[0].eps * v).collect();
        let b: Vec<f64> = pair[1].xi_critical.iter().map(|v| pair[1].eps * v).collect();
        let jump = dist(&a, &b);
        if jump > threshold {
            return Err(Error::SweepInconsistent {
                from: pair[0].eps,
                to: pair[1].eps,
                jump,
            });
        }
    }
    let start = rows.len().saturating_sub(3);
    let tail_non_increasing = rows[start..]
        .windows(2)
        .all(|w| w[1].distance_to_xi0 <= w[0].distance_to_xi0 + options.noise_floor);
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, r.distance_to_xi0)).collect();
    let fitted_order = if rows.len() >= 3 && pairs.iter().all(|p| p.1 > options.noise_floor) {
        Some(crate::convergence::fit_order(&pairs)?.slope)
    } else {
        None
    };
    Ok(ConcentrationTrace {
        scenario: scenario.to_string(),
        target_xi0: xi0_seed.to_vec(),
        rows,
        fitted_order,
        tail_non_increasing,
    })
}

/// A distinct solution found by [`multiplicity_scan`].
#[derive(Debug, Clone)]
pub struct MultiplicityHit {
    /// The critical point of `Γ` the search started from.
    pub gamma_point: Vec<f64>,
    pub gamma_kind: CriticalKind,
    pub xi: Vec<f64>,
    pub peak_original: Vec<f64>,
    pub solve: SolveResult,
}

#[derive(Debug, Clone)]
pub struct MultiplicityReport {
    pub eps: f64,
    pub hits: Vec<MultiplicityHit>,
    /// Seeds whose reduced or full solve failed.
    pub failed_seeds: usize,
}

/// Lower-bound count of solutions concentrating in `region` (original coordinates).
/// Seeds are the critical points of `Γ` in the region, found by multistart Newton from
/// `seed_count` starts; each is pushed to a critical point of `Φ_ε`, solved in full and
/// clustered by peak location.
pub fn multiplicity_scan(
    reducer: &Reducer,
    region: &BoxRegion,
    eps: f64,
    seed_count: usize,
    seed: u64,
    options: &SweepOptions,
) -> Result<MultiplicityReport> {
    let landscape = reducer.landscape()?;
    let seeds = landscape.find_critical_points(region, seed_count, seed)?;
    let attempts: Vec<Option<MultiplicityHit>> = seeds
        .par_iter()
        .map(|cp| {
            let (row, solve) = sweep_row(reducer, &landscape, eps, &cp.location, options).ok()?;
            if !solve.positive {
                return None;
            }
            Some(MultiplicityHit {
                gamma_point: cp.location.clone(),
                gamma_kind: cp.kind,
                xi: row.xi_critical,
                peak_original: row.peak_original,
                solve,
            })
        })
        .collect();
    let failed_seeds = attempts.iter().filter(|a| a.is_none()).count();
    let mut hits: Vec<MultiplicityHit> = Vec::new();
    for hit in attempts.into_iter().flatten() {
        if hits
            .iter()
            .all(|h| dist(&h.peak_original, &hit.peak_original) > options.cluster_radius)
        {
            hits.push(hit);
        }
    }
    Ok(MultiplicityReport { eps, hits, failed_seeds })
}

/// Strong-form residual sup norm of `u` for the functional.
pub fn residual_sup(functional: &Functional, u: &Field) -> Result<f64> {
    let g = functional.gradient(u)?;
    Ok(g.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

