//! Output tables. Every CSV has a header row and a fixed column order; vector quantities
//! are spread over one column per axis (`xi_1`, `xi_2`, ...). Floats are written in the
//! shortest form that round-trips.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use conc_lab_core::landscape::{CriticalPoint, GammaEval};
use conc_lab_core::solver::{ConcentrationTrace, MultiplicityReport};
use serde::Serialize;

use crate::{ExitClass, RunError};

fn io_error(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::new(ExitClass::Internal, "report", format!("{}: {e}", path.display()))
}

pub fn axis_columns(prefix: &str, dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("{prefix}_{i}")).collect()
}

fn num(v: f64) -> String {
    v.to_string()
}

fn nums(v: &[f64]) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|x| num(*x))
}

pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    w.write_record(header).map_err(|e| io_error(path, e))?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        w.write_record(row).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|e| io_error(path, e))
}

/// One evaluation of the reduction at the probe point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionRow {
    pub eps: f64,
    pub xi: Vec<f64>,
    /// `||∇f_ε(z_ξ)||_{H^{-1}}`.
    pub ansatz_residual: f64,
    pub w_norm: f64,
    pub fixed_point_iters: usize,
    pub linear_iters: usize,
    pub orthogonality: f64,
    pub projected_residual: f64,
    pub phi: f64,
    /// `Γ(εξ)` with the grid constants.
    pub gamma: f64,
    pub phi_gamma_gap: f64,
    pub sigma_term: f64,
    pub theta_term: f64,
    pub lambda_term: f64,
    pub grad_phi: Vec<f64>,
    /// `ε∇Γ(εξ)`.
    pub eps_grad_gamma: Vec<f64>,
    /// `||∇Φ_ε(ξ) - ε∇Γ(εξ)|| / ε`.
    pub grad_gap_over_eps: f64,
    pub rayleigh_z: f64,
    pub complement_gap: f64,
    pub eig_iters: usize,
}

pub fn reduction_table(path: &Path, dim: usize, rows: &[ReductionRow]) -> Result<(), RunError> {
    let mut header = vec!["eps".to_string()];
    header.extend(axis_columns("xi", dim));
    header.extend(
        [
            "ansatz_residual",
            "w_norm",
            "fixed_point_iters",
            "linear_iters",
            "orthogonality",
            "projected_residual",
            "phi",
            "gamma",
            "phi_gamma_gap",
            "sigma_term",
            "theta_term",
            "lambda_term",
        ]
        .map(String::from),
    );
    header.extend(axis_columns("grad_phi", dim));
    header.extend(axis_columns("eps_grad_gamma", dim));
    header.extend(["grad_gap_over_eps", "rayleigh_z", "complement_gap", "eig_iters"].map(String::from));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![num(r.eps)];
            row.extend(nums(&r.xi));
            row.extend([
                num(r.ansatz_residual),
                num(r.w_norm),
                r.fixed_point_iters.to_string(),
                r.linear_iters.to_string(),
                num(r.orthogonality),
                num(r.projected_residual),
                num(r.phi),
                num(r.gamma),
                num(r.phi_gamma_gap),
                num(r.sigma_term),
                num(r.theta_term),
                num(r.lambda_term),
            ]);
            row.extend(nums(&r.grad_phi));
            row.extend(nums(&r.eps_grad_gamma));
            row.extend([
                num(r.grad_gap_over_eps),
                num(r.rayleigh_z),
                num(r.complement_gap),
                r.eig_iters.to_string(),
            ]);
            row
        })
        .collect();
    write_table(path, &header, &body)
}

pub fn gamma_table(path: &Path, dim: usize, evals: &[GammaEval]) -> Result<(), RunError> {
    let mut header = axis_columns("x", dim);
    header.extend(["gamma", "gamma1", "gamma2", "grad_norm"].map(String::from));
    let body: Vec<Vec<String>> = evals
        .iter()
        .map(|e| {
            let mut row: Vec<String> = nums(&e.xi).collect();
            let grad = e.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            row.extend([num(e.gamma), num(e.gamma1), num(e.gamma2), num(grad)]);
            row
        })
        .collect();
    write_table(path, &header, &body)
}

pub fn critical_point_table(path: &Path, dim: usize, points: &[CriticalPoint]) -> Result<(), RunError> {
    let mut header = vec!["index".to_string()];
    header.extend(axis_columns("x", dim));
    header.extend(["kind", "gamma", "newton_residual"].map(String::from));
    header.extend(axis_columns("hessian_eig", dim));
    let body: Vec<Vec<String>> = points
        .iter()
        .enumerate()
        .map(|(i, cp)| {
            let mut row = vec![i.to_string()];
            row.extend(nums(&cp.location));
            let kind = serde_json::to_value(cp.kind).unwrap();
            row.extend([
                kind.as_str().unwrap_or_default().to_string(),
                num(cp.gamma),
                num(cp.newton_residual),
            ]);
            row.extend(nums(&cp.hessian_eigenvalues));
            row
        })
        .collect();
    write_table(path, &header, &body)
}

pub fn trace_table(path: &Path, dim: usize, trace: &ConcentrationTrace) -> Result<(), RunError> {
    let mut header = vec!["eps".to_string()];
    header.extend(axis_columns("xi_critical", dim));
    header.extend(axis_columns("peak", dim));
    header.extend(
        [
            "distance",
            "peak_shift",
            "reduced_iters",
            "grad_phi_norm",
            "newton_iters",
            "final_residual",
            "positive",
            "tail_decay_rate",
            "beta",
            "phi",
            "energy",
        ]
        .map(String::from),
    );
    let body: Vec<Vec<String>> = trace
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![num(r.eps)];
            row.extend(nums(&r.xi_critical));
            row.extend(nums(&r.peak_original));
            row.extend([
                num(r.distance_to_xi0),
                num(r.peak_shift),
                r.reduced_iters.to_string(),
                num(r.grad_phi_norm),
                r.newton_iters.to_string(),
                num(r.final_residual),
                r.positive.to_string(),
                r.tail_decay_rate.map(num).unwrap_or_default(),
                num(r.beta),
                num(r.phi),
                num(r.energy),
            ]);
            row
        })
        .collect();
    write_table(path, &header, &body)
}

pub fn multiplicity_table(path: &Path, dim: usize, report: &MultiplicityReport) -> Result<(), RunError> {
    let mut header = vec!["index".to_string()];
    header.extend(axis_columns("gamma_point", dim));
    header.push("gamma_kind".into());
    header.extend(axis_columns("xi", dim));
    header.extend(axis_columns("peak", dim));
    header.extend(
        ["newton_iters", "final_residual", "peak_height", "tail_decay_rate"].map(String::from),
    );
    let body: Vec<Vec<String>> = report
        .hits
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let mut row = vec![i.to_string()];
            row.extend(nums(&h.gamma_point));
            let kind = serde_json::to_value(h.gamma_kind).unwrap();
            row.push(kind.as_str().unwrap_or_default().to_string());
            row.extend(nums(&h.xi));
            row.extend(nums(&h.peak_original));
            row.extend([
                h.solve.newton_iters.to_string(),
                num(h.solve.final_residual),
                num(h.solve.peak_height),
                h.solve.tail_decay_rate.map(num).unwrap_or_default(),
            ]);
            row
        })
        .collect();
    write_table(path, &header, &body)
}
