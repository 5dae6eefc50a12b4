//! Pass/fail rules evaluated on the tables of a run.

use conc_lab_core::convergence::{fit_order, OrderFit};
use conc_lab_core::landscape::dist;
use conc_lab_core::solver::{ConcentrationTrace, MultiplicityReport};
use serde::Serialize;

use crate::config::{AcceptanceThresholds, MultiplicityConfig};
use crate::report::ReductionRow;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleOutcome {
    pub rule: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(rule: &str, passed: bool, detail: String) -> RuleOutcome {
    RuleOutcome {
        rule: rule.into(),
        passed,
        detail,
    }
}

/// Named order fits over the reduction rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionFits {
    pub ansatz_residual: Result<OrderFit, String>,
    pub w_norm: Result<OrderFit, String>,
    pub phi_gamma_gap: Result<OrderFit, String>,
    pub lambda_term: Result<OrderFit, String>,
}

fn fit(rows: &[ReductionRow], value: impl Fn(&ReductionRow) -> f64) -> Result<OrderFit, String> {
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, value(r))).collect();
    fit_order(&pairs).map_err(|e| e.to_string())
}

pub fn reduction_fits(rows: &[ReductionRow]) -> ReductionFits {
    ReductionFits {
        ansatz_residual: fit(rows, |r| r.ansatz_residual),
        w_norm: fit(rows, |r| r.w_norm),
        phi_gamma_gap: fit(rows, |r| r.phi_gamma_gap),
        lambda_term: fit(rows, |r| r.lambda_term.abs()),
    }
}

fn slope_at_least(f: &Result<OrderFit, String>, min: f64) -> (bool, String) {
    match f {
        Ok(f) => (f.slope >= min, format!("slope {:.4} (r² {:.4})", f.slope, f.r_squared)),
        Err(e) => (false, e.clone()),
    }
}

/// Rules on the reduction table. Fits need three rows, so with fewer `eps` only the
/// spectral and gradient rules are reported.
pub fn reduction_rules(rows: &[ReductionRow], t: &AcceptanceThresholds) -> Vec<RuleOutcome> {
    let mut out = Vec::new();
    if rows.is_empty() {
        return out;
    }
    if rows.len() >= 3 {
        let fits = reduction_fits(rows);
        let (ok, detail) = slope_at_least(&fits.ansatz_residual, t.min_slope);
        let r2_ok = fits.ansatz_residual.as_ref().map(|f| f.r_squared >= t.min_r_squared).unwrap_or(false);
        out.push(outcome("almost-solution", ok && r2_ok, format!("ansatz residual {detail}")));

        let (ok, detail) = slope_at_least(&fits.w_norm, t.min_slope);
        let worst = rows.iter().map(|r| r.fixed_point_iters).max().unwrap_or(0);
        out.push(outcome(
            "correction-size",
            ok && worst <= t.max_fixed_point_iters,
            format!("||w|| {detail}; at most {worst} fixed-point iterations"),
        ));

        let (ok_gap, d_gap) = slope_at_least(&fits.phi_gamma_gap, t.min_slope);
        let (ok_lambda, d_lambda) = slope_at_least(&fits.lambda_term, t.min_slope);
        out.push(outcome(
            "value-expansion",
            ok_gap && ok_lambda,
            format!("|Phi - Gamma| {d_gap}; |Lambda| {d_lambda}"),
        ));
    }
    if rows.len() >= 2 {
        let ratios: Vec<f64> = rows.iter().map(|r| r.grad_gap_over_eps).collect();
        let floor = t.gradient_noise_floor;
        let decreasing = ratios.windows(2).all(|w| w[1] < w[0] || w[1] <= floor);
        let mut detail = format!("||grad Phi - eps grad Gamma||/eps = {ratios:?}");
        if ratios.iter().any(|r| *r <= floor) {
            detail.push_str(&format!(" (noise floor {floor:e})"));
        }
        out.push(outcome("gradient-expansion", decreasing, detail));
    }
    let worst_rayleigh = rows.iter().map(|r| r.rayleigh_z).fold(f64::NEG_INFINITY, f64::max);
    let mut spectra_ok = worst_rayleigh <= t.max_rayleigh_z;
    let mut detail = format!("max rayleigh_z {worst_rayleigh:.4}");
    if rows.len() >= 2 {
        let prev = rows[rows.len() - 2].complement_gap;
        let last = rows[rows.len() - 1].complement_gap;
        let change = (last - prev).abs() / prev;
        spectra_ok &= change <= t.gap_uniformity;
        detail.push_str(&format!("; complement gap {prev:.4} -> {last:.4} ({:.1}% change)", 100.0 * change));
    }
    out.push(outcome("spectra", spectra_ok, detail));
    out
}

pub fn concentration_rule(trace: &ConcentrationTrace, t: &AcceptanceThresholds) -> RuleOutcome {
    let last = trace.rows.last().map(|r| r.distance_to_xi0).unwrap_or(f64::INFINITY);
    let positive = trace.rows.iter().all(|r| r.positive);
    outcome(
        "concentration",
        trace.tail_non_increasing && last <= t.max_final_distance && positive,
        format!(
            "final distance {last:e}; tail non-increasing: {}; all positive: {positive}",
            trace.tail_non_increasing
        ),
    )
}

pub fn multiplicity_rule(report: &MultiplicityReport, m: &MultiplicityConfig) -> RuleOutcome {
    let mut widest = 0.0_f64;
    for (i, a) in report.hits.iter().enumerate() {
        for b in &report.hits[i + 1..] {
            widest = widest.max(dist(&a.peak_original, &b.peak_original));
        }
    }
    let count = report.hits.len();
    outcome(
        "multiplicity",
        count >= m.min_solutions && widest >= m.min_separation,
        format!("{count} distinct solutions, widest peak separation {widest:.4}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(eps: f64, ratio: f64) -> ReductionRow {
        ReductionRow {
            eps,
            xi: vec![0.0; 3],
            ansatz_residual: eps * eps,
            w_norm: eps * eps,
            fixed_point_iters: 3,
            linear_iters: 40,
            orthogonality: 0.0,
            projected_residual: 0.0,
            phi: 1.0,
            gamma: 1.0,
            phi_gamma_gap: eps * eps,
            sigma_term: 0.0,
            theta_term: 0.0,
            lambda_term: eps * eps,
            grad_phi: vec![0.0; 3],
            eps_grad_gamma: vec![0.0; 3],
            grad_gap_over_eps: ratio,
            rayleigh_z: -2.0,
            complement_gap: 0.68,
            eig_iters: 10,
        }
    }

    fn gradient_rule(ratios: &[(f64, f64)]) -> RuleOutcome {
        let rows: Vec<ReductionRow> = ratios.iter().map(|&(e, r)| row(e, r)).collect();
        reduction_rules(&rows, &AcceptanceThresholds::default())
            .into_iter()
            .find(|o| o.rule == "gradient-expansion")
            .unwrap()
    }

    #[test]
    fn gradient_ratios_must_decrease_above_the_noise_floor() {
        assert!(gradient_rule(&[(0.4, 4e-4), (0.2, 1e-4), (0.1, 3e-5)]).passed);
        assert!(!gradient_rule(&[(0.4, 4e-4), (0.2, 1e-4), (0.1, 2e-4)]).passed);
        let noise = gradient_rule(&[(0.4, 8e-10), (0.2, 1.5e-9), (0.1, 1.6e-9)]);
        assert!(noise.passed);
        assert!(noise.detail.contains("noise floor"));
    }
}
