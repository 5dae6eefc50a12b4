//! Scenario configuration: the JSON schema read by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use conc_lab_core::ground_state::ShootingOptions;
use conc_lab_core::grid::GridSpec;
use conc_lab_core::model::critical_sigma;
use conc_lab_core::potential::PotentialTriple;
use conc_lab_core::reduction::ReductionOptions;
use conc_lab_core::region::BoxRegion;
use conc_lab_core::solver::{NewtonOptions, SweepOptions};
use serde::{Deserialize, Serialize};

use crate::{ExitClass, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    /// `σ = (N+2)/(N-2)`.
    Critical,
    Explicit(f64),
}

/// A full-solution sweep towards a critical point of `Γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    /// Guess for the concentration point; snapped to the nearest critical point of `Γ`.
    pub xi0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplicityConfig {
    pub region: BoxRegion,
    pub eps: f64,
    /// At least two hits must have peaks this far apart (original coordinates).
    pub min_separation: f64,
    #[serde(default = "default_min_solutions")]
    pub min_solutions: usize,
}

fn default_min_solutions() -> usize {
    2
}

/// Reduction settings other than the grid, which is configured separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionTolerances {
    pub fixed_point_tol: f64,
    pub max_fixed_point_iters: usize,
    pub linear_tol: f64,
    pub max_linear_iters: usize,
    pub relax_ansatz: bool,
    pub xi_step: f64,
    pub eig_tol: f64,
    pub eig_max_iters: usize,
}

impl Default for ReductionTolerances {
    fn default() -> Self {
        let d = ReductionOptions::default();
        Self {
            fixed_point_tol: d.fixed_point_tol,
            max_fixed_point_iters: d.max_fixed_point_iters,
            linear_tol: d.linear_tol,
            max_linear_iters: d.max_linear_iters,
            relax_ansatz: d.relax_ansatz,
            xi_step: d.xi_step,
            eig_tol: d.eig_tol,
            eig_max_iters: d.eig_max_iters,
        }
    }
}

impl ReductionTolerances {
    pub fn options(&self, grid: GridSpec) -> ReductionOptions {
        ReductionOptions {
            grid,
            fixed_point_tol: self.fixed_point_tol,
            max_fixed_point_iters: self.max_fixed_point_iters,
            linear_tol: self.linear_tol,
            max_linear_iters: self.max_linear_iters,
            relax_ansatz: self.relax_ansatz,
            xi_step: self.xi_step,
            eig_tol: self.eig_tol,
            eig_max_iters: self.eig_max_iters,
        }
    }
}

/// Thresholds of the pass/fail rules in the summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptanceThresholds {
    pub min_slope: f64,
    pub min_r_squared: f64,
    pub max_fixed_point_iters: usize,
    pub max_rayleigh_z: f64,
    /// Relative change allowed in the complement gap between the last two `eps`.
    pub gap_uniformity: f64,
    pub max_final_distance: f64,
    /// Gradient ratios below this are finite-difference noise and count as decreasing.
    pub gradient_noise_floor: f64,
}

impl Default for AcceptanceThresholds {
    fn default() -> Self {
        Self {
            min_slope: 0.9,
            min_r_squared: 0.98,
            max_fixed_point_iters: 30,
            max_rayleigh_z: -0.01,
            gap_uniformity: 0.25,
            max_final_distance: 0.05,
            gradient_noise_floor: 1e-7,
        }
    }
}

/// Sweep settings other than the Newton solver, which is configured separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepTolerances {
    pub reduced_max_iters: usize,
    pub reduced_step_tol: f64,
    pub max_reduced_step: f64,
    pub noise_floor: f64,
    pub jump_fraction: f64,
    pub cluster_radius: f64,
}

impl Default for SweepTolerances {
    fn default() -> Self {
        let d = SweepOptions::default();
        Self {
            reduced_max_iters: d.reduced_max_iters,
            reduced_step_tol: d.reduced_step_tol,
            max_reduced_step: d.max_reduced_step,
            noise_floor: d.noise_floor,
            jump_fraction: d.jump_fraction,
            cluster_radius: d.cluster_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub shooting: ShootingOptions,
    pub reduction: ReductionTolerances,
    pub newton: NewtonOptions,
    pub sweep: SweepTolerances,
    /// Lattice points per axis for the hypothesis check.
    pub hypothesis_samples: usize,
    /// Lattice points per axis of the `Γ` table.
    pub gamma_scan_points: usize,
    pub acceptance: AcceptanceThresholds,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            shooting: ShootingOptions::default(),
            reduction: ReductionTolerances::default(),
            newton: NewtonOptions::default(),
            sweep: SweepTolerances::default(),
            hypothesis_samples: 11,
            gamma_scan_points: 21,
            acceptance: AcceptanceThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub dimension: usize,
    pub exponent_p: f64,
    pub sigma: SigmaMode,
    pub potentials: PotentialTriple,
    pub grid: GridSpec,
    /// Strictly decreasing.
    pub eps_list: Vec<f64>,
    /// Bound on `|probe_xi|`; defaults to half the grid half-width.
    #[serde(default)]
    pub xi_bar: Option<f64>,
    /// Rescaled point at which the reduction is evaluated for every `eps`.
    pub probe_xi: Vec<f64>,
    /// Region (original coordinates) on which the hypotheses are sampled.
    pub validation_box: BoxRegion,
    /// Region searched for critical points of `Γ`.
    pub search_box: BoxRegion,
    #[serde(default)]
    pub concentration: Option<ConcentrationConfig>,
    #[serde(default)]
    pub multiplicity: Option<MultiplicityConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_multistart")]
    pub multistart_count: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_multistart() -> usize {
    64
}

fn config_error(msg: impl Into<String>) -> RunError {
    RunError::new(ExitClass::Config, "config", msg.into())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let config: Self = serde_json::from_str(text).map_err(|e| config_error(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn sigma_value(&self) -> Result<f64, RunError> {
        match self.sigma {
            SigmaMode::Critical => critical_sigma(self.dimension).map_err(|e| config_error(e.to_string())),
            SigmaMode::Explicit(s) => Ok(s),
        }
    }

    pub fn xi_bar_value(&self) -> f64 {
        self.xi_bar.unwrap_or(0.5 * self.grid.half_width)
    }

    pub fn reduction_options(&self) -> ReductionOptions {
        self.tolerances.reduction.options(self.grid)
    }

    pub fn sweep_options(&self) -> SweepOptions {
        let s = &self.tolerances.sweep;
        SweepOptions {
            reduced_max_iters: s.reduced_max_iters,
            reduced_step_tol: s.reduced_step_tol,
            max_reduced_step: s.max_reduced_step,
            newton: self.tolerances.newton,
            noise_floor: s.noise_floor,
            jump_fraction: s.jump_fraction,
            cluster_radius: s.cluster_radius,
        }
    }

    /// Structural checks that need no computation.
    pub fn validate(&self) -> Result<(), RunError> {
        let n = self.dimension;
        if !(1..=3).contains(&n) {
            return Err(config_error(format!("dimension must be 1, 2 or 3, got {n}")));
        }
        if !(self.exponent_p > 1.0) {
            return Err(config_error(format!("exponent_p must exceed 1, got {}", self.exponent_p)));
        }
        let sigma = self.sigma_value()?;
        if !(sigma > self.exponent_p) {
            return Err(config_error(format!("sigma={sigma} must exceed p={}", self.exponent_p)));
        }
        if self.grid.dim != n {
            return Err(config_error("grid dimension differs from scenario dimension"));
        }
        self.grid.check().map_err(|e| config_error(e.to_string()))?;
        self.potentials.check(n).map_err(|e| config_error(e.to_string()))?;
        if self.eps_list.is_empty() {
            return Err(config_error("eps_list is empty"));
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(config_error("eps_list entries must be positive"));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(config_error("eps_list must be strictly decreasing"));
        }
        if self.probe_xi.len() != n {
            return Err(config_error("probe_xi has wrong dimension"));
        }
        let xi_bar = self.xi_bar_value();
        if !(xi_bar > 0.0) {
            return Err(config_error("xi_bar must be positive"));
        }
        let probe_norm = self.probe_xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if probe_norm > xi_bar {
            return Err(config_error(format!("|probe_xi| = {probe_norm} exceeds xi_bar = {xi_bar}")));
        }
        for (label, region) in [("validation_box", &self.validation_box), ("search_box", &self.search_box)] {
            region.check().map_err(|e| config_error(format!("{label}: {e}")))?;
            if region.dim() != n {
                return Err(config_error(format!("{label} has wrong dimension")));
            }
        }
        if let Some(c) = &self.concentration {
            if c.xi0.len() != n {
                return Err(config_error("concentration.xi0 has wrong dimension"));
            }
            if !self.validation_box.contains(&c.xi0, 0.0) {
                return Err(config_error("concentration.xi0 lies outside the validation box"));
            }
        }
        if let Some(m) = &self.multiplicity {
            m.region.check().map_err(|e| config_error(format!("multiplicity.region: {e}")))?;
            if m.region.dim() != n {
                return Err(config_error("multiplicity.region has wrong dimension"));
            }
            if !(m.eps > 0.0) || !(m.min_separation >= 0.0) {
                return Err(config_error("multiplicity eps must be positive and min_separation non-negative"));
            }
        }
        if self.multistart_count == 0 {
            return Err(config_error("multistart_count must be positive"));
        }
        let t = &self.tolerances;
        if t.hypothesis_samples < 2 || t.gamma_scan_points < 2 {
            return Err(config_error("hypothesis_samples and gamma_scan_points must be at least 2"));
        }
        let positive = [
            t.reduction.fixed_point_tol,
            t.reduction.linear_tol,
            t.reduction.xi_step,
            t.reduction.eig_tol,
            t.newton.tol,
            t.newton.linear_tol,
            t.shooting.bisection_tol,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(config_error("tolerances must be positive"));
        }
        Ok(())
    }
}
