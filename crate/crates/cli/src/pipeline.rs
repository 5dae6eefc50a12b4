//! Stage orchestration for one scenario.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use conc_lab_core::ansatz::MARGIN_DECAY_LENGTHS;
use conc_lab_core::functional::Functional;
use conc_lab_core::ground_state::{solve_ground_state, GroundStateConstants};
use conc_lab_core::grid::RIESZ_TOL;
use conc_lab_core::landscape::{self, CriticalKind, CriticalPoint, GammaEval, Landscape};
use conc_lab_core::potential::ValidationReport;
use conc_lab_core::reduction::{self, Reducer};
use conc_lab_core::region::BoxRegion;
use conc_lab_core::solver::{self, concentration_sweep, multiplicity_scan, newton_solve, ConcentrationTrace};
use conc_lab_core::Model;
use rayon::prelude::*;
use serde::Serialize;

use crate::acceptance::{self, ReductionFits, RuleOutcome};
use crate::config::ScenarioConfig;
use crate::report::{self, ReductionRow};
use crate::{ExitClass, RunError};

/// How far the pipeline goes. Each stage includes the hypothesis check and the ground state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GroundState,
    GammaScan,
    Reduce,
    Solve,
    Sweep,
    Run,
}

impl Stage {
    fn gamma(self) -> bool {
        !matches!(self, Stage::GroundState)
    }

    fn reduce(self) -> bool {
        matches!(self, Stage::Reduce | Stage::Run)
    }

    fn sweep(self) -> bool {
        matches!(self, Stage::Sweep | Stage::Run)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub stage: Stage,
    /// Overrides `output_dir` of the config.
    pub out_dir: Option<PathBuf>,
    /// Overrides `seed` of the config.
    pub seed: Option<u64>,
    /// Write solution fields (`.bin` + `.json` header) next to the tables.
    pub dump_fields: bool,
    /// `eps` for [`Stage::Solve`]; defaults to the last entry of `eps_list`.
    pub solve_eps: Option<f64>,
    /// Rescaled `ξ` for [`Stage::Solve`]; defaults to `probe_xi`.
    pub solve_xi: Option<Vec<f64>>,
}

impl RunOptions {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            out_dir: None,
            seed: None,
            dump_fields: false,
            solve_eps: None,
            solve_xi: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageFailure {
    pub eps: f64,
    pub class: ExitClass,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationSummary {
    pub xi0: Vec<f64>,
    pub xi0_kind: CriticalKind,
    pub fitted_order: Option<f64>,
    pub tail_non_increasing: bool,
    pub final_distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiplicitySummary {
    pub eps: f64,
    pub solutions: usize,
    pub failed_seeds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub eps: f64,
    pub xi: Vec<f64>,
    pub newton_iters: usize,
    pub linear_iters: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub residual_sup: f64,
    pub positive: bool,
    pub peak: Option<Vec<f64>>,
    pub peak_original: Option<Vec<f64>>,
    pub peak_height: f64,
    pub tail_decay_rate: Option<f64>,
    pub beta: f64,
    pub energy: f64,
    pub phi: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub stage: Stage,
    pub seed: u64,
    pub sigma: f64,
    pub continuum_constants: Option<GroundStateConstants>,
    pub grid_constants: Option<GroundStateConstants>,
    pub hypotheses: Option<ValidationReport>,
    pub critical_points: Vec<CriticalPoint>,
    /// Largest `eps` of the list at which the correction converged at the probe point.
    pub largest_converged_eps: Option<f64>,
    pub failures: Vec<StageFailure>,
    pub fits: Option<ReductionFits>,
    pub concentration: Option<ConcentrationSummary>,
    pub multiplicity: Option<MultiplicitySummary>,
    pub solve: Option<SolveSummary>,
    pub rules: Vec<RuleOutcome>,
    pub passed: bool,
    pub error: Option<String>,
    pub exit_class: ExitClass,
    pub timings_seconds: BTreeMap<String, f64>,
    pub out_dir: PathBuf,
}

impl RunSummary {
    pub fn succeeded(&self) -> bool {
        self.exit_class == ExitClass::Success
    }
}

struct Run<'c> {
    config: &'c ScenarioConfig,
    options: &'c RunOptions,
    out: PathBuf,
    outputs: Vec<String>,
    summary: RunSummary,
}

fn core_err(stage: &'static str) -> impl Fn(conc_lab_core::Error) -> RunError {
    move |e| RunError::from_core(stage, e)
}

/// Runs the stages requested by `options` and writes the artifacts.
///
/// Returns `Err` only when nothing could be run (invalid config, unusable output
/// directory). Failures of later stages and failed acceptance rules are recorded in the
/// returned summary (`exit_class`, `error`), which is written to disk together with the
/// manifest in every case.
pub fn run_scenario(config: &ScenarioConfig, options: &RunOptions) -> Result<RunSummary, RunError> {
    config.validate()?;
    let out = options
        .out_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&config.name));
    fs::create_dir_all(&out)
        .map_err(|e| RunError::new(ExitClass::Internal, "setup", format!("{}: {e}", out.display())))?;
    let seed = options.seed.unwrap_or(config.seed);
    let mut run = Run {
        config,
        options,
        outputs: Vec::new(),
        summary: RunSummary {
            scenario: config.name.clone(),
            stage: options.stage,
            seed,
            sigma: config.sigma_value()?,
            continuum_constants: None,
            grid_constants: None,
            hypotheses: None,
            critical_points: Vec::new(),
            largest_converged_eps: None,
            failures: Vec::new(),
            fits: None,
            concentration: None,
            multiplicity: None,
            solve: None,
            rules: Vec::new(),
            passed: false,
            error: None,
            exit_class: ExitClass::Success,
            timings_seconds: BTreeMap::new(),
            out_dir: out.clone(),
        },
        out,
    };
    let result = run.execute();
    let result = match result {
        Ok(()) => {
            run.summary.passed = run.summary.rules.iter().all(|r| r.passed);
            if run.summary.passed {
                Ok(())
            } else {
                let failed: Vec<&str> =
                    run.summary.rules.iter().filter(|r| !r.passed).map(|r| r.rule.as_str()).collect();
                Err(RunError::new(
                    ExitClass::Acceptance,
                    "acceptance",
                    format!("rules failed: {}", failed.join(", ")),
                ))
            }
        }
        Err(e) => Err(e),
    };
    if let Err(e) = &result {
        run.summary.exit_class = e.class;
        run.summary.error = Some(e.to_string());
    }
    run.finish()?;
    Ok(run.summary)
}

impl Run<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn timed<T>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<T, RunError>) -> Result<T, RunError> {
        let start = Instant::now();
        let value = f(self);
        self.summary
            .timings_seconds
            .insert(label.to_string(), start.elapsed().as_secs_f64());
        value
    }

    fn execute(&mut self) -> Result<(), RunError> {
        let config = self.config;
        let stage = self.options.stage;
        let sigma = self.summary.sigma;

        let report = self.timed("hypotheses", |run| {
            let report = config
                .potentials
                .validate_hypotheses(&config.validation_box, config.tolerances.hypothesis_samples)
                .map_err(core_err("hypotheses"))?;
            report::write_json(&run.path("hypotheses.json"), &report)?;
            Ok(report)
        })?;
        self.summary.hypotheses = Some(report);

        let model = self.timed("ground_state", |run| {
            let profile = solve_ground_state(config.dimension, config.exponent_p, &config.tolerances.shooting)
                .map_err(core_err("ground-state"))?;
            let stem = run.path("ground_state.csv");
            run.outputs.push("ground_state.json".into());
            profile.save(&stem).map_err(core_err("ground-state"))?;
            Model::new(config.exponent_p, sigma, config.potentials.clone(), Arc::new(profile))
                .map_err(core_err("ground-state"))
        })?;
        self.summary.continuum_constants = Some(model.constants);
        if !stage.gamma() {
            return Ok(());
        }

        let reducer = Reducer::new(&model, config.reduction_options()).map_err(core_err("gamma-scan"))?;
        let landscape = self.timed("gamma_scan", |run| run.gamma_stage(&reducer))?;

        if stage.reduce() {
            self.timed("reduce", |run| run.reduce_stage(&reducer, &landscape))?;
        }
        if stage == Stage::Solve {
            self.timed("solve", |run| run.solve_stage(&reducer))?;
        }
        if stage.sweep() {
            if config.concentration.is_some() {
                self.timed("concentration", |run| run.concentration_stage(&reducer, &landscape))?;
            }
            if config.multiplicity.is_some() {
                self.timed("multiplicity", |run| run.multiplicity_stage(&reducer))?;
            }
        }
        Ok(())
    }

    fn gamma_stage<'m>(&mut self, reducer: &Reducer<'m>) -> Result<Landscape<'m>, RunError> {
        let config = self.config;
        let landscape = reducer.landscape().map_err(core_err("gamma-scan"))?;
        self.summary.grid_constants = Some(landscape.constants);
        let lattice = config.search_box.lattice(config.tolerances.gamma_scan_points);
        let evals: Vec<GammaEval> = lattice
            .par_iter()
            .map(|x| landscape.at(x))
            .collect::<Result<_, _>>()
            .map_err(core_err("gamma-scan"))?;
        report::gamma_table(&self.path("gamma.csv"), config.dimension, &evals)?;
        let points = landscape
            .find_critical_points(&config.search_box, config.multistart_count, self.summary.seed)
            .map_err(core_err("gamma-scan"))?;
        report::critical_point_table(&self.path("critical_points.csv"), config.dimension, &points)?;
        self.summary.critical_points = points;
        Ok(landscape)
    }

    fn reduce_stage(&mut self, reducer: &Reducer, landscape: &Landscape) -> Result<(), RunError> {
        let config = self.config;
        let xi = &config.probe_xi;
        let results: Vec<Result<ReductionRow, conc_lab_core::Error>> = config
            .eps_list
            .par_iter()
            .map(|&eps| reduction_row(reducer, landscape, eps, xi))
            .collect();
        let mut rows = Vec::new();
        for (eps, result) in config.eps_list.iter().zip(results) {
            match result {
                Ok(row) => rows.push(row),
                Err(e) => self.summary.failures.push(StageFailure {
                    eps: *eps,
                    class: ExitClass::of(&e),
                    message: e.to_string(),
                }),
            }
        }
        report::reduction_table(&self.path("reduction.csv"), config.dimension, &rows)?;
        self.summary.largest_converged_eps = rows.first().map(|r| r.eps);
        if let Some(first) = self.summary.failures.first() {
            let bracket = match self.summary.largest_converged_eps {
                Some(e) => format!("largest converged eps {e}"),
                None => "no eps in the list converged".to_string(),
            };
            return Err(RunError::new(
                first.class,
                "reduce",
                format!("eps={}: {}; {bracket}", first.eps, first.message),
            ));
        }
        if rows.len() >= 3 {
            self.summary.fits = Some(acceptance::reduction_fits(&rows));
        }
        self.summary
            .rules
            .extend(acceptance::reduction_rules(&rows, &config.tolerances.acceptance));
        Ok(())
    }

    fn solve_stage(&mut self, reducer: &Reducer) -> Result<(), RunError> {
        let config = self.config;
        let eps = self
            .options
            .solve_eps
            .unwrap_or(*config.eps_list.last().expect("eps_list is validated nonempty"));
        let xi = self.options.solve_xi.clone().unwrap_or_else(|| config.probe_xi.clone());
        if !(eps > 0.0) || xi.len() != config.dimension {
            return Err(RunError::new(
                ExitClass::Config,
                "solve",
                "solve needs eps > 0 and a point of the scenario dimension".into(),
            ));
        }
        let outcome = reducer.solve_correction(eps, &xi).map_err(core_err("solve"))?;
        let functional = Functional::new(reducer.model, &outcome.z.grid, eps).map_err(core_err("solve"))?;
        let solved =
            newton_solve(&functional, &outcome.solution_guess(), &config.tolerances.newton).map_err(core_err("solve"))?;
        if self.options.dump_fields {
            let stem = self.path("solution.bin");
            self.outputs.push("solution.json".into());
            solved.u.save(&stem).map_err(core_err("solve"))?;
        }
        let energy = functional.energy(&solved.u).map_err(core_err("solve"))?;
        let summary = SolveSummary {
            eps,
            xi,
            newton_iters: solved.newton_iters,
            linear_iters: solved.linear_iters,
            initial_residual: solved.initial_residual,
            final_residual: solved.final_residual,
            residual_sup: solved.residual_sup,
            positive: solved.positive,
            peak_original: solved.peak.as_ref().map(|p| p.iter().map(|v| eps * v).collect()),
            peak: solved.peak,
            peak_height: solved.peak_height,
            tail_decay_rate: solved.tail_decay_rate,
            beta: outcome.params.beta,
            energy,
            phi: outcome.phi,
        };
        report::write_json(&self.path("solve.json"), &summary)?;
        self.summary.solve = Some(summary);
        Ok(())
    }

    fn concentration_stage(&mut self, reducer: &Reducer, landscape: &Landscape) -> Result<(), RunError> {
        let config = self.config;
        let guess = &config.concentration.as_ref().expect("checked by caller").xi0;
        let target = snap_to_critical_point(landscape, guess, &config.validation_box)?;
        let trace: ConcentrationTrace = concentration_sweep(
            reducer,
            &config.name,
            &config.eps_list,
            &target.location,
            &config.sweep_options(),
        )
        .map_err(core_err("concentration"))?;
        report::trace_table(&self.path("trace.csv"), config.dimension, &trace)?;
        self.summary.concentration = Some(ConcentrationSummary {
            xi0: target.location.clone(),
            xi0_kind: target.kind,
            fitted_order: trace.fitted_order,
            tail_non_increasing: trace.tail_non_increasing,
            final_distance: trace.rows.last().map(|r| r.distance_to_xi0).unwrap_or(f64::NAN),
        });
        self.summary
            .rules
            .push(acceptance::concentration_rule(&trace, &config.tolerances.acceptance));
        Ok(())
    }

    fn multiplicity_stage(&mut self, reducer: &Reducer) -> Result<(), RunError> {
        let config = self.config;
        let m = config.multiplicity.as_ref().expect("checked by caller");
        let report = multiplicity_scan(
            reducer,
            &m.region,
            m.eps,
            config.multistart_count,
            self.summary.seed,
            &config.sweep_options(),
        )
        .map_err(core_err("multiplicity"))?;
        report::multiplicity_table(&self.path("multiplicity.csv"), config.dimension, &report)?;
        if self.options.dump_fields {
            for (i, hit) in report.hits.iter().enumerate() {
                let name = format!("multiplicity_{i}");
                let stem = self.path(&format!("{name}.bin"));
                self.outputs.push(format!("{name}.json"));
                hit.solve.u.save(&stem).map_err(core_err("multiplicity"))?;
            }
        }
        self.summary.multiplicity = Some(MultiplicitySummary {
            eps: m.eps,
            solutions: report.hits.len(),
            failed_seeds: report.failed_seeds,
        });
        self.summary.rules.push(acceptance::multiplicity_rule(&report, m));
        Ok(())
    }

    fn finish(&mut self) -> Result<(), RunError> {
        let summary_path = self.path("summary.json");
        report::write_json(&summary_path, &self.summary)?;
        let manifest_path = self.path("manifest.json");
        let manifest = Manifest::new(self.config, &self.summary, self.outputs.clone());
        report::write_json(&manifest_path, &manifest)
    }
}

fn reduction_row(
    reducer: &Reducer,
    landscape: &Landscape,
    eps: f64,
    xi: &[f64],
) -> Result<ReductionRow, conc_lab_core::Error> {
    let outcome = reducer.phi_value_and_grad(eps, xi)?;
    let spectra = reducer.spectral_diagnostics(eps, xi)?;
    let y: Vec<f64> = xi.iter().map(|v| eps * v).collect();
    let g = landscape.at(&y)?;
    let eps_grad_gamma: Vec<f64> = g.grad.iter().map(|v| eps * v).collect();
    let gap = outcome
        .phi_grad
        .iter()
        .zip(&eps_grad_gamma)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(ReductionRow {
        eps,
        xi: xi.to_vec(),
        ansatz_residual: outcome.ansatz_residual,
        w_norm: outcome.w_norm,
        fixed_point_iters: outcome.fixed_point_iters,
        linear_iters: outcome.linear_iters,
        orthogonality: outcome.orthogonality,
        projected_residual: outcome.projected_residual,
        phi: outcome.phi,
        gamma: g.gamma,
        phi_gamma_gap: (outcome.phi - g.gamma).abs(),
        sigma_term: outcome.sigma_term,
        theta_term: outcome.theta_term,
        lambda_term: outcome.lambda_term,
        grad_phi: outcome.phi_grad.clone(),
        eps_grad_gamma,
        grad_gap_over_eps: gap / eps,
        rayleigh_z: spectra.rayleigh_z,
        complement_gap: spectra.complement_gap,
        eig_iters: spectra.iterations,
    })
}

/// Newton on `∇Γ` from `guess`; the result must be a nondegenerate critical point.
fn snap_to_critical_point(landscape: &Landscape, guess: &[f64], fence: &BoxRegion) -> Result<CriticalPoint, RunError> {
    let fail = |msg: String| RunError::new(ExitClass::Config, "concentration", msg);
    let (x, residual) = landscape
        .newton(guess, fence)
        .ok_or_else(|| fail(format!("no critical point of Gamma near {guess:?}")))?;
    let point = landscape.classify(x, residual).map_err(core_err("concentration"))?;
    if point.kind == CriticalKind::Degenerate {
        return Err(fail(format!("critical point {:?} of Gamma is degenerate", point.location)));
    }
    Ok(point)
}

#[derive(Debug, Serialize)]
struct FixedConstants {
    riesz_tol: f64,
    projection_roundoff: f64,
    petviashvili_max_iters: usize,
    max_gram_condition: f64,
    margin_decay_lengths: f64,
    landscape_newton_tol: f64,
    landscape_newton_max_iters: usize,
    critical_point_dedup_radius: f64,
    degeneracy_ratio: f64,
    peak_boundary_layers: usize,
    tail_window: (f64, f64),
}

/// Contents of `manifest.json`: everything needed to reproduce the run.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    scenario: &'a str,
    stage: Stage,
    seed: u64,
    sigma: f64,
    xi_bar: f64,
    grid_spacing: f64,
    config: &'a ScenarioConfig,
    reduction_options: conc_lab_core::reduction::ReductionOptions,
    sweep_options: conc_lab_core::solver::SweepOptions,
    fixed: FixedConstants,
    outputs: Vec<String>,
}

impl<'a> Manifest<'a> {
    fn new(config: &'a ScenarioConfig, summary: &RunSummary, outputs: Vec<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            scenario: &config.name,
            stage: summary.stage,
            seed: summary.seed,
            sigma: summary.sigma,
            xi_bar: config.xi_bar_value(),
            grid_spacing: config.grid.spacing(),
            config,
            reduction_options: config.reduction_options(),
            sweep_options: config.sweep_options(),
            fixed: FixedConstants {
                riesz_tol: RIESZ_TOL,
                projection_roundoff: reduction::PROJECTION_ROUNDOFF,
                petviashvili_max_iters: reduction::PETVIASHVILI_MAX_ITERS,
                max_gram_condition: reduction::MAX_GRAM_CONDITION,
                margin_decay_lengths: MARGIN_DECAY_LENGTHS,
                landscape_newton_tol: landscape::NEWTON_TOL,
                landscape_newton_max_iters: landscape::NEWTON_MAX_ITERS,
                critical_point_dedup_radius: landscape::DEDUP_RADIUS,
                degeneracy_ratio: landscape::DEGENERACY_RATIO,
                peak_boundary_layers: solver::PEAK_BOUNDARY_LAYERS,
                tail_window: solver::TAIL_WINDOW,
            },
            outputs,
        }
    }
}

/// Paths of the CSV tables written into `dir`, sorted.
pub fn csv_outputs(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    Ok(paths)
}
