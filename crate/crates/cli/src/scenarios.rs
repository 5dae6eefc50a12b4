//! Scenarios shipped with the binary. `scenarios/*.json` in the crate are their serialized
//! form.

use conc_lab_core::grid::GridSpec;
use conc_lab_core::potential::{Bump, PotentialSpec, PotentialTriple};
use conc_lab_core::region::BoxRegion;

use crate::config::{ConcentrationConfig, MultiplicityConfig, ScenarioConfig, SigmaMode, Tolerances};

pub const NAMES: [&str; 2] = ["gaussian-q", "two-bump"];

/// Amplitude of `Q` in both scenarios. Larger values make `σ Q z^{σ-1}` an O(1) change of
/// the frozen linearization at the concentration point and the correction stops contracting.
pub const Q_AMPLITUDE: f64 = 0.05;

fn default_grid() -> GridSpec {
    GridSpec {
        dim: 3,
        half_width: 12.0,
        points_per_axis: 49,
    }
}

/// `V = K = 1`, `Q(x) = A (exp(-|x - a|^2) - exp(-|a|^2))` with `a = (0.5, 0, 0)`.
pub fn gaussian_q() -> ScenarioConfig {
    let a = vec![0.5, 0.0, 0.0];
    let q = PotentialSpec::gaussian_bump(a.clone(), Q_AMPLITUDE, 1.0, 0.0).vanishing_at_origin(3);
    ScenarioConfig {
        name: "gaussian-q".into(),
        dimension: 3,
        exponent_p: 3.0,
        sigma: SigmaMode::Critical,
        potentials: PotentialTriple::unit_vk(q),
        grid: default_grid(),
        eps_list: vec![0.4, 0.2, 0.1, 0.05],
        xi_bar: None,
        probe_xi: vec![0.0; 3],
        validation_box: BoxRegion::cube(&[0.0; 3], 2.0),
        search_box: BoxRegion::cube(&[0.0; 3], 1.5),
        concentration: Some(ConcentrationConfig { xi0: a }),
        multiplicity: None,
        seed: 1,
        multistart_count: 64,
        output_dir: None,
        tolerances: Tolerances::default(),
    }
}

/// `V = K = 1` and two Gaussian bumps of `Q` at `±0.6 e_1`; `Γ` has a minimum near each.
pub fn two_bump() -> ScenarioConfig {
    let bump = |x: f64| Bump {
        center: vec![x, 0.0, 0.0],
        amplitude: Q_AMPLITUDE,
        width: 0.5,
    };
    let q = PotentialSpec::sum_of_gaussians(vec![bump(0.6), bump(-0.6)], 0.0).vanishing_at_origin(3);
    ScenarioConfig {
        name: "two-bump".into(),
        dimension: 3,
        exponent_p: 3.0,
        sigma: SigmaMode::Critical,
        potentials: PotentialTriple::unit_vk(q),
        grid: default_grid(),
        eps_list: vec![0.4, 0.2, 0.1],
        xi_bar: None,
        probe_xi: vec![0.0; 3],
        validation_box: BoxRegion::cube(&[0.0; 3], 2.0),
        search_box: BoxRegion::new(vec![-1.2, -0.5, -0.5], vec![1.2, 0.5, 0.5]).unwrap(),
        concentration: None,
        multiplicity: Some(MultiplicityConfig {
            region: BoxRegion::new(vec![-1.2, -0.5, -0.5], vec![1.2, 0.5, 0.5]).unwrap(),
            eps: 0.1,
            min_separation: 0.6,
            min_solutions: 2,
        }),
        seed: 1,
        multistart_count: 64,
        output_dir: None,
        tolerances: Tolerances::default(),
    }
}

pub fn bundled(name: &str) -> Option<ScenarioConfig> {
    match name {
        "gaussian-q" => Some(gaussian_q()),
        "two-bump" => Some(two_bump()),
        _ => None,
    }
}
