use std::fs;
use std::path::Path;
use std::process::Command;

use conc_lab::config::ScenarioConfig;
use conc_lab::{run_scenario, scenarios, ExitClass, RunOptions, Stage};
use conc_lab_core::grid::GridSpec;
use conc_lab_core::potential::PotentialSpec;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conc-lab"))
}

/// The gaussian scenario on a coarse grid without the sweeps.
fn small_config() -> ScenarioConfig {
    let mut config = scenarios::gaussian_q();
    config.grid = GridSpec::new(3, 8.0, 33).unwrap();
    config.eps_list = vec![0.4, 0.2, 0.1];
    config.concentration = None;
    config.multistart_count = 27;
    config
}

fn write_config(dir: &Path, config: &ScenarioConfig) -> std::path::PathBuf {
    let path = dir.join("scenario.json");
    fs::write(&path, config.to_json()).unwrap();
    path
}

fn header(path: &Path) -> Vec<String> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader.headers().unwrap().iter().map(String::from).collect()
}

#[test]
fn bundled_scenario_files_are_current() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    for name in scenarios::NAMES {
        let text = fs::read_to_string(dir.join(format!("{name}.json"))).unwrap();
        let from_file = ScenarioConfig::from_json(&text).unwrap();
        assert_eq!(from_file, scenarios::bundled(name).unwrap(), "{name}");
    }
}

#[test]
fn q_nonzero_at_origin_stops_before_any_computation() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.potentials.q = PotentialSpec::gaussian_bump(vec![0.5, 0.0, 0.0], 0.05, 1.0, 0.0);
    let path = write_config(tmp.path(), &config);
    let out = tmp.path().join("out");
    let status = binary()
        .args(["run", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(ExitClass::Hypothesis.code()));
    assert!(!out.join("ground_state.csv").exists());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["exit_class"], "hypothesis");
}

#[test]
fn malformed_configs_exit_with_the_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.eps_list = vec![0.1, 0.2];
    let path = tmp.path().join("bad.json");
    // Bypass validation on write: serialize directly.
    fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let status = binary().args(["gamma-scan", "--config"]).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(ExitClass::Config.code()));

    fs::write(&path, "{ not json").unwrap();
    let status = binary().args(["gamma-scan", "--config"]).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(ExitClass::Config.code()));

    let status = binary().args(["run", "--scenario", "no-such-scenario"]).status().unwrap();
    assert_eq!(status.code(), Some(ExitClass::Config.code()));
}

#[test]
fn scenario_subcommand_prints_loadable_json() {
    let output = binary().args(["scenario", "two-bump"]).output().unwrap();
    assert!(output.status.success());
    let config = ScenarioConfig::from_json(std::str::from_utf8(&output.stdout).unwrap()).unwrap();
    assert_eq!(config, scenarios::two_bump());
}

#[test]
fn gamma_scan_writes_tables_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &small_config());
    let out = tmp.path().join("out");
    let status = binary()
        .args(["gamma-scan", "--seed", "9", "--threads", "1", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for file in ["hypotheses.json", "ground_state.csv", "gamma.csv", "critical_points.csv", "summary.json", "manifest.json"] {
        assert!(out.join(file).exists(), "{file}");
    }
    assert_eq!(header(&out.join("gamma.csv")), ["x_1", "x_2", "x_3", "gamma", "gamma1", "gamma2", "grad_norm"]);
    let rows = csv::Reader::from_path(out.join("gamma.csv")).unwrap().records().count();
    assert_eq!(rows, 21 * 21 * 21);

    let mut reader = csv::Reader::from_path(out.join("critical_points.csv")).unwrap();
    let points: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(points.len(), 1);
    let x: f64 = points[0][1].parse().unwrap();
    assert!((x - 0.5).abs() <= 1e-8, "{x}");
    assert_eq!(&points[0][4], "nondegenerate-min");

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config"]["tolerances"]["newton"]["tol"], 1e-9);
    assert_eq!(manifest["fixed"]["peak_boundary_layers"], 3);
}

#[test]
fn reduce_stage_emits_documented_columns_and_rules() {
    let tmp = tempfile::tempdir().unwrap();
    let options = RunOptions {
        out_dir: Some(tmp.path().to_path_buf()),
        ..RunOptions::new(Stage::Reduce)
    };
    let summary = run_scenario(&small_config(), &options).unwrap();
    let cols = header(&tmp.path().join("reduction.csv"));
    assert_eq!(cols.len(), 1 + 3 + 12 + 3 + 3 + 4);
    assert_eq!(&cols[..4], ["eps", "xi_1", "xi_2", "xi_3"]);
    assert_eq!(cols.last().unwrap(), "eig_iters");
    let names: Vec<&str> = summary.rules.iter().map(|r| r.rule.as_str()).collect();
    assert_eq!(
        names,
        ["almost-solution", "correction-size", "value-expansion", "gradient-expansion", "spectra"]
    );
    assert_eq!(summary.largest_converged_eps, Some(0.4));
    assert!(summary.fits.is_some());
}

#[test]
fn solve_subcommand_reports_a_positive_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &small_config());
    let out = tmp.path().join("out");
    let status = binary()
        .args(["solve", "--eps", "0.2", "--xi", "0.5,-0.25,0", "--dump-fields", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .env("CONC_LAB_THREADS", "1")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let solve: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("solve.json")).unwrap()).unwrap();
    assert_eq!(solve["positive"], true);
    assert_eq!(solve["xi"][1], -0.25);
    let field = conc_lab_core::grid::Field::load(&out.join("solution.bin")).unwrap();
    assert_eq!(field.values.len(), 33 * 33 * 33);
    assert_eq!(field.grid.center, vec![0.5, -0.25, 0.0]);
}

#[test]
fn strong_q_at_large_eps_is_a_contraction_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.potentials.q = PotentialSpec::gaussian_bump(vec![0.5, 0.0, 0.0], 1.0, 1.0, 0.0).vanishing_at_origin(3);
    config.eps_list = vec![0.9];
    // εξ sits near the bump, where σQz^4 is an O(1) change of the frozen linearization.
    config.probe_xi = vec![0.55, 0.0, 0.0];
    let path = write_config(tmp.path(), &config);
    let out = tmp.path().join("out");
    let output = binary()
        .args(["reduce", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(ExitClass::Contraction.code()));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("eps=0.9"), "{stderr}");
    assert!(stderr.contains("no eps in the list converged"), "{stderr}");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["failures"][0]["eps"], 0.9);
    assert!(summary["largest_converged_eps"].is_null());
}
