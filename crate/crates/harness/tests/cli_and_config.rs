use std::collections::HashSet;
use std::fs;
use std::process::Command;

use tri_core::channel::{ProfileName, N_TAPS};
use tri_harness::{AdaptationMode, BenchMatrix, CalibrationCache, ScenarioConfig};

fn tri() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tri"))
}

#[test]
fn matrix_file_expands_every_combination() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("matrix.toml");
    fs::write(
        &path,
        r#"
transitions = [["UMa", "RMa"], ["InH", "UMi"]]
lambdas = [0.1, 10.0]
modes = ["sgd", "sgd+burst", "frozen-at-shift"]

[base]
t_star = 400
horizon = 700
"#,
    )
    .unwrap();
    let m = BenchMatrix::load(&path).unwrap();
    let s = m.scenarios().unwrap();
    assert_eq!(s.len(), 2 * 2 * 3);
    assert!(s.iter().all(|c| c.t_star == 400 && c.horizon == 700));
    let ids: HashSet<String> = s.iter().map(|c| c.id()).collect();
    assert_eq!(ids.len(), s.len());
    assert_eq!(s[0].source, ProfileName::UMa);
    assert_eq!(s[0].mode, AdaptationMode::Sgd);
}

#[test]
fn modes_share_realisations_but_not_ids() {
    let a = ScenarioConfig::default();
    let b = ScenarioConfig { mode: AdaptationMode::FrozenAtShift, ..a.clone() };
    assert_eq!(a.realisation_key(), b.realisation_key());
    assert_eq!(a.calibration_key(), b.calibration_key());
    assert_ne!(a.id(), b.id());
    let c = ScenarioConfig { lambda: 10.0, ..a.clone() };
    assert_ne!(a.realisation_key(), c.realisation_key());
}

#[test]
fn documented_scenario_file_parses() {
    let cfg = ScenarioConfig::from_toml(
        r#"
source = "UMa"
target = "RMa"
lambda = 1.0
snr_db = 15.0
t_star = 1000
horizon = 2000
mode = "sgd+burst"
seed = 0

[monitor]
t_eval = 50
n_samples = 1000

[profiles.UMa]
rms_delay_spread_ns = 300.0
doppler_hz = 100.0
"#,
    )
    .unwrap();
    assert_eq!(cfg.profile_params(ProfileName::UMa), tri_harness::ProfileParams::builtin(ProfileName::UMa));
}

#[test]
fn invalid_scenarios_are_rejected() {
    for text in [
        "source = \"UMa\"\ntarget = \"UMa\"",
        "t_star = 500\nhorizon = 400",
        "lambda = -1.0",
        "snr_db = 40.0",
        "unknown_key = 3",
        "[profiles.UMa]\nrms_delay_spread_ns = -5.0\ndoppler_hz = 10.0",
    ] {
        assert!(ScenarioConfig::from_toml(text).is_err(), "accepted: {text}");
    }
}

#[test]
fn cli_writes_a_cir_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cir.csv");
    let status = tri()
        .args(["cir", "--profile", "UMi", "--symbols", "25", "--seed", "3", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 2 * N_TAPS);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 25);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), header.len());
        assert!(cells[1..].iter().all(|c| c.parse::<f64>().unwrap().is_finite()));
    }
}

#[test]
fn cli_reports_a_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "horizon = 10\nt_star = 20\n").unwrap();
    let out = tri().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));
}

#[test]
fn plot_of_an_empty_results_dir_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let results = tri_harness::bench::load_results(dir.path()).unwrap();
    assert!(results.is_empty());
    let figs = tri_harness::plot::plot_results(&results, &dir.path().join("figs")).unwrap();
    assert!(figs.is_empty(), "{figs:?}");
}

#[test]
fn calibration_failure_surfaces_through_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::default();
    cfg.warm_start.checkpoint = Some(dir.path().join("missing.json"));
    let cache = CalibrationCache::new();
    assert!(cache.get(&cfg).is_err());
    // A failed calibration is not cached as a success.
    assert!(cache.get(&cfg).is_err());
}
