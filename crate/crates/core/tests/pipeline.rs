use std::fs;

use noisy_control::harness::output::{summary_csv, write_artifacts, CSV_HEADER, PLOT_BOUND, PLOT_REGRET, SUMMARY_CSV};
use noisy_control::{run_batch, BatchOptions, Error, ExperimentConfig};

fn config(noise: &str, schedule: &str, horizons: &str) -> ExperimentConfig {
    ExperimentConfig::from_json_str(&format!(
        r#"{{"system": {{"A": [[0.5]], "B": [[1.0]]}},
            "gain": {{"K": [[0.5]], "kappa": 1.0, "gamma": 0.5}},
            "cost": {{"family": "quadratic", "Q": [[1.0]], "R": [[1.0]]}},
            "noise": {noise},
            "schedule": "{schedule}",
            "horizons": {horizons},
            "seeds": [0, 1, 2]}}"#
    ))
    .unwrap()
}

#[test]
fn zero_noise_has_zero_regret_and_no_slope() {
    let cfg = config(r#"{"family": "zero"}"#, "constant_sqrtT", "[16, 32, 64, 128]");
    let report = run_batch(&cfg, &BatchOptions::default()).unwrap();
    assert!(report.rows.iter().all(|r| r.regret_median == 0.0 && r.regret_q90 == 0.0 && r.seed_count == 3));
    assert_eq!(report.slope, None);
    let csv = summary_csv(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    assert!(lines.all(|l| l.ends_with(",NA")));
}

#[test]
fn traces_have_one_line_per_step() {
    let cfg = config(r#"{"family": "gaussian", "seed": 5}"#, "strongly_convex", "[20, 40]");
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    let report = run_batch(&cfg, &BatchOptions { workers: Some(2), trace_dir: Some(traces.clone()) }).unwrap();
    assert_eq!(report.episodes.len(), 6);
    let text = fs::read_to_string(traces.join("T40_seed1.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 40);
    for (t, line) in lines.iter().enumerate() {
        assert_eq!(line["t"], t);
        for key in ["x", "u", "w", "cost", "eta", "grad_frob", "M_frob"] {
            assert!(line.get(key).is_some(), "missing {key}");
        }
    }
    assert!(lines[1]["eta"].as_f64().unwrap() < lines[0]["eta"].as_f64().unwrap());
}

#[test]
fn worker_count_does_not_change_results() {
    let cfg = config(r#"{"family": "laplace", "seed": 9}"#, "constant_sqrtT", "[32, 64, 128, 256]");
    let one = run_batch(&cfg, &BatchOptions { workers: Some(1), trace_dir: None }).unwrap();
    let four = run_batch(&cfg, &BatchOptions { workers: Some(4), trace_dir: None }).unwrap();
    assert_eq!(summary_csv(&one).unwrap(), summary_csv(&four).unwrap());
    assert_eq!(one.episodes, four.episodes);
    assert!(one.slope.is_some());
}

#[test]
fn plot_files_have_header_and_rows() {
    let cfg = config(r#"{"family": "gaussian", "seed": 1}"#, "constant_sqrtT", "[16, 32, 64, 128, 256]");
    let mut report = run_batch(&cfg, &BatchOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_artifacts(&report, &cfg, dir.path()).unwrap();
    let regret = fs::read_to_string(dir.path().join(PLOT_REGRET)).unwrap();
    assert_eq!(regret.lines().count(), 6);
    assert!(regret.starts_with("# T median_regret\n16 "));
    let bound = fs::read_to_string(dir.path().join(PLOT_BOUND)).unwrap();
    for (b, r) in bound.lines().skip(1).zip(regret.lines().skip(1)) {
        let value = |l: &str| l.split(' ').nth(1).unwrap().parse::<f64>().unwrap();
        assert!(value(b) > value(r));
    }

    report.rows.clear();
    let empty = tempfile::tempdir().unwrap();
    write_artifacts(&report, &cfg, empty.path()).unwrap();
    assert_eq!(fs::read_to_string(empty.path().join(PLOT_REGRET)).unwrap(), "# T median_regret\n");
    assert_eq!(fs::read_to_string(empty.path().join(PLOT_BOUND)).unwrap(), "# T bound\n");
    assert_eq!(fs::read_to_string(empty.path().join(SUMMARY_CSV)).unwrap().lines().count(), 1);
}

#[test]
fn exploding_noise_fails_the_batch() {
    let cfg = config(r#"{"family": "gaussian", "scale": 1e14, "seed": 2}"#, "constant_sqrtT", "[8, 16]");
    let report = run_batch(&cfg, &BatchOptions::default()).unwrap();
    assert_eq!(report.diverged, 6);
    assert!(report.failure.is_some());
    assert!(report.rows.iter().all(|r| r.seed_count == 0 && r.regret_median.is_nan()));
    assert!(summary_csv(&report).unwrap().lines().nth(1).unwrap().contains(",NA,"));
}

#[test]
fn invalid_configs_are_validation_errors() {
    let bad_gain = ExperimentConfig::from_json_str(
        r#"{"system": {"A": [[0.5]], "B": [[1.0]]}, "gain": {"K": [[3.0]], "kappa": 1.0, "gamma": 0.5},
            "cost": {"family": "quadratic"}, "noise": {"family": "gaussian"},
            "schedule": "constant_sqrtT", "horizons": [16], "seeds": [0]}"#,
    )
    .unwrap();
    let err = run_batch(&bad_gain, &BatchOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Certification(_)) && err.is_validation());

    let short = config(r#"{"family": "gaussian"}"#, "constant_sqrtT", "[2]");
    assert!(run_batch(&short, &BatchOptions::default()).unwrap_err().is_validation());

    let unknown = ExperimentConfig::from_json_str(r#"{"system": {"A": [[0.5]], "B": [[1.0]]}, "bogus": 1}"#);
    assert!(unknown.unwrap_err().is_validation());
}

#[test]
fn optional_policy_comparators_are_reported() {
    let mut cfg = config(r#"{"family": "gaussian", "seed": 3}"#, "constant_sqrtT", "[24]");
    cfg.comparator.best_fixed_m = true;
    cfg.comparator.budget = 50;
    let report = run_batch(&cfg, &BatchOptions::default()).unwrap();
    for e in &report.episodes {
        let mstar = e.m_star_cost.unwrap();
        let fit = e.best_fixed_m.as_ref().unwrap();
        assert!(mstar.is_finite() && fit.rollout_cost.is_finite());
        assert!(fit.surrogate_objective.is_finite() && fit.iterations <= 50 * 2);
        assert!(e.best_gain.is_some() && e.regret.is_some());
    }
    let plain = run_batch(&config(r#"{"family": "gaussian", "seed": 3}"#, "constant_sqrtT", "[24]"), &BatchOptions::default()).unwrap();
    assert_eq!(plain.episodes[0].regret, report.episodes[0].regret);
    assert!(plain.episodes[0].best_fixed_m.is_none());
}
