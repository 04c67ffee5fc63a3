use std::fs;
use std::path::Path;
use std::process::Command;

use fentrisk::bounds::BoundKind;
use fentrisk::experiment::{emit_report, run_experiment, run_experiment_with, ExperimentConfig, RunReport};

const SMALL: &str = r#"
[data.synthetic]
counts = [60, 20]
dim = 3
separation = 3.0
seed = 1

[experiment]
alphas = [0.5, 0.9]
repetitions = 2
hidden = [8]
bounds = ["subgroups_sqrt", "subgroups_kl"]

[train]
epochs = 2
batch_size = 16
learning_rate = 1e-4
sigma2 = 1e-4

[prior]
learning_rates = [0.01]
epochs = 2
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(SMALL).unwrap()
}

#[test]
fn zero_epoch_smoke_run() {
    let mut config = small();
    config.experiment.repetitions = 1;
    config.train.epochs = 0;
    config.prior.epochs = 0;
    let mut seen = 0;
    let report = run_experiment_with(&config, |cell| {
        let prior = cell.checkpoint.prior.as_ref().unwrap();
        assert_eq!(cell.checkpoint.posterior.as_ref().unwrap().mean, prior.mean);
        seen += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, 4);
    assert_eq!(report.cells.len(), 4);
    for c in &report.cells {
        assert_eq!(c.prior_epoch, 0);
        assert_eq!(c.certificate.n_priors, 1);
        for v in [c.bound_value, c.test_risk, c.f_score, c.error_rate] {
            assert!(v.is_finite());
        }
        assert!(c.class_errors.iter().all(|e| e.is_finite()));
    }
}

#[test]
fn shared_model_certificates_shrink_with_alpha() {
    for (mode, bounds) in [
        ("by-class", vec![BoundKind::SubgroupsSqrt, BoundKind::SubgroupsKl]),
        (
            "per-example",
            vec![BoundKind::OneExampleDis, BoundKind::OneExampleClassical, BoundKind::MhammediEstimate],
        ),
    ] {
        let mut config = small();
        config.experiment.subgroups = toml::Value::String(mode.into()).try_into().unwrap();
        config.experiment.bounds = bounds.clone();
        config.experiment.shared_model = true;
        config.experiment.repetitions = 1;
        config.validate().unwrap();
        let report = run_experiment(&config).unwrap();
        for b in bounds {
            let at = |a: f64| {
                report
                    .cells
                    .iter()
                    .find(|c| c.bound == b && c.alpha == a)
                    .unwrap()
                    .bound_value
            };
            assert!(at(0.9) <= at(0.5), "{b}: {} > {}", at(0.9), at(0.5));
        }
    }
}

#[test]
fn report_aggregates_repetitions() {
    let report = run_experiment(&small()).unwrap();
    assert_eq!(report.repetitions, 2);
    assert_eq!(report.cells.len(), 2 * 2 * 2);
    assert_eq!(report.aggregates.len(), 4);
    for a in &report.aggregates {
        assert_eq!(a.repetitions, 2);
        let vals: Vec<f64> = report
            .cells
            .iter()
            .filter(|c| c.bound == a.bound && c.alpha == a.alpha)
            .map(|c| c.test_risk)
            .collect();
        let mean = vals.iter().sum::<f64>() / 2.0;
        assert!((a.test_risk.mean - mean).abs() <= 1e-12);
        assert!((a.test_risk.std - (vals[0] - vals[1]).abs() / 2f64.sqrt()).abs() <= 1e-12);
    }
}

#[test]
fn emitted_files_round_trip() {
    let report = run_experiment(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    let back: RunReport = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back, report);
    let mut rdr = csv::Reader::from_path(dir.path().join("plotdata.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, fentrisk::experiment::PLOT_COLUMNS);
    let rows = rdr.records().count();
    // bounds × alphas × repetitions × (1 + classes)
    assert_eq!(rows, 2 * 2 * 2 * (1 + 2));
}

#[test]
fn empty_report_emits_header_only() {
    let dir = tempfile::tempdir().unwrap();
    emit_report(&RunReport::default(), dir.path()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(v["cells"], serde_json::json!([]));
    assert_eq!(v["aggregates"], serde_json::json!([]));
    let csv = fs::read_to_string(dir.path().join("plotdata.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn config_validation() {
    let bad = [
        "[experiment]\nbounds = [\"one_example_dis\"]",
        "[experiment]\nsubgroups = \"per-example\"\nbounds = [\"subgroups_kl\"]",
        "[experiment]\nsubgroups = \"per-example\"\nrisk = \"evar\"\nbounds = [\"mhammedi_estimate\"]",
        "[experiment]\nalphas = [0.0]",
        "[experiment]\nalphas = []",
        "[experiment]\nrepetitions = 0",
        "[experiment]\nunknown_key = 1",
        "[prior]\nlearning_rates = []",
    ];
    for text in bad {
        let err = ExperimentConfig::from_toml_str(text).unwrap_err();
        assert!(err.is_validation(), "{text}: {err}");
    }
    // the class count is only known once the data is loaded
    let mut config = small();
    config.train.batch_size = 1;
    let err = run_experiment(&config).unwrap_err();
    assert!(err.is_validation(), "{err}");

    let empty = ExperimentConfig::from_toml_str("").unwrap();
    assert_eq!(empty.experiment.alphas, vec![0.01, 0.1, 0.3, 0.5, 0.7, 0.9]);
    assert_eq!(empty.experiment.repetitions, 3);
    assert_eq!(empty.train.learning_rate, 1e-8);
    assert_eq!(empty.train.sigma2, 1e-6);
    assert_eq!(empty.train.batch_size, 256);
    assert_eq!(empty.train.epochs, 10);
    assert_eq!(empty.prior.learning_rates, vec![0.1, 0.01, 0.001]);
    assert_eq!(empty.prior.epochs, 20);
}

fn cli(args: &[&str], dir: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_fentrisk"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn cli_run_and_bound() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("spec.toml"), "counts = [60, 20]\ndim = 3\nseparation = 3.0\n").unwrap();
    let (code, _, err) = cli(&["synth", "spec.toml", "-o", "data.csv"], d);
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read_to_string(d.join("data.csv")).unwrap().lines().count(), 81);

    let config = SMALL.replace(
        "[data.synthetic]\ncounts = [60, 20]\ndim = 3\nseparation = 3.0\nseed = 1\n",
        "[data]\ncsv = \"data.csv\"\n",
    );
    fs::write(d.join("run.toml"), config).unwrap();
    let (code, _, err) = cli(&["run", "run.toml", "--out", "out", "--checkpoints"], d);
    assert_eq!(code, 0, "{err}");
    assert!(d.join("out/report.json").is_file());
    assert!(d.join("out/plotdata.csv").is_file());
    let ckpt = d.join("out/checkpoints/subgroups_sqrt_alpha0.5_rep0.json");
    assert!(ckpt.is_file());

    let (code, stdout, err) = cli(
        &["bound", ckpt.to_str().unwrap(), "data.csv", "--alpha", "0.5", "--bound-kind", "subgroups_kl"],
        d,
    );
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["kind"], "subgroups_kl");
    assert_eq!(v["m"], 80);
    let b = v["bound"].as_f64().unwrap();
    assert!(b >= v["empirical_risk"].as_f64().unwrap());

    let (code, _, _) = cli(
        &["bound", ckpt.to_str().unwrap(), "data.csv", "--alpha", "1.5", "--bound-kind", "subgroups_kl"],
        d,
    );
    assert_eq!(code, 1);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(cli(&["--help"], d).0, 0);
    assert_eq!(cli(&["no-such-command"], d).0, 1);
    assert_eq!(cli(&["run", "missing.toml"], d).0, 1);
    fs::write(d.join("bad.toml"), "[experiment]\nalphas = [2.0]\n").unwrap();
    assert_eq!(cli(&["run", "bad.toml"], d).0, 1);
    fs::write(d.join("nodata.toml"), "[data]\ncsv = \"absent.csv\"\n").unwrap();
    assert_eq!(cli(&["run", "nodata.toml"], d).0, 1);
    // output path occupied by a regular file
    fs::write(d.join("tiny.toml"), SMALL).unwrap();
    fs::write(d.join("blocked"), "").unwrap();
    assert_eq!(cli(&["run", "tiny.toml", "--out", "blocked"], d).0, 2);
    let (code, stdout, _) = cli(&["oracle-check", "--cvar-instances", "20", "--evar-instances", "5"], d);
    assert_eq!(code, 0);
    assert!(serde_json::from_str::<serde_json::Value>(&stdout).is_ok());
}
