//! CLI-level behavior: artifact reproducibility, config echoes, ablation
//! sweeps, the comparison table, and the no-shift sanity run.

use std::path::PathBuf;

use cdac::cli::{compare, run, sweep, CliError};
use cdac::config::parse_config;

fn base_config(out: &str) -> String {
    format!(
        "data.generator = two_moons\n\
         data.seed = 3\n\
         data.n_per_domain = 120\n\
         data.noise = 0.15\n\
         train.method = cdac\n\
         train.reduction = mean\n\
         train.temperature = 0.35\n\
         train.lr = 0.002\n\
         train.lr_gamma = 0.001\n\
         train.lambda = 0.1\n\
         train.epochs = 2\n\
         train.steps_per_epoch = 25\n\
         train.eval_every = 25\n\
         train.hidden_dims = 16,8\n\
         train.feature_dim = 8\n\
         train.batch_source = 8\n\
         train.batch_target = 4\n\
         train.batch_unlabeled = 8\n\
         train.seed = 3\n\
         output.dir = {out}\n"
    )
}

#[test]
fn run_writes_all_artifacts_and_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let config = parse_config(&base_config(&out_a.display().to_string())).unwrap();
    let (artifacts, report) = run(&config).unwrap();

    assert!(artifacts.config_echo.exists());
    assert!(artifacts.metrics_csv.exists());
    assert!(artifacts.summary_json.exists());
    assert!(artifacts.features_csv.is_none());

    // The echo parses back to the same config and reproduces the metrics
    // byte for byte in a different directory.
    let echo_text = std::fs::read_to_string(&artifacts.config_echo).unwrap();
    let mut echoed = parse_config(&echo_text).unwrap();
    assert_eq!(echoed, config);
    let out_b = dir.path().join("b");
    echoed.output_dir = out_b.display().to_string();
    let (artifacts_b, report_b) = run(&echoed).unwrap();
    assert_eq!(
        std::fs::read(&artifacts.metrics_csv).unwrap(),
        std::fs::read(&artifacts_b.metrics_csv).unwrap()
    );
    assert_eq!(
        report.metrics.final_accuracy,
        report_b.metrics.final_accuracy
    );

    // The summary carries the essentials.
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&artifacts.summary_json).unwrap()).unwrap();
    assert_eq!(summary["method"], "cdac");
    assert_eq!(summary["seed"], 3);
    assert!(summary["final_accuracy"].as_f64().unwrap() > 0.0);
}

#[test]
fn feature_dump_covers_every_split_with_tags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("feat");
    let mut text = base_config(&out.display().to_string());
    text.push_str("output.emit_features = true\n");
    let config = parse_config(&text).unwrap();
    let (artifacts, _) = run(&config).unwrap();
    let features = std::fs::read_to_string(artifacts.features_csv.unwrap()).unwrap();
    let mut lines = features.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("domain,split,class,feat_0"));
    let mut splits = std::collections::BTreeSet::new();
    for line in lines {
        splits.insert(line.split(',').nth(1).unwrap().to_string());
    }
    assert_eq!(
        splits.into_iter().collect::<Vec<_>>(),
        vec!["src", "test", "tgt-l", "tgt-u"]
    );
}

#[test]
fn cli_never_mutates_the_input_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("keep");
    let path = dir.path().join("input.conf");
    let text = base_config(&out.display().to_string());
    std::fs::write(&path, &text).unwrap();
    let before = std::fs::read(&path).unwrap();
    let _ = cdac::cli::run_from_file(&path).unwrap();
    assert_eq!(before, std::fs::read(&path).unwrap());
}

#[test]
fn no_shift_sanity_run_beats_ninety_percent() {
    // Rotation zero: source and target coincide in distribution, so the
    // supervised baseline must classify the target well.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("flat");
    let text = format!(
        "data.generator = two_moons\n\
         data.seed = 1\n\
         data.rotation_degrees = 0\n\
         data.noise = 0.1\n\
         train.method = s+t\n\
         train.reduction = mean\n\
         train.temperature = 0.35\n\
         train.lr = 0.002\n\
         train.lr_gamma = 0.001\n\
         train.epochs = 8\n\
         train.feature_dim = 8\n\
         train.seed = 1\n\
         output.dir = {}\n",
        out.display()
    );
    let config = parse_config(&text).unwrap();
    let (_, report) = run(&config).unwrap();
    assert!(
        report.metrics.final_accuracy > 0.9,
        "no-shift baseline accuracy {}",
        report.metrics.final_accuracy
    );
}

#[test]
fn sweep_runs_one_row_per_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let config = parse_config(&base_config(&out.display().to_string())).unwrap();
    let rows = sweep(&config).unwrap();
    let names: Vec<&str> = rows.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, vec!["ce", "ce_aac", "ce_pl", "ce_aac_pl", "full"]);
    for (name, artifacts) in &rows {
        assert!(
            artifacts.metrics_csv.exists(),
            "missing metrics for ablation row {name}"
        );
        let echo = std::fs::read_to_string(&artifacts.config_echo).unwrap();
        let parsed = parse_config(&echo).unwrap();
        match name.as_str() {
            "ce" => assert!(!parsed.train.toggles.any()),
            "full" => {
                assert!(
                    parsed.train.toggles.aac && parsed.train.toggles.pl && parsed.train.toggles.con
                )
            }
            _ => {}
        }
    }
}

#[test]
fn compare_aggregates_mean_and_std_per_arm() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for seed in [3u64, 4] {
        let out = dir.path().join(format!("cmp-{seed}"));
        let mut text = base_config(&out.display().to_string());
        text = text.replace("data.seed = 3", &format!("data.seed = {seed}"));
        text = text.replace("train.seed = 3", &format!("train.seed = {seed}"));
        let config = parse_config(&text).unwrap();
        let (artifacts, _) = run(&config).unwrap();
        files.push(artifacts.metrics_csv);
    }
    let comparison = compare(&files).unwrap();
    assert_eq!(comparison.rows.len(), 2);
    // Same method and toggles: both runs land in one arm with two entries.
    assert_eq!(comparison.arms.len(), 1);
    assert_eq!(comparison.arms[0].runs, 2);
    assert!(comparison.arms[0].final_std >= 0.0);
    let text = comparison.to_text();
    assert!(text.contains("final"));
    let csv = comparison.to_csv();
    assert!(csv.starts_with("arm,runs,final_mean"));

    // Comparing a file with itself yields zero spread.
    let self_cmp = compare(&[files[0].clone(), files[0].clone()]).unwrap();
    assert_eq!(self_cmp.arms.len(), 1);
    assert_eq!(self_cmp.arms[0].final_std, 0.0);
}

#[test]
fn compare_rejects_single_file_and_malformed_csv() {
    assert!(matches!(
        compare(&[PathBuf::from("only-one.csv")]),
        Err(CliError::NotEnoughFiles)
    ));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "time,value\n1,2\n").unwrap();
    let good_dir = dir.path().join("good");
    let config = parse_config(&base_config(&good_dir.display().to_string())).unwrap();
    let (artifacts, _) = run(&config).unwrap();
    assert!(matches!(
        compare(&[artifacts.metrics_csv, bad]),
        Err(CliError::SchemaMismatch { .. })
    ));
}

#[test]
fn output_root_env_var_resolves_relative_dirs() {
    // Resolution logic only; no run needed.
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var(cdac::cli::OUTPUT_ROOT_ENV, dir.path());
    let resolved = cdac::cli::resolve_output_dir("nested/run");
    std::env::remove_var(cdac::cli::OUTPUT_ROOT_ENV);
    assert_eq!(resolved, dir.path().join("nested/run"));
    let absolute = dir.path().join("abs");
    assert_eq!(
        cdac::cli::resolve_output_dir(&absolute.display().to_string()),
        absolute
    );
}
