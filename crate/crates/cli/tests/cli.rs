use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use roisurv_cli::{cmd_report, read_results, Manifest};

fn roisurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roisurv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const GENERATE: &str = r#"
[generate]
n_patients = 60
n_features = 5
n_informative = 2
seed = 3
"#;

fn run_config(extra: &str) -> String {
    format!(
        r#"
output_dir = "out"
seed = 11
n_iterations = 4
strategies = ["largestROI", "allROIMax", "metaHistogram"]
models = ["CoxStepAIC", "Coxnet"]
{extra}
{GENERATE}
"#
    )
}

#[test]
fn gen_writes_a_loadable_cohort() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("output_dir = \"cohort\"\n{GENERATE}"));
    let out = roisurv(&["gen", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("cohort");
    let cohort = roisurv::cohort::Cohort::load(dir.join("lesions.csv"), dir.join("outcomes.csv")).unwrap();
    assert_eq!(cohort.len(), 60);
    let manifest = Manifest::load(&dir).unwrap();
    assert_eq!(manifest.command, "gen");
    assert_eq!(manifest.files, ["lesions.csv", "outcomes.csv", "manifest.json"]);
}

#[test]
fn run_then_report_reproduces_the_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &run_config(""));
    let out = roisurv(&["run", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("out");

    let manifest = Manifest::load(&dir).unwrap();
    assert_eq!(manifest.schemes.len(), 6);
    assert_eq!(manifest.reference.as_deref(), Some("largestROI+CoxStepAIC"));
    for f in &manifest.files {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    for f in [
        "plan.json",
        "summary.csv",
        "summary.json",
        "effect_matrix.csv",
        "km/roi_count.csv",
        "km/logrank.csv",
    ] {
        assert!(manifest.files.iter().any(|m| m == f), "{f} not in manifest");
    }
    let results = read_results(&dir).unwrap();
    assert_eq!(
        results.iter().map(|r| r.label.clone()).collect::<Vec<_>>(),
        manifest.schemes
    );
    assert!(results.iter().all(|r| r.c_indices.len() == 4));

    let original = fs::read(dir.join("summary.csv")).unwrap();
    let report_dir = tmp.path().join("report");
    let out = roisurv(&["report", dir.to_str().unwrap(), "--out", report_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(report_dir.join("summary.csv")).unwrap(), original);
    assert!(String::from_utf8_lossy(&out.stdout).contains("metaHistogram+Coxnet"));

    let rows = cmd_report(&dir, Some("allROIMax+Coxnet"), Some(&tmp.path().join("alt"))).unwrap();
    let own = rows.iter().find(|r| r.scheme == "allROIMax+Coxnet").unwrap();
    assert_eq!(own.delta_median, Some(0.0));
}

#[test]
fn bad_configs_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        run_config("").replace("\"Coxnet\"", "\"svm\""),
        run_config("").replace("\"metaHistogram\"", "\"allROI\""),
        run_config("reference = \"largestROI+randomForest\""),
        run_config("n_trees = 5"),
        run_config("").replace("n_patients = 60", "n_patients = 0"),
        "output_dir = \"out\"\nstrategies = [\"largestROI\"]\nmodels = [\"Cox\"]\n".to_string(),
        "this is not toml".to_string(),
    ];
    for body in cases {
        let cfg = write_config(tmp.path(), &body);
        let out = roisurv(&["run", "--config", &cfg]);
        assert_eq!(
            out.status.code(),
            Some(1),
            "config:\n{body}\nstderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!tmp.path().join("out").exists());
    }
}

#[test]
fn report_on_an_empty_directory_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = roisurv(&["report", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no results"));
}

#[test]
fn missing_data_files_are_runtime_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"
output_dir = "out"
strategies = ["largestROI"]
models = ["Cox"]
reference = "largestROI+Cox"

[data]
lesions = "nope/lesions.csv"
outcomes = "nope/outcomes.csv"
"#;
    let cfg = write_config(tmp.path(), body);
    let out = roisurv(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_reads_cohorts_written_by_gen() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("output_dir = \"cohort\"\n{GENERATE}"));
    assert!(roisurv(&["gen", "--config", &cfg]).status.success());
    let body = r#"
output_dir = "out"
seed = 1
n_iterations = 3
strategies = ["largestROI", "allROIMean"]
models = ["Cox"]
reference = "largestROI+Cox"

[data]
lesions = "cohort/lesions.csv"
outcomes = "cohort/outcomes.csv"
"#;
    let cfg = write_config(tmp.path(), body);
    let out = roisurv(&["run", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = Manifest::load(&tmp.path().join("out")).unwrap();
    assert!(!manifest.files.iter().any(|f| f == "lesions.csv"));
    assert_eq!(manifest.n_fits, Some(6));
}
