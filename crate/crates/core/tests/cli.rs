use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cfm::output::{blob_hash, RunManifest, MANIFEST};

fn cfm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfm")).args(args).current_dir(dir).env_remove("CFM_THREADS").output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Every file under `root` except manifests, keyed by relative path.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != MANIFEST {
                files.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

const SMALL: &str = r#"{"n_iter": 60, "burn_in": 30, "j_max": 2}"#;

fn pipeline(dir: &Path) {
    fs::write(dir.join("cfg.json"), SMALL).unwrap();
    ok(cfm(&["simulate", "--scenario", "2", "--seed", "5", "--out", "sim"], dir));
    ok(cfm(&["match", "--data", "sim/data.csv", "--out", "matched"], dir));
    ok(cfm(&["fit", "--data", "matched/matched.csv", "--config", "cfg.json", "--seed", "9", "--out", "fit_ddp", "--save-params"], dir));
    ok(cfm(
        &["fit", "--data", "matched/matched.csv", "--config", "cfg.json", "--prior", "standard", "--seed", "9", "--out", "fit_std"],
        dir,
    ));
    ok(cfm(&["evaluate", "--truth", "sim/truth.json", "--fit", "fit_ddp", "--fit", "fit_std", "--out", "eval"], dir));
}

#[test]
fn full_pipeline_is_byte_identical_on_rerun() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.len() >= 15);
    assert_eq!(ta, tb);
    for sub in ["sim", "matched", "fit_ddp", "fit_std", "eval"] {
        let text = fs::read_to_string(a.path().join(sub).join(MANIFEST)).unwrap();
        let m: RunManifest = serde_json::from_str(&text).unwrap();
        assert!(!m.outputs.is_empty());
        for f in &m.outputs {
            assert_eq!(f.sha256, blob_hash(&fs::read(a.path().join(sub).join(&f.path)).unwrap()));
        }
    }
    let header = fs::read_to_string(a.path().join("fit_ddp/sate_draws.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "sate_1,sate_2,sate_3,sate_4,sate_5,sate_6");
    assert_eq!(header.lines().count(), 31);
    let eval = fs::read_to_string(a.path().join("eval/metrics.csv")).unwrap();
    assert_eq!(eval.lines().count(), 1 + 12);
    assert!(a.path().join("eval/loadings.csv").exists());
}

#[test]
fn replicate_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), SMALL).unwrap();
    let base = ["replicate", "--scenario", "1", "--reps", "3", "--seed", "7", "--config", "cfg.json"];
    ok(cfm(&[&base[..], &["--threads", "1", "--out", "r1"]].concat(), d));
    ok(cfm(&[&base[..], &["--threads", "3", "--out", "r3"]].concat(), d));
    let threaded = Command::new(env!("CARGO_BIN_EXE_cfm"))
        .args([&base[..], &["--out", "renv"]].concat())
        .current_dir(d)
        .env("CFM_THREADS", "2")
        .output()
        .unwrap();
    ok(threaded);
    let metrics = fs::read(d.join("r1/metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read(d.join("r3/metrics.csv")).unwrap());
    assert_eq!(tree(&d.join("r1")), tree(&d.join("r3")));
    assert_eq!(tree(&d.join("r1")), tree(&d.join("renv")));
    let text = String::from_utf8(metrics).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 6);
    assert!(d.join("r1/rep_002/truth.json").exists());
}

#[test]
fn missing_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    ok(cfm(&["simulate", "--scenario", "1", "--out", "sim"], dir.path()));
    let out = cfm(&["fit", "--data", "sim/data.csv", "--config", "absent.json", "--out", "fit"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
    assert!(!dir.path().join("fit").join(MANIFEST).exists());
}

#[test]
fn missing_data_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfm(&["fit", "--data", "nowhere.csv", "--out", "fit"], dir.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn bad_arguments_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cfm(&["simulate", "--scenario", "7", "--out", "x"], dir.path()).status.code(), Some(2));
    assert_eq!(cfm(&["fit", "--data", "d.csv", "--prior", "flat", "--out", "x"], dir.path()).status.code(), Some(2));
    fs::write(dir.path().join("bad.json"), r#"{"l_max": 1}"#).unwrap();
    let out = cfm(&["replicate", "--scenario", "1", "--reps", "1", "--config", "bad.json", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_abort_leaves_no_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csv = String::from("id,t,y_1,y_2,x_1\n");
    for i in 0..20 {
        csv.push_str(&format!("{i},{},1e200,1e200,{}\n", i % 2, i as f64 / 7.0));
    }
    fs::write(d.join("data.csv"), csv).unwrap();
    fs::write(d.join("cfg.json"), SMALL).unwrap();
    fs::create_dir(d.join("fit")).unwrap();
    fs::write(d.join("fit").join(MANIFEST), "{}").unwrap();
    let out = cfm(&["fit", "--data", "data.csv", "--config", "cfg.json", "--out", "fit"], d);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep 0"));
    assert!(!d.join("fit").join(MANIFEST).exists());
}

#[test]
fn scenario_four_dimensions_in_truth() {
    let dir = tempfile::tempdir().unwrap();
    ok(cfm(&["simulate", "--scenario", "4", "--seed", "1", "--out", "s4"], dir.path()));
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s4/truth.json")).unwrap()).unwrap();
    assert_eq!(truth["spec"]["n"], 3426);
    assert_eq!(truth["spec"]["q"], 27);
    assert_eq!(truth["spec"]["p"], 28);
    let data = fs::read_to_string(dir.path().join("s4/data.csv")).unwrap();
    assert_eq!(data.lines().count(), 3427);
    assert_eq!(data.lines().next().unwrap().split(',').count(), 2 + 27 + 28);
}
