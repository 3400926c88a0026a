use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn isostable(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isostable")).args(args).output().expect("binary runs")
}

fn small_run(sub: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--model", "heteroclinic", "--grid", "31", "31", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    isostable(&args)
}

fn config_hash(out: &Path) -> String {
    let text = fs::read_to_string(out.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["config_hash"].as_str().unwrap().to_string()
}

#[test]
fn pipeline_writes_every_artifact_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let extra = ["--paths", "200", "--h", "0.01", "--seed", "3"];
    for dir in [a.path(), b.path()] {
        let out = small_run("pipeline", dir, &extra);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in [
        "spectrum.json",
        "roles.json",
        "psi.csv",
        "sigma.csv",
        "p0.csv",
        "sigma0_0.csv",
        "isochron_0.csv",
        "effective_field.csv",
        "decay_stats.csv",
        "fit.json",
        "manifest.json",
    ] {
        assert!(a.path().join(name).is_file(), "{name} missing");
    }
    for entry in fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        if name.to_string_lossy().ends_with(".csv") {
            let x = fs::read(a.path().join(&name)).unwrap();
            let y = fs::read(b.path().join(&name)).unwrap();
            assert!(x == y, "{name:?} differs between identical runs");
        }
    }
    assert_eq!(config_hash(a.path()), config_hash(b.path()));
}

#[test]
fn manifest_hash_tracks_the_configuration() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(small_run("spectrum", a.path(), &[]).status.success());
    assert!(small_run("spectrum", b.path(), &["--param", "D=0.05"]).status.success());
    assert_ne!(config_hash(a.path()), config_hash(b.path()));
}

#[test]
fn stages_stop_where_asked() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_run("effective-field", dir.path(), &[]);
    assert!(out.status.success());
    assert!(dir.path().join("effective_field.csv").is_file());
    assert!(!dir.path().join("decay_stats.csv").exists());
    let header = fs::read_to_string(dir.path().join("effective_field.csv")).unwrap();
    assert!(header.starts_with("x,y,Fx_re,Fx_im,Fy_re,Fy_im,valid"));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = isostable(&["spectrum", "--model", "heteroclinic", "--out", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!missing.exists());

    let out = isostable(&["spectrum", "--model", "no-such-model", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"name":"b","drift":["x +","y"],"noise":[["1"],["1"]],"parameters":{},"domain":{"x":[-1,1],"y":[-1,1]},"boundary":"truncated"}"#).unwrap();
    let out = isostable(&["spectrum", "--model", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = isostable(&["reproduce-table", "--grid", "77"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().read_dir().unwrap().all(|e| e.unwrap().file_name() == "bad.json"));
}

#[test]
fn non_oscillatory_model_exits_with_4_after_writing_the_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("sink.json");
    fs::write(
        &model,
        r#"{"name":"sink","drift":["-x","-2*y"],"noise":[["0.6","0"],["0","0.6"]],"parameters":{},
            "domain":{"x":[-1,1],"y":[-1,1]},"boundary":"truncated"}"#,
    )
    .unwrap();
    let out = isostable(&["spectrum", "--model", model.to_str().unwrap(), "--grid", "21", "21", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("spectrum.json").is_file());
    assert!(!dir.path().join("roles.json").exists());
}
