use std::path::Path;
use std::process::{Command, Output};

fn histofuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histofuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = histofuse(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    histofuse(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, defects: &str) {
    ok(&[
        "synth", "--seed", "4", "--frames", "2", "--size", "48", "--nuclei", "8", "--defects", defects, "-o",
        s(dir),
    ]);
}

#[test]
fn synth_pipeline_eval_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    synth(&data, "necrosis,border");
    let stdout = ok(&["pipeline", "--config", s(&data.join("config.json")), "--out", s(&out), "--jobs", "2"]);
    assert!(stdout.contains("2 frames"), "{stdout}");
    assert!(stdout.contains("mean: 100.00"), "{stdout}");
    assert!(out.join("report.json").is_file());

    let report = tmp.path().join("eval.json");
    let stdout = ok(&["eval", "all", "--pred", s(&out), "--gt", s(&data.join("gt")), "--report", s(&report)]);
    assert!(stdout.contains("mean: 100.00"), "{stdout}");
    let parsed: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(parsed["mean_track_score"], 1.0);
    assert_eq!(parsed["frames"].as_array().unwrap().len(), 2);

    let single = tmp.path().join("dice.json");
    ok(&["eval", "dice", "--pred", s(&out), "--gt", s(&data.join("gt")), "--report", s(&single)]);
    let parsed: serde_json::Value = serde_json::from_slice(&std::fs::read(&single).unwrap()).unwrap();
    assert_eq!(parsed["metric"], "micro_dice");
    assert_eq!(parsed["aggregate"], 1.0);
}

#[test]
fn jobs_do_not_change_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "all");
    let cfg = data.join("config.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["pipeline", "--config", s(&cfg), "--out", s(&a), "--jobs", "1"]);
    ok(&["pipeline", "--config", s(&cfg), "--out", s(&b), "--jobs", "3"]);
    assert_eq!(
        std::fs::read(a.join("report.json")).unwrap(),
        std::fs::read(b.join("report.json")).unwrap()
    );
}

#[test]
fn stage_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "noise");
    let inputs = data.join("inputs/frame_000");
    let stdout = ok(&["classify", "--pmap", s(&inputs.join("ext11.pmap"))]);
    assert_eq!(stdout.trim(), "primary");
    let stdout = ok(&["classify", "--pmap", s(&data.join("inputs/frame_001/ext11.pmap"))]);
    assert_eq!(stdout.trim(), "metastatic");

    let (fused, labels) = (tmp.path().join("fused.pmap"), tmp.path().join("fused.png"));
    ok(&[
        "fuse",
        "--segformer",
        s(&inputs.join("segformer_primary_s2.pmap")),
        "--unet",
        s(&inputs.join("unet.pmap")),
        "-o",
        s(&fused),
        "--labels",
        s(&labels),
    ]);
    assert!(fused.is_file() && labels.is_file());

    let (nuc, nuc_json) = (tmp.path().join("n.png"), tmp.path().join("n.json"));
    let stdout = ok(&[
        "nuclei",
        "--instances",
        s(&inputs.join("hover.png")),
        "--inst-classes",
        s(&inputs.join("hover.json")),
        "--classmap",
        s(&inputs.join("classmap.pmap")),
        "--no-border",
        "-o",
        s(&nuc),
        "--o-classes",
        s(&nuc_json),
    ]);
    assert!(stdout.contains("instances"));
    // Majority vote undoes the planted class noise.
    let got: serde_json::Value = serde_json::from_slice(&std::fs::read(&nuc_json).unwrap()).unwrap();
    let gt: serde_json::Value =
        serde_json::from_slice(&std::fs::read(data.join("gt/nuclei/frame_000.json")).unwrap()).unwrap();
    assert_eq!(got["classes"], gt["classes"]);

    let final_png = tmp.path().join("final.png");
    ok(&["rescue", "--stage1", s(&labels), "--stage4", s(&labels), "-o", s(&final_png)]);
    assert_eq!(std::fs::read(&final_png).unwrap(), std::fs::read(&labels).unwrap());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "");

    // Config error: rescue requested with stage 4 off.
    let bad = data.join("bad.json");
    std::fs::write(&bad, r#"{"manifest":"manifest.json","track":2,"toggles":{"stage4":false}}"#).unwrap();
    assert_eq!(code(&["pipeline", "--config", s(&bad), "--out", s(&tmp.path().join("o1"))]), 2);

    // Validation error: inputs of different sizes.
    let other = tmp.path().join("other");
    ok(&["synth", "--seed", "4", "--frames", "1", "--size", "32", "-o", s(&other)]);
    std::fs::copy(other.join("inputs/frame_000/unet.pmap"), data.join("inputs/frame_001/unet.pmap")).unwrap();
    let cfg = data.join("config.json");
    assert_eq!(code(&["pipeline", "--config", s(&cfg), "--out", s(&tmp.path().join("o2"))]), 3);

    // Usage errors.
    assert_eq!(code(&["synth", "--seed", "1", "--defects", "cracks", "-o", s(&tmp.path().join("x"))]), 2);
    assert_eq!(code(&["synth", "--seed", "1", "--size", "16", "-o", s(&tmp.path().join("y"))]), 2);
    assert_eq!(code(&["eval", "dice", "--pred", s(&data), "--gt", s(&tmp.path().join("missing"))]), 2);
    assert_eq!(code(&["classify"]), 2);
    assert_eq!(code(&["eval", "iou", "--pred", "a", "--gt", "b"]), 2);
}

#[test]
fn eval_orphans_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "");
    let out = tmp.path().join("out");
    ok(&["pipeline", "--config", s(&data.join("config.json")), "--out", s(&out)]);
    std::fs::remove_file(out.join("tissue/frame_000.png")).unwrap();
    let res = histofuse(&["eval", "dice", "--pred", s(&out), "--gt", s(&data.join("gt"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("frame_000"));
}
