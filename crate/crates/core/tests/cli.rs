use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use human_insert::bdp::PairManifest;
use human_insert::matching::MatchResult;
use human_insert::numerics::{itsr, Tensor};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_human-insert"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

#[test]
fn schedule_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    ok(run(&["schedule", "--stride", "2", "--out", "curve.csv"], dir.path()));
    let text = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,lambda"));
    assert_eq!(lines.count(), 501);
    assert!(text.contains("\n854,1.75\n"));
}

#[test]
fn schedule_rejects_inverted_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["schedule", "--t-start", "800", "--t-end", "900", "--out", "c.csv"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("ConfigError"));
}

#[test]
fn mask_then_hbaf() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("boxes.json"), r#"{"height":4,"width":4,"boxes":[[0,0,2,2]]}"#).unwrap();
    ok(run(&["mask", "--boxes", "boxes.json", "--factor", "2", "--out", "m.itsr"], d));
    let m = itsr::read(d.join("m.itsr")).unwrap();
    assert_eq!(m.shape(), &[2, 2]);
    assert_eq!(m.data(), &[1.0, 0.0, 0.0, 0.0]);

    itsr::write(d.join("p.itsr"), &Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap()).unwrap();
    itsr::write(d.join("e.itsr"), &Tensor::zeros(vec![2, 2]).unwrap()).unwrap();
    let out = ok(run(
        &["loss", "hbaf", "--pred", "p.itsr", "--target", "e.itsr", "--mask", "m.itsr", "--t", "950", "--grad-out", "g.itsr"],
        d,
    ));
    // (2.5 * 1 + 1 * 1) / 4
    assert_eq!(out.trim().parse::<f64>().unwrap(), 0.875);
    let g = itsr::read(d.join("g.itsr")).unwrap();
    assert_eq!(g.shape(), &[1, 2, 2]);
    assert_eq!(g.data(), &[1.25, 0.5, 0.0, 0.0]);
}

#[test]
fn hbaf_rejects_out_of_range_timestep() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let z = Tensor::zeros(vec![2, 2]).unwrap();
    for f in ["p", "e", "m"] {
        itsr::write(d.join(format!("{f}.itsr")), &z).unwrap();
    }
    let o = run(&["loss", "hbaf", "--pred", "p.itsr", "--target", "e.itsr", "--mask", "m.itsr", "--t", "1001"], d);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("TimestepError"));
}

fn write_faces(path: &Path, embeddings: &[&[f64]]) {
    let faces: Vec<_> = embeddings
        .iter()
        .map(|e| serde_json::json!({"box": [0, 0, 1, 1], "embedding": e}))
        .collect();
    fs::write(path, serde_json::json!({ "faces": faces }).to_string()).unwrap();
}

#[test]
fn face_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_faces(&d.join("gen.json"), &[&[4.0, 0.0, 3.0, 0.0], &[0.0, 3.0, 4.0, 0.0], &[0.0, 0.0, 0.0, 1.0]]);
    write_faces(&d.join("src.json"), &[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]]);
    write_faces(&d.join("none.json"), &[]);

    let ids: f64 = ok(run(&["ids", "--gen", "gen.json", "--src", "src.json"], d)).trim().parse().unwrap();
    assert_eq!(ids, 1.4 / 3.0);

    ok(run(&["match", "--pred", "gen.json", "--src", "src.json", "--out", "m.json"], d));
    let m: MatchResult = serde_json::from_str(&fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
    assert!((m.total - 1.4).abs() < 1e-15);

    let ffip: f64 = ok(run(&["loss", "ffip", "--pred-faces", "gen.json", "--src-faces", "src.json"], d))
        .trim()
        .parse()
        .unwrap();
    assert!((ffip - 0.3).abs() < 1e-15);

    let zero = run(&["loss", "ffip", "--pred-faces", "none.json", "--src-faces", "src.json"], d);
    assert_eq!(ok(zero).trim(), "0");

    let o = run(&["ids", "--gen", "gen.json", "--src", "none.json"], d);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("UndefinedMetric"));
}

#[test]
fn evaluate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_faces(&d.join("a.json"), &[&[1.0, 0.0]]);
    write_faces(&d.join("none.json"), &[]);
    let run_file = serde_json::json!({"samples": [
        {"id": "x", "flags": {"bm": true}, "gen_faces": "a.json", "src_faces": "a.json"},
        {"id": "y", "flags": {}, "gen_faces": "a.json", "src_faces": "none.json"},
    ]});
    fs::write(d.join("run.json"), run_file.to_string()).unwrap();
    let out = ok(run(&["evaluate", "--run", "run.json", "--report", "r.json"], d));
    assert!(out.contains("FR 50.00%"), "{out}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["fr"], 0.5);
    assert_eq!(report["report"]["ids_mean"], 1.0);
    assert_eq!(report["report"]["n_ids_excluded"], 1);

    let dup = serde_json::json!({"samples": [
        {"id": "x", "gen_faces": "a.json", "src_faces": "a.json"},
        {"id": "x", "gen_faces": "a.json", "src_faces": "a.json"},
    ]});
    fs::write(d.join("dup.json"), dup.to_string()).unwrap();
    let o = run(&["evaluate", "--run", "dup.json", "--report", "r2.json"], d);
    assert!(!o.status.success());
}

#[test]
fn manifest_build_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for sub in ["humans", "web", "comp", "photos", "inpaint", "synth"] {
        fs::create_dir(d.join(sub)).unwrap();
        for stem in ["a", "b"] {
            fs::write(d.join(sub).join(format!("{stem}.png")), b"x").unwrap();
        }
    }
    fs::write(d.join("skip.txt"), "# leave b out\nb\n").unwrap();
    ok(run(
        &["manifest", "build-forward", "--a", "humans", "--b", "web", "--c", "comp", "--out", "m.json", "--exclude", "skip.txt"],
        d,
    ));
    ok(run(
        &["manifest", "build-reverse", "--a", "photos", "--b", "inpaint", "--c", "synth", "--out", "m.json", "--append"],
        d,
    ));
    let m = PairManifest::read(d.join("m.json")).unwrap();
    assert_eq!(m.records.len(), 3);
    assert!(m.is_bidirectional());
    let out = ok(run(&["manifest", "validate", "m.json"], d));
    assert!(out.contains("1 forward, 2 reverse, 0 violations"), "{out}");

    fs::remove_file(d.join("photos/a.png")).unwrap();
    let o = run(&["manifest", "validate", "m.json"], d);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("rev-a"));
}

#[test]
fn demo_train_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["demo", "train", "--steps", "20", "--hidden", "16", "--seed", "4"];
    ok(run(&[&args[..], &["--log", "a.csv"]].concat(), d));
    ok(run(&[&args[..], &["--log", "b.csv"]].concat(), d));
    let a = fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(d.join("b.csv")).unwrap());
    assert!(a.starts_with("step,t,hbaf,ffip,total,mse,fg_mse,bg_mse\n"));
    assert_eq!(a.lines().count(), 21);

    let o = run(&["demo", "train", "--steps", "0"], d);
    assert!(!o.status.success());
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(run(&["gradcheck", "--seed", "1", "--trials", "5"], dir.path()));
    assert!(out.contains("all checks passed"), "{out}");
}
