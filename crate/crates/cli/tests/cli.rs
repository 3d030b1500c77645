use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dexsynth::contact::ContactState;
use dexsynth::io::{self, ContactRecord, RefinedRecord};
use dexsynth::pipeline::RunManifest;
use tempfile::TempDir;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").canonicalize().unwrap()
}

fn dexsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dexsynth"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The demo configuration with a small search budget, written into `dir`.
fn demo_config(dir: &Path, mesh: &Path, extra: &str) -> PathBuf {
    let f = fixtures();
    let text = format!(
        r#"seed = 3

[paths]
chain = "{}"
mesh = "{}"
human = "{}"
output = "out"

[retarget]
search_budget = 400

[contact]
beta1 = -5.0

[refine]
pen_clearance = 0.0005

[refine.weights]
w_pen = 1e4
w_align = 1e-4
w_joints = 1.0
{extra}"#,
        f.join("synth3.chain.json").display(),
        mesh.display(),
        f.join("demo_human.jsonl").display(),
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_all(dir: &Path, mesh: &Path) -> PathBuf {
    let cfg = demo_config(dir, mesh, "");
    let out = dexsynth(&["run-all", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    cfg
}

fn demo_mesh() -> PathBuf {
    fixtures().join("demo_sphere.obj")
}

#[test]
fn validate_demo() {
    let cfg = fixtures().join("demo.toml");
    let out = dexsynth(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("120 frames"));
}

#[test]
fn missing_mesh_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let cfg = demo_config(dir.path(), &dir.path().join("nope.obj"), "");
    let out = dexsynth(&["retarget", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("paths.mesh"), "{}", stderr(&out));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_flags_are_validation_errors() {
    let cfg = fixtures().join("demo.toml");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&dexsynth(&["metrics", "--config", cfg, "--cd-mode", "sideways"])), 2);
    assert_eq!(code(&dexsynth(&["validate", "--config", cfg, "--jobs", "0"])), 2);
    assert_eq!(code(&dexsynth(&["frobnicate"])), 2);
}

#[test]
fn run_all_produces_every_artifact() {
    let dir = TempDir::new().unwrap();
    run_all(dir.path(), &demo_mesh());
    let out = dir.path().join("out");

    let (header, retargeted) = io::read_joint_sequence(&out.join("retarget.jsonl")).unwrap();
    assert_eq!(retargeted.len(), 120);
    assert_eq!(header.meta["seed"], 3);

    let (_, contacts) = io::read_records::<ContactRecord>(&out.join("contact.jsonl"), io::CONTACT_FORMAT).unwrap();
    assert_eq!(contacts.len(), 120);
    assert!(contacts.iter().any(|c| c.state.0[0]), "no thumb contact");
    assert!(!contacts[0].state.0.iter().any(|&c| c));

    let (_, refined) = io::read_records::<RefinedRecord>(&out.join("refine.jsonl"), io::REFINED_FORMAT).unwrap();
    assert!(refined.iter().any(|r| !r.refined.passes.is_empty()));
    assert!(refined.iter().all(|r| r.refined.after.total <= r.refined.before.total + 1e-12));

    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    let pen = |k: &str| metrics["reports"][k]["max_penetration"].as_f64().unwrap();
    assert!(pen("refined") < pen("retargeted"));
    assert_eq!(metrics["reports"]["refined"]["cd_mode"], "bidirectional");

    let series = std::fs::read_to_string(out.join("series.tsv")).unwrap();
    assert_eq!(series.lines().count(), 121);

    let manifest: RunManifest = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "run-all");
    let stages: Vec<&str> = manifest.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(stages, ["retarget", "contact", "refine", "metrics"]);
    assert_eq!(manifest.outputs.len(), 5);
    for f in &manifest.outputs {
        assert_eq!(io::file_digest(&out.join(&f.path)).unwrap(), f.sha256);
    }
    for f in manifest.inputs.values() {
        assert_eq!(io::file_digest(&f.path).unwrap(), f.sha256);
    }
}

#[test]
fn same_seed_same_bytes() {
    let dir = TempDir::new().unwrap();
    let cfg = demo_config(dir.path(), &demo_mesh(), "");
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for o in [&a, &b] {
        let out = dexsynth(&["retarget", "--config", cfg, "--output", o.to_str().unwrap(), "--jobs", "1"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let read = |d: &Path| std::fs::read(d.join("retarget.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    let c = dir.path().join("c");
    let out = dexsynth(&["retarget", "--config", cfg, "--output", c.to_str().unwrap(), "--seed", "4"]);
    assert_eq!(code(&out), 0);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn stages_refuse_foreign_upstream_files() {
    let dir = TempDir::new().unwrap();
    let cfg = run_all(dir.path(), &demo_mesh());
    let cfg = cfg.to_str().unwrap();

    let out = dexsynth(&["contact", "--config", cfg, "--seed", "9"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("digest mismatch"), "{}", stderr(&out));
    let out = dexsynth(&["contact", "--config", cfg, "--seed", "9", "--force"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    // The strict-literal likelihood changes the contact digest, so refine
    // run with it rejects the contact file written above.
    let out = dexsynth(&["refine", "--config", cfg, "--strict-literal"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn corrupted_and_truncated_inputs() {
    let dir = TempDir::new().unwrap();
    let cfg = run_all(dir.path(), &demo_mesh());
    let cfg = cfg.to_str().unwrap();
    let out_dir = dir.path().join("out");

    let contact = out_dir.join("contact.jsonl");
    let text = std::fs::read_to_string(&contact).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[5] = "{\"frame\": 4, \"t\": oops}";
    std::fs::write(&contact, lines.join("\n")).unwrap();
    let out = dexsynth(&["refine", "--config", cfg]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("contact.jsonl line 6"), "{}", stderr(&out));

    let retarget = out_dir.join("retarget.jsonl");
    let text = std::fs::read_to_string(&retarget).unwrap();
    let short: Vec<&str> = text.lines().take(100).collect();
    std::fs::write(&retarget, short.join("\n")).unwrap();
    let out = dexsynth(&["contact", "--config", cfg]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("retargeted frames"), "{}", stderr(&out));
}

#[test]
fn far_object_leaves_sequence_untouched() {
    let dir = TempDir::new().unwrap();
    let mesh = dir.path().join("far.obj");
    let sphere = dexsynth::synth::icosphere(1, 0.05, nalgebra::Point3::new(2.0, 2.0, 2.0));
    std::fs::write(&mesh, sphere.to_obj()).unwrap();
    run_all(dir.path(), &mesh);
    let out = dir.path().join("out");
    let (_, contacts) = io::read_records::<ContactRecord>(&out.join("contact.jsonl"), io::CONTACT_FORMAT).unwrap();
    assert!(contacts.iter().all(|c| c.state == ContactState::default()));
    let (_, retargeted) = io::read_joint_sequence(&out.join("retarget.jsonl")).unwrap();
    let (_, refined) = io::read_records::<RefinedRecord>(&out.join("refine.jsonl"), io::REFINED_FORMAT).unwrap();
    for (r, f) in retargeted.iter().zip(&refined) {
        assert_eq!(&r.q, f.q());
    }
}

#[test]
fn cd_mode_flag_labels_the_report() {
    let dir = TempDir::new().unwrap();
    let cfg = run_all(dir.path(), &demo_mesh());
    let out = dexsynth(&["metrics", "--config", cfg.to_str().unwrap(), "--cd-mode", "literal"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/metrics.json")).unwrap()).unwrap();
    let r = &metrics["reports"]["retargeted"];
    assert_eq!(r["cd_mode"], "literal");
    assert_eq!(r["cd"], r["cd_literal"]);
    assert!(r["cd_bidirectional"].as_f64().unwrap() >= r["cd_literal"].as_f64().unwrap());
}
