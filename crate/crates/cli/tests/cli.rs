use std::path::Path;
use std::process::{Command, Output};

fn sdfgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdfgraph"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn sdfgraph")
}

fn ok(args: &[&str]) -> String {
    let out = sdfgraph(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

fn small_scene(dir: &Path) -> std::path::PathBuf {
    let scene = dir.join("scene");
    ok(&["gen", "--preset", "sphere-pair", "--grid", "25", "--out", s(&scene)]);
    scene.join("manifest.json")
}

const QUICK: &[&str] = &["--iters", "10", "--rays", "128", "--samples", "32", "--mc-res", "40", "--eval-samples", "2000"];

#[test]
fn gen_writes_a_loadable_scene() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_scene(dir.path());
    for f in ["manifest.json", "scene.json", "ground_truth.txt", "nodes/node_0.sdfg", "nodes/node_1_poses.json"] {
        assert!(manifest.parent().unwrap().join(f).exists(), "missing {f}");
    }
    let init = dir.path().join("init");
    let out = ok(&["register-init", "--manifest", s(&manifest), "--out", s(&init)]);
    assert_eq!(out.trim(), "1 edge transforms");
}

#[test]
fn pipeline_then_edit_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_scene(dir.path());
    let run = dir.path().join("run");
    let mut args = vec!["pipeline", "--manifest", s(&manifest), "--out", s(&run)];
    args.extend_from_slice(QUICK);
    let metrics = ok(&args);
    assert!(value(&metrics, "f_score") > 0.9, "{metrics}");
    for f in ["mesh.obj", "mesh.ply", "report.txt", "registration.csv", "run_log.txt", "traces/edge_0_1.csv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let registered = run.join("registered/manifest.json");
    let edit = dir.path().join("edit");
    ok(&["edit", "--manifest", s(&registered), "--out", s(&edit), "--node", "1", "--translate", "0", "0", "0", "--mc-res", "40"]);
    assert_eq!(std::fs::read(run.join("mesh.obj")).unwrap(), std::fs::read(edit.join("mesh.obj")).unwrap());
    assert_eq!(std::fs::read(run.join("mesh.ply")).unwrap(), std::fs::read(edit.join("mesh.ply")).unwrap());

    let mesh = run.join("mesh.obj");
    let same = ok(&["eval", "--mesh", s(&mesh), "--reference", s(&mesh), "--samples", "2000"]);
    assert_eq!(value(&same, "chamfer"), 0.0);
    assert_eq!(value(&same, "f_score"), 1.0);

    let moved = dir.path().join("moved");
    ok(&["edit", "--manifest", s(&registered), "--out", s(&moved), "--node", "1", "--translate", "0.2", "0", "0", "--mc-res", "40"]);
    let diff = ok(&["eval", "--mesh", s(&moved.join("mesh.obj")), "--reference", s(&mesh), "--samples", "2000"]);
    assert!(value(&diff, "chamfer") > 1e-4, "{diff}");
}

#[test]
fn stages_run_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_scene(dir.path());
    let init = dir.path().join("init");
    ok(&["register-init", "--manifest", s(&manifest), "--out", s(&init)]);
    let prop = dir.path().join("prop");
    ok(&["propagate", "--manifest", s(&init.join("manifest.json")), "--out", s(&prop)]);
    let propagated = prop.join("manifest.json");
    assert!(propagated.exists());

    let mesh = dir.path().join("mesh");
    let out = ok(&["blend-mesh", "--manifest", s(&propagated), "--out", s(&mesh), "--mc-res", "32"]);
    assert!(out.contains("triangles"));

    let renders = dir.path().join("renders");
    let listed = ok(&["render", "--manifest", s(&manifest), "--out", s(&renders), "--node", "0", "--image", "n0_c0", "--samples", "16"]);
    assert_eq!(listed.lines().count(), 1);
    assert!(Path::new(listed.trim()).exists());
}

#[test]
fn seam_scan_favours_softmax() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_scene(dir.path());
    let seam = dir.path().join("seam");
    let out = ok(&[
        "seam-scan", "--manifest", s(&manifest), "--out", s(&seam), "--from", "-0.9", "0.05", "0.1", "--to", "0.9", "0.05", "0.1",
    ]);
    assert!(value(&out, "softmax_max_jump") < value(&out, "min_union_max_jump"), "{out}");
    assert!(seam.join("seam_profile.csv").exists());
}

#[test]
fn errors_name_the_stage_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_scene(dir.path());
    let node = manifest.parent().unwrap().join("nodes/node_1.sdfg");
    let bytes = std::fs::read(&node).unwrap();
    std::fs::write(&node, &bytes[..bytes.len() / 2]).unwrap();

    let out = sdfgraph(&["blend-mesh", "--manifest", s(&manifest), "--out", s(&dir.path().join("x"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("load node 1"), "{err}");
    assert!(err.contains("truncated"), "{err}");

    let out = sdfgraph(&["eval", "--mesh", "/nonexistent/mesh.obj", "--reference", "/nonexistent/ref.obj"]);
    assert!(!out.status.success());
}
