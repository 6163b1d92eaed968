//! End-to-end CLI tests: verbs, exit codes, and reproducible outputs.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_alphaflow")
}

fn run_cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn alphaflow")
}

const RELAX_CFG: &str = "\
scenario = relax
nx = 32
initial_map = fourier_perturbed
noise_amplitude = 0.2
seed = 5
alpha = 1.1
t_max = 0.004
snapshot_stride = 20
output_dir = out
";

#[test]
fn run_verb_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("relax.cfg"), RELAX_CFG).unwrap();
    let out = run_cli(&["run", "relax.cfg"], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for f in ["relax.csv", "relax.ckpt", "relax_energy.svg", "summary.json"] {
        assert!(dir.path().join("out").join(f).exists(), "missing {f}");
    }
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("\"stop_reason\""));
    // csv header matches the published schema
    let csv = std::fs::read_to_string(dir.path().join("out/relax.csv")).unwrap();
    assert!(csv.starts_with("step,t,E,E_alpha,dissipation,sup_e,degree_real,degree_int,tau_norm\n"));
}

#[test]
fn identical_config_reproduces_byte_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("relax.cfg"), RELAX_CFG).unwrap();
    assert!(run_cli(&["run", "relax.cfg"], dir.path()).status.success());
    let first = std::fs::read(dir.path().join("out/relax.csv")).unwrap();
    let first_ckpt = std::fs::read(dir.path().join("out/relax.ckpt")).unwrap();
    assert!(run_cli(&["run", "relax.cfg"], dir.path()).status.success());
    let second = std::fs::read(dir.path().join("out/relax.csv")).unwrap();
    let second_ckpt = std::fs::read(dir.path().join("out/relax.ckpt")).unwrap();
    assert_eq!(first, second, "CSV output is not deterministic");
    assert_eq!(first_ckpt, second_ckpt, "checkpoint output is not deterministic");
}

#[test]
fn config_errors_exit_one_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.cfg"),
        "scenario = bogus\nnx = 3\nalpha = 0.5\nmystery_key = 1\n",
    )
    .unwrap();
    let out = run_cli(&["run", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    // all violations reported together, each with its line
    assert!(err.contains("line 1"), "{err}");
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn missing_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&["run", "nope.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_two() {
    // the unregularized flow (r = 0) divides by the vanishing gradient
    // density on the constant far field and blows up immediately
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("sing.cfg"),
        "scenario = relax\nnx = 64\ninitial_map = glued_bubble\nbubble_scale = 0.1\n\
         bubble_center = {0.5, 0.5}\nalpha = 1.5\nr_scale = 0.0\nt_max = 0.5\n",
    )
    .unwrap();
    let out = run_cli(&["run", "sing.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn analyze_reports_checkpoint_and_rejects_non_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("relax.cfg"), RELAX_CFG).unwrap();
    assert!(run_cli(&["run", "relax.cfg"], dir.path()).status.success());
    let out = run_cli(&["analyze", "out/relax.ckpt"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v[0]["alpha"].as_f64().unwrap(), 1.1);
    assert!(v[0]["summary"]["tree"]["bubble_count"].is_u64());

    let bad = run_cli(&["analyze", "relax.cfg"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("not a checkpoint"));
}

#[test]
fn resume_continues_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("relax.cfg"), RELAX_CFG).unwrap();
    assert!(run_cli(&["run", "relax.cfg"], dir.path()).status.success());
    // longer horizon for the continuation
    let cont = RELAX_CFG.replace("t_max = 0.004", "t_max = 0.008");
    std::fs::write(dir.path().join("cont.cfg"), cont).unwrap();
    let out = run_cli(&["resume", "out/relax.ckpt", "cont.cfg"], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // resumed run starts at the checkpoint time, not zero
    let t_final = v["resume"]["t_final"].as_f64().unwrap();
    assert!(t_final > 0.004, "t_final {t_final}");
    assert!(dir.path().join("out/resume.csv").exists());
}

#[test]
fn plot_renders_svg_and_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("relax.cfg"), RELAX_CFG).unwrap();
    assert!(run_cli(&["run", "relax.cfg"], dir.path()).status.success());
    let out = run_cli(&["plot", "out/relax.csv"], dir.path());
    assert!(out.status.success());
    let svg = std::fs::read_to_string(dir.path().join("out/relax.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    // plotted values carry the exact CSV rendering
    let csv = std::fs::read_to_string(dir.path().join("out/relax.csv")).unwrap();
    let first_e = csv.lines().nth(1).unwrap().split(',').nth(2).unwrap();
    assert!(svg.contains(&format!("data-value=\"{first_e}\"")), "plot/CSV rendering mismatch");

    std::fs::write(dir.path().join("junk.csv"), "what,is,this\n1,2,3\n").unwrap();
    let bad = run_cli(&["plot", "junk.csv"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
}
