use serde_json::Value;
use std::path::Path;
use std::process::Command;

fn run(dir: &Path, config: &str, args: &[&str]) -> (i32, Value) {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_vortexlab"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    (out.status.code().unwrap(), serde_json::from_str(text.trim()).unwrap())
}

#[test]
fn solve_at_zero_tau_reports_zero_action() {
    let dir = tempfile::tempdir().unwrap();
    let (code, v) = run(dir.path(), "seed = 1\n[lattice]\nn = 4\n", &["solve"]);
    assert_eq!(code, 0);
    assert_eq!(v["report"]["energy"]["ymh"].as_f64(), Some(0.0));
    assert_eq!(v["seed"].as_u64(), Some(1));
    for f in ["solve.json", "trace.jsonl", "density.csv", "solution.json", "solution.a.vlxf", "solution.phi.vlxf"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn solve_below_threshold_flags_the_zero_branch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 2\n[lattice]\nn = 4\n[tau]\ncomponents = [3.141592653589793]\n[twist]\nplanar = [1, 0]\n";
    let (code, v) = run(dir.path(), cfg, &["solve"]);
    assert_eq!(code, 0, "{v}");
    assert_eq!(v["report"]["branch"], "zero-section");
    assert!(v["report"]["threshold"].as_f64().unwrap() < 0.0);
    assert!(v["report"]["phi_max"].as_f64().unwrap() < 1e-4);
}

#[test]
fn energy_and_gaugefix_read_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 3\n[lattice]\nn = 4\n[tau]\ncomponents = [1.0]\n[solver]\nnoise = 0.2\nmax_iter = 5\n";
    let (code, v) = run(dir.path(), cfg, &["solve"]);
    assert_ne!(code, 0);
    assert_eq!(v["error"], "run");
    let cfg = "seed = 3\n[lattice]\nn = 4\n[tau]\ncomponents = [1.0]\n";
    let (code, _) = run(dir.path(), cfg, &["solve"]);
    assert_eq!(code, 0);
    let snap = dir.path().join("out").join("solution.json");
    let snap = snap.to_str().unwrap();
    let (code, v) = run(dir.path(), cfg, &["energy", "--snapshot", snap]);
    assert_eq!(code, 0);
    assert!(v["report"]["residuals"]["r1"].as_f64().unwrap() < 1e-6);
    let (code, v) = run(dir.path(), cfg, &["gaugefix", "--snapshot", snap, "--tol", "1e-11", "--max-iter", "5"]);
    assert_eq!(code, 0);
    assert!(v["report"]["dstar_norm"].as_f64().unwrap() < 1e-11);
    let (code, v) = run(dir.path(), cfg, &["verify-bounds", "--snapshot", snap]);
    assert_eq!(code, 0);
    assert_eq!(v["report"]["pointwise"]["holds"], true);
}

#[test]
fn sequence_fixture_has_one_unit_atom() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 4\n[lattice]\nn = 8\n[tau]\ncomponents = [1.0]\n";
    let (code, v) = run(dir.path(), cfg, &["sequence"]);
    assert_eq!(code, 0, "{v}");
    let atoms = v["report"]["atoms"].as_array().unwrap();
    assert_eq!(atoms.len(), 1);
    assert_eq!(atoms[0]["n"], 1);
    for k in 0..3 {
        assert!(dir.path().join("out").join(format!("frame{k}.density.csv")).exists());
    }
}

#[test]
fn sampling_subcommands_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 5\n[lattice]\nn = 4\n[group]\nrepresentation = \"un:2:fund\"\n[sampling]\nconstant_samples = 10000\nsobolev_samples = 50\n";
    let (code, v) = run(dir.path(), cfg, &["constants"]);
    assert_eq!(code, 0);
    assert_eq!(v["report"]["fresh"]["violations"], 0);
    let (code, v) = run(dir.path(), cfg, &["sobolev-check"]);
    assert_eq!(code, 0);
    assert_eq!(v["report"]["embedding_l21_l4"]["samples"], 50);
    let (code, v) = run(dir.path(), "[group]\nrepresentation = \"so3\"\n", &["constants"]);
    assert_eq!((code, v["error"].as_str()), (2, Some("config")));
    let (code, v) = run(dir.path(), "[lattice]\nnn = 3\n", &["solve"]);
    assert_eq!((code, v["error"].as_str()), (2, Some("config")));
}

#[test]
fn identical_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 6\n[lattice]\nn = 4\n[tau]\ncomponents = [2.0]\n[solver]\nnoise = 0.1\n";
    let (_, a) = run(dir.path(), cfg, &["solve"]);
    let first = std::fs::read(dir.path().join("out").join("solve.json")).unwrap();
    let (_, b) = run(dir.path(), cfg, &["solve"]);
    let second = std::fs::read(dir.path().join("out").join("solve.json")).unwrap();
    assert_eq!(a, b);
    assert_eq!(first, second);
}
