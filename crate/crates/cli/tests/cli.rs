use std::path::Path;
use std::process::{Command, Output};

fn shl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shl")).arg("--out").arg(out).args(args).output().expect("spawn shl")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())).collect();
    v.sort();
    v
}

// The m = 1 weight is harmonic; its discrete σ_1 near the pole is truncation error.
const LELONG: [&str; 16] = ["--seed", "5", "--threads", "1", "lelong", "--weight", "m=1,n=3,a=0,0,0", "--n", "3", "--nodes", "25", "--ladder", "3", "--r-max=0.6", "--convexity-tol", "0.05"];

#[test]
fn lelong_outputs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ra = shl(&LELONG, &a);
    assert!(ra.status.success(), "{}", String::from_utf8_lossy(&ra.stderr));
    assert!(shl(&LELONG, &b).status.success());
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    let csv = String::from_utf8(fa.iter().find(|f| f.0 == "ladder.csv").unwrap().1.clone()).unwrap();
    assert!(csv.starts_with("r,mass,nu\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn manifest_runs_like_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("lelong.toml");
    std::fs::write(&cfg, "seed = 5\nthreads = 1\n\n[grid]\nn = 3\nnodes = 25\n\n[weights]\nweight = \"m=1,n=3,a=0,0,0\"\n\n[task]\nkind = \"lelong\"\nladder = 3\nr_max = 0.6\nconvexity_tol = 0.05\n").unwrap();
    let out = shl(&["run", cfg.to_str().unwrap()], &tmp.path().join("m"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(shl(&LELONG, &tmp.path().join("f")).status.success());
    assert_eq!(files(&tmp.path().join("m")), files(&tmp.path().join("f")));
}

#[test]
fn manifest_errors_name_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[grid]\nn = 3\nnodes = \"many\"\n[task]\nkind = \"lelong\"\n").unwrap();
    let out = shl(&["run", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");

    std::fs::write(&cfg, "seed = 1\n[grid]\nn = = 3\n").unwrap();
    let err = String::from_utf8_lossy(&shl(&["run", cfg.to_str().unwrap()], tmp.path()).stderr).into_owned();
    assert!(err.contains("line 3"), "{err}");

    std::fs::write(&cfg, "[task]\nkind = \"lelong\"\n").unwrap();
    let err = String::from_utf8_lossy(&shl(&["run", cfg.to_str().unwrap()], tmp.path()).stderr).into_owned();
    assert!(err.contains("seed"), "{err}");
}

#[test]
fn missing_files_and_bad_input_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(shl(&["run", "/nonexistent/x.toml"], tmp.path()).status.code(), Some(1));
    assert_eq!(shl(&["algebra", "--matrix", "1,2,3"], tmp.path()).status.code(), Some(1));
    assert_eq!(shl(&["capacity", "--problem", "/nonexistent/p.toml"], tmp.path()).status.code(), Some(1));
}

#[test]
fn algebra_writes_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = shl(&["algebra", "--matrix", "2,1,1,3"], tmp.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("algebra.json")).unwrap()).unwrap();
    // σ_2/C(2,2) = det = 5, σ_1/2 = 2.5.
    let fast = |j: usize| v["pairings"][j]["fast"].as_f64().unwrap();
    assert!((fast(1) - 5.0).abs() <= 1e-12, "{}", fast(1));
    assert!((fast(0) - 2.5).abs() <= 1e-12, "{}", fast(0));
}

#[test]
fn every_subcommand_documents_units_and_tolerances() {
    for cmd in ["algebra", "field", "hessian", "potential", "lelong", "capacity", "verify", "run"] {
        let out = Command::new(env!("CARGO_BIN_EXE_shl")).args([cmd, "--help"]).output().unwrap();
        assert!(out.status.success());
        let text = String::from_utf8_lossy(&out.stdout).to_lowercase();
        assert!(text.contains("units:"), "{cmd}: no units\n{text}");
        assert!(text.contains("tolerances:"), "{cmd}: no tolerances\n{text}");
    }
}
