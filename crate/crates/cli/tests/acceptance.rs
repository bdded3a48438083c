//! Every acceptance criterion at its pinned tolerance, one line each.
//! Criterion 12 runs the `shl` binary twice and compares the report bytes.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use shl_core::acceptance::{self, Suite};
use shl_core::report::Criterion;

const SEED: u64 = 1;

fn reports(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("report dir")
        .map(|e| {
            let p = e.expect("entry").path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).expect("read"))
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Criterion {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut runs = vec![];
    for k in 0..2 {
        let out = tmp.path().join(format!("run{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_shl"))
            .args(["--seed", &SEED.to_string(), "--threads", "1", "--out"])
            .arg(&out)
            .args(["verify", "--suite", "smoke"])
            .output()
            .expect("spawn shl");
        runs.push((status.status.code(), status.stdout, reports(&out)));
    }
    let same = runs[0] == runs[1];
    let files = runs[0].2.len();
    let differing = runs[0].2.iter().zip(&runs[1].2).filter(|(a, b)| a != b).count() + runs[0].2.len().abs_diff(runs[1].2.len());
    Criterion {
        id: 12,
        name: acceptance::name(12).into(),
        pass: same && files >= 3 && runs[0].0 == Some(0),
        value: differing as f64,
        tol: 0.0,
        detail: serde_json::json!({ "files": files, "exit": runs[0].0 }),
    }
}

fn main() {
    let suite = Suite::new(SEED, 1.0);
    let mut failed = 0;
    for id in acceptance::ALL {
        let t0 = Instant::now();
        let c = if id == 12 { determinism() } else { suite.run(id) };
        println!("{}  ({:.1}s)", c.line(), t0.elapsed().as_secs_f64());
        if !c.pass {
            failed += 1;
            println!("      {}", c.detail);
        }
    }
    println!("acceptance: {} passed, {failed} failed", acceptance::ALL.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
