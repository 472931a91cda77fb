//! Acceptance gate: every verification suite must pass at its stated
//! tolerance. One line per criterion is printed; run with
//! `cargo test --test acceptance -- --nocapture` to see them live, or use
//! `interir verify` for the same suites from the CLI.

use std::path::PathBuf;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn all_criteria_pass() {
    let results = interir::verify::run_all(&golden_dir());
    assert_eq!(results.len(), 18, "suite list changed; update this gate");
    let mut failed = Vec::new();
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {:<24} {}", r.name, r.detail);
        if !r.passed {
            failed.push(format!("{}: {}", r.name, r.detail));
        }
    }
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}

#[test]
fn corrupted_golden_file_is_detected() {
    // copy the golden set, corrupt one byte, and expect the integrity
    // suite to name the broken file while everything else still runs
    let work = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(golden_dir()).unwrap() {
        let path = entry.unwrap().path();
        std::fs::copy(&path, work.path().join(path.file_name().unwrap())).unwrap();
    }
    let victim = work.path().join("ep_block.iirw");
    let mut bytes = std::fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&victim, bytes).unwrap();

    let results = interir::verify::run_all(work.path());
    let integrity = results
        .iter()
        .find(|r| r.name == "golden-integrity")
        .expect("integrity suite present");
    assert!(!integrity.passed);
    assert!(
        integrity.detail.contains("ep_block.iirw"),
        "detail should name the corrupted file: {}",
        integrity.detail
    );
}
