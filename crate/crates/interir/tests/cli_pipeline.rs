//! End-to-end run of the actual binary: degrade -> restore -> eval.

use std::path::Path;
use std::process::Command;

use interir::image::{load_ppm, save_ppm};
use interir::metrics::EvalReport;
use interir::verify::synthetic_image;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_interir"))
}

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("spawn interir");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn degrade_restore_eval_pipeline() {
    let work = tempfile::tempdir().unwrap();
    let clean = work.path().join("clean");
    std::fs::create_dir_all(&clean).unwrap();
    save_ppm(&synthetic_image(16, 16), clean.join("a.ppm")).unwrap();
    save_ppm(&synthetic_image(16, 20), clean.join("b.ppm")).unwrap();

    let deg = work.path().join("deg");
    run_ok(bin()
        .arg("degrade")
        .arg("--clean-dir")
        .arg(&clean)
        .arg("--out")
        .arg(&deg)
        .args(["--haze", "40", "--rain", "25", "--noise", "15", "--seed", "11"]));
    let manifest = deg.join("manifest.tsv");
    assert!(manifest.exists());
    assert_eq!(
        std::fs::read_to_string(&manifest).unwrap().lines().count(),
        2
    );

    let res = work.path().join("res");
    run_ok(bin()
        .arg("restore")
        .arg("--manifest")
        .arg(&manifest)
        .arg("--out")
        .arg(&res)
        .args(["--mode", "classical", "--outer", "4", "--inner", "2", "--freeze-ab"]));
    let pairs = res.join("pairs.tsv");
    assert!(pairs.exists());
    for stem in ["a", "b"] {
        assert!(res.join(format!("{stem}_degraded_restored.ppm")).exists());
        let trace =
            std::fs::read_to_string(res.join(format!("{stem}_degraded_trace.csv"))).unwrap();
        assert!(trace.starts_with("iter,lagrangian,f_norm,primal_residual,eta\n"));
        assert_eq!(trace.lines().count(), 5); // header + 4 outer rounds
    }
    // restored images are valid and full size
    let restored = load_ppm(res.join("a_degraded_restored.ppm")).unwrap();
    assert_eq!((restored.height(), restored.width()), (16, 16));

    let report = work.path().join("report.csv");
    run_ok(bin()
        .arg("eval")
        .arg("--pairs")
        .arg(&pairs)
        .arg("--out")
        .arg(&report));
    let csv = std::fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), EvalReport::CSV_HEADER);
    assert_eq!(csv.lines().count(), 4); // header + 2 rows + mean
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn restore_unfolded_seeded_fallback_logs_untrained() {
    let work = tempfile::tempdir().unwrap();
    let clean = work.path().join("clean");
    std::fs::create_dir_all(&clean).unwrap();
    save_ppm(&synthetic_image(16, 16), clean.join("a.ppm")).unwrap();

    let deg = work.path().join("deg");
    run_ok(bin()
        .arg("degrade")
        .arg("--clean-dir")
        .arg(&clean)
        .arg("--out")
        .arg(&deg)
        .args(["--noise", "10", "--seed", "3"]));

    let res = work.path().join("res");
    let output = bin()
        .arg("restore")
        .arg("--manifest")
        .arg(deg.join("manifest.tsv"))
        .arg("--out")
        .arg(&res)
        .args(["--mode", "unfolded", "--seed", "3"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("untrained"),
        "expected untrained-model log, got: {stderr}"
    );
    assert!(res.join("a_degraded_restored.ppm").exists());
}

#[test]
fn degrade_failure_sets_nonzero_exit() {
    let work = tempfile::tempdir().unwrap();
    let clean = work.path().join("clean");
    std::fs::create_dir_all(&clean).unwrap();
    save_ppm(&synthetic_image(16, 16), clean.join("a.ppm")).unwrap();
    std::fs::write(clean.join("broken.ppm"), b"garbage").unwrap();

    let out = work.path().join("deg");
    let status = bin()
        .arg("degrade")
        .arg("--clean-dir")
        .arg(&clean)
        .arg("--out")
        .arg(&out)
        .args(["--noise", "5", "--seed", "1"])
        .status()
        .unwrap();
    assert!(!status.success());
    // the good file was still processed
    assert!(out.join("a_degraded.ppm").exists());
}

#[test]
fn thread_cap_env_is_respected() {
    // byte-identical outputs regardless of pool size
    let work = tempfile::tempdir().unwrap();
    let clean = work.path().join("clean");
    std::fs::create_dir_all(&clean).unwrap();
    for k in 0..3 {
        save_ppm(&synthetic_image(16, 16 + 4 * k), clean.join(format!("i{k}.ppm"))).unwrap();
    }
    let digest = |dir: &Path| {
        let mut names: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        names
            .iter()
            .map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(p).unwrap()))
            .collect::<Vec<_>>()
    };
    let out1 = work.path().join("deg1");
    run_ok(bin()
        .env("INTERIR_THREADS", "1")
        .arg("degrade")
        .arg("--clean-dir")
        .arg(&clean)
        .arg("--out")
        .arg(&out1)
        .args(["--rain", "60", "--seed", "5"]));
    let out4 = work.path().join("deg4");
    run_ok(bin()
        .env("INTERIR_THREADS", "4")
        .arg("degrade")
        .arg("--clean-dir")
        .arg(&clean)
        .arg("--out")
        .arg(&out4)
        .args(["--rain", "60", "--seed", "5"]));
    let d1: Vec<_> = digest(&out1)
        .into_iter()
        .filter(|(n, _)| n != "manifest.tsv")
        .collect();
    let d4: Vec<_> = digest(&out4)
        .into_iter()
        .filter(|(n, _)| n != "manifest.tsv")
        .collect();
    assert_eq!(d1, d4);
}
