use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_oam-memory");

const QUICK: &str = "camera_pixels = 32\nfringe_pulses_per_bin = 5000\nbackground_pulses = 10000\n";

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().unwrap()
}

#[test]
fn unknown_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "optical_dept = 3\n");
    let out = run(&["--config", cfg.to_str().unwrap(), "calibrate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_anchor_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "efficiency_target = 0.95\n");
    let o = dir.path().join("o");
    let out = run(&["--config", cfg.to_str().unwrap(), "--out", o.to_str().unwrap(), "calibrate"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn fringe_outputs_are_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "3", "1"].iter().enumerate() {
        let o = dir.path().join(format!("run{k}"));
        let status = run(&[
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--threads",
            threads,
            "--out",
            o.to_str().unwrap(),
            "fringe",
            "--clicks",
        ]);
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        let files: Vec<Vec<u8>> = ["fringe.csv", "fringe.json", "clicks.csv"]
            .iter()
            .map(|f| std::fs::read(o.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn report_hash_matches_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), QUICK);
    let o = dir.path().join("o");
    let out = run(&["--config", cfg_path.to_str().unwrap(), "--out", o.to_str().unwrap(), "calibrate"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(o.join("calibration.json")).unwrap()).unwrap();
    let cfg = oam_memory::config::ExperimentConfig::load(&cfg_path).unwrap();
    assert_eq!(report["config_hash"], cfg.hash());
    assert_eq!(report["seed"], 1);
}

#[test]
fn counts_file_round_trip() {
    use oam_memory::mode::Cardinal;
    use oam_memory::tomo::{CountsTable, DensityMatrix2};
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts.csv");
    let t = CountsTable::exact(&DensityMatrix2::pure(&Cardinal::D.qubit()), 1000.0);
    t.write_csv(std::fs::File::create(&counts).unwrap()).unwrap();
    let o = dir.path().join("o");
    let out = run(&[
        "--out",
        o.to_str().unwrap(),
        "tomography",
        "--counts",
        counts.to_str().unwrap(),
        "--state",
        "D",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(o.join("reconstruction.json")).unwrap()).unwrap();
    assert!((report["raw"]["fidelity"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn hologram_and_benchmark_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grid_size = 128\nslm_nx = 64\nslm_ny = 48\nstates = [\"R\", \"1.0,0.3\"]\n");
    let o = dir.path().join("o");
    let o = o.to_str().unwrap();
    let c = cfg.to_str().unwrap();
    assert!(run(&["--config", c, "--out", o, "hologram"]).status.success());
    assert!(run(&["--config", c, "--out", o, "benchmark", "--fidelity", "0.925", "--fidelity-sigma", "0.02"])
        .status
        .success());
    let o = Path::new(o);
    for f in ["slm_R.pgm", "slm_1_0.3.pgm", "fork_left.pgm", "fork_right.pgm", "hologram.json", "threshold_curve.csv", "verdict.json"] {
        assert!(o.join(f).exists(), "{f}");
    }
    let pgm = std::fs::read(o.join("slm_R.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n64 48\n255\n"));
    let verdict: serde_json::Value = serde_json::from_slice(&std::fs::read(o.join("verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["is_quantum"], true);
}
