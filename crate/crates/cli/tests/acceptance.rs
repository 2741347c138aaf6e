//! Acceptance: the full pipeline is deterministic. Repeated runs and
//! different thread counts must produce byte-identical artifacts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn ckav(args: &[&str], dir: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ckav"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_configs(dir: &Path) {
    fs::write(
        dir.join("spec.json"),
        r#"{"input_dim": 8, "hidden_dim": 16, "num_classes": 4}"#,
    )
    .unwrap();
    fs::write(
        dir.join("adam.json"),
        r#"{"lr": 0.002, "steps": 1000, "checkpoint_every": 100, "seed": 0}"#,
    )
    .unwrap();
}

fn train_into(dir: &Path, out_dir: &str) {
    ckav(
        &[
            "train-toy",
            "--spec",
            "spec.json",
            "--adam",
            "adam.json",
            "--out-dir",
            out_dir,
            "--train-size",
            "500",
            "--dev-size",
            "250",
        ],
        dir,
    );
}

fn sweep_csvs(dir: &Path, run: &str, threads: &str, suffix: &str) -> (Vec<u8>, Vec<u8>) {
    let ckpts: Vec<String> = (1..=10)
        .map(|i| format!("{run}/ckpt-{:06}.ckav", i * 100))
        .collect();
    let ckpt_refs: Vec<&str> = ckpts.iter().map(String::as_str).collect();
    let dev = format!("{run}/dev.ckav");
    let k_out = format!("topk-{suffix}.csv");
    let s_out = format!("simplex-{suffix}.csv");

    let mut args = vec![
        "--threads",
        threads,
        "sweep",
        "k",
        "--select",
        "top-k",
        "--dev",
        &dev,
        "--spec",
        "spec.json",
        "--out",
        &k_out,
    ];
    args.extend(ckpt_refs.iter());
    ckav(&args, dir);

    let mut args = vec![
        "--threads",
        threads,
        "sweep",
        "simplex",
        "--resolution",
        "12",
        "--dev",
        &dev,
        "--spec",
        "spec.json",
        "--out",
        &s_out,
    ];
    args.extend(ckpt_refs[..3].iter());
    ckav(&args, dir);

    (
        fs::read(dir.join(&k_out)).unwrap(),
        fs::read(dir.join(&s_out)).unwrap(),
    )
}

#[test]
fn criterion_11_full_recipe_determinism() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    write_configs(dir.path());

    // Same seed, two runs: every artifact byte-identical.
    train_into(dir.path(), "run-a");
    train_into(dir.path(), "run-b");
    let mut names: Vec<String> = (1..=10)
        .map(|i| format!("ckpt-{:06}.ckav", i * 100))
        .collect();
    names.push("train.ckav".into());
    names.push("dev.ckav".into());
    for name in &names {
        let a = fs::read(dir.path().join("run-a").join(name)).unwrap();
        let b = fs::read(dir.path().join("run-b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    // Sweeps: rerun and thread-count invariance, byte for byte.
    let (k_t1, s_t1) = sweep_csvs(dir.path(), "run-a", "1", "t1");
    let (k_t1b, s_t1b) = sweep_csvs(dir.path(), "run-a", "1", "t1b");
    assert_eq!(k_t1, k_t1b, "top-K CSV differs between identical runs");
    assert_eq!(s_t1, s_t1b, "simplex CSV differs between identical runs");

    let (k_t4, s_t4) = sweep_csvs(dir.path(), "run-a", "4", "t4");
    assert_eq!(k_t1, k_t4, "top-K CSV differs between --threads 1 and 4");
    assert_eq!(s_t1, s_t4, "simplex CSV differs between --threads 1 and 4");

    // And the second training run feeds bit-identical sweeps too.
    let (k_b, s_b) = sweep_csvs(dir.path(), "run-b", "1", "b");
    assert_eq!(k_t1, k_b);
    assert_eq!(s_t1, s_b);

    println!(
        "acceptance 11 full recipe determinism: PASS ({:?})",
        started.elapsed()
    );
}
