//! End-to-end runs of the built binary: exit codes, file layout, and the
//! output-directory override.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use glua_cli::checkpoint;
use glua_cli::commands::CSV_HEADER;

fn glua(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_glua"));
    cmd.args(args);
    cmd
}

fn run(args: &[&str]) -> Output {
    glua(args).output().expect("binary should spawn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code (signal?)")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Tiny spec that trains in well under a second.
fn quick_spec(extra: &str, epochs: usize, out_dir: &Path) -> String {
    format!(
        "task = classifier\n\
         train_count = 8\n\
         val_count = 4\n\
         d_model = 12\n\
         n_heads = 2\n\
         n_layers = 1\n\
         ffn_hidden = 16\n\
         epochs = {epochs}\n\
         batch_size = 8\n\
         out_dir = {}\n\
         {extra}",
        out_dir.display()
    )
}

#[test]
fn usage_failures_exit_one() {
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["train"])), 1);
    assert_eq!(code(&run(&["params", "10", "2"])), 1);
    assert_eq!(code(&run(&["gradcheck", "everything"])), 1);

    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.spec");
    fs::write(&spec, "banana = 3\n").unwrap();
    let out = run(&["train", spec.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown key"), "{}", stderr(&out));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["train", "--help"])), 0);
}

#[test]
fn missing_spec_file_exits_three() {
    let out = run(&["train", "/nonexistent/path.spec"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("path.spec"), "{}", stderr(&out));
}

#[test]
fn divergence_exits_two_naming_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("div.spec");
    fs::write(
        &spec,
        quick_spec(
            "lr_max = 1e12\nlr_min = 1e12\nvariant = glu\n",
            2,
            dir.path(),
        ),
    )
    .unwrap();
    let out = run(&["train", spec.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("diverged at step"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn single_variant_writes_only_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("one.spec");
    let out_dir = dir.path().join("out");
    fs::write(&spec, quick_spec("variant = baseline\n", 2, &out_dir)).unwrap();
    let out = run(&["train", spec.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    assert!(out_dir.join("baseline/metrics.csv").is_file());
    assert!(out_dir.join("baseline/model.ckpt").is_file());
    assert!(!out_dir.join("glu").exists());
    assert!(!out_dir.join("comparison.csv").exists());

    let csv = fs::read_to_string(out_dir.join("baseline/metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    for line in lines {
        let phase = line.split(',').nth(2).unwrap();
        assert!(["train", "val", "summary"].contains(&phase), "{line}");
    }

    let bytes = fs::read(out_dir.join("baseline/model.ckpt")).unwrap();
    let entries = checkpoint::read_entries(&mut bytes.as_slice()).unwrap();
    assert!(entries.iter().any(|e| e.name.starts_with("embed.")));
    assert!(entries.iter().any(|e| e.name.contains("w_v")));
}

#[test]
fn both_mode_writes_side_by_side_and_compares() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("ab.spec");
    let out_dir = dir.path().join("out");
    fs::write(&spec, quick_spec("variant = both\n", 2, &out_dir)).unwrap();
    let out = run(&["train", spec.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    for v in ["baseline", "glu"] {
        assert!(out_dir.join(v).join("metrics.csv").is_file());
        assert!(out_dir.join(v).join("model.ckpt").is_file());
    }
    let comparison = fs::read_to_string(out_dir.join("comparison.csv")).unwrap();
    assert!(comparison.starts_with("metric,baseline,glu\n"));
    assert!(comparison.contains("final_train_loss,"));
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(stdout.contains("comparison:"), "{stdout}");
}

#[test]
fn env_var_overrides_spec_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("env.spec");
    let spec_dir = dir.path().join("from_spec");
    let env_dir = dir.path().join("from_env");
    fs::write(&spec, quick_spec("variant = glu\n", 2, &spec_dir)).unwrap();
    let out = glua(&["train", spec.to_str().unwrap()])
        .env("GLUA_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(env_dir.join("glu/metrics.csv").is_file());
    assert!(!spec_dir.exists());
}

#[test]
fn zero_epochs_writes_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("zero.spec");
    let out_dir = dir.path().join("out");
    fs::write(&spec, quick_spec("variant = glu\n", 0, &out_dir)).unwrap();
    let out = run(&["train", spec.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("glu/metrics.csv")).unwrap();
    assert_eq!(csv, format!("{CSV_HEADER}\n"));
    assert!(out_dir.join("glu/model.ckpt").is_file());
}
