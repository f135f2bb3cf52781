mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::tiny_config;
use fewshot_tts::codec::wav::read_wav;

const BIN: &str = env!("CARGO_BIN_EXE_fewshot-tts");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("FEWSHOT_TTS_OUT")
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Writes the tiny configuration rooted at `root/run` to `root/config.json`.
fn write_config(root: &Path) -> String {
    let cfg = tiny_config(&root.join("run"));
    let path = root.join("config.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_with_validation_code() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        run(&["adapt", "--method", "vocode", "--speaker", "2", "--demo-seconds", "1"]).status.code(),
        Some(1)
    );
    // a partial cell selection is rejected rather than widened to every cell
    assert_eq!(run(&["adapt", "--method", "emb"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_artifacts_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = run(&["--config", &cfg, "adapt", "--method", "emb", "--speaker", "2", "--demo-seconds", "0.5"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unreadable_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = run(&["--config", path.to_str().unwrap(), "gen-corpus"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn grad_check_command_passes() {
    let out = ok(&["grad-check", "--probes", "8"]);
    let worst: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("max relative error "))
        .expect("summary line")
        .parse()
        .unwrap();
    assert!(worst <= 1e-4, "{out}");
    assert!(out.contains("wavenet_nll_64_samples"));
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (env_dir, flag_dir) = (dir.path().join("from-env"), dir.path().join("from-flag"));

    let status = Command::new(BIN)
        .args(["--config", &cfg, "--out", flag_dir.to_str().unwrap(), "gen-corpus"])
        .env("FEWSHOT_TTS_OUT", &env_dir)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(flag_dir.join("corpus/manifest.json").exists());
    assert!(!env_dir.exists());

    let status = Command::new(BIN)
        .args(["--config", &cfg, "gen-corpus"])
        .env("FEWSHOT_TTS_OUT", &env_dir)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(env_dir.join("corpus/manifest.json").exists());
    assert!(!dir.path().join("run").exists());
}

#[test]
fn adapt_then_synthesize_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    ok(&["--config", &cfg, "gen-corpus"]);
    ok(&["--config", &cfg, "train"]);
    let msg = ok(&["--config", &cfg, "adapt", "--method", "emb", "--speaker", "2", "--demo-seconds", "0.5"]);
    assert!(msg.contains("SEA-Emb speaker 2"), "{msg}");
    let voice = dir.path().join("run/voices/emb_0.5s/spk02.seaw");
    assert!(voice.exists());

    let synth = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "--config",
            &cfg,
            "synth",
            "--voice",
            voice.to_str().unwrap(),
            "--utterance",
            "spk02_utt000",
            "--samples",
            "777",
            "--temperature",
            "0",
            "--sample-seed",
            seed,
            "--output",
            out.to_str().unwrap(),
        ]);
        out
    };
    let (a, b) = (synth("1", "a.wav"), synth("2", "b.wav"));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let w = read_wav(&a).unwrap();
    assert_eq!(w.samples.len(), 777);
    assert_eq!(w.sample_rate, 4000);
    assert!(w.samples.iter().all(|x| (-1.0..=1.0).contains(x)));

    // a bigger demo request than the pool holds
    let out = run(&["--config", &cfg, "adapt", "--method", "emb", "--speaker", "2", "--demo-seconds", "100"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("demonstration audio"));
}

#[test]
fn validate_command_reports_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    ok(&["--config", &cfg, "gen-corpus"]);
    assert!(ok(&["--config", &cfg, "validate"]).contains("match"));
    let wav = dir.path().join("run/corpus/wav/spk00_utt001.wav");
    let mut bytes = std::fs::read(&wav).unwrap();
    let n = bytes.len();
    bytes[n - 2] ^= 1;
    std::fs::write(&wav, bytes).unwrap();
    let out = run(&["--config", &cfg, "validate"]);
    assert_eq!(out.status.code(), Some(3));
}
