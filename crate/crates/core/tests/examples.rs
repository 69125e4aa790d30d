//! Runs every example binary built alongside the tests.

use std::path::PathBuf;
use std::process::Command;

fn examples_dir() -> PathBuf {
    // target/<profile>/deps/examples-<hash> -> target/<profile>/examples
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("examples")
}

fn run(name: &str, args: &[&str]) -> String {
    let path = examples_dir().join(format!("{name}{}", std::env::consts::EXE_SUFFIX));
    assert!(
        path.exists(),
        "{} not built; run the full `cargo test`",
        path.display()
    );
    let out = Command::new(&path).args(args).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "{name} failed:\n{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

#[test]
fn quick_examples_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for (name, args, expect) in [
        ("augmentations", vec![], "mixup lambda 0.7"),
        ("autodiff_gradcheck", vec![], "worst relative error"),
        ("checkpoint_roundtrip", vec![], "F64: "),
        ("eval_metrics", vec![], "mAP"),
        ("logmel_griffin_lim", vec![d], "98 frames x 128 mel bins"),
        (
            "masking_plans",
            vec![],
            "TimeFrequency (0.25, 0.25): 56 of 128 masked",
        ),
        ("model_summary", vec![], "vit-b"),
        ("patch_grid", vec![], "round trip exact: true"),
        ("weighted_sampling", vec![], "balanced to half"),
        ("window_attention", vec![], "shift 2"),
    ] {
        let out = run(name, &args);
        assert!(
            out.contains(expect),
            "{name} output lacks {expect:?}:\n{out}"
        );
    }
    assert!(dir.path().join("griffin_lim.wav").exists());
}

#[test]
fn training_examples_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(run("pretrain_toy", &["10"]).contains("masked MSE on fixed masks"));
    assert!(run("reconstruct_clip", &[d, "10"]).contains("8 of 32 patches masked"));
    for f in ["original.png", "masked.png", "restored.png"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert!(run("finetune_toy", &[]).contains("final: accuracy"));
}
