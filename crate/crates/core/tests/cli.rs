//! The `sfmnerf` binary end to end on a tiny synthetic run.

use std::path::Path;
use std::process::{Command, Output};

fn sfmnerf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfmnerf")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn make_train_eval_render() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let renders = dir.path().join("renders");
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(
        &cfg,
        "preset = desk\nmax_steps = 6\neval_every = 3\ncheckpoint_every = 3\nnet_width = 16\nnet_depth = 2\nnet_skip = none\n\
         n_coarse = 8\nn_fine = 8\n",
    )
    .unwrap();

    let made = ok(&sfmnerf(&["make-synthetic", "--preset", "textured-box", "--out", s(&data)]));
    assert!(made.contains("9 images (8 train, 1 test)"), "{made}");
    assert!(data.join("poses.txt").exists() && data.join("matches.txt").exists());

    let trained = ok(&sfmnerf(&["train", "--data", s(&data), "--config", s(&cfg), "--seed", "3", "--out", s(&run)]));
    assert!(trained.contains("trained 6 steps"), "{trained}");
    let log = std::fs::read_to_string(run.join("metrics.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("eval")).count(), 2);

    let ckpt = run.join("checkpoint.ckpt");
    let evaluated = ok(&sfmnerf(&["eval", "--data", s(&data), "--ckpt", s(&ckpt)]));
    assert!(evaluated.contains("img_007.png psnr="), "{evaluated}");
    assert!(evaluated.contains("depth_rmse="), "{evaluated}");

    ok(&sfmnerf(&["render", "--ckpt", s(&ckpt), "--camera", "2", "--out", s(&renders)]));
    for f in ["view_002.png", "view_002_depth.pfm", "view_002_opacity.pfm"] {
        assert!(renders.join(f).exists(), "{f}");
    }

    // a second train into the same directory resumes at the final step
    let again = ok(&sfmnerf(&["train", "--data", s(&data), "--config", s(&cfg), "--seed", "3", "--out", s(&run)]));
    assert!(again.contains("trained 6 steps"), "{again}");
}

#[test]
fn errors_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = sfmnerf(&["eval", "--data", s(dir.path()), "--ckpt", s(&dir.path().join("missing.ckpt"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let bad = sfmnerf(&["make-synthetic", "--preset", "three-cubes", "--out", s(dir.path())]);
    assert!(!bad.status.success());
}
