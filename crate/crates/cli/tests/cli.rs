use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use wireframe_core::scene::parse_scene;

fn wireframe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wireframe"))
        .args(args)
        .output()
        .expect("run binary")
}

fn with_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_wireframe"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn binary");
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_writes_reloadable_deterministic_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = wireframe(&[
            "generate",
            "--seed",
            "1",
            "--edges",
            "3",
            "--count",
            "5",
            "--out",
            p(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).starts_with("# resolved configuration"));
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for name in names {
        let (x, y) = (
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
        );
        assert_eq!(x, y);
        let frame = parse_scene(std::str::from_utf8(&x).unwrap()).unwrap();
        assert_eq!(frame.len(), 3);
        assert!(frame.validate(1).is_ok());
    }
}

#[test]
fn generate_rejects_zero_edges() {
    let dir = tempfile::tempdir().unwrap();
    let o = wireframe(&["generate", "--edges", "0", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(
        wireframe(&["eval", "--no-such-flag"]).status.code(),
        Some(1)
    );
    assert_eq!(wireframe(&[]).status.code(), Some(1));
    assert_eq!(
        wireframe(&["eval", "--mode", "diagonal", "--oracle"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(wireframe(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_minimal_config_writes_log_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.txt");
    fs::write(
        &cfg,
        "reward.scheme = incremental\neval.episodes = 2\nlog.wallclock = false\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = wireframe(&[
        "train",
        "--config",
        p(&cfg),
        "--steps",
        "512",
        "--seed",
        "9",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("# resolved configuration"));
    assert!(text.contains("ppo.seed = 9"));
    assert!(text.contains("scheme incremental"));
    assert!(out.join("train_log.csv").exists());
    assert!(out.join("final.ckpt").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["scheme"], "incremental");
    assert_eq!(summary["steps"], 512);

    let ckpt = out.join("final.ckpt");
    let e = wireframe(&["eval", "--checkpoint", p(&ckpt), "--episodes", "2"]);
    assert!(e.status.success(), "{}", stderr(&e));
    assert!(stdout(&e).contains("mean_eval_iou"));
}

#[test]
fn train_unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "reward.foo = 1\n").unwrap();
    let o = wireframe(&[
        "train",
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("reward.foo"), "{}", stderr(&o));
}

#[test]
fn eval_oracle_scores_one_and_is_repeatable() {
    let args = [
        "eval",
        "--oracle",
        "--mode",
        "sat",
        "--episodes",
        "5",
        "--seed",
        "3",
    ];
    let a = wireframe(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(stdout(&a).contains("mean_eval_iou 1\n"), "{}", stdout(&a));
    assert!(stdout(&a).contains("success_rate 1\n"));
    assert_eq!(stdout(&a), stdout(&wireframe(&args)));
}

#[test]
fn eval_single_episode_is_deterministic() {
    let args = [
        "eval",
        "--agent",
        "random",
        "--mode",
        "fat",
        "--episodes",
        "1",
        "--seed",
        "8",
    ];
    assert_eq!(stdout(&wireframe(&args)), stdout(&wireframe(&args)));
}

#[test]
fn eval_missing_checkpoint_is_runtime_error() {
    let o = wireframe(&["eval", "--checkpoint", "/definitely/not/here.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn eval_appends_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("eval.csv");
    for _ in 0..2 {
        let o = wireframe(&[
            "eval",
            "--agent",
            "fixate",
            "--episodes",
            "3",
            "--csv",
            p(&csv),
        ]);
        assert!(o.status.success());
    }
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("episodes,mean_eval_iou"));
}

#[test]
fn record_writes_gif_and_png() {
    let dir = tempfile::tempdir().unwrap();
    let gif = dir.path().join("ep.gif");
    let o = wireframe(&[
        "record",
        "--oracle",
        "--mode",
        "sat",
        "--seed",
        "4",
        "--out",
        p(&gif),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read(&gif).unwrap().starts_with(b"GIF89a"));
    assert!(fs::read(dir.path().join("ep.png"))
        .unwrap()
        .starts_with(b"\x89PNG"));
}

fn grid(text: &str, index: usize) -> Vec<String> {
    // the help text is followed by grids of 60 rows each
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| l.len() == 60 && l.chars().all(|c| ".#o@x".contains(c)))
        .collect();
    rows[index * 60..(index + 1) * 60]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[test]
fn play_frame_right_shifts_target_glyphs() {
    let o = with_stdin(
        &["play", "--mode", "fat", "--seed", "5", "--edges", "1"],
        "d\nq\n",
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let (before, after) = (grid(&text, 0), grid(&text, 1));
    let targets = |g: &[String]| -> Vec<(usize, usize)> {
        g.iter()
            .enumerate()
            .flat_map(|(y, row)| {
                row.char_indices()
                    .filter(|&(_, c)| c == '#' || c == '@')
                    .map(move |(x, _)| (x, y))
            })
            .collect()
    };
    // target pixels, with or without the line on top, move right by one
    let mut shifted: Vec<_> = targets(&before)
        .into_iter()
        .map(|(x, y)| (x + 1, y))
        .collect();
    let mut moved = targets(&after);
    shifted.sort();
    moved.sort();
    assert!(!moved.is_empty());
    assert_eq!(moved, shifted);
}

#[test]
fn play_fixate_prints_summary() {
    let o = with_stdin(&["play", "--seed", "2"], "f\n");
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("episode over: fixated"));
    assert!(text.contains("terminal reward"));
}

#[test]
fn play_step_limit_reports_truncation() {
    let o = with_stdin(&["play", "--seed", "2"], &".".repeat(200));
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("step 200 "));
    assert!(text.contains("truncated"));
}

#[test]
fn play_unknown_key_prints_help_and_keeps_state() {
    let o = with_stdin(&["play", "--seed", "2"], "z\nq\n");
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("unknown key `z`"));
    assert!(!text.contains("step 1 "));
}
