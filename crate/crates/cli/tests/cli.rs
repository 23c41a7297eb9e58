use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn tiny_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_articulate")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One full gen-data / train / eval run in `dir`.
fn pipeline(dir: &Path) {
    let cfg = tiny_config();
    ok(&["gen-data", "--config", s(&cfg), "--out", s(dir), "--jobs", "2"]);
    let data = dir.join("dataset.aaim");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(dir)]);
    let ckpt = dir.join("checkpoint.aaim");
    ok(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(dir), "--jobs", "3"]);
}

fn shared_run() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let d = tempfile::tempdir().unwrap();
        pipeline(d.path());
        d
    })
    .path()
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = shared_run();
    for f in ["dataset.aaim", "rounds.csv", "checkpoint.aaim", "loss.csv", "goal_loss.csv", "report.csv", "config.toml"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let echoed = fs::read_to_string(dir.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 7"));
}

#[test]
fn report_has_one_row_per_tier_category_policy() {
    let report = fs::read_to_string(shared_run().join("report.csv")).unwrap();
    // Three tiers with one category each, three policies.
    assert_eq!(report.lines().count(), 1 + 3 * 3);
    assert!(report.starts_with("tier,category,policy,"));
}

#[test]
fn heatmaps_cover_the_depth_image() {
    let dir = shared_run().join("heatmaps");
    let maps: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(maps.len(), 3);
    for m in maps {
        let bytes = fs::read(&m).unwrap();
        let header = b"P6\n32 32\n255\n";
        assert!(bytes.starts_with(header), "{}", m.display());
        assert_eq!(bytes.len() - header.len(), 32 * 32 * 3);
    }
}

#[test]
fn infer_prints_a_reproducible_unit_quaternion() {
    let ckpt = shared_run().join("checkpoint.aaim");
    let cfg = tiny_config();
    let out = tempfile::tempdir().unwrap();
    let args = ["infer", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--object", "cabinet-prismatic:0:0.3", "--out", s(out.path())];
    let a = ok(&args);
    let b = ok(&args);
    let action = |text: &str| text.lines().filter(|l| !l.starts_with('#')).skip_while(|l| !l.starts_with("point")).collect::<Vec<_>>().join("\n");
    assert_eq!(action(&a), action(&b));
    let rot = a.lines().find(|l| l.starts_with("rotation")).unwrap();
    let q: Vec<f64> = rot.split(['[', ']']).nth(1).unwrap().split(',').map(|v| v.trim().parse().unwrap()).collect();
    assert!((q.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
    assert!(out.path().join("heatmap.ppm").is_file());
}

#[test]
fn goal_inference_needs_a_selector() {
    let dir = shared_run();
    let cfg = tiny_config();
    // An unreachable threshold leaves no labelled successes, so training
    // attaches no selector.
    let text = fs::read_to_string(&cfg).unwrap().replace("lambda_percentile = 80.0", "lambda_percentile = 80.0\nlambda = 1000.0");
    let work = tempfile::tempdir().unwrap();
    let strict = work.path().join("strict.toml");
    fs::write(&strict, text).unwrap();
    ok(&["gen-data", "--config", s(&strict), "--out", s(work.path())]);
    ok(&["train", "--config", s(&strict), "--data", s(&work.path().join("dataset.aaim")), "--out", s(work.path())]);

    let goal = work.path().join("goal.pgm");
    let mut bytes = b"P5\n32 32\n65535\n".to_vec();
    bytes.extend(std::iter::repeat([0x03u8, 0xe8]).take(32 * 32).flatten());
    fs::write(&goal, bytes).unwrap();
    let out = cli(&[
        "infer", "--config", s(&strict), "--checkpoint", s(&work.path().join("checkpoint.aaim")),
        "--object", "cabinet-prismatic:0:0.3", "--goal", s(&goal), "--out", s(&work.path().join("i")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("goal selector"));

    // With a trained selector the same goal is accepted.
    let with = cli(&[
        "infer", "--config", s(&cfg), "--checkpoint", s(&dir.join("checkpoint.aaim")),
        "--object", "cabinet-prismatic:0:0.3", "--goal", s(&goal), "--out", s(&work.path().join("j")),
    ]);
    assert!(with.status.success(), "{}", String::from_utf8_lossy(&with.stderr));
}

#[test]
fn exit_codes_follow_error_kinds() {
    let work = tempfile::tempdir().unwrap();
    let bad = work.path().join("bad.toml");
    fs::write(&bad, "seed = 1\n[train]\nsteps = -3\n").unwrap();
    assert_eq!(cli(&["eval", "--config", s(&bad), "--out", s(work.path())]).status.code(), Some(2));
    let missing = work.path().join("none.aaim");
    let out = cli(&["train", "--config", s(&tiny_config()), "--data", s(&missing), "--out", s(work.path())]);
    assert_eq!(out.status.code(), Some(3));
    let out = cli(&["infer", "--checkpoint", s(&missing), "--object", "cabinet-prismatic:zero:0.3", "--out", s(work.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(cli(&["eval"]).status.code(), Some(2), "clap usage errors exit with 2");
}

#[test]
fn random_only_eval_needs_no_checkpoint() {
    let work = tempfile::tempdir().unwrap();
    let stdout = ok(&["eval", "--config", s(&tiny_config()), "--out", s(work.path())]);
    assert!(stdout.contains("# resolved configuration (seed 7)"));
    let report = fs::read_to_string(work.path().join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3);
    assert!(!work.path().join("heatmaps").exists());
}

#[test]
fn same_seed_gives_identical_files() {
    let other = tempfile::tempdir().unwrap();
    pipeline(other.path());
    for f in ["dataset.aaim", "checkpoint.aaim", "report.csv", "loss.csv"] {
        assert_eq!(fs::read(shared_run().join(f)).unwrap(), fs::read(other.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let work = tempfile::tempdir().unwrap();
    let stdout = ok(&["eval", "--config", s(&tiny_config()), "--seed", "11", "--out", s(work.path())]);
    assert!(stdout.contains("seed = 11"));
}
