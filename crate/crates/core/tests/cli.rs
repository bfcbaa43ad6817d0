use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcd-lab"))
        .args(args)
        .env_remove("MCD_LAB_THREADS")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 4] = ["total_steps=6", "batch_size=8", "train_pairs=40", "eval_pairs=20"];

#[test]
fn gen_data_writes_noisy_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data.jsonl");
    let o = run(&["gen-data", "--pairs", "5000", "--noise-rate", "0.1", "--seed", "7", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let data = mcd_lab::synthdata::Dataset::load(&out).unwrap();
    assert_eq!(data.len(), 5000);
    assert_eq!(data.noisy_count(), 500);
}

#[test]
fn usage_errors_exit_with_one() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert!(o.stdout.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "colour = red\n").unwrap();
    let o = run(&["train", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["train", "learning_rate=fast", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    assert_eq!(run(&["eval", "--checkpoint", path(&missing)]).status.code(), Some(2));
    let csv = dir.path().join("x.csv");
    std::fs::write(&csv, "a,b\n1,2\n").unwrap();
    let o = run(&["plot", path(&csv), "--out", path(&dir.path().join("x.svg"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn training_twice_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, format!("# small run\n{}\n", SMALL.join("\n"))).unwrap();
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&["train", "--config", path(&cfg), "--objective", "mcd", "--seed", "3", "--out", path(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(std::fs::read(out.join("metrics.csv")).unwrap());
        assert!(out.join("model.ckpt").exists());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(String::from_utf8_lossy(&csvs[0]).lines().count(), 7);

    let out = dir.path().join("a");
    let o = run(&["eval", "--checkpoint", path(&out.join("model.ckpt"))]);
    assert_eq!(o.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["retrieval"]["pairs"], 20);
}

#[test]
fn resume_continues_to_the_same_end_state() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let mut args = vec!["train", "--seed", "4", "--out", path(&full)];
    args.extend(SMALL);
    assert_eq!(run(&args).status.code(), Some(0));

    // interrupt after two steps
    let mut cfg = mcd_lab::config::TrainConfig { seed: 4, ..Default::default() };
    cfg.apply_overrides(&SMALL).unwrap();
    let (train, _) = mcd_lab::trainer::synthetic_splits(&cfg).unwrap();
    let mut t = mcd_lab::trainer::Trainer::new(&cfg).unwrap();
    for step in 0..2 {
        t.train_step(&mcd_lab::trainer::prepare_batch(&train, &cfg, step).unwrap()).unwrap();
    }
    let ckpt = dir.path().join("mid.ckpt");
    t.save_checkpoint(&ckpt).unwrap();

    let resumed = dir.path().join("resumed");
    let o = run(&["train", "--resume", path(&ckpt), "--out", path(&resumed)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(resumed.join("model.ckpt")).unwrap(),
        std::fs::read(full.join("model.ckpt")).unwrap()
    );
    let full_csv = std::fs::read_to_string(full.join("metrics.csv")).unwrap();
    let tail_csv = std::fs::read_to_string(resumed.join("metrics.csv")).unwrap();
    assert!(full_csv.ends_with(tail_csv.split_once('\n').unwrap().1));
    assert_eq!(tail_csv.lines().count(), 1 + 4);

    let o = run(&["train", "--resume", path(&ckpt), "--seed", "1", "--out", path(&resumed)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn plot_handles_empty_and_full_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    std::fs::write(&csv, format!("{}\n", mcd_lab::trainer::METRICS_HEADER)).unwrap();
    let svg = dir.path().join("m.svg");
    assert_eq!(run(&["plot", path(&csv), "--out", path(&svg)]).status.code(), Some(0));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.contains("class=\"axes\"") && !text.contains("polyline"));

    let out = dir.path().join("run");
    let mut args = vec!["train", "--out", path(&out)];
    args.extend(SMALL);
    assert_eq!(run(&args).status.code(), Some(0));
    let m = out.join("metrics.csv");
    let (a, b) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
    assert_eq!(run(&["plot", path(&m), "--out", path(&a)]).status.code(), Some(0));
    assert_eq!(run(&["plot", path(&m), "--out", path(&b)]).status.code(), Some(0));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn gradcheck_passes() {
    let o = run(&["gradcheck", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for name in ["info_nce", "mp_nce", "distill_total", "mlm_loss", "kl_distill_baseline", "encoder_backprop"] {
        assert!(stdout.contains(name), "{name} missing");
    }
}

#[test]
fn compare_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let mut args = vec!["compare", "--objectives", "clip,mcd", "--seeds", "0,1,2", "--out", path(&out)];
    args.extend(SMALL);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(csv.starts_with(mcd_lab::evalsuite::COMPARISON_HEADER));
    assert_eq!(csv.lines().count(), 1 + 6 + 4);
    assert!(std::fs::read_to_string(out.join("comparison.svg")).unwrap().contains("<svg"));

    let o = run(&["compare", "--seeds", "0,1", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
}
