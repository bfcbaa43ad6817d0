use mcd_lab::checkpoint::Checkpoint;
use mcd_lab::config::{Objective, OptimizerKind, TrainConfig};
use mcd_lab::schedules::momentum_at;
use mcd_lab::trainer::{prepare_batch, run_training, synthetic_splits, Trainer};

fn cfg(objective: Objective, optimizer: OptimizerKind) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        total_steps: 9,
        train_pairs: 64,
        eval_pairs: 16,
        learning_rate: if optimizer == OptimizerKind::Adam { 1e-3 } else { 0.1 },
        optimizer,
        objective,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn metrics(cfg: &TrainConfig) -> Vec<u8> {
    let (train, _) = synthetic_splits(cfg).unwrap();
    let mut out = Vec::new();
    run_training(cfg, &train, Some(&mut out), None).unwrap();
    out
}

#[test]
fn same_config_gives_identical_metrics() {
    for objective in Objective::ALL {
        let c = cfg(objective, OptimizerKind::Sgd);
        let a = metrics(&c);
        assert_eq!(a, metrics(&c), "{objective}");
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 10);
    }
}

#[test]
fn different_seeds_give_different_metrics() {
    let a = cfg(Objective::Mcd, OptimizerKind::Sgd);
    let b = TrainConfig { seed: 6, ..a.clone() };
    assert_ne!(metrics(&a), metrics(&b));
}

#[test]
fn checkpoint_file_round_trips_bitwise() {
    let c = cfg(Objective::Mcd, OptimizerKind::Adam);
    let (train, _) = synthetic_splits(&c).unwrap();
    let mut t = Trainer::new(&c).unwrap();
    for step in 0..4 {
        t.train_step(&prepare_batch(&train, &c, step).unwrap()).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    t.save_checkpoint(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let back = Trainer::load_checkpoint(&path).unwrap();
    assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().schedule.step, 4);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    for (objective, optimizer) in [
        (Objective::Mcd, OptimizerKind::Adam),
        (Objective::KlDistill, OptimizerKind::Sgd),
        (Objective::ClipAug, OptimizerKind::Adam),
    ] {
        let c = cfg(objective, optimizer);
        let (train, _) = synthetic_splits(&c).unwrap();

        let mut straight = Vec::new();
        let (full, _) = run_training(&c, &train, Some(&mut straight), None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut first = Trainer::new(&c).unwrap();
        let mut head = Vec::new();
        for step in 0..4 {
            head.push(first.train_step(&prepare_batch(&train, &c, step).unwrap()).unwrap());
        }
        first.save_checkpoint(&path).unwrap();
        drop(first);

        let mut resumed = Trainer::load_checkpoint(&path).unwrap();
        assert_eq!(resumed.schedule().step, 4);
        let mut tail_csv = Vec::new();
        let tail = resumed.train(&train, Some(&mut tail_csv), None::<&std::path::Path>).unwrap();
        assert_eq!(tail[0].step, 4);
        assert_eq!(tail[0].m, momentum_at(&resumed.schedule().at(4).unwrap()));

        let straight = String::from_utf8(straight).unwrap();
        let tail_csv = String::from_utf8(tail_csv).unwrap();
        let mut stitched: Vec<String> = vec![straight.lines().next().unwrap().to_string()];
        stitched.extend(head.iter().map(|r| r.csv_line()));
        stitched.extend(tail_csv.lines().skip(1).map(str::to_string));
        assert_eq!(stitched, straight.lines().map(str::to_string).collect::<Vec<_>>(), "{objective}");
        assert_eq!(resumed.to_checkpoint().to_bytes(), full.to_checkpoint().to_bytes(), "{objective}");
    }
}
