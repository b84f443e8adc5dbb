use gazeworld::gazedata::{synth_world, GridSpec, OrderRule};
use gazeworld::model::{load_checkpoint, save_checkpoint, write_checkpoint};
use gazeworld::train::{checkpoint_path, run_pretrain, RunOptions};
use gazeworld::{ModelConfig, TrainConfig};

fn small() -> (ModelConfig, TrainConfig) {
    let mc = ModelConfig {
        embed_dim: 8,
        encoder_layers: 1,
        encoder_heads: 2,
        predictor_layers: 1,
        predictor_heads: 2,
        completion_layers: 1,
        completion_heads: 2,
        mlp_ratio: 2,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 4,
        max_steps: None,
        log_every: 0,
        ..TrainConfig::default()
    };
    (mc, tc)
}

#[test]
fn resumed_run_reproduces_uninterrupted_run() {
    let (mc, tc) = small();
    let data = synth_world(5, 14, GridSpec { rows: 4, cols: 4 }, OrderRule::IntensityOrder).unwrap();
    let (full, full_report) = run_pretrain(&mc, &tc, &data, RunOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let (half, first) = run_pretrain(
        &mc,
        &tc,
        &data,
        RunOptions {
            stop_at: Some(5),
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_eq!(half.step, 5);
    let path = checkpoint_path(dir.path(), half.step);
    save_checkpoint(&half, &path).unwrap();
    let resume = load_checkpoint(&path).unwrap();
    let (rest, second) = run_pretrain(
        &mc,
        &tc,
        &data,
        RunOptions {
            resume: Some(resume),
            ..RunOptions::default()
        },
    )
    .unwrap();

    let joined: Vec<_> = first.steps.iter().chain(&second.steps).cloned().collect();
    assert_eq!(joined, full_report.steps);
    assert_eq!(write_checkpoint(&rest), write_checkpoint(&full));
}

#[test]
fn periodic_checkpoints_resume_exactly() {
    let (mc, tc) = small();
    let tc = TrainConfig {
        checkpoint_every: 3,
        ..tc
    };
    let data = synth_world(6, 12, GridSpec { rows: 4, cols: 4 }, OrderRule::Random).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..RunOptions::default()
    };
    let (full, report) = run_pretrain(&mc, &tc, &data, opts).unwrap();
    let ck = load_checkpoint(&checkpoint_path(dir.path(), 6)).unwrap();
    let (rest, tail) = run_pretrain(
        &mc,
        &tc,
        &data,
        RunOptions {
            resume: Some(ck),
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_eq!(tail.steps, report.steps[6..]);
    assert_eq!(write_checkpoint(&rest), write_checkpoint(&full));
}

#[test]
fn resume_rejects_other_dataset() {
    let (mc, tc) = small();
    let grid = GridSpec { rows: 4, cols: 4 };
    let data = synth_world(5, 8, grid, OrderRule::IntensityOrder).unwrap();
    let (ck, _) = run_pretrain(
        &mc,
        &tc,
        &data,
        RunOptions {
            stop_at: Some(1),
            ..RunOptions::default()
        },
    )
    .unwrap();
    let other = synth_world(9, 8, grid, OrderRule::IntensityOrder).unwrap();
    assert!(run_pretrain(
        &mc,
        &tc,
        &other,
        RunOptions {
            resume: Some(ck),
            ..RunOptions::default()
        }
    )
    .is_err());
}
