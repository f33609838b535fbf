use logoforge_core::corpus::{generate_synthetic_corpus, SynthConfig};
use logoforge_core::model::ModelConfig;
use logoforge_core::training::{Checkpoint, TrainConfig, Trainer};

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            d_v: 8,
            d_e: 8,
            d_c: 8,
            d_z: 4,
            visual_width: 2,
            img_channels: [2, 2, 4, 4],
            ..Default::default()
        },
        batch_size: 4,
        epochs,
        seed: 3,
        ..Default::default()
    }
}

fn run_to_end(trainer: &mut Trainer) {
    while trainer.state.step < trainer.total_steps() {
        trainer.step().unwrap();
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let records = generate_synthetic_corpus(
        &SynthConfig {
            records: 12,
            min_units: 2,
            max_units: 3,
            ..Default::default()
        },
        5,
    )
    .unwrap();

    let mut straight = Trainer::new(config(2), records.clone(), None).unwrap();
    run_to_end(&mut straight);

    let mut first = Trainer::new(config(1), records.clone(), None).unwrap();
    run_to_end(&mut first);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("epoch_001.ckpt");
    first.checkpoint().save(&path).unwrap();
    let mut resumed = Trainer::resume(&Checkpoint::load(&path).unwrap(), records, Some(2)).unwrap();
    run_to_end(&mut resumed);

    assert_eq!(resumed.state.step, straight.state.step);
    assert!(straight.checkpoint() == resumed.checkpoint());
}
