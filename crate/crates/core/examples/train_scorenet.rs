//! Train a small noise-prediction network on a 2-d mixture, save a
//! checkpoint, reload it, and compare its velocity field to the exact one.
//!
//! cargo run --release --example train_scorenet -- [out_dir]

use std::fs;
use std::path::PathBuf;

use collapse_lab::dataset::{gen_dataset, DatasetSpec};
use collapse_lab::diagnostics::velocity_mae;
use collapse_lab::rng::Seed;
use collapse_lab::schedule::NoiseSchedule;
use collapse_lab::scorenet::{
    load_checkpoint, save_checkpoint, train, Architecture, Checkpoint, ScoreModel, ScoreNet, TrainConfig,
};

fn main() -> collapse_lab::error::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/train".into()));
    fs::create_dir_all(&out)?;
    let spec = DatasetSpec::Mog2d { components: 4, radius: 2.0, std: 0.3 };
    let oracle = spec.mog_spec().expect("mixture datasets have an oracle");
    let data = gen_dataset(&spec, 20_000, Seed(1))?;
    let sched = NoiseSchedule::vp();

    let net = ScoreNet::new(&Architecture::two_layer_tanh(64), 2, sched, Seed(2))?;
    let cfg = TrainConfig {
        batch_size: 256,
        iterations: 2000,
        seed: Seed(3),
        ..TrainConfig::default()
    };
    let run = train(net, &data, &sched, &cfg)?;
    let head: f64 = run.losses[..100].iter().sum::<f64>() / 100.0;
    let tail: f64 = run.losses[run.losses.len() - 100..].iter().sum::<f64>() / 100.0;
    println!("loss: first 100 iterations {head:.4}, last 100 {tail:.4}");

    let path = out.join("checkpoint.json");
    let ckpt = Checkpoint {
        model: ScoreModel::Single(run.net),
        adam: vec![run.adam],
        train_seed: Some(cfg.seed),
    };
    save_checkpoint(&ckpt, &path)?;
    let model = load_checkpoint(&path)?.model;
    assert_eq!(model, ckpt.model);
    println!("saved and reloaded {}", path.display());

    for t in [1.0, 0.5, 0.1, 0.01] {
        let mae = velocity_mae(&model, &oracle, &sched, t, 4000, Seed(4))?;
        println!("t={t:<5} velocity MAE vs exact field {mae:.4}");
    }
    Ok(())
}
