//! Train a 4-class model on synthetic shapes and report mIoU on the
//! training set and on unseen samples.
//!
//! cargo run --release --example train_synthetic -- [iters]

use eadnet::autograd::ParamStore;
use eadnet::synth::{synth_dataset, SynthConfig};
use eadnet::train::{evaluate, train, TrainConfig};
use eadnet::{build_eadnet, EadnetConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> eadnet::Result<()> {
    let iters = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let config = EadnetConfig {
        num_classes: 4,
        ..EadnetConfig::default()
    };
    let mut store = ParamStore::new();
    let model = build_eadnet(&config, &mut store, &mut ChaCha8Rng::seed_from_u64(42))?;

    let shapes = SynthConfig::new(64, 4);
    let train_set = synth_dataset(42, 200, &shapes)?;
    let held_out = synth_dataset(1042, 50, &shapes)?;

    let cfg = TrainConfig {
        iters,
        base_lr: 5e-3,
        batch_size: 4,
        seed: 42,
        ..TrainConfig::default()
    };
    train(&model, &mut store, &train_set, &cfg, |e| {
        if e.iter % 50 == 0 {
            println!("iter {:>5} lr {:.2e} loss {:.4}", e.iter, e.lr, e.loss);
        }
    })?;

    let train_miou = evaluate(&model, &store, &train_set, 4)?.miou()?;
    let held_miou = evaluate(&model, &store, &held_out, 4)?.miou()?;
    println!("training mIoU {:.4}", train_miou.miou);
    println!("held-out mIoU {:.4} per class {:?}", held_miou.miou, held_miou.per_class);
    Ok(())
}
