//! Trains the reduced model on synthetic textures and reports test accuracy.
//!
//! `cargo run --example synthetic_benchmark -- [epochs] [seed]`

use std::time::Instant;

use osteo_core::data::{Split, SplitData};
use osteo_core::model::ModelConfig;
use osteo_core::synth::{texture_set, TextureSpec};
use osteo_core::train::{evaluate_split, TrainConfig, Trainer};

fn main() -> osteo_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(50, |s| s.parse().expect("epochs"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));

    // 150 per class, interleaved by label: 200 train, 50 val, 50 test.
    let (images, labels) = texture_set(&TextureSpec::default(), 150, seed);
    let part = |split, range: std::ops::Range<usize>| {
        SplitData::from_images(split, images[range.clone()].to_vec(), labels[range].to_vec(), 2)
    };
    let (train, val, test) = (part(Split::Train, 0..200)?, part(Split::Val, 200..250)?, part(Split::Test, 250..300)?);

    let cfg = ModelConfig::reduced(2);
    let mut trainer = Trainer::new(cfg.clone(), TrainConfig { epochs, seed, ..TrainConfig::default() })?;
    let start = Instant::now();
    while trainer.epochs_done() < epochs {
        let r = trainer.run_epoch(&train, &val)?;
        println!(
            "epoch {:>3}  train loss {:.4} acc {:.3}  val loss {:.4} acc {:.3}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
    }
    let result = evaluate_split(&cfg, &trainer.state, &test, 64)?;
    println!("test accuracy {:.3} after {:.1}s", result.accuracy, start.elapsed().as_secs_f64());
    Ok(())
}
