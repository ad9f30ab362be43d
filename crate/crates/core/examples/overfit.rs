//! Trains a depth-4 network on eight synthetic 64 x 64 scenes until it fits
//! them, printing the training soft Dice per epoch.

use std::time::Instant;

use stormseg::data::{synth_dataset, GridSpec, SynthParams};
use stormseg::loss::{LossKind, LossSpec};
use stormseg::train::{train_with_hook, EpochControl, TrainConfig};
use stormseg::unet::{ModelConfig, OptimizerSettings};
use stormseg::Rng;

fn main() -> stormseg::Result<()> {
    let lr: f64 = std::env::args().nth(1).map_or(1e-3, |s| s.parse().unwrap());
    let base: usize = std::env::args().nth(2).map_or(16, |s| s.parse().unwrap());
    let momentum: f64 = std::env::args().nth(3).map_or(ModelConfig::default().bn_momentum, |s| s.parse().unwrap());
    let spec = GridSpec::regional(64, 64, 30.0, 130.0, -0.5, 0.5);
    let params = SynthParams::default();
    let scenes = synth_dataset(&mut Rng::new(5), &spec, &[(2015, 8)], &params)?;
    let samples: Vec<_> = scenes.iter().map(|s| s.to_sample(11, None)).collect::<Result<_, _>>()?;
    let model = ModelConfig {
        depth: 4,
        base_channels: base,
        input_height: 64,
        input_width: 64,
        loss: LossSpec::new(LossKind::Tversky),
        bn_momentum: momentum,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        batch_size: 4,
        max_epochs: 500,
        patience: 500,
        seed: 1,
        optimizer: OptimizerSettings {
            learning_rate: lr,
            ..OptimizerSettings::default()
        },
        stop_at_train_dice: Some(0.95),
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let out = train_with_hook(&cfg, model, &samples, &samples, |r| {
        println!(
            "epoch {:>3}  loss {:.4}  train dice {:.4}  val dice {:.4}  {:.2}s",
            r.epoch,
            r.train_loss,
            r.train_dice.unwrap_or(f64::NAN),
            r.val_dice,
            r.seconds
        );
        EpochControl::Continue
    })?;
    println!("stopped: {:?} after {:.1}s", out.stop, t.elapsed().as_secs_f64());
    Ok(())
}
