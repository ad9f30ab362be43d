//! Synthetic end-to-end run: 200/50/50 year-split scenes on a 128 x 128
//! grid, Tversky training, test metrics and ROI hit rate at tau = 0.7.

use std::time::Instant;

use stormseg::data::{split_by_year, synth_dataset, SynthParams, YearAssignment};
use stormseg::loss::{LossKind, LossSpec};
use stormseg::roi::{extract_rois, threshold_mask, Inference};
use stormseg::train::{evaluate_checkpoint, train_with_hook, EpochControl, TrainConfig};
use stormseg::unet::{ModelConfig, OptimizerSettings};
use stormseg::Rng;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> stormseg::Result<()> {
    let lr: f64 = arg(1, 2e-3);
    let base: usize = arg(2, 8);
    let epochs: usize = arg(3, 40);
    let box_size: usize = arg(4, 11);
    let batch: usize = arg(5, 8);
    let spec = SynthParams::default_grid();
    let params = SynthParams::default();
    let t = Instant::now();
    let scenes = synth_dataset(
        &mut Rng::new(2024),
        &spec,
        &[(2015, 100), (2016, 100), (2017, 50), (2018, 50)],
        &params,
    )?;
    let samples = scenes
        .iter()
        .map(|s| s.to_sample(box_size, None))
        .collect::<stormseg::Result<Vec<_>>>()?;
    let split = split_by_year(samples, &YearAssignment::new([2015, 2016], [2017], [2018]))?;
    let model = ModelConfig {
        depth: 4,
        base_channels: base,
        input_height: 128,
        input_width: 128,
        loss: LossSpec::new(LossKind::Tversky),
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        batch_size: batch,
        max_epochs: epochs,
        patience: 8,
        seed: 3,
        optimizer: OptimizerSettings {
            learning_rate: lr,
            ..OptimizerSettings::default()
        },
        ..TrainConfig::default()
    };
    let out = train_with_hook(&cfg, model, &split.train, &split.validation, |r| {
        println!(
            "epoch {:>3}  loss {:.4}  train dice {:.4}  val loss {:.4} dice {:.4} acc {:.4}  {:.1}s",
            r.epoch,
            r.train_loss,
            r.train_dice.unwrap_or(f64::NAN),
            r.val_loss,
            r.val_dice,
            r.val_accuracy,
            r.seconds
        );
        EpochControl::Continue
    })?;
    let report = evaluate_checkpoint(&out.checkpoint, &split.test, 8, 0.5)?;
    println!("test: {report:?}");

    let inf = Inference::new(&out.checkpoint);
    let (mut hits, mut truths) = (0, 0);
    for (s, scene) in split.test.iter().zip(scenes.iter().skip(250)) {
        let probs = inf.predict_raw(&s.spec, &s.input)?;
        let prob = stormseg::data::GridFrame::new(s.spec, s.timestamp, probs)?;
        let rois = extract_rois(&threshold_mask(&prob, 0.7)?, &prob, 4)?;
        for rec in scene.labels.at(s.timestamp) {
            let (r, c) = s.spec.latlon_to_pixel(rec.lat, rec.lon).unwrap();
            let half = (box_size / 2) as i64;
            let (r0, r1, c0, c1) = (r as i64 - half, r as i64 + half, c as i64 - half, c as i64 + half);
            truths += 1;
            if rois.iter().any(|b| {
                (b.row_min as i64) <= r1 && (b.row_max as i64) >= r0 && (b.col_min as i64) <= c1 && (b.col_max as i64) >= c0
            }) {
                hits += 1;
            }
        }
    }
    println!("roi hit rate {hits}/{truths} = {:.3}", hits as f64 / truths as f64);
    println!("total {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
