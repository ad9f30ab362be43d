use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use stormseg::data::{CycloneRecord, GridFrame, GridSpec, LabelTable, Mask, NormStats};
use stormseg::train::{EpochRecord, History};
use stormseg::unet::{Checkpoint, HistorySummary, ModelConfig, OptimizerSettings, Unet};
use stormseg::{Error, Rng, Tensor};
use tempfile::TempDir;

fn spec() -> GridSpec {
    GridSpec::regional(13, 7, 12.5, 101.25, -0.25, 0.25)
}

fn frame(rng: &mut Rng) -> GridFrame {
    let mut values: Vec<f32> = (0..91).map(|_| rng.normal() as f32 * 1e3).collect();
    values[0] = f32::MIN_POSITIVE / 4.0;
    values[1] = -0.0;
    values[2] = f32::MAX;
    let t = Utc.with_ymd_and_hms(2019, 2, 28, 21, 0, 0).unwrap();
    GridFrame::new(spec(), t, values).unwrap()
}

fn mask(rng: &mut Rng) -> Mask {
    let values = (0..91).map(|_| rng.below(2) as u8).collect();
    Mask::new(spec(), Utc.with_ymd_and_hms(2019, 3, 1, 0, 0, 0).unwrap(), values).unwrap()
}

fn checkpoint() -> Checkpoint<f32> {
    let mut rng = Rng::new(9);
    let config = ModelConfig {
        depth: 2,
        base_channels: 2,
        input_height: 8,
        input_width: 8,
        ..ModelConfig::default()
    };
    let mut model = Unet::new(config, &mut rng).unwrap();
    let x: Vec<f32> = (0..2 * 3 * 64).map(|_| rng.normal() as f32).collect();
    model
        .forward_train(&Tensor::from_vec(&[2, 3, 8, 8], x).unwrap(), &mut rng)
        .unwrap();
    Checkpoint {
        model,
        norm: Some(NormStats {
            min: vec![180.0, 181.5, 179.25],
            max: vec![310.0, 309.0, 0.1 + 0.2],
        }),
        optimizer: OptimizerSettings {
            learning_rate: 3e-4,
            rho: 0.95,
            epsilon: 1e-7,
        },
        seed: u64::MAX,
        history: HistorySummary {
            epochs_run: 12,
            best_epoch: 9,
            best_val_loss: 0.123456789012345,
            final_train_loss: 1.0 / 3.0,
        },
    }
}

fn assert_format_error<T: std::fmt::Debug>(r: stormseg::Result<T>, len: usize) {
    match r {
        Err(Error::Format { offset, .. }) => assert!(offset as usize <= len, "offset {offset} beyond {len}"),
        other => panic!("expected a format error for {len} bytes, got {other:?}"),
    }
}

#[test]
fn grid_frames_round_trip_bitwise() {
    let tmp = TempDir::new().unwrap();
    let mut rng = Rng::new(1);
    for _ in 0..5 {
        let f = frame(&mut rng);
        let path = tmp.path().join("f.f32grid");
        f.write(&path).unwrap();
        let back = GridFrame::read(&path).unwrap();
        assert_eq!(back.spec, f.spec);
        assert_eq!(back.timestamp, f.timestamp);
        let bits = |g: &GridFrame| g.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&f));
        assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
        assert_eq!(back.to_bytes().len(), 57 + 4 * 91);
    }
}

#[test]
fn masks_round_trip_bitwise() {
    let mut rng = Rng::new(2);
    let m = mask(&mut rng);
    let bytes = m.to_bytes();
    assert_eq!(bytes.len(), 57 + 91);
    assert_eq!(Mask::from_bytes(&bytes).unwrap(), m);
}

#[test]
fn checkpoints_round_trip_bitwise() {
    let tmp = TempDir::new().unwrap();
    let ckpt = checkpoint();
    let path = tmp.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(back.to_bytes(), ckpt.to_bytes());
    assert_eq!(back.config_text(), ckpt.config_text());
    assert_eq!(back.norm, ckpt.norm);
    assert_eq!(back.optimizer, ckpt.optimizer);
    assert_eq!(back.seed, u64::MAX);
    assert_eq!(back.history, ckpt.history);
    for ((na, a), (nb, b)) in ckpt.model.named_tensors().iter().zip(back.model.named_tensors()) {
        assert_eq!(na, &nb);
        assert_eq!(a.shape(), b.shape());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(&b), "{na}");
    }
    let data = (0..3 * 64).map(|i| (i as f32 * 0.37).sin()).collect();
    let x = Tensor::from_vec(&[1, 3, 8, 8], data).unwrap();
    let ya = ckpt.model.forward_eval(&x).unwrap();
    let yb = back.model.forward_eval(&x).unwrap();
    assert_eq!(ya.data(), yb.data());
}

#[test]
fn every_truncation_is_a_format_error() {
    let mut rng = Rng::new(3);
    let g = frame(&mut rng).to_bytes();
    let m = mask(&mut rng).to_bytes();
    let c = checkpoint().to_bytes();
    for n in 0..g.len() {
        assert_format_error(GridFrame::from_bytes(&g[..n]), n);
    }
    for n in 0..m.len() {
        assert_format_error(Mask::from_bytes(&m[..n]), n);
    }
    for n in 0..c.len() {
        assert_format_error(Checkpoint::<f32>::from_bytes(&c[..n]), n);
    }
}

#[test]
fn trailing_bytes_and_bad_headers_are_rejected() {
    let mut rng = Rng::new(4);
    let mut g = frame(&mut rng).to_bytes();
    g.push(0);
    assert_format_error(GridFrame::from_bytes(&g), g.len());

    let m = mask(&mut rng).to_bytes();
    assert_format_error(GridFrame::from_bytes(&m), m.len());
    let mut bad = m.clone();
    bad[57 + 5] = 2;
    match Mask::from_bytes(&bad) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 62),
        other => panic!("{other:?}"),
    }

    let mut c = checkpoint().to_bytes();
    c[8] = 99;
    match Checkpoint::<f32>::from_bytes(&c) {
        Err(Error::Format { offset, message }) => {
            assert_eq!(offset, 8);
            assert!(message.contains("version"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn oversized_headers_are_format_errors() {
    let mut rng = Rng::new(8);
    for mut bytes in [frame(&mut rng).to_bytes(), mask(&mut rng).to_bytes()] {
        bytes[8..16].fill(0xff);
        bytes[40..48].copy_from_slice(&1e-300f64.to_le_bytes());
        assert_format_error(GridFrame::from_bytes(&bytes), bytes.len());
        assert_format_error(Mask::from_bytes(&bytes), bytes.len());
    }
}

#[test]
fn corrupted_files_never_panic() {
    let mut rng = Rng::new(5);
    let g = frame(&mut rng).to_bytes();
    let m = mask(&mut rng).to_bytes();
    let c = checkpoint().to_bytes();
    for _ in 0..300 {
        for bytes in [&g, &m, &c] {
            let mut b = bytes.clone();
            for _ in 0..1 + rng.below(4) {
                let i = rng.below(b.len());
                b[i] = rng.next_u64() as u8;
            }
            let _ = GridFrame::from_bytes(&b);
            let _ = Mask::from_bytes(&b);
            let _ = Checkpoint::<f32>::from_bytes(&b);
        }
    }
}

#[test]
fn history_csv_round_trips() {
    let mut rng = Rng::new(6);
    let history = History {
        epochs: (1..=7)
            .map(|epoch| EpochRecord {
                epoch,
                train_loss: rng.uniform(),
                val_loss: rng.normal().abs(),
                val_dice: rng.uniform(),
                val_tversky: rng.uniform() / 3.0,
                val_accuracy: 1.0 - rng.uniform() * 1e-9,
                seconds: rng.uniform_range(0.0, 1e4),
                train_dice: None,
            })
            .collect(),
    };
    let mut buf = Vec::new();
    history.to_writer(&mut buf).unwrap();
    assert!(buf.starts_with(b"epoch,train_loss,val_loss,val_dice,val_tversky,val_accuracy,seconds\n"));
    assert_eq!(History::from_reader(buf.as_slice()).unwrap(), history);
}

#[test]
fn label_csv_round_trips() {
    let mut rng = Rng::new(7);
    let records: Vec<CycloneRecord> = (0..25)
        .map(|i| {
            let t = Utc.with_ymd_and_hms(2016, 1 + i % 12, 1 + i, 3 * (i % 8), 0, 0).unwrap();
            let wind = (i % 3 != 0).then(|| rng.uniform_range(10.0, 160.0));
            CycloneRecord::new(t, rng.uniform_range(-60.0, 60.0), rng.uniform_range(0.0, 360.0), wind).unwrap()
        })
        .collect();
    let table = LabelTable::new(records);
    let mut buf = Vec::new();
    table.to_writer(&mut buf).unwrap();
    assert_eq!(LabelTable::from_reader(buf.as_slice()).unwrap(), table);
}

proptest! {
    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = GridFrame::from_bytes(&bytes);
        let _ = Mask::from_bytes(&bytes);
        let _ = Checkpoint::<f32>::from_bytes(&bytes);
    }

    #[test]
    fn masks_with_arbitrary_geometry_round_trip(w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let spec = GridSpec::regional(w, h, 10.0, 20.0, -0.1, 0.1);
        let values = (0..w * h).map(|_| rng.below(2) as u8).collect();
        let m = Mask::new(spec, Utc.with_ymd_and_hms(2020, 6, 1, 12, 0, 0).unwrap(), values).unwrap();
        prop_assert_eq!(Mask::from_bytes(&m.to_bytes()).unwrap(), m);
    }
}
