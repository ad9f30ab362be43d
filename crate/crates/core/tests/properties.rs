use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use stormseg::data::{
    normalize, normalize_lon, resample_bilinear, split_by_year, stack_temporal, GridFrame, GridSpec, Sample,
    YearAssignment,
};
use stormseg::kv::{KeyValues, KvWriter};
use stormseg::unet::ModelConfig;
use stormseg::loss::{LossKind, LossSpec};

fn sample(year: i32, hour: u32, input: Vec<f32>) -> Sample {
    let n = input.len() / 3;
    Sample {
        timestamp: Utc.with_ymd_and_hms(year, 7, 1, hour, 0, 0).unwrap(),
        spec: GridSpec::regional(n, 1, 0.0, 0.0, -1.0, 1.0),
        channels: 3,
        input,
        mask: vec![0; n],
    }
}

proptest! {
    #[test]
    fn normalization_maps_training_data_into_the_unit_interval(
        planes in prop::collection::vec(prop::collection::vec(-1e4f32..1e4, 12), 1..6),
    ) {
        let mut samples: Vec<Sample> = planes.into_iter().enumerate().map(|(i, v)| sample(2015, i as u32, v)).collect();
        let original = samples.clone();
        let stats = normalize(&mut samples, None).unwrap();
        prop_assert_eq!(stats.channels(), 3);
        for (s, o) in samples.iter().zip(&original) {
            for c in 0..3 {
                let (lo, hi) = (stats.min[c], stats.max[c]);
                for (v, raw) in s.input[c * 4..(c + 1) * 4].iter().zip(&o.input[c * 4..(c + 1) * 4]) {
                    prop_assert!((0.0..=1.0).contains(v));
                    if hi > lo {
                        let expect = (*raw as f64 - lo) / (hi - lo);
                        prop_assert!((*v as f64 - expect).abs() < 1e-6);
                    } else {
                        prop_assert_eq!(*v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn year_split_is_a_partition(years in prop::collection::vec(2000i32..2009, 0..40)) {
        let samples: Vec<Sample> = years.iter().map(|&y| sample(y, 0, vec![0.0; 3])).collect();
        let assign = YearAssignment::new(2000..2005, [2005, 2006], 2007..2009);
        let split = split_by_year(samples, &assign).unwrap();
        prop_assert_eq!(split.train.len() + split.validation.len() + split.test.len(), years.len());
        prop_assert!(split.train.iter().all(|s| s.year() < 2005));
        prop_assert!(split.validation.iter().all(|s| (2005..2007).contains(&s.year())));
        prop_assert!(split.test.iter().all(|s| s.year() >= 2007));
        let mut order: Vec<i32> = split.train.iter().map(Sample::year).collect();
        let expected: Vec<i32> = years.iter().copied().filter(|&y| y < 2005).collect();
        order.truncate(expected.len());
        prop_assert_eq!(order, expected);
    }

    #[test]
    fn overlapping_year_sets_are_rejected(y in 2000i32..2010) {
        let assign = YearAssignment::new([y], [y + 1], [y, y + 2]);
        prop_assert!(split_by_year(Vec::new(), &assign).is_err());
    }

    #[test]
    fn key_values_round_trip(
        entries in prop::collection::btree_map("[a-z][a-z_0-9]{0,10}", "[A-Za-z0-9_.,+-][A-Za-z0-9_.,+ -]{0,15}[A-Za-z0-9_.,+-]", 0..10),
    ) {
        let mut w = KvWriter::new();
        for (k, v) in &entries {
            w.put(k, v);
        }
        let text = w.finish();
        let mut kv = KeyValues::parse(&text).unwrap();
        for (k, v) in &entries {
            prop_assert_eq!(kv.take(k), Some(v.clone()));
        }
        kv.finish().unwrap();
    }

    #[test]
    fn model_config_survives_its_text_form(
        depth in 2usize..6,
        base in 1usize..64,
        alpha in 0.0f64..1.0,
        gamma in 0.0f64..5.0,
        momentum in 0.01f64..0.999,
        kind in prop::sample::select(vec![LossKind::Bce, LossKind::Dice, LossKind::Tversky, LossKind::Focal]),
    ) {
        let config = ModelConfig {
            depth,
            base_channels: base,
            loss: LossSpec { kind, alpha, beta: 1.0 - alpha, gamma, ..LossSpec::default() },
            bn_momentum: momentum,
            ..ModelConfig::default()
        };
        let mut w = KvWriter::new();
        config.write_kv(&mut w);
        let mut kv = KeyValues::parse(&w.finish()).unwrap();
        let back = ModelConfig::read_kv(&mut kv, ModelConfig::default()).unwrap();
        kv.finish().unwrap();
        prop_assert_eq!(back, config);
    }

    #[test]
    fn resampling_to_the_same_grid_is_the_identity(
        w in 2usize..20,
        h in 2usize..20,
        values in prop::collection::vec(-50f32..50.0, 400),
    ) {
        let spec = GridSpec::regional(w, h, 30.0, 100.0, -0.5, 0.5);
        let f = GridFrame::new(spec, Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap(), values[..w * h].to_vec()).unwrap();
        prop_assert_eq!(resample_bilinear(&f, w, h).unwrap(), f);
    }

    #[test]
    fn resampling_preserves_bounds(
        w in 2usize..12,
        h in 2usize..12,
        nw in 2usize..30,
        nh in 2usize..30,
        values in prop::collection::vec(-50f32..50.0, 144),
    ) {
        let spec = GridSpec::regional(w, h, 30.0, 100.0, -0.5, 0.5);
        let vals = values[..w * h].to_vec();
        let (lo, hi) = vals.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let f = GridFrame::new(spec, Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap(), vals).unwrap();
        let r = resample_bilinear(&f, nw, nh).unwrap();
        prop_assert_eq!(r.values.len(), nw * nh);
        prop_assert!(r.values.iter().all(|&v| v >= lo - 1e-4 && v <= hi + 1e-4));
    }

    #[test]
    fn longitudes_normalize_into_one_turn(lon in -1e4f64..1e4) {
        let n = normalize_lon(lon);
        prop_assert!((0.0..360.0).contains(&n));
        let turns = (lon - n) / 360.0;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn pixel_centres_map_back_to_themselves(row in 0usize..361, col in 0usize..720) {
        let spec = GridSpec::gfs();
        let (lat, lon) = spec.pixel_to_latlon(row, col);
        prop_assert_eq!(spec.latlon_to_pixel(lat, lon), Some((row, col)));
        prop_assert_eq!(spec.latlon_to_pixel(lat, lon - 360.0), Some((row, col)));
    }

    #[test]
    fn stacking_skips_gaps_and_orders_channels(present in prop::collection::vec(any::<bool>(), 1..16)) {
        let spec = GridSpec::regional(2, 1, 0.0, 0.0, -1.0, 1.0);
        let start = Utc.with_ymd_and_hms(2016, 3, 1, 0, 0, 0).unwrap();
        let frames: Vec<GridFrame> = present
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(i, _)| GridFrame::new(spec, start + Duration::hours(3 * i as i64), vec![i as f32; 2]).unwrap())
            .collect();
        let stacks = stack_temporal(&frames, Duration::hours(3)).unwrap();
        let expected: Vec<usize> = (2..present.len()).filter(|&i| present[i] && present[i - 1] && present[i - 2]).collect();
        prop_assert_eq!(stacks.len(), expected.len());
        for (s, i) in stacks.iter().zip(expected) {
            prop_assert_eq!(s.timestamp, start + Duration::hours(3 * i as i64));
            let i = i as f32;
            prop_assert_eq!(&s.data, &vec![i, i, i - 1.0, i - 1.0, i - 2.0, i - 2.0]);
        }
    }
}
