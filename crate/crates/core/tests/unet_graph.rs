use std::path::PathBuf;

use stormseg::nn::Mode;
use stormseg::tensor::Graph;
use stormseg::unet::{Checkpoint, ModelConfig, Unet};
use stormseg::{Rng, Tensor};

fn config(depth: usize, base: usize, size: usize) -> ModelConfig {
    ModelConfig {
        depth,
        base_channels: base,
        input_height: size,
        input_width: size,
        ..ModelConfig::default()
    }
}

fn input(rng: &mut Rng, n: usize, size: usize) -> Tensor<f32> {
    let data = (0..n * 3 * size * size).map(|_| rng.normal() as f32).collect();
    Tensor::from_vec(&[n, 3, size, size], data).unwrap()
}

#[test]
fn skip_connections_join_upsampled_and_encoder_features() {
    for depth in 2..=4 {
        let size = 1 << depth;
        let mut rng = Rng::new(depth as u64);
        let model = Unet::<f32>::new(config(depth, 2, size), &mut rng).unwrap();
        let x = input(&mut rng, 2, size);
        let trace = model.forward_traced(&x, Mode::Train, None).unwrap();
        let graph = Graph::from_root(&trace.output);

        let concats: Vec<_> = graph.ops_named("concat_channels").collect();
        assert_eq!(concats.len(), depth);
        for level in 0..depth {
            let cat = &trace.concat[level];
            let node = graph.nodes.iter().find(|n| n.id == cat.id()).expect("concat in graph");
            assert_eq!(node.op, Some("concat_channels"));
            assert_eq!(node.inputs, vec![trace.upsampled[level].id(), trace.encoder[level].id()]);
            let enc = trace.encoder[level].shape();
            assert_eq!(trace.upsampled[level].shape(), enc);
            assert_eq!(cat.shape(), &[enc[0], 2 * enc[1], enc[2], enc[3]]);
            assert!(graph.position(trace.encoder[level].id()) < graph.position(cat.id()));
        }
        assert_eq!(graph.ops_named("conv2d").count(), 2 * (2 * depth + 1) + 1);
        assert_eq!(graph.ops_named("upconv2d").count(), depth);
        assert_eq!(graph.ops_named("maxpool2d").count(), depth);
        assert_eq!(graph.ops_named("batchnorm").count(), 2 * (2 * depth + 1));
        assert_eq!(graph.ops_named("sigmoid").count(), 1);
        assert_eq!(trace.output.shape(), &[2, 1, size, size]);

        let eval = model.forward_traced(&x, Mode::Eval, None).unwrap();
        let g = Graph::from_root(&eval.output);
        assert_eq!(g.ops_named("batchnorm").count(), 0);
        assert_eq!(g.ops_named("batchnorm_eval").count(), 2 * (2 * depth + 1));
    }
}

#[test]
fn every_parameter_receives_a_gradient() {
    let mut rng = Rng::new(11);
    let model = Unet::<f32>::new(config(3, 2, 16), &mut rng).unwrap();
    let x = input(&mut rng, 2, 16);
    let y = model.forward_traced(&x, Mode::Train, None).unwrap().output;
    y.mul(&y).unwrap().mean_all().backward().unwrap();
    let params = model.parameters();
    assert_eq!(params.iter().map(|(_, p)| p.numel()).sum::<usize>(), model.parameter_count());
    for (name, p) in params {
        let g = p.grad().unwrap_or_else(|| panic!("{name} has no gradient"));
        assert_eq!(g.len(), p.numel());
        assert!(g.iter().all(|v| v.is_finite()), "{name}");
        if name.ends_with("weight") || name.ends_with("scale") {
            assert!(g.iter().any(|&v| v != 0.0), "{name} gradient is identically zero");
        }
    }
}

#[test]
fn odd_extents_are_padded_and_cropped() {
    let mut rng = Rng::new(12);
    let model = Unet::<f32>::new(config(2, 2, 13), &mut rng).unwrap();
    let data = (0..3 * 13 * 11).map(|_| rng.normal() as f32).collect();
    let x = Tensor::param(&[1, 3, 13, 11], data).unwrap();
    let trace = model.forward_traced(&x, Mode::Eval, None).unwrap();
    assert_eq!(trace.output.shape(), &[1, 1, 13, 11]);
    assert_eq!(trace.encoder[0].shape(), &[1, 2, 16, 12]);
    let graph = Graph::from_root(&trace.output);
    assert_eq!(graph.ops_named("pad_reflect").count(), 1);
    assert_eq!(graph.ops_named("crop").count(), 1);
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn golden_model() -> Checkpoint<f32> {
    let mut rng = Rng::new(2024);
    let mut model = Unet::<f32>::new(config(4, 1, 16), &mut rng).unwrap();
    for _ in 0..3 {
        model.forward_train(&input(&mut rng, 2, 16), &mut rng).unwrap();
    }
    let mut ckpt = Checkpoint::new(model);
    ckpt.seed = 2024;
    ckpt
}

fn golden_input() -> Tensor<f32> {
    let data = (0..3 * 256)
        .map(|i| ((i as f32) * 0.173).sin() + 0.01 * (i % 7) as f32)
        .collect();
    Tensor::from_vec(&[1, 3, 16, 16], data).unwrap()
}

/// Set `STORMSEG_BLESS=1` to regenerate the fixture after an intentional
/// format or architecture change.
#[test]
fn golden_depth4_checkpoint_still_loads_and_predicts() {
    let ckpt_path = fixture("golden_depth4.ckpt");
    let out_path = fixture("golden_depth4.output.txt");
    if std::env::var_os("STORMSEG_BLESS").is_some() {
        let ckpt = golden_model();
        ckpt.save(&ckpt_path).unwrap();
        let y = ckpt.model.forward_eval(&golden_input()).unwrap();
        let text: String = y.data().iter().map(|v| format!("{v:?}\n")).collect();
        std::fs::write(&out_path, text).unwrap();
    }
    let bytes = std::fs::read(&ckpt_path).unwrap();
    let ckpt = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
    assert_eq!(ckpt.to_bytes(), bytes);
    assert_eq!(ckpt.model.depth(), 4);
    assert_eq!(ckpt.seed, 2024);

    let expected: Vec<f32> = std::fs::read_to_string(&out_path)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    let y = ckpt.model.forward_eval(&golden_input()).unwrap();
    assert_eq!(y.shape(), &[1, 1, 16, 16]);
    assert_eq!(expected.len(), y.numel());
    for (a, b) in y.data().iter().zip(&expected) {
        assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
    }
}
