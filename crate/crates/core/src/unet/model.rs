use std::collections::HashMap;

use super::config::{ModelConfig, Regularizer};
use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_eval, batchnorm_train, concat_channels, conv2d, crop, dropout, gaussian_noise, maxpool2d,
    pad_reflect, upconv2d, BatchNormParams, BatchStats, Conv2dParams, Mode,
};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Two `3x3 conv -> batch norm -> ReLU` stages.
#[derive(Debug, Clone)]
pub struct ConvBlock<T: Element = f32> {
    pub conv1: Conv2dParams<T>,
    pub bn1: BatchNormParams<T>,
    pub conv2: Conv2dParams<T>,
    pub bn2: BatchNormParams<T>,
}

impl<T: Element> ConvBlock<T> {
    fn init(cin: usize, cout: usize, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            conv1: Conv2dParams::init(cin, cout, 3, 1, 1, rng),
            bn1: BatchNormParams::new(cout, cfg.bn_momentum, cfg.bn_epsilon)?,
            conv2: Conv2dParams::init(cout, cout, 3, 1, 1, rng),
            bn2: BatchNormParams::new(cout, cfg.bn_momentum, cfg.bn_epsilon)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.weight.shape()[0]
    }

    fn tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>, buffers: bool) {
        for (tag, conv, bn) in [("1", &self.conv1, &self.bn1), ("2", &self.conv2, &self.bn2)] {
            out.push((format!("{prefix}.conv{tag}.weight"), conv.weight.clone()));
            out.push((format!("{prefix}.conv{tag}.bias"), conv.bias.clone()));
            out.push((format!("{prefix}.bn{tag}.scale"), bn.scale.clone()));
            out.push((format!("{prefix}.bn{tag}.shift"), bn.shift.clone()));
            if buffers {
                let c = bn.channels();
                out.push((
                    format!("{prefix}.bn{tag}.running_mean"),
                    Tensor::from_vec(&[c], bn.running_mean.clone()).expect("shape"),
                ));
                out.push((
                    format!("{prefix}.bn{tag}.running_var"),
                    Tensor::from_vec(&[c], bn.running_var.clone()).expect("shape"),
                ));
            }
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        out.push(&mut self.conv1.weight);
        out.push(&mut self.conv1.bias);
        out.push(&mut self.bn1.scale);
        out.push(&mut self.bn1.shift);
        out.push(&mut self.conv2.weight);
        out.push(&mut self.conv2.bias);
        out.push(&mut self.bn2.scale);
        out.push(&mut self.bn2.shift);
    }

    fn batchnorms_mut(&mut self) -> [&mut BatchNormParams<T>; 2] {
        [&mut self.bn1, &mut self.bn2]
    }

    fn convs_mut(&mut self) -> [(&'static str, &mut Conv2dParams<T>, &mut BatchNormParams<T>); 2] {
        [("1", &mut self.conv1, &mut self.bn1), ("2", &mut self.conv2, &mut self.bn2)]
    }
}

/// How batch normalization behaves during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NormMode {
    Batch,
    Running,
}

/// Intermediate tensors of one forward pass, for inspecting the graph.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Element = f32> {
    /// Output of each encoder block (the skip tensors), level 0 first.
    pub encoder: Vec<Tensor<T>>,
    pub bottleneck: Tensor<T>,
    /// Up-convolution output feeding decoder level `i`.
    pub upsampled: Vec<Tensor<T>>,
    /// Concatenation of `upsampled[i]` and `encoder[i]`.
    pub concat: Vec<Tensor<T>>,
    /// Output of each decoder block, indexed by level.
    pub decoder: Vec<Tensor<T>>,
    pub output: Tensor<T>,
}

/// U-Net with a configurable number of pooling levels.
#[derive(Debug, Clone)]
pub struct Unet<T: Element = f32> {
    config: ModelConfig,
    pub encoders: Vec<ConvBlock<T>>,
    pub bottleneck: ConvBlock<T>,
    /// Up-convolutions indexed by the decoder level they feed.
    pub upconvs: Vec<Conv2dParams<T>>,
    /// Decoder blocks indexed by level.
    pub decoders: Vec<ConvBlock<T>>,
    pub head: Conv2dParams<T>,
}

impl<T: Element> Unet<T> {
    /// Builds a freshly initialized network.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.depth;
        let mut encoders = Vec::with_capacity(d);
        for level in 0..d {
            let cin = if level == 0 {
                config.in_channels
            } else {
                config.level_channels(level - 1)
            };
            encoders.push(ConvBlock::init(cin, config.level_channels(level), &config, rng)?);
        }
        let bottleneck = ConvBlock::init(config.level_channels(d - 1), config.level_channels(d), &config, rng)?;
        let mut upconvs = Vec::with_capacity(d);
        let mut decoders = Vec::with_capacity(d);
        for level in 0..d {
            let c = config.level_channels(level);
            upconvs.push(Conv2dParams::init_transposed(config.level_channels(level + 1), c, 2, 2, rng));
            decoders.push(ConvBlock::init(2 * c, c, &config, rng)?);
        }
        let head = Conv2dParams::init(config.base_channels, config.out_channels, 1, 1, 0, rng);
        Ok(Self {
            config,
            encoders,
            bottleneck,
            upconvs,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn depth(&self) -> usize {
        self.config.depth
    }

    /// Trainable tensors with unique dotted names, in a fixed order.
    pub fn parameters(&self) -> Vec<(String, Tensor<T>)> {
        self.collect(false)
    }

    /// Trainable tensors plus batch-norm running statistics.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        self.collect(true)
    }

    fn collect(&self, buffers: bool) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.encoders.iter().enumerate() {
            b.tensors(&format!("enc{i}"), &mut out, buffers);
        }
        self.bottleneck.tensors("bottleneck", &mut out, buffers);
        for (i, (u, b)) in self.upconvs.iter().zip(&self.decoders).enumerate() {
            out.push((format!("up{i}.weight"), u.weight.clone()));
            out.push((format!("up{i}.bias"), u.bias.clone()));
            b.tensors(&format!("dec{i}"), &mut out, buffers);
        }
        out.push(("head.weight".into(), self.head.weight.clone()));
        out.push(("head.bias".into(), self.head.bias.clone()));
        out
    }

    /// Mutable handles to the trainable tensors, in [`Unet::parameters`] order.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in self.encoders.iter_mut() {
            b.params_mut(&mut out);
        }
        self.bottleneck.params_mut(&mut out);
        for (u, b) in self.upconvs.iter_mut().zip(self.decoders.iter_mut()) {
            out.push(&mut u.weight);
            out.push(&mut u.bias);
            b.params_mut(&mut out);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// A copy whose parameters do not record gradients, for cheap inference.
    pub fn detached(&self) -> Self {
        let mut copy = self.clone();
        for p in copy.parameters_mut() {
            *p = p.detach();
        }
        copy
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces every named tensor. The map must hold exactly the names of
    /// [`Unet::named_tensors`] with matching shapes.
    pub fn load_named(&mut self, mut tensors: HashMap<String, Tensor<T>>) -> Result<()> {
        let mut take = |name: String, shape: &[usize]| -> Result<Tensor<T>> {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::contract(format!("missing tensor `{name}`")))?;
            if t.shape() != shape {
                return Err(Error::shape(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(Tensor::from_vec(shape, t.to_vec())?.into_param())
        };
        let mut load_block = |prefix: String, block: &mut ConvBlock<T>| -> Result<()> {
            for (tag, conv, bn) in block.convs_mut() {
                conv.weight = take(format!("{prefix}.conv{tag}.weight"), &conv.weight.shape().to_vec())?;
                conv.bias = take(format!("{prefix}.conv{tag}.bias"), &conv.bias.shape().to_vec())?;
                bn.scale = take(format!("{prefix}.bn{tag}.scale"), &bn.scale.shape().to_vec())?;
                bn.shift = take(format!("{prefix}.bn{tag}.shift"), &bn.shift.shape().to_vec())?;
                let c = [bn.channels()];
                bn.running_mean = take(format!("{prefix}.bn{tag}.running_mean"), &c)?.to_vec();
                bn.running_var = take(format!("{prefix}.bn{tag}.running_var"), &c)?.to_vec();
            }
            Ok(())
        };
        for (i, b) in self.encoders.iter_mut().enumerate() {
            load_block(format!("enc{i}"), b)?;
        }
        load_block("bottleneck".into(), &mut self.bottleneck)?;
        for (i, b) in self.decoders.iter_mut().enumerate() {
            load_block(format!("dec{i}"), b)?;
        }
        drop(load_block);
        for (i, u) in self.upconvs.iter_mut().enumerate() {
            u.weight = take(format!("up{i}.weight"), &u.weight.shape().to_vec())?;
            u.bias = take(format!("up{i}.bias"), &u.bias.shape().to_vec())?;
        }
        self.head.weight = take("head.weight".into(), &self.head.weight.shape().to_vec())?;
        self.head.bias = take("head.bias".into(), &self.head.bias.shape().to_vec())?;
        drop(take);
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::contract(format!("unexpected tensor `{extra}`")));
        }
        Ok(())
    }

    /// Inference forward pass: running batch-norm statistics, no
    /// regularization. Deterministic.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x, NormMode::Running, None)?.0.output)
    }

    /// Training forward pass: batch statistics and active regularization.
    /// The running statistics are updated once the pass completes.
    pub fn forward_train(&mut self, x: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
        let (trace, stats) = self.run(x, NormMode::Batch, Some(rng))?;
        self.apply_batch_stats(&stats)?;
        Ok(trace.output)
    }

    /// Forward pass with the given mode that leaves the model untouched
    /// and returns every intermediate of interest. In train mode the
    /// regularizer draws from `rng` when one is given and is skipped
    /// otherwise.
    pub fn forward_traced(&self, x: &Tensor<T>, mode: Mode, rng: Option<&mut Rng>) -> Result<ForwardTrace<T>> {
        let norm = match mode {
            Mode::Train => NormMode::Batch,
            Mode::Eval => NormMode::Running,
        };
        Ok(self.run(x, norm, rng.filter(|_| mode == Mode::Train))?.0)
    }

    /// Folds one pass's batch statistics into the running averages, in the
    /// order the pass produced them.
    fn apply_batch_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        let mut bns: Vec<&mut BatchNormParams<T>> = Vec::new();
        for b in self.encoders.iter_mut() {
            bns.extend(b.batchnorms_mut());
        }
        bns.extend(self.bottleneck.batchnorms_mut());
        for b in self.decoders.iter_mut().rev() {
            bns.extend(b.batchnorms_mut());
        }
        if bns.len() != stats.len() {
            return Err(Error::contract("batch statistics do not match the network"));
        }
        for (bn, s) in bns.into_iter().zip(stats) {
            bn.update_running(s);
        }
        Ok(())
    }

    fn run(
        &self,
        x: &Tensor<T>,
        norm: NormMode,
        mut rng: Option<&mut Rng>,
    ) -> Result<(ForwardTrace<T>, Vec<BatchStats>)> {
        let (_, c, h, w) = x.dims4("unet input")?;
        if c != self.config.in_channels {
            return Err(Error::shape(format!(
                "input has {c} channels, model expects {}",
                self.config.in_channels
            )));
        }
        let (ph, pw) = self.config.padded_extents(h, w);
        let mut stats = Vec::new();
        let mut cur = if (ph, pw) == (h, w) {
            x.clone()
        } else {
            pad_reflect(x, ph, pw)?
        };
        let mut encoder = Vec::with_capacity(self.depth());
        for block in &self.encoders {
            let out = self.block(block, &cur, norm, rng.as_deref_mut(), &mut stats)?;
            cur = maxpool2d(&out, 2)?;
            encoder.push(out);
        }
        let bottleneck = self.block(&self.bottleneck, &cur, norm, rng.as_deref_mut(), &mut stats)?;
        cur = bottleneck.clone();
        let d = self.depth();
        let mut upsampled = vec![None; d];
        let mut concat = vec![None; d];
        let mut decoder = vec![None; d];
        for level in (0..d).rev() {
            let up = upconv2d(&cur, &self.upconvs[level])?;
            let cat = concat_channels(&up, &encoder[level])?;
            cur = self.block(&self.decoders[level], &cat, norm, rng.as_deref_mut(), &mut stats)?;
            upsampled[level] = Some(up);
            concat[level] = Some(cat);
            decoder[level] = Some(cur.clone());
        }
        let mut out = conv2d(&cur, &self.head)?.sigmoid();
        if (ph, pw) != (h, w) {
            out = crop(&out, h, w)?;
        }
        let unwrap = |v: Vec<Option<Tensor<T>>>| v.into_iter().map(|t| t.expect("every level visited")).collect();
        Ok((
            ForwardTrace {
                encoder,
                bottleneck,
                upsampled: unwrap(upsampled),
                concat: unwrap(concat),
                decoder: unwrap(decoder),
                output: out,
            },
            stats,
        ))
    }

    fn block(
        &self,
        block: &ConvBlock<T>,
        x: &Tensor<T>,
        norm: NormMode,
        rng: Option<&mut Rng>,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for (conv, bn) in [(&block.conv1, &block.bn1), (&block.conv2, &block.bn2)] {
            let z = conv2d(&cur, conv)?;
            let z = match norm {
                NormMode::Batch => {
                    let (y, s) = batchnorm_train(&z, bn)?;
                    stats.push(s);
                    y
                }
                NormMode::Running => batchnorm_eval(&z, bn)?,
            };
            cur = z.relu();
        }
        match (rng, self.config.regularizer) {
            (Some(rng), Regularizer::Dropout(rate)) => dropout(&cur, rate, rng, Mode::Train),
            (Some(rng), Regularizer::Noise(std)) => gaussian_noise(&cur, std, rng, Mode::Train),
            _ => Ok(cur),
        }
    }
}
