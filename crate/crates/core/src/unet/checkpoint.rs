use std::collections::HashMap;
use std::path::Path;

use super::config::ModelConfig;
use super::model::Unet;
use crate::bytes::{read_file, write_file, ByteReader};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::kv::{KeyValues, KvWriter};
use crate::rng::Rng;
use crate::tensor::{DType, Element, Tensor};

const MAGIC: &[u8; 8] = b"UNETCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// RMSprop hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-7,
        }
    }
}

/// Headline numbers of the run that produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HistorySummary {
    pub epochs_run: usize,
    /// 1-based epoch whose weights were kept; 0 when never trained.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_train_loss: f64,
}

/// A model plus everything needed to reuse it for inference.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Element = f32> {
    pub model: Unet<T>,
    pub norm: Option<NormStats>,
    pub optimizer: OptimizerSettings,
    pub seed: u64,
    pub history: HistorySummary,
}

impl<T: Element> Checkpoint<T> {
    pub fn new(model: Unet<T>) -> Self {
        Self {
            model,
            norm: None,
            optimizer: OptimizerSettings::default(),
            seed: 0,
            history: HistorySummary::default(),
        }
    }

    /// Canonical textual header stored inside the file.
    pub fn config_text(&self) -> String {
        let mut w = KvWriter::new();
        self.model.config().write_kv(&mut w);
        if let Some(n) = &self.norm {
            w.put_list("norm_min", &n.min).put_list("norm_max", &n.max);
        }
        w.put("optimizer", "rmsprop")
            .put("learning_rate", self.optimizer.learning_rate)
            .put("rho", self.optimizer.rho)
            .put("optimizer_epsilon", self.optimizer.epsilon)
            .put("seed", self.seed)
            .put("epochs_run", self.history.epochs_run)
            .put("best_epoch", self.history.best_epoch)
            .put("best_val_loss", self.history.best_val_loss)
            .put("final_train_loss", self.history.final_train_loss);
        w.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.config_text();
        let tensors = self.model.named_tensors();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.tag());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(MAGIC)?;
        let version_at = r.offset();
        let version = r.u32("format version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                version_at,
                format!("unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"),
            ));
        }
        let len = r.u32("config length")? as usize;
        let text_at = r.offset();
        let text = std::str::from_utf8(r.take(len, "config text")?)
            .map_err(|e| Error::format(text_at, format!("config is not UTF-8: {e}")))?;
        let mut ckpt = Self::from_config_text(text).map_err(|e| match e {
            Error::Format { .. } => e,
            other => Error::format(text_at, other.to_string()),
        })?;

        let count_at = r.offset();
        let count = r.u32("tensor count")? as usize;
        let expected = ckpt.model.named_tensors().len();
        if count != expected {
            return Err(Error::format(
                count_at,
                format!("checkpoint holds {count} tensors, the model needs {expected}"),
            ));
        }
        let mut tensors = HashMap::with_capacity(count);
        for _ in 0..count {
            let at = r.offset();
            let n = r.u16("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(n, "tensor name")?)
                .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
                .to_string();
            let tag_at = r.offset();
            let tag = r.u8("dtype tag")?;
            match DType::from_tag(tag) {
                Some(d) if d == T::DTYPE => {}
                Some(d) => {
                    return Err(Error::format(
                        tag_at,
                        format!("tensor `{name}` is {d:?}, expected {:?}", T::DTYPE),
                    ))
                }
                None => return Err(Error::format(tag_at, format!("unknown dtype tag {tag}"))),
            }
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("extent")? as usize);
            }
            let size = T::DTYPE.size_of();
            let bytes = shape
                .iter()
                .try_fold(size, |acc, &d| acc.checked_mul(d))
                .unwrap_or(usize::MAX);
            let raw = r.take(bytes, "tensor values")?;
            let data: Vec<T> = raw.chunks_exact(size).map(T::read_le).collect();
            if tensors.insert(name.clone(), Tensor::from_vec(&shape, data)?).is_some() {
                return Err(Error::format(at, format!("duplicate tensor `{name}`")));
            }
        }
        r.finish()?;
        let end = r.offset();
        ckpt.model
            .load_named(tensors)
            .map_err(|e| Error::format(end, e.to_string()))?;
        Ok(ckpt)
    }

    fn from_config_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let config = ModelConfig::read_kv(&mut kv, ModelConfig::default())?;
        let norm = match (kv.take_list("norm_min")?, kv.take_list("norm_max")?) {
            (Some(min), Some(max)) => {
                let min: Vec<f64> = min;
                let max: Vec<f64> = max;
                if min.len() != max.len() {
                    return Err(Error::Config("norm_min and norm_max lengths differ".into()));
                }
                Some(NormStats { min, max })
            }
            (None, None) => None,
            _ => return Err(Error::Config("norm_min and norm_max must appear together".into())),
        };
        match kv.take("optimizer").as_deref() {
            Some("rmsprop") | None => {}
            Some(other) => return Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
        let d = OptimizerSettings::default();
        let optimizer = OptimizerSettings {
            learning_rate: kv.take_parsed("learning_rate")?.unwrap_or(d.learning_rate),
            rho: kv.take_parsed("rho")?.unwrap_or(d.rho),
            epsilon: kv.take_parsed("optimizer_epsilon")?.unwrap_or(d.epsilon),
        };
        let seed = kv.take_parsed("seed")?.unwrap_or(0);
        let history = HistorySummary {
            epochs_run: kv.take_parsed("epochs_run")?.unwrap_or(0),
            best_epoch: kv.take_parsed("best_epoch")?.unwrap_or(0),
            best_val_loss: kv.take_parsed("best_val_loss")?.unwrap_or(0.0),
            final_train_loss: kv.take_parsed("final_train_loss")?.unwrap_or(0.0),
        };
        kv.finish()?;
        let model = Unet::new(config, &mut Rng::new(0))?;
        Ok(Self {
            model,
            norm,
            optimizer,
            seed,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::Regularizer;

    fn ckpt() -> Checkpoint<f32> {
        let cfg = ModelConfig {
            depth: 2,
            base_channels: 2,
            regularizer: Regularizer::Noise(0.2),
            ..ModelConfig::default()
        };
        let mut c = Checkpoint::new(Unet::new(cfg, &mut Rng::new(3)).unwrap());
        c.norm = Some(NormStats {
            min: vec![0.0, -1.5, 2.0],
            max: vec![80.0, 1.0 / 3.0, 2.0],
        });
        c.seed = 42;
        c.history.best_val_loss = 0.1 + 0.2;
        c
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = ckpt();
        let bytes = c.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.norm, c.norm);
        assert_eq!(back.history, c.history);
        for ((na, a), (nb, b)) in c.model.named_tensors().iter().zip(back.model.named_tensors()) {
            assert_eq!(na, &nb);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(&b));
        }
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let bytes = ckpt().to_bytes();
        for cut in (0..bytes.len()).step_by(37) {
            match Checkpoint::<f32>::from_bytes(&bytes[..cut]) {
                Err(Error::Format { .. }) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn wrong_version_and_dtype_rejected() {
        let mut bytes = ckpt().to_bytes();
        bytes[8] = 2;
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::Format { offset: 8, .. })));
        let bytes = ckpt().to_bytes();
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bytes), Err(Error::Format { .. })));
    }
}
