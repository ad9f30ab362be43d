use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{KeyValues, KvWriter};
use crate::loss::{LossKind, LossSpec};

/// Regularization inserted after every block in train mode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Regularizer {
    #[default]
    None,
    Dropout(f64),
    Noise(f64),
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::None => Ok(()),
            Regularizer::Dropout(r) if (0.0..1.0).contains(&r) => Ok(()),
            Regularizer::Noise(s) if s >= 0.0 && s.is_finite() => Ok(()),
            other => Err(Error::parameter(format!("invalid regularizer {other}"))),
        }
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularizer::None => write!(f, "none"),
            Regularizer::Dropout(r) => write!(f, "dropout {r}"),
            Regularizer::Noise(s) => write!(f, "noise {s}"),
        }
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    /// Accepts `none`, `dropout 0.1` or `noise 0.2` (a `:` also separates).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(Regularizer::None);
        }
        let (kind, value) = s
            .split_once([' ', ':'])
            .ok_or_else(|| Error::parameter(format!("cannot parse regularizer `{s}`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::parameter(format!("cannot parse regularizer value in `{s}`")))?;
        let r = match kind.to_ascii_lowercase().as_str() {
            "dropout" => Regularizer::Dropout(value),
            "noise" => Regularizer::Noise(value),
            _ => return Err(Error::parameter(format!("unknown regularizer `{kind}`"))),
        };
        r.validate()?;
        Ok(r)
    }
}

/// Architecture and loss of a U-Net.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of pooling levels.
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub regularizer: Regularizer,
    pub loss: LossSpec,
    pub input_height: usize,
    pub input_width: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 16,
            in_channels: 3,
            out_channels: 1,
            regularizer: Regularizer::None,
            loss: LossSpec::new(LossKind::Tversky),
            input_height: 64,
            input_width: 64,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
        }
    }
}

/// Smallest multiple of `m` that is at least `n`.
pub fn next_multiple(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::parameter("depth must be >= 2"));
        }
        if self.depth > 12 {
            return Err(Error::parameter("depth must be <= 12"));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::parameter("channel counts must be >= 1"));
        }
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Error::parameter("input extents must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::parameter("bn_momentum must lie in [0, 1]"));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::parameter("bn_epsilon must be > 0"));
        }
        self.regularizer.validate()?;
        self.loss.validate()
    }

    /// Channels produced by encoder level `level`.
    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial extents the network runs at, after reflect padding.
    pub fn padded_extents(&self, height: usize, width: usize) -> (usize, usize) {
        let m = 1usize << self.depth;
        (next_multiple(height, m), next_multiple(width, m))
    }

    pub fn write_kv(&self, w: &mut KvWriter) {
        w.put("depth", self.depth)
            .put("base_channels", self.base_channels)
            .put("in_channels", self.in_channels)
            .put("out_channels", self.out_channels)
            .put("regularizer", self.regularizer)
            .put("loss", self.loss.kind)
            .put("tversky_alpha", self.loss.alpha)
            .put("tversky_beta", self.loss.beta)
            .put("focal_gamma", self.loss.gamma)
            .put("smooth_eps", self.loss.smooth_eps)
            .put("input_height", self.input_height)
            .put("input_width", self.input_width)
            .put("bn_momentum", self.bn_momentum)
            .put("bn_epsilon", self.bn_epsilon);
    }

    /// Reads the keys written by `write_kv`, falling back to defaults for
    /// absent ones.
    pub fn read_kv(kv: &mut KeyValues, base: ModelConfig) -> Result<Self> {
        let mut c = base;
        if let Some(v) = kv.take_parsed("depth")? {
            c.depth = v;
        }
        if let Some(v) = kv.take_parsed("base_channels")? {
            c.base_channels = v;
        }
        if let Some(v) = kv.take_parsed("in_channels")? {
            c.in_channels = v;
        }
        if let Some(v) = kv.take_parsed("out_channels")? {
            c.out_channels = v;
        }
        if let Some(v) = kv.take_parsed("regularizer")? {
            c.regularizer = v;
        }
        if let Some(v) = kv.take_parsed::<LossKind>("loss")? {
            c.loss.kind = v;
        }
        if let Some(v) = kv.take_parsed("tversky_alpha")? {
            c.loss.alpha = v;
        }
        if let Some(v) = kv.take_parsed("tversky_beta")? {
            c.loss.beta = v;
        }
        if let Some(v) = kv.take_parsed("focal_gamma")? {
            c.loss.gamma = v;
        }
        if let Some(v) = kv.take_parsed("smooth_eps")? {
            c.loss.smooth_eps = v;
        }
        if let Some(v) = kv.take_parsed("input_height")? {
            c.input_height = v;
        }
        if let Some(v) = kv.take_parsed("input_width")? {
            c.input_width = v;
        }
        if let Some(v) = kv.take_parsed("bn_momentum")? {
            c.bn_momentum = v;
        }
        if let Some(v) = kv.take_parsed("bn_epsilon")? {
            c.bn_epsilon = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Published accuracy and overlap scores of a preset's reference model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceScores {
    pub accuracy: f64,
    pub loss_score: f64,
    pub dice: f64,
    pub tversky: f64,
}

/// Reference GPU timings of a preset's model, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceTiming {
    pub training: f64,
    pub single_run: f64,
    pub month_of_runs: f64,
}

/// The four published model configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    IbtracsGfs,
    HeuristicGfs,
    IbtracsGoes,
    HeuristicGoes,
}

/// Every value a preset carries.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetValues {
    pub name: &'static str,
    pub input_width: usize,
    pub input_height: usize,
    pub training_size: usize,
    pub validation_size: usize,
    pub batch_size: usize,
    pub roi_box: usize,
    pub regularizer: Regularizer,
    pub loss: LossKind,
    pub depth: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub wind_min: Option<f64>,
    pub scores: ReferenceScores,
    pub timing: ReferenceTiming,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::IbtracsGfs,
        Preset::HeuristicGfs,
        Preset::IbtracsGoes,
        Preset::HeuristicGoes,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::IbtracsGfs => "ibtracs-gfs",
            Preset::HeuristicGfs => "heuristic-gfs",
            Preset::IbtracsGoes => "ibtracs-goes",
            Preset::HeuristicGoes => "heuristic-goes",
        }
    }

    pub fn values(&self) -> PresetValues {
        match self {
            Preset::IbtracsGfs => PresetValues {
                name: self.name(),
                input_width: 720,
                input_height: 361,
                training_size: 8622,
                validation_size: 3020,
                batch_size: 256,
                roi_box: 25,
                regularizer: Regularizer::Noise(0.2),
                loss: LossKind::Focal,
                depth: 6,
                epochs: 37,
                learning_rate: 8e-5,
                wind_min: Some(34.0),
                scores: ReferenceScores {
                    accuracy: 0.991,
                    loss_score: 0.237,
                    dice: 0.763,
                    tversky: 0.750,
                },
                timing: ReferenceTiming {
                    training: 2130.0,
                    single_run: 0.03,
                    month_of_runs: 8.16,
                },
            },
            Preset::HeuristicGfs => PresetValues {
                name: self.name(),
                input_width: 720,
                input_height: 361,
                training_size: 15574,
                validation_size: 2902,
                batch_size: 1520,
                roi_box: 30,
                regularizer: Regularizer::Dropout(0.1),
                loss: LossKind::Dice,
                depth: 5,
                epochs: 200,
                learning_rate: 1e-5,
                wind_min: None,
                scores: ReferenceScores {
                    accuracy: 0.807,
                    loss_score: 0.351,
                    dice: 0.58,
                    tversky: 0.649,
                },
                timing: ReferenceTiming {
                    training: 2200.0,
                    single_run: 0.03,
                    month_of_runs: 6.48,
                },
            },
            Preset::IbtracsGoes => PresetValues {
                name: self.name(),
                input_width: 1024,
                input_height: 512,
                training_size: 5638,
                validation_size: 2214,
                batch_size: 128,
                roi_box: 25,
                regularizer: Regularizer::Dropout(0.2),
                loss: LossKind::Bce,
                depth: 5,
                epochs: 70,
                learning_rate: 1e-4,
                wind_min: Some(34.0),
                scores: ReferenceScores {
                    accuracy: 0.996,
                    loss_score: 0.311,
                    dice: 0.689,
                    tversky: 0.680,
                },
                timing: ReferenceTiming {
                    training: 3540.0,
                    single_run: 0.15,
                    month_of_runs: 36.0,
                },
            },
            Preset::HeuristicGoes => PresetValues {
                name: self.name(),
                input_width: 1024,
                input_height: 512,
                training_size: 25288,
                validation_size: 2735,
                batch_size: 720,
                roi_box: 60,
                regularizer: Regularizer::Dropout(0.1),
                loss: LossKind::Tversky,
                depth: 4,
                epochs: 150,
                learning_rate: 1e-5,
                wind_min: None,
                scores: ReferenceScores {
                    accuracy: 0.901,
                    loss_score: 0.442,
                    dice: 0.511,
                    tversky: 0.558,
                },
                timing: ReferenceTiming {
                    training: 4650.0,
                    single_run: 0.06,
                    month_of_runs: 14.4,
                },
            },
        }
    }

    /// Model configuration for this preset with the given width.
    pub fn model_config(&self, base_channels: usize) -> ModelConfig {
        let v = self.values();
        ModelConfig {
            depth: v.depth,
            base_channels,
            regularizer: v.regularizer,
            loss: LossSpec::new(v.loss),
            input_height: v.input_height,
            input_width: v.input_width,
            ..ModelConfig::default()
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(Preset::name).collect();
                Error::parameter(format!("unknown preset `{s}` (expected one of {})", names.join(", ")))
            })
    }
}
