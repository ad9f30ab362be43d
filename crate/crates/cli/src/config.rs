//! Run configuration: `key = value` files layered over presets.

use std::path::Path;

use chrono::Duration;
use stormseg::kv::{KeyValues, KvWriter};
use stormseg::train::TrainConfig;
use stormseg::unet::{ModelConfig, OptimizerSettings, Preset};
use stormseg::{Error, Result};

/// Every documented key, in the order `describe` lists them.
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "ibtracs-gfs | heuristic-gfs | ibtracs-goes | heuristic-goes"),
    ("depth", "pooling levels, >= 2"),
    ("base_channels", "channels of the first level, >= 1"),
    ("in_channels", "stacked time steps, >= 1"),
    ("regularizer", "none | dropout R | noise S"),
    ("loss", "bce | dice | tversky | focal"),
    ("tversky_alpha", "false-positive weight, >= 0"),
    ("tversky_beta", "false-negative weight, >= 0"),
    ("focal_gamma", "focusing exponent, >= 0"),
    ("smooth_eps", "overlap smoothing, > 0"),
    ("bn_momentum", "running-statistics momentum in [0, 1]"),
    ("bn_epsilon", "batch-norm epsilon, > 0"),
    ("out_channels", "output channels, 1 for binary masks"),
    ("input_height", "nominal input height in pixels"),
    ("input_width", "nominal input width in pixels"),
    ("batch_size", ">= 1"),
    ("max_epochs", ">= 1"),
    ("patience", "epochs without validation improvement, >= 1"),
    ("learning_rate", "RMSprop step size, >= 0"),
    ("rho", "RMSprop decay in [0, 1)"),
    ("optimizer_epsilon", "RMSprop epsilon, > 0"),
    ("normalize", "true | false"),
    ("seed", "unsigned integer"),
    ("threshold", "evaluation binarization threshold in (0, 1]"),
    ("box", "label box size in pixels, >= 1"),
    ("wind_min", "knots, or `none`"),
    ("cadence_hours", "hours between frames, >= 1"),
    ("tau", "ROI confidence threshold in (0, 1]"),
    ("min_area", "smallest ROI in pixels, >= 1"),
    ("train_years", "comma-separated years"),
    ("val_years", "comma-separated years"),
    ("test_years", "comma-separated years"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub box_size: usize,
    pub wind_min: Option<f64>,
    pub cadence_hours: i64,
    pub tau: f64,
    pub min_area: usize,
    pub train_years: Vec<i32>,
    pub val_years: Vec<i32>,
    pub test_years: Vec<i32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            model: ModelConfig::default(),
            train: TrainConfig {
                optimizer: OptimizerSettings {
                    learning_rate: 1e-3,
                    ..OptimizerSettings::default()
                },
                ..TrainConfig::default()
            },
            box_size: 11,
            wind_min: None,
            cadence_hours: 3,
            tau: stormseg::roi::DEFAULT_TAU,
            min_area: stormseg::roi::DEFAULT_MIN_AREA,
            train_years: Vec::new(),
            val_years: Vec::new(),
            test_years: Vec::new(),
        }
    }
}

pub fn parse_wind(v: &str) -> Result<Option<f64>> {
    if v.eq_ignore_ascii_case("none") || v.is_empty() {
        return Ok(None);
    }
    v.parse::<f64>()
        .ok()
        .filter(|w| *w >= 0.0 && w.is_finite())
        .map(Some)
        .ok_or_else(|| Error::Config(format!("invalid wind_min `{v}`")))
}

impl RunConfig {
    /// Model architecture from a preset. Desk-scale training keeps the
    /// default batch size and epoch budget; see [`PresetValues`] for the
    /// published ones.
    ///
    /// [`PresetValues`]: stormseg::unet::PresetValues
    pub fn apply_preset(&mut self, preset: Preset) {
        let v = preset.values();
        self.preset = Some(preset);
        self.model = preset.model_config(self.model.base_channels);
        self.train.optimizer.learning_rate = v.learning_rate;
        self.box_size = v.roi_box;
        self.wind_min = v.wind_min;
    }

    /// Builds a configuration from optional file text and preset name.
    /// A preset named on the command line wins over one in the file; every
    /// other key in the file overrides the preset.
    pub fn build(text: Option<&str>, preset: Option<&str>) -> Result<Self> {
        let mut kv = match text {
            Some(t) => KeyValues::parse(t)?,
            None => KeyValues::default(),
        };
        let mut cfg = RunConfig::default();
        let file_preset = kv.take("preset");
        if let Some(name) = preset.map(str::to_string).or(file_preset) {
            let p: Preset = name.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            cfg.apply_preset(p);
        }
        cfg.model = ModelConfig::read_kv(&mut kv, cfg.model.clone())?;
        let t = &mut cfg.train;
        if let Some(v) = kv.take_parsed("batch_size")? {
            t.batch_size = v;
        }
        if let Some(v) = kv.take_parsed("max_epochs")? {
            t.max_epochs = v;
        }
        if let Some(v) = kv.take_parsed("patience")? {
            t.patience = v;
        }
        if let Some(v) = kv.take_parsed("learning_rate")? {
            t.optimizer.learning_rate = v;
        }
        if let Some(v) = kv.take_parsed("rho")? {
            t.optimizer.rho = v;
        }
        if let Some(v) = kv.take_parsed("optimizer_epsilon")? {
            t.optimizer.epsilon = v;
        }
        if let Some(v) = kv.take_parsed("normalize")? {
            t.normalize = v;
        }
        if let Some(v) = kv.take_parsed("seed")? {
            t.seed = v;
        }
        if let Some(v) = kv.take_parsed("threshold")? {
            t.threshold = v;
        }
        if let Some(v) = kv.take_parsed("box")? {
            cfg.box_size = v;
        }
        if let Some(v) = kv.take("wind_min") {
            cfg.wind_min = parse_wind(&v)?;
        }
        if let Some(v) = kv.take_parsed("cadence_hours")? {
            cfg.cadence_hours = v;
        }
        if let Some(v) = kv.take_parsed("tau")? {
            cfg.tau = v;
        }
        if let Some(v) = kv.take_parsed("min_area")? {
            cfg.min_area = v;
        }
        if let Some(v) = kv.take_list("train_years")? {
            cfg.train_years = v;
        }
        if let Some(v) = kv.take_list("val_years")? {
            cfg.val_years = v;
        }
        if let Some(v) = kv.take_list("test_years")? {
            cfg.test_years = v;
        }
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, preset: Option<&str>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                Self::build(Some(&text), preset)
            }
            None => Self::build(None, preset),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Parameter(m) => Error::Config(m),
            other => other,
        };
        self.model.validate().map_err(as_config)?;
        self.train.validate().map_err(as_config)?;
        if self.box_size == 0 {
            return Err(Error::Config("box must be >= 1".into()));
        }
        if self.cadence_hours < 1 {
            return Err(Error::Config("cadence_hours must be >= 1".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("tau must lie in (0, 1]".into()));
        }
        if self.min_area == 0 {
            return Err(Error::Config("min_area must be >= 1".into()));
        }
        Ok(())
    }

    /// The effective configuration as `key = value` text that [`RunConfig::build`]
    /// reads back to an equal value.
    pub fn to_text(&self) -> String {
        let mut w = KvWriter::new();
        if let Some(p) = self.preset {
            w.put("preset", p);
        }
        let m = &self.model;
        w.put("depth", m.depth)
            .put("base_channels", m.base_channels)
            .put("in_channels", m.in_channels)
            .put("out_channels", m.out_channels)
            .put("regularizer", m.regularizer)
            .put("loss", m.loss.kind)
            .put("tversky_alpha", m.loss.alpha)
            .put("tversky_beta", m.loss.beta)
            .put("focal_gamma", m.loss.gamma)
            .put("smooth_eps", m.loss.smooth_eps)
            .put("input_height", m.input_height)
            .put("input_width", m.input_width)
            .put("bn_momentum", m.bn_momentum)
            .put("bn_epsilon", m.bn_epsilon);
        let t = &self.train;
        w.put("batch_size", t.batch_size)
            .put("max_epochs", t.max_epochs)
            .put("patience", t.patience)
            .put("learning_rate", t.optimizer.learning_rate)
            .put("rho", t.optimizer.rho)
            .put("optimizer_epsilon", t.optimizer.epsilon)
            .put("normalize", t.normalize)
            .put("seed", t.seed)
            .put("threshold", t.threshold)
            .put("box", self.box_size);
        match self.wind_min {
            Some(v) => w.put("wind_min", v),
            None => w.put("wind_min", "none"),
        };
        w.put("cadence_hours", self.cadence_hours)
            .put("tau", self.tau)
            .put("min_area", self.min_area)
            .put_list("train_years", &self.train_years)
            .put_list("val_years", &self.val_years)
            .put_list("test_years", &self.test_years);
        w.finish()
    }

    pub fn cadence(&self) -> Duration {
        Duration::hours(self.cadence_hours)
    }
}
