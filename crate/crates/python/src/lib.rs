//! Python bindings for the stormseg engine.
//!
//! Arrays cross the boundary as flat lists plus a shape, so the module has no
//! dependency on NumPy. Autodiff tensors are double precision; models run in
//! single precision and convert at the edges.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stormseg::data::{
    parse_timestamp, rasterize_labels as rasterize, synth_dataset, CycloneRecord, GridFrame, GridSpec as CoreSpec,
    Mask, Sample as CoreSample, SynthParams,
};
use stormseg::kv::KeyValues;
use stormseg::loss::{self, LossSpec, PixelPrediction};
use stormseg::nn::{self, Conv2dParams};
use stormseg::roi::{self, Inference};
use stormseg::train::{self, EpochControl, TrainConfig};
use stormseg::unet::{self, ModelConfig, OptimizerSettings, Preset};
use stormseg::{Error, Rng};

type CoreTensor = stormseg::Tensor<f64>;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Double-precision tensor with reverse-mode gradients.
#[pyclass(name = "Tensor", module = "stormseg_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Tensor {
    inner: CoreTensor,
}

impl From<CoreTensor> for Tensor {
    fn from(inner: CoreTensor) -> Self {
        Self { inner }
    }
}

fn axes_or_all(t: &CoreTensor, axes: Option<Vec<usize>>) -> Vec<usize> {
    axes.unwrap_or_else(|| (0..t.rank()).collect())
}

#[pymethods]
impl Tensor {
    #[new]
    #[pyo3(signature = (data, shape, requires_grad = false))]
    fn new(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> PyResult<Self> {
        let t = CoreTensor::from_vec(&shape, data).map_err(err)?;
        Ok(if requires_grad { t.into_param() } else { t }.into())
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn requires_grad(&self) -> bool {
        self.inner.requires_grad()
    }

    /// Name of the operation that produced this tensor, `None` for leaves.
    #[getter]
    fn op(&self) -> Option<&'static str> {
        self.inner.op_name()
    }

    fn tolist(&self) -> Vec<f64> {
        self.inner.to_vec()
    }

    fn item(&self) -> PyResult<f64> {
        self.inner.item().map_err(err)
    }

    /// Accumulated gradient as a flat list, if one has been computed.
    fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad()
    }

    fn zero_grad(&self) {
        self.inner.zero_grad();
    }

    fn backward(&self) -> PyResult<()> {
        self.inner.backward().map_err(err)
    }

    fn detach(&self) -> Self {
        self.inner.detach().into()
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        Ok(self.inner.reshape(&shape).map_err(err)?.into())
    }

    fn __add__(&self, other: PyRef<'_, Tensor>) -> PyResult<Self> {
        Ok(self.inner.add(&other.inner).map_err(err)?.into())
    }

    fn __sub__(&self, other: PyRef<'_, Tensor>) -> PyResult<Self> {
        Ok(self.inner.sub(&other.inner).map_err(err)?.into())
    }

    fn __mul__(&self, other: PyRef<'_, Tensor>) -> PyResult<Self> {
        Ok(self.inner.mul(&other.inner).map_err(err)?.into())
    }

    fn __truediv__(&self, other: PyRef<'_, Tensor>) -> PyResult<Self> {
        Ok(self.inner.div(&other.inner).map_err(err)?.into())
    }

    fn __neg__(&self) -> Self {
        self.inner.neg().into()
    }

    fn scale(&self, s: f64) -> Self {
        self.inner.mul_scalar(s).into()
    }

    fn exp(&self) -> Self {
        self.inner.exp().into()
    }

    fn log(&self) -> PyResult<Self> {
        Ok(self.inner.try_log().map_err(err)?.into())
    }

    fn relu(&self) -> Self {
        self.inner.relu().into()
    }

    fn sigmoid(&self) -> Self {
        self.inner.sigmoid().into()
    }

    #[pyo3(signature = (axes = None))]
    fn sum(&self, axes: Option<Vec<usize>>) -> PyResult<Self> {
        Ok(self.inner.sum(&axes_or_all(&self.inner, axes)).map_err(err)?.into())
    }

    #[pyo3(signature = (axes = None))]
    fn mean(&self, axes: Option<Vec<usize>>) -> PyResult<Self> {
        Ok(self.inner.mean(&axes_or_all(&self.inner, axes)).map_err(err)?.into())
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?}, requires_grad={})", self.inner.shape(), self.inner.requires_grad())
    }
}

#[pyfunction]
#[pyo3(signature = (x, weight, bias, stride = 1, padding = 0))]
fn conv2d(x: PyRef<'_, Tensor>, weight: PyRef<'_, Tensor>, bias: PyRef<'_, Tensor>, stride: usize, padding: usize) -> PyResult<Tensor> {
    let p = Conv2dParams::new(weight.inner.clone(), bias.inner.clone(), stride, padding).map_err(err)?;
    Ok(nn::conv2d(&x.inner, &p).map_err(err)?.into())
}

/// Transposed convolution; `weight` is `[in, out, kh, kw]`.
#[pyfunction]
#[pyo3(signature = (x, weight, bias, stride = 2, padding = 0))]
fn upconv2d(x: PyRef<'_, Tensor>, weight: PyRef<'_, Tensor>, bias: PyRef<'_, Tensor>, stride: usize, padding: usize) -> PyResult<Tensor> {
    let p = Conv2dParams::new(weight.inner.clone(), bias.inner.clone(), stride, padding).map_err(err)?;
    Ok(nn::upconv2d(&x.inner, &p).map_err(err)?.into())
}

#[pyfunction]
#[pyo3(signature = (x, window = 2))]
fn maxpool2d(x: PyRef<'_, Tensor>, window: usize) -> PyResult<Tensor> {
    Ok(nn::maxpool2d(&x.inner, window).map_err(err)?.into())
}

#[pyfunction]
fn concat_channels(a: PyRef<'_, Tensor>, b: PyRef<'_, Tensor>) -> PyResult<Tensor> {
    Ok(nn::concat_channels(&a.inner, &b.inner).map_err(err)?.into())
}

fn prediction<'a>(p: &'a Tensor, y: &'a Tensor) -> PyResult<PixelPrediction<'a, f64>> {
    PixelPrediction::new(&p.inner, &y.inner).map_err(err)
}

#[pyfunction]
fn bce_loss(p: PyRef<'_, Tensor>, y: PyRef<'_, Tensor>) -> PyResult<Tensor> {
    Ok(loss::bce_loss(&prediction(&p, &y)?).map_err(err)?.into())
}

#[pyfunction]
#[pyo3(signature = (p, y, gamma = loss::DEFAULT_GAMMA))]
fn focal_loss(p: PyRef<'_, Tensor>, y: PyRef<'_, Tensor>, gamma: f64) -> PyResult<Tensor> {
    Ok(loss::focal_loss(&prediction(&p, &y)?, gamma).map_err(err)?.into())
}

#[pyfunction]
#[pyo3(signature = (p, y, smooth_eps = loss::DEFAULT_SMOOTH))]
fn dice_coefficient(p: PyRef<'_, Tensor>, y: PyRef<'_, Tensor>, smooth_eps: f64) -> PyResult<Tensor> {
    Ok(loss::dice_coefficient(&prediction(&p, &y)?, smooth_eps).map_err(err)?.into())
}

#[pyfunction]
#[pyo3(signature = (p, y, alpha = loss::DEFAULT_ALPHA, beta = loss::DEFAULT_BETA, smooth_eps = loss::DEFAULT_SMOOTH))]
fn tversky_coefficient(p: PyRef<'_, Tensor>, y: PyRef<'_, Tensor>, alpha: f64, beta: f64, smooth_eps: f64) -> PyResult<Tensor> {
    Ok(loss::tversky_coefficient(&prediction(&p, &y)?, alpha, beta, smooth_eps)
        .map_err(err)?
        .into())
}

#[pyfunction]
#[pyo3(signature = (p, y, alpha = loss::DEFAULT_ALPHA, beta = loss::DEFAULT_BETA, smooth_eps = loss::DEFAULT_SMOOTH))]
fn tversky_loss(p: PyRef<'_, Tensor>, y: PyRef<'_, Tensor>, alpha: f64, beta: f64, smooth_eps: f64) -> PyResult<Tensor> {
    Ok(loss::tversky_loss(&prediction(&p, &y)?, alpha, beta, smooth_eps)
        .map_err(err)?
        .into())
}

#[pyfunction]
#[pyo3(signature = (p, y, threshold = 0.5))]
fn pixel_accuracy(p: PyRef<'_, Tensor>, y: PyRef<'_, Tensor>, threshold: f64) -> PyResult<f64> {
    Ok(loss::pixel_accuracy(&prediction(&p, &y)?, threshold))
}

/// Regular latitude/longitude raster geometry.
#[pyclass(name = "GridSpec", module = "stormseg_py", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
pub struct GridSpec {
    inner: CoreSpec,
}

#[pymethods]
impl GridSpec {
    #[new]
    #[pyo3(signature = (width, height, lat0, lon0, dlat, dlon, cyclic_longitude = false))]
    fn new(width: usize, height: usize, lat0: f64, lon0: f64, dlat: f64, dlon: f64, cyclic_longitude: bool) -> PyResult<Self> {
        let inner = CoreSpec {
            cyclic_longitude,
            ..CoreSpec::regional(width, height, lat0, lon0, dlat, dlon)
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    /// The global half-degree 720 x 361 grid.
    #[staticmethod]
    fn gfs() -> Self {
        Self { inner: CoreSpec::gfs() }
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn cyclic_longitude(&self) -> bool {
        self.inner.cyclic_longitude
    }

    fn latlon_to_pixel(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        self.inner.latlon_to_pixel(lat, lon)
    }

    fn pixel_to_latlon(&self, row: usize, col: usize) -> (f64, f64) {
        self.inner.pixel_to_latlon(row, col)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Rasterizes `(timestamp, lat, lon, wind_kt)` records into a flat 0/1 mask.
#[pyfunction]
#[pyo3(signature = (records, spec, box_size, wind_min = None))]
fn rasterize_labels(
    records: Vec<(String, f64, f64, Option<f64>)>,
    spec: PyRef<'_, GridSpec>,
    box_size: usize,
    wind_min: Option<f64>,
) -> PyResult<Vec<u8>> {
    let recs = records
        .into_iter()
        .map(|(t, lat, lon, w)| CycloneRecord::new(parse_timestamp(&t)?, lat, lon, w))
        .collect::<stormseg::Result<Vec<_>>>()
        .map_err(err)?;
    Ok(rasterize(&recs, &spec.inner, box_size, wind_min).map_err(err)?.mask)
}

/// A stacked temporal input and its truth mask.
#[pyclass(name = "Sample", module = "stormseg_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Sample {
    inner: CoreSample,
}

#[pymethods]
impl Sample {
    #[getter]
    fn timestamp(&self) -> String {
        stormseg::data::format_timestamp(self.inner.timestamp)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.channels, self.inner.height(), self.inner.width())
    }

    #[getter]
    fn input(&self) -> Vec<f32> {
        self.inner.input.clone()
    }

    #[getter]
    fn mask(&self) -> Vec<u8> {
        self.inner.mask.clone()
    }

    fn positive_pixels(&self) -> usize {
        self.inner.positive_pixels()
    }
}

/// Synthetic samples: `years` lists `(year, count)` pairs.
#[pyfunction]
#[pyo3(signature = (seed, years, size = 128, box_size = 11))]
fn synth_samples(seed: u64, years: Vec<(i32, usize)>, size: usize, box_size: usize) -> PyResult<Vec<Sample>> {
    let spec = CoreSpec::regional(size, size, 40.0, 120.0, -0.5, 0.5);
    let scenes = synth_dataset(&mut Rng::new(seed), &spec, &years, &SynthParams::default()).map_err(err)?;
    scenes
        .iter()
        .map(|s| s.to_sample(box_size, None).map(|inner| Sample { inner }))
        .collect::<stormseg::Result<Vec<_>>>()
        .map_err(err)
}

fn model_config(text: &str, preset: Option<&str>) -> PyResult<ModelConfig> {
    let base = match preset {
        Some(name) => name.parse::<Preset>().map_err(err)?.model_config(ModelConfig::default().base_channels),
        None => ModelConfig::default(),
    };
    let mut kv = KeyValues::parse(text).map_err(err)?;
    let cfg = ModelConfig::read_kv(&mut kv, base).map_err(err)?;
    kv.finish().map_err(err)?;
    Ok(cfg)
}

/// U-Net segmentation model.
#[pyclass(name = "Unet", module = "stormseg_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Unet {
    inner: unet::Unet<f32>,
}

#[pymethods]
impl Unet {
    /// Builds a freshly initialized model from `key = value` text, optionally
    /// starting from a named preset.
    #[new]
    #[pyo3(signature = (config = "", seed = 0, preset = None))]
    fn new(config: &str, seed: u64, preset: Option<&str>) -> PyResult<Self> {
        let cfg = model_config(config, preset)?;
        Ok(Self {
            inner: unet::Unet::new(cfg, &mut Rng::new(seed)).map_err(err)?,
        })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.inner.parameters().into_iter().map(|(n, _)| n).collect()
    }

    /// Eval-mode probabilities for an `[N, C, H, W]` input.
    fn forward(&self, x: PyRef<'_, Tensor>) -> PyResult<Tensor> {
        let out = self.inner.detached().forward_eval(&x.inner.cast::<f32>()).map_err(err)?;
        Ok(out.cast::<f64>().into())
    }
}

/// Trained weights plus normalization and run metadata.
#[pyclass(name = "Checkpoint", module = "stormseg_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Checkpoint {
    inner: unet::Checkpoint<f32>,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: unet::Checkpoint::load(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: unet::Checkpoint::from_bytes(&data).map_err(err)?,
        })
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn model(&self) -> Unet {
        Unet {
            inner: self.inner.model.clone(),
        }
    }

    fn config_text(&self) -> String {
        self.inner.config_text()
    }

    /// Probability map for a raw flat `C x H x W` input on `spec`.
    fn predict(&self, spec: PyRef<'_, GridSpec>, input: Vec<f32>) -> PyResult<Vec<f32>> {
        Inference::new(&self.inner).predict_raw(&spec.inner, &input).map_err(err)
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &loss::MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("dice", m.dice_coefficient)?;
    d.set_item("tversky", m.tversky_coefficient)?;
    d.set_item("loss", m.loss_value)?;
    d.set_item("hard_dice", m.hard_dice)?;
    d.set_item("hard_tversky", m.hard_tversky)?;
    d.set_item("pixels", m.pixels)?;
    Ok(d)
}

fn unwrap_samples(samples: Vec<PyRef<'_, Sample>>) -> Vec<CoreSample> {
    samples.iter().map(|s| s.inner.clone()).collect()
}

/// Trains a model and returns the best checkpoint with the per-epoch
/// `(train_loss, val_loss, val_dice)` history.
#[pyfunction]
#[pyo3(signature = (train_samples, val_samples, config = "", preset = None, batch_size = 8, max_epochs = 10, patience = 10, learning_rate = 1e-3, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    py: Python<'_>,
    train_samples: Vec<PyRef<'_, Sample>>,
    val_samples: Vec<PyRef<'_, Sample>>,
    config: &str,
    preset: Option<&str>,
    batch_size: usize,
    max_epochs: usize,
    patience: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<(Checkpoint, Vec<(f64, f64, f64)>)> {
    let mut model = model_config(config, preset)?;
    let tr = unwrap_samples(train_samples);
    let va = unwrap_samples(val_samples);
    if let Some(first) = tr.first() {
        model.input_height = first.height();
        model.input_width = first.width();
    }
    let cfg = TrainConfig {
        batch_size,
        max_epochs,
        patience,
        seed,
        optimizer: OptimizerSettings {
            learning_rate,
            ..OptimizerSettings::default()
        },
        ..TrainConfig::default()
    };
    let outcome = py
        .detach(|| train::train_with_hook(&cfg, model, &tr, &va, |_| EpochControl::Continue))
        .map_err(err)?;
    let history = outcome
        .history
        .epochs
        .iter()
        .map(|r| (r.train_loss, r.val_loss, r.val_dice))
        .collect();
    Ok((Checkpoint { inner: outcome.checkpoint }, history))
}

/// Metrics of a checkpoint over raw samples, as a dict.
#[pyfunction]
#[pyo3(signature = (checkpoint, samples, batch_size = 8, threshold = 0.5))]
fn evaluate<'py>(
    py: Python<'py>,
    checkpoint: PyRef<'_, Checkpoint>,
    samples: Vec<PyRef<'_, Sample>>,
    batch_size: usize,
    threshold: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let s = unwrap_samples(samples);
    let m = train::evaluate_checkpoint(&checkpoint.inner, &s, batch_size, threshold).map_err(err)?;
    metrics_dict(py, &m)
}

/// Loss of a preset-free specification, handy for checking identities.
#[pyfunction]
#[pyo3(signature = (kind, p, y))]
fn loss_value(kind: &str, p: PyRef<'_, Tensor>, y: PyRef<'_, Tensor>) -> PyResult<f64> {
    let spec = LossSpec::new(kind.parse().map_err(err)?);
    spec.loss(&prediction(&p, &y)?).map_err(err)?.item().map_err(err)
}

/// Thresholds a flat probability map and returns its ROIs as dicts, most
/// confident first.
#[pyfunction]
#[pyo3(signature = (prob, spec, tau = roi::DEFAULT_TAU, min_area = roi::DEFAULT_MIN_AREA))]
fn extract_rois<'py>(
    py: Python<'py>,
    prob: Vec<f32>,
    spec: PyRef<'_, GridSpec>,
    tau: f64,
    min_area: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let t = chrono::DateTime::<chrono::Utc>::UNIX_EPOCH;
    let frame = GridFrame::new(spec.inner, t, prob).map_err(err)?;
    let mask: Mask = roi::threshold_mask(&frame, tau).map_err(err)?;
    let rois = roi::extract_rois(&mask, &frame, min_area).map_err(err)?;
    rois.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("row_min", r.row_min)?;
            d.set_item("row_max", r.row_max)?;
            d.set_item("col_min", r.col_min)?;
            d.set_item("col_max", r.col_max)?;
            d.set_item("lat_min", r.lat_min)?;
            d.set_item("lat_max", r.lat_max)?;
            d.set_item("lon_min", r.lon_min)?;
            d.set_item("lon_max", r.lon_max)?;
            d.set_item("confidence", r.confidence)?;
            d.set_item("area_pixels", r.area_pixels)?;
            Ok(d)
        })
        .collect()
}

/// Flat 0/1 mask of `prob >= tau`.
#[pyfunction]
#[pyo3(signature = (prob, spec, tau = roi::DEFAULT_TAU))]
fn threshold_mask(prob: Vec<f32>, spec: PyRef<'_, GridSpec>, tau: f64) -> PyResult<Vec<u8>> {
    let frame = GridFrame::new(spec.inner, chrono::DateTime::<chrono::Utc>::UNIX_EPOCH, prob).map_err(err)?;
    Ok(roi::threshold_mask(&frame, tau).map_err(err)?.values)
}

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    Preset::ALL.iter().map(Preset::name).collect()
}

#[pymodule]
fn stormseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tensor>()?;
    m.add_class::<GridSpec>()?;
    m.add_class::<Sample>()?;
    m.add_class::<Unet>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(upconv2d, m)?)?;
    m.add_function(wrap_pyfunction!(maxpool2d, m)?)?;
    m.add_function(wrap_pyfunction!(concat_channels, m)?)?;
    m.add_function(wrap_pyfunction!(bce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(dice_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(tversky_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(tversky_loss, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(loss_value, m)?)?;
    m.add_function(wrap_pyfunction!(rasterize_labels, m)?)?;
    m.add_function(wrap_pyfunction!(synth_samples, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_mask, m)?)?;
    m.add_function(wrap_pyfunction!(extract_rois, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add("DEFAULT_TAU", roi::DEFAULT_TAU)?;
    m.add("FRAMES_PER_MONTH", roi::FRAMES_PER_MONTH)?;
    Ok(())
}
