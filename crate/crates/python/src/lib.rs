//! Python bindings: market videos, the GAN, ARMA calibration and scoring.

use std::collections::HashMap;
use std::fs::File;
use std::sync::Arc;

use lmpgan::calibration::{self, CalibrationConfig};
use lmpgan::evaluation::{self, ScoreReport, ScoreSettings};
use lmpgan::gan::{self, GanArch, GanConfig, TrainLogRow, Trainer};
use lmpgan::market_data::{self, FeatureStats, GridLayout, MarketVideo};
use lmpgan::nn::Checkpoint;
use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(lmpgan_py, DivergenceError, PyRuntimeError);

fn to_py(e: lmpgan::Error) -> PyErr {
    match e {
        lmpgan::Error::Io(io) => PyIOError::new_err(io.to_string()),
        e if e.is_numeric() => DivergenceError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for lmpgan::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn layout(rows: usize, cols: usize, zones: Option<Vec<String>>) -> PyResult<Arc<GridLayout>> {
    let l = match zones {
        Some(z) => GridLayout::new(rows, cols, z),
        None => GridLayout::numbered(rows, cols),
    };
    Ok(Arc::new(l.py()?))
}

/// Hourly sequence of market frames on a zone grid.
#[pyclass(name = "MarketVideo", module = "lmpgan_py")]
struct PyMarketVideo {
    inner: MarketVideo,
}

#[pymethods]
impl PyMarketVideo {
    /// Reads a `timestamp,zone,<feature>...` CSV.
    #[staticmethod]
    #[pyo3(signature = (path, rows, cols, features, zones=None))]
    fn from_csv(path: &str, rows: usize, cols: usize, features: Vec<String>, zones: Option<Vec<String>>) -> PyResult<Self> {
        let (inner, _) = market_data::ingest_csv(path.as_ref(), layout(rows, cols, zones)?, &features).py()?;
        Ok(Self { inner })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        market_data::write_csv(&self.inner, f).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.inner.features().to_vec()
    }

    #[getter]
    fn zones(&self) -> Vec<String> {
        self.inner.layout().zones().to_vec()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.layout().rows(), self.inner.layout().cols())
    }

    fn timestamps(&self) -> Vec<String> {
        self.inner.frames().iter().map(|f| market_data::format_timestamp(&f.timestamp)).collect()
    }

    /// Row-major values of one channel at hour `index`.
    #[pyo3(signature = (index, feature="rtlmp"))]
    fn frame(&self, index: usize, feature: &str) -> PyResult<Vec<f64>> {
        let ch = self
            .inner
            .feature_index(feature)
            .ok_or_else(|| PyValueError::new_err(format!("unknown feature `{feature}`")))?;
        let f = self
            .inner
            .frames()
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("frame {index} out of range")))?;
        Ok(f.channel(ch))
    }

    /// Real-time price series, one list per zone.
    fn rtlmp_by_zone(&self) -> Vec<Vec<f64>> {
        self.inner.rtlmp_by_zone()
    }

    fn slice(&self, start: usize, end: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.slice(start, end).py()?,
        })
    }

    fn normalized(&self, stats: &PyNormStats) -> PyResult<Self> {
        Ok(Self {
            inner: market_data::make_video(&self.inner, &stats.inner).py()?,
        })
    }

    fn __repr__(&self) -> String {
        let (r, c) = self.shape();
        format!("MarketVideo({} hours, {r}x{c} grid, features={:?})", self.inner.len(), self.inner.features())
    }
}

/// Per-feature normalization statistics.
#[pyclass(name = "NormStats", module = "lmpgan_py")]
struct PyNormStats {
    inner: market_data::NormStats,
}

#[pymethods]
impl PyNormStats {
    /// Fits every channel of `video`; pass only the training span.
    #[staticmethod]
    fn fit(video: &PyMarketVideo) -> PyResult<Self> {
        Ok(Self {
            inner: market_data::NormStats::fit(&video.inner).py()?,
        })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self {
            inner: market_data::NormStats::read(f).py()?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        self.inner.write(f).py()
    }

    /// `{feature: (min_c, max_cplus)}`.
    fn to_dict(&self) -> HashMap<String, (f64, f64)> {
        self.inner
            .entries()
            .iter()
            .map(|(f, s)| (f.clone(), (s.min_c, s.max_cplus)))
            .collect()
    }
}

#[pyfunction]
#[pyo3(signature = (rows, cols, hours, seed=0, spike_rate=0.01, zones=None))]
fn synth_market(rows: usize, cols: usize, hours: usize, seed: u64, spike_rate: f64, zones: Option<Vec<String>>) -> PyResult<PyMarketVideo> {
    Ok(PyMarketVideo {
        inner: market_data::synth_market(seed, layout(rows, cols, zones)?, hours, spike_rate).py()?,
    })
}

#[pyfunction]
fn normalize(value: f64, min_c: f64, max_cplus: f64) -> PyResult<f64> {
    market_data::normalize(value, &FeatureStats::new(min_c, max_cplus).py()?).py()
}

#[pyfunction]
fn denormalize(value: f64, min_c: f64, max_cplus: f64) -> PyResult<f64> {
    market_data::denormalize(value, &FeatureStats::new(min_c, max_cplus).py()?).py()
}

fn log_row<'py>(py: Python<'py>, r: &TrainLogRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iteration", r.iteration)?;
    d.set_item("loss_D", r.loss_d)?;
    d.set_item("loss_G", r.loss_g)?;
    d.set_item("adv", r.adv)?;
    d.set_item("lp", r.lp)?;
    d.set_item("gdl", r.gdl)?;
    d.set_item("dcl", r.dcl)?;
    d.set_item("val_l2", r.val_l2)?;
    Ok(d)
}

/// Generator/discriminator pair with its configuration.
#[pyclass(name = "GanModel", module = "lmpgan_py")]
struct PyGanModel {
    inner: gan::GanModel,
}

#[pymethods]
impl PyGanModel {
    /// New model shaped for `video` (normalized). `config` overrides
    /// hyperparameters by name (e.g. `{"max_iterations": 500}`);
    /// `width_divisor` shrinks every layer of the default architecture.
    #[new]
    #[pyo3(signature = (video, config=None, width_divisor=None, stats=None))]
    fn new(
        video: &PyMarketVideo,
        config: Option<HashMap<String, Bound<'_, PyAny>>>,
        width_divisor: Option<usize>,
        stats: Option<&PyNormStats>,
    ) -> PyResult<Self> {
        let mut cfg = GanConfig::default();
        if let Some(k) = width_divisor {
            if k == 0 {
                return Err(PyValueError::new_err("width_divisor must be positive"));
            }
            cfg.arch = GanArch::scaled_down(k);
        }
        if let Some(map) = config {
            let mut pairs: Vec<(String, String)> = Vec::new();
            for (k, v) in map {
                if !cfg.to_pairs().iter().any(|(name, _)| *name == k) {
                    return Err(PyValueError::new_err(format!("unknown config key `{k}`")));
                }
                pairs.push((k, v.str()?.to_string()));
            }
            cfg.apply_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).py()?;
        }
        let mut inner = gan::GanModel::for_video(cfg, &video.inner).py()?;
        if let Some(s) = stats {
            inner = inner.with_norm(s.inner.clone());
        }
        Ok(Self { inner })
    }

    /// Hyperparameters as `{name: value-string}`.
    #[getter]
    fn config(&self) -> HashMap<String, String> {
        self.inner.config.to_pairs().into_iter().collect()
    }

    #[getter]
    fn generator_parameters(&self) -> usize {
        self.inner.generator.param_count()
    }

    #[getter]
    fn discriminator_parameters(&self) -> usize {
        self.inner.discriminator.param_count()
    }

    /// Trains on hours `[0, train_end)` of the normalized `video`, the last
    /// `validation_fraction` of windows held out. Returns the log rows.
    #[pyo3(signature = (video, train_end, validation_fraction=0.1))]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        video: &PyMarketVideo,
        train_end: usize,
        validation_fraction: f64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(PyValueError::new_err("validation_fraction must be in [0, 1)"));
        }
        let model = self.inner.clone();
        let samples = market_data::window(&video.inner.slice(0, train_end).py()?, model.config.history).py()?;
        let n_val = (samples.len() as f64 * validation_fraction).round() as usize;
        let (train_set, val) = samples.split_at(samples.len() - n_val);
        let (model, log) = py
            .detach(|| -> lmpgan::Result<_> {
                let mut t = Trainer::new(model, train_set, val)?;
                t.run(|_| Ok(()))?;
                let log = t.log().clone();
                Ok((t.into_model(), log))
            })
            .py()?;
        self.inner = model;
        log.rows.iter().map(|r| log_row(py, r)).collect()
    }

    /// Normalized prediction of the frame after `history` frames ending at
    /// `end` (exclusive).
    fn predict_next(&self, video: &PyMarketVideo, end: usize) -> PyResult<Vec<f64>> {
        let n = self.inner.config.history;
        if end < n || end > video.inner.len() {
            return Err(PyValueError::new_err(format!("need {n} history frames before index {end}")));
        }
        self.inner.predict_next(&video.inner.frames()[end - n..end]).py()
    }

    /// Denormalized real-time price predictions for hours `[start, end)`,
    /// one list per zone. Requires normalization stats.
    fn predict_zone_series(&self, py: Python<'_>, video: &PyMarketVideo, start: usize, end: usize) -> PyResult<Vec<Vec<f64>>> {
        py.detach(|| self.inner.predict_zone_series(&video.inner, start, end)).py()
    }

    #[pyo3(signature = (path, iteration=0))]
    fn save(&self, path: &str, iteration: u64) -> PyResult<()> {
        self.inner.to_checkpoint(iteration).save(path.as_ref()).py()
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = Checkpoint::load(path.as_ref()).py()?;
        Ok(Self {
            inner: gan::GanModel::from_checkpoint(&ck).py()?,
        })
    }
}

#[pyfunction]
fn loss_gdl(yhat: Vec<f64>, y: Vec<f64>, rows: usize, cols: usize, alpha: u32) -> PyResult<f64> {
    gan::loss_gdl(&yhat, &y, rows, cols, alpha).py()
}

#[pyfunction]
fn loss_dcl(yhat: Vec<f64>, y: Vec<f64>, x_last: Vec<f64>) -> PyResult<f64> {
    gan::loss_dcl(&yhat, &y, &x_last).py()
}

#[pyfunction]
fn loss_d(d_real: f64, d_fake: f64) -> f64 {
    gan::loss_d(d_real, d_fake)
}

/// Fitted ARMA model as a dict.
#[pyfunction]
fn fit_arma<'py>(py: Python<'py>, series: Vec<f64>, p: usize, q: usize) -> PyResult<Bound<'py, PyDict>> {
    let m = calibration::fit_arma(&series, p, q).py()?;
    let d = PyDict::new(py);
    d.set_item("p", m.p)?;
    d.set_item("q", m.q)?;
    d.set_item("mu", m.mu)?;
    d.set_item("phi", m.phi.clone())?;
    d.set_item("theta", m.theta.clone())?;
    d.set_item("sigma2", m.sigma2)?;
    d.set_item("causal", m.is_causal())?;
    d.set_item("invertible", m.is_invertible())?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (series, p_max=3, q_max=3))]
fn select_order(series: Vec<f64>, p_max: usize, q_max: usize) -> (usize, usize) {
    calibration::select_order(&series, p_max, q_max)
}

/// Rolling ARMA residual calibration. Returns `(start, delta_hat,
/// calibrated)`; the outputs cover hours `start..`.
#[pyfunction]
#[pyo3(signature = (y_pred, y_true, window=168, refit=24, p_max=3, q_max=3))]
fn calibrate(
    y_pred: Vec<f64>,
    y_true: Vec<f64>,
    window: usize,
    refit: usize,
    p_max: usize,
    q_max: usize,
) -> PyResult<(usize, Vec<f64>, Vec<f64>)> {
    let cfg = CalibrationConfig {
        window,
        refit,
        p_max,
        q_max,
    };
    let c = calibration::calibrate(&y_pred, &y_true, &cfg).py()?;
    Ok((c.start, c.delta_hat, c.calibrated))
}

#[pyfunction]
fn mape(y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<f64> {
    Ok(evaluation::mape(&y_true, &y_pred).py()?.percent)
}

/// Scores `pred` (hours `start..` of each zone) against `truth`.
#[pyfunction]
#[pyo3(signature = (zones, truth, pred, start, eps_den=evaluation::EPS_DEN, spike_multiplier=evaluation::SPIKE_MULTIPLIER))]
fn score<'py>(
    py: Python<'py>,
    zones: Vec<String>,
    truth: Vec<Vec<f64>>,
    pred: Vec<Vec<f64>>,
    start: usize,
    eps_den: f64,
    spike_multiplier: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = ScoreReport::compute(
        &zones,
        &truth,
        &pred,
        start,
        &ScoreSettings {
            eps_den,
            spike_multiplier,
        },
    )
    .py()?;
    let d = PyDict::new(py);
    let per_zone: HashMap<String, f64> = r.zones.iter().cloned().zip(r.zone_mape.iter().map(|m| m.percent)).collect();
    d.set_item("mape", r.aggregate.percent)?;
    d.set_item("zone_mape", per_zone)?;
    d.set_item("persistence_1h", r.baselines.one_hour.percent)?;
    d.set_item("persistence_24h", r.baselines.day.percent)?;
    d.set_item("frobenius", r.frobenius)?;
    d.set_item("spike_recall", r.spike_recall())?;
    d.set_item("corr_pred", r.corr_pred.clone())?;
    d.set_item("corr_truth", r.corr_truth.clone())?;
    d.set_item("table", r.to_table())?;
    Ok(d)
}

#[pymodule]
fn lmpgan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DivergenceError", m.py().get_type::<DivergenceError>())?;
    m.add_class::<PyMarketVideo>()?;
    m.add_class::<PyNormStats>()?;
    m.add_class::<PyGanModel>()?;
    m.add_function(wrap_pyfunction!(synth_market, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(denormalize, m)?)?;
    m.add_function(wrap_pyfunction!(loss_gdl, m)?)?;
    m.add_function(wrap_pyfunction!(loss_dcl, m)?)?;
    m.add_function(wrap_pyfunction!(loss_d, m)?)?;
    m.add_function(wrap_pyfunction!(fit_arma, m)?)?;
    m.add_function(wrap_pyfunction!(select_order, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    Ok(())
}
