//! Python bindings: scenario construction, both optimizers, and the small
//! numeric primitives that are handy to poke at from a notebook.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use simfair_core::channel::ChannelSet;
use simfair_core::config::ScenarioConfig as CoreConfig;
use simfair_core::geometry::build_layout;
use simfair_core::icsi::{self, Outcome};
use simfair_core::metrics;
use simfair_core::oracles::mc_average_min_rate;
use simfair_core::scsi;
use simfair_core::stack::PhaseProfile;
use simfair_core::{dbm_to_watts, watts_to_dbm, RVector};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Scenario description; defaults mirror the reference setup.
#[pyclass(name = "ScenarioConfig")]
#[derive(Clone)]
struct PyScenarioConfig {
    inner: CoreConfig,
}

#[pymethods]
impl PyScenarioConfig {
    #[new]
    #[pyo3(signature = (users=4, elements=36, layers=4, power_dbm=10.0, bits=8, seed=1))]
    fn new(
        users: usize,
        elements: usize,
        layers: usize,
        power_dbm: f64,
        bits: u32,
        seed: u64,
    ) -> PyResult<Self> {
        let mut cfg = CoreConfig::default().with_users(users);
        cfg.elements_per_layer = elements;
        cfg.num_layers = layers;
        cfg.power_budget = dbm_to_watts(power_dbm);
        cfg.quant_bits = bits;
        cfg.rng_seed = seed;
        cfg.validate().map_err(value_err)?;
        Ok(Self { inner: cfg })
    }

    /// Parses a TOML scenario document (same schema as the CLI files).
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreConfig::from_toml_str(text).map_err(value_err)?,
        })
    }

    #[getter]
    fn users(&self) -> usize {
        self.inner.num_users
    }

    #[getter]
    fn elements(&self) -> usize {
        self.inner.elements_per_layer
    }

    #[getter]
    fn layers(&self) -> usize {
        self.inner.num_layers
    }

    #[getter]
    fn power_dbm(&self) -> f64 {
        watts_to_dbm(self.inner.power_budget)
    }

    #[getter]
    fn bits(&self) -> u32 {
        self.inner.quant_bits
    }

    #[getter]
    fn wavelength(&self) -> f64 {
        self.inner.wavelength()
    }

    fn __repr__(&self) -> String {
        format!(
            "ScenarioConfig(users={}, elements={}, layers={}, power_dbm={:.1}, bits={})",
            self.inner.num_users,
            self.inner.elements_per_layer,
            self.inner.num_layers,
            watts_to_dbm(self.inner.power_budget),
            self.inner.quant_bits
        )
    }
}

fn phases_to_py(profile: &PhaseProfile) -> Vec<Vec<f64>> {
    (0..profile.layers())
        .map(|l| (0..profile.elements()).map(|m| profile.theta[(l, m)]).collect())
        .collect()
}

fn common_report<'py>(
    py: Python<'py>,
    report: &icsi::OptReport,
) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("power_watts", report.power.watts.iter().copied().collect::<Vec<f64>>())?;
    out.set_item("objective_trace", report.objective_trace.clone())?;
    out.set_item("iterations", report.objective_trace.len())?;
    out.set_item("converged", report.converged)?;
    out.set_item("phases", phases_to_py(&report.phases))?;
    out.set_item("phases_quantized", phases_to_py(&report.phases_quantized))?;
    Ok(out)
}

/// Runs the instantaneous-CSI pipeline on one seeded fading draw.
#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn optimize_icsi<'py>(
    py: Python<'py>,
    config: &PyScenarioConfig,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = &config.inner;
    let layout = build_layout(cfg).map_err(value_err)?;
    let mut channels = ChannelSet::build(cfg, &layout).map_err(runtime_err)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed.unwrap_or(cfg.rng_seed));
    channels.sample_fading(&mut rng);
    let report = icsi::optimize(&channels, cfg).map_err(runtime_err)?;

    let out = common_report(py, &report)?;
    if let Outcome::Instantaneous {
        report: quantized,
        report_continuous,
    } = &report.outcome
    {
        out.set_item("min_rate", quantized.min_rate)?;
        out.set_item("min_rate_continuous", report_continuous.min_rate)?;
        out.set_item("rates", quantized.rates.iter().copied().collect::<Vec<f64>>())?;
        out.set_item("sinr", quantized.sinr.iter().copied().collect::<Vec<f64>>())?;
        let fairness = PyDict::new(py);
        fairness.set_item("min_max", quantized.fairness.min_max)?;
        fairness.set_item("jain", quantized.fairness.jain)?;
        fairness.set_item("gini_complement", quantized.fairness.gini_complement)?;
        out.set_item("fairness", fairness)?;
    }
    Ok(out)
}

/// Runs the statistical-CSI pipeline (no fading draw involved).
#[pyfunction]
#[pyo3(signature = (config, mc_draws=0, seed=None))]
fn optimize_scsi<'py>(
    py: Python<'py>,
    config: &PyScenarioConfig,
    mc_draws: usize,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = config.inner.clone();
    cfg.quant_bits = cfg.quant_bits.min(30);
    let layout = build_layout(&cfg).map_err(value_err)?;
    let channels = ChannelSet::build(&cfg, &layout).map_err(runtime_err)?;
    let report = scsi::optimize(&channels, &cfg).map_err(runtime_err)?;

    let out = common_report(py, &report)?;
    if let Outcome::Statistical {
        zeta,
        rate_bound,
        zeta_continuous,
        rate_bound_continuous,
    } = report.outcome
    {
        out.set_item("zeta", zeta)?;
        out.set_item("rate_bound", rate_bound)?;
        out.set_item("zeta_continuous", zeta_continuous)?;
        out.set_item("rate_bound_continuous", rate_bound_continuous)?;
    }
    if mc_draws > 0 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed.unwrap_or(cfg.rng_seed));
        let est = mc_average_min_rate(
            &report.phases_quantized,
            &report.power,
            &channels,
            cfg.noise_power,
            mc_draws,
            &mut rng,
        );
        out.set_item("mc_mean_min_rate", est.mean)?;
        out.set_item("mc_ci_half_width", est.ci_half_width)?;
    }
    Ok(out)
}

/// Nearest point of the 2^bits phase grid over [0, 2 pi).
#[pyfunction]
fn quantize_phase(theta: f64, bits: u32) -> PyResult<f64> {
    if bits == 0 || bits > 30 {
        return Err(PyValueError::new_err("bits must be in 1..=30"));
    }
    Ok(simfair_core::stack::quantize_phase(theta, bits))
}

/// Euclidean projection onto the probability simplex.
#[pyfunction]
#[pyo3(signature = (v, accuracy=1e-8))]
fn project_simplex(v: Vec<f64>, accuracy: f64) -> PyResult<Vec<f64>> {
    if v.is_empty() {
        return Err(PyValueError::new_err("empty vector"));
    }
    let out = icsi::project_simplex(&RVector::from_vec(v), accuracy);
    Ok(out.iter().copied().collect())
}

/// e^x E1(x) for x > 0.
#[pyfunction]
fn exp_e1(x: f64) -> PyResult<f64> {
    scsi::exp_e1(x).map_err(value_err)
}

/// Average minimum-rate bound log2(e) e^{zeta noise} E1(zeta noise).
#[pyfunction]
fn rate_upper_bound(zeta: f64, noise: f64) -> PyResult<f64> {
    scsi::rate_upper_bound(zeta, noise).map_err(value_err)
}

/// (min-max, Jain, Gini-complement) fairness of a rate vector.
#[pyfunction]
fn fairness_indices(rates: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let f = metrics::fairness_indices(&RVector::from_vec(rates)).map_err(value_err)?;
    Ok((f.min_max, f.jain, f.gini_complement))
}

#[pymodule]
fn simfair(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenarioConfig>()?;
    m.add_function(wrap_pyfunction!(optimize_icsi, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_scsi, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_phase, m)?)?;
    m.add_function(wrap_pyfunction!(project_simplex, m)?)?;
    m.add_function(wrap_pyfunction!(exp_e1, m)?)?;
    m.add_function(wrap_pyfunction!(rate_upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(fairness_indices, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
