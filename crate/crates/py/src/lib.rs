//! Python bindings for the `canavb` simulator.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use canavb::can::{can_frame_time, CanId, StuffingModel};
use canavb::eth::eth_wire_time;
use canavb::gateway::codec::{self, CanRecord};
use canavb::metrics::{self, Arm};
use canavb::scenario::{self as sc, SimError};
use canavb::{BitRate, SimDuration, SimTime};

create_exception!(canavb_py, SimulationError, PyException);

fn sim_err(e: SimError) -> PyErr {
    SimulationError::new_err(format!("[{}] {e}", e.category()))
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_arm(label: &str) -> PyResult<Arm> {
    label.parse().map_err(value_err)
}

fn rate(bps: u64) -> PyResult<BitRate> {
    BitRate::new(bps).ok_or_else(|| PyValueError::new_err("rate must be positive"))
}

#[pyclass(name = "ScenarioConfig")]
struct PyScenarioConfig {
    inner: sc::ScenarioConfig,
}

#[pymethods]
impl PyScenarioConfig {
    /// Built-in reference scenario, optionally switched to another arm.
    #[new]
    #[pyo3(signature = (arm=None))]
    fn new(arm: Option<&str>) -> PyResult<Self> {
        let mut inner = sc::ScenarioConfig::default();
        if let Some(a) = arm {
            inner = inner.for_arm(parse_arm(a)?);
        }
        Ok(PyScenarioConfig { inner })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        let inner = sc::parse_config(text).map_err(|e| sim_err(e.into()))?;
        Ok(PyScenarioConfig { inner })
    }

    /// Applies one `key = value` assignment using the config file syntax.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, value).map_err(PyValueError::new_err)?;
        next.validate().map_err(value_err)?;
        self.inner = next;
        Ok(())
    }

    fn for_arm(&self, arm: &str) -> PyResult<Self> {
        Ok(PyScenarioConfig {
            inner: self.inner.for_arm(parse_arm(arm)?),
        })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn duration_ns(&self) -> u64 {
        self.inner.duration.as_nanos()
    }

    #[setter]
    fn set_duration_ns(&mut self, ns: u64) -> PyResult<()> {
        if ns == 0 {
            return Err(PyValueError::new_err("duration must be positive"));
        }
        self.inner.duration = SimDuration::from_nanos(ns);
        Ok(())
    }

    #[getter]
    fn arm(&self) -> &'static str {
        self.inner.arm().label()
    }

    fn __repr__(&self) -> String {
        format!(
            "ScenarioConfig(arm={}, seed={}, duration={})",
            self.inner.arm(),
            self.inner.seed,
            self.inner.duration
        )
    }
}

#[pyclass(name = "LatencyRecord", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyLatencyRecord {
    seq: u64,
    can_id: u16,
    created_at_ns: u64,
    delivered_at_ns: u64,
    latency_ns: u64,
    arm: &'static str,
}

#[pymethods]
impl PyLatencyRecord {
    fn __repr__(&self) -> String {
        format!(
            "LatencyRecord(seq={}, can_id={:#x}, latency_ns={})",
            self.seq, self.can_id, self.latency_ns
        )
    }
}

fn stats_dict<'py>(
    py: Python<'py>,
    stats: Option<metrics::LatencyStats>,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("count", stats.map_or(0, |s| s.count))?;
    if let Some(s) = stats {
        d.set_item("min_ns", s.min.as_nanos())?;
        d.set_item("max_ns", s.max.as_nanos())?;
        d.set_item("mean_ns", s.mean_ns)?;
        d.set_item("p50_ns", s.p50.as_nanos())?;
        d.set_item("p99_ns", s.p99.as_nanos())?;
    }
    Ok(d)
}

#[pyclass(name = "RunResult", frozen)]
struct PyRunResult {
    inner: sc::RunOutput,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn arm(&self) -> &'static str {
        self.inner.arm.label()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn records(&self) -> Vec<PyLatencyRecord> {
        self.inner
            .records
            .iter()
            .map(|r| PyLatencyRecord {
                seq: r.seq,
                can_id: r.can_id,
                created_at_ns: r.created_at.as_nanos(),
                delivered_at_ns: r.delivered_at.as_nanos(),
                latency_ns: r.latency().as_nanos(),
                arm: r.arm.label(),
            })
            .collect()
    }

    #[getter]
    fn latencies_ns(&self) -> Vec<u64> {
        self.inner
            .records
            .iter()
            .map(|r| r.latency().as_nanos())
            .collect()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        stats_dict(py, self.inner.summary.stats)
    }

    /// created, delivered, in_flight and dropped message counts.
    fn accounting<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let a = self.inner.accounting;
        let d = PyDict::new(py);
        d.set_item("created", a.created)?;
        d.set_item("delivered", a.delivered)?;
        d.set_item("in_flight", a.in_flight)?;
        d.set_item("dropped", a.dropped)?;
        d.set_item("conserved", a.is_conserved())?;
        Ok(d)
    }

    /// Per-port counters keyed by port name.
    fn ports<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let out = PyDict::new(py);
        for p in &self.inner.ports {
            let c = p.counters();
            let d = PyDict::new(py);
            d.set_item("enqueued", c.enqueued)?;
            d.set_item("transmitted", c.transmitted)?;
            d.set_item("dropped", c.dropped)?;
            d.set_item("queued", p.queues().len())?;
            d.set_item("avb_transmitted", c.avb_transmitted)?;
            d.set_item("be_transmitted", c.be_transmitted)?;
            out.set_item(&p.name, d)?;
        }
        Ok(out)
    }

    #[getter]
    fn summary(&self) -> String {
        self.inner.summary.to_string()
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        metrics::export_csv(&self.inner.records, &path).map_err(|e| sim_err(e.into()))
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(arm={}, delivered={})",
            self.inner.arm,
            self.inner.records.len()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (config=None))]
fn run(py: Python<'_>, config: Option<PyRef<'_, PyScenarioConfig>>) -> PyResult<PyRunResult> {
    let cfg = config.map_or_else(sc::ScenarioConfig::default, |c| c.inner.clone());
    let inner = py.detach(|| sc::build_and_run(&cfg)).map_err(sim_err)?;
    Ok(PyRunResult { inner })
}

/// Runs all four arms from one base config; returns a dict keyed by arm label.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn run_suite<'py>(
    py: Python<'py>,
    config: Option<PyRef<'py, PyScenarioConfig>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.map_or_else(sc::ScenarioConfig::default, |c| c.inner.clone());
    let suite = py
        .detach(|| sc::run_experiment_suite(&cfg))
        .map_err(sim_err)?;
    let out = PyDict::new(py);
    for r in suite.runs {
        out.set_item(r.arm.label(), Py::new(py, PyRunResult { inner: r })?)?;
    }
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (dlc, bitrate_bps=1_000_000, stuffing="none"))]
fn can_frame_time_ns(dlc: usize, bitrate_bps: u64, stuffing: &str) -> PyResult<u64> {
    let model: StuffingModel = stuffing.parse().map_err(value_err)?;
    let t = can_frame_time(dlc, rate(bitrate_bps)?, model).map_err(value_err)?;
    Ok(t.as_nanos())
}

#[pyfunction]
#[pyo3(signature = (payload_len, tagged=true, rate_bps=100_000_000))]
fn eth_wire_time_ns(payload_len: usize, tagged: bool, rate_bps: u64) -> PyResult<u64> {
    let t = eth_wire_time(payload_len, tagged, rate(rate_bps)?).map_err(value_err)?;
    Ok(t.as_nanos())
}

/// Packs `(can_id, created_at_ns, data)` tuples into a gateway payload.
#[pyfunction]
#[pyo3(signature = (records, limit=1500))]
fn pack<'py>(
    py: Python<'py>,
    records: Vec<(u32, u64, Vec<u8>)>,
    limit: usize,
) -> PyResult<Bound<'py, PyBytes>> {
    let recs = records
        .into_iter()
        .map(|(id, t, data)| {
            if data.len() > 8 {
                return Err(PyValueError::new_err(format!("dlc {} > 8", data.len())));
            }
            Ok(CanRecord {
                can_id: CanId::new(id).map_err(value_err)?,
                created_at: SimTime::from_nanos(t),
                data,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let bytes = codec::pack(&recs, limit).map_err(value_err)?;
    Ok(PyBytes::new(py, &bytes))
}

#[pyfunction]
fn unpack(payload: &[u8]) -> PyResult<Vec<(u16, u64, Vec<u8>)>> {
    let recs = codec::unpack(payload).map_err(value_err)?;
    Ok(recs
        .into_iter()
        .map(|r| (r.can_id.raw(), r.created_at.as_nanos(), r.data))
        .collect())
}

/// Nearest-rank statistics over latencies in nanoseconds.
#[pyfunction]
fn summarize<'py>(py: Python<'py>, latencies_ns: Vec<u64>) -> PyResult<Bound<'py, PyDict>> {
    let durations: Vec<SimDuration> = latencies_ns
        .into_iter()
        .map(SimDuration::from_nanos)
        .collect();
    let stats = metrics::summarize_latencies(durations).map_err(value_err)?;
    stats_dict(py, Some(stats))
}

#[pymodule]
fn canavb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenarioConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyLatencyRecord>()?;
    m.add("SimulationError", m.py().get_type::<SimulationError>())?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    m.add_function(wrap_pyfunction!(can_frame_time_ns, m)?)?;
    m.add_function(wrap_pyfunction!(eth_wire_time_ns, m)?)?;
    m.add_function(wrap_pyfunction!(pack, m)?)?;
    m.add_function(wrap_pyfunction!(unpack, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    Ok(())
}
