//! Python module `switchboard`. Structured values cross the boundary as
//! plain dicts and lists through their JSON form.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;
use switchboard_core::embeddings::{SceneState, SwemReader, SyntheticEncoder, SyntheticProvider};
use switchboard_core::evalkit::{
    build_datasets, evaluate_ds, growth_csv, label_growth, report, scenario, tag_observability, EvalConfig,
    FrameSource, LabelGrowthConfig, SplitMode,
};
use switchboard_core::executor::{self, rollout_jsonl, CommandEntry, CommandQueue, Waypoint};
use switchboard_core::graph::{DsId, PartId};
use switchboard_core::library::{load_library, save_library};
use switchboard_core::switcher::Method;
use switchboard_core::task::TaskConfig;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyclass(module = "switchboard", from_py_object)]
#[derive(Clone)]
struct Scene {
    inner: SceneState,
}

#[pymethods]
impl Scene {
    /// Task-board layout for `factors` such as `{"peg": "B", "door": "open"}`.
    #[staticmethod]
    #[pyo3(signature = (factors, seed = 0))]
    fn taskboard(factors: std::collections::BTreeMap<String, String>, seed: u64) -> PyResult<Self> {
        let pairs: Vec<(&str, &str)> = factors.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let inner = SceneState::taskboard(&pairs, seed).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_dict(value: &Bound<'_, PyAny>) -> PyResult<Self> {
        let scene: SceneState = from_py(value)?;
        Ok(Self { inner: scene.completed().map_err(|e| PyValueError::new_err(e.to_string()))? })
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    #[getter]
    fn factors(&self) -> std::collections::BTreeMap<String, String> {
        self.inner.factors.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Demonstration of the peg task for this board, as waypoint dicts.
    fn peg_demo<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let w = scenario::peg_demo(&self.inner).ok_or_else(|| PyValueError::new_err("scene has no peg"))?;
        to_py(py, &w)
    }

    /// Recovery toward this board's peg, timed from wherever the robot stopped.
    fn peg_recovery<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let w = scenario::peg_recovery(&self.inner).ok_or_else(|| PyValueError::new_err("scene has no peg"))?;
        to_py(py, &w)
    }

    fn __repr__(&self) -> String {
        format!("Scene({:?}, seed={})", self.inner.factors, self.inner.seed)
    }
}

#[pyclass(module = "switchboard")]
struct Rollout {
    inner: executor::Rollout,
}

#[pymethods]
impl Rollout {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: executor::read_rollout(&path).map_err(err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        executor::write_rollout(&self.inner, &path).map_err(err)
    }

    /// The rollout file contents.
    fn jsonl(&self) -> String {
        rollout_jsonl(&self.inner)
    }

    #[getter]
    fn outcome<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.outcome)
    }

    #[getter]
    fn events<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.events)
    }

    #[getter]
    fn ticks<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.ticks)
    }

    #[getter]
    fn executed_variant(&self) -> Vec<u32> {
        self.inner.outcome.executed_variant.iter().map(|p| p.0).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.ticks.len()
    }
}

#[pyclass(module = "switchboard")]
struct Task {
    inner: switchboard_core::task::Task,
}

impl Task {
    fn provider(&self) -> SyntheticProvider {
        SyntheticProvider::new(SyntheticEncoder::new(self.inner.config.encoder))
    }
}

#[pymethods]
impl Task {
    /// New task from a first demonstration (a list of waypoint dicts).
    #[staticmethod]
    #[pyo3(signature = (task_id, waypoints, scene, config = None))]
    fn from_demo(
        task_id: &str,
        waypoints: &Bound<'_, PyAny>,
        scene: &Scene,
        config: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Self> {
        let waypoints: Vec<Waypoint> = from_py(waypoints)?;
        let config: TaskConfig = config.map(from_py).transpose()?.unwrap_or_default();
        let provider = SyntheticProvider::new(SyntheticEncoder::new(config.encoder));
        let mut inner =
            switchboard_core::task::Task::from_waypoints(task_id, &waypoints, &scene.inner, &provider, config)
                .map_err(err)?;
        inner.train().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_library(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_library(&self.inner, &path).map(|_| ()).map_err(err)
    }

    /// Retrains stale models; returns the retrained decision-state ids.
    fn train(&mut self) -> PyResult<Vec<u32>> {
        Ok(self.inner.train().map_err(err)?.into_iter().map(|d| d.0).collect())
    }

    /// Replays the task on `scene`. `commands` is a list of command-entry
    /// dicts; any anomaly must be answered by them.
    #[pyo3(signature = (scene, commands = None, seed = None, gate = None, expected = None))]
    fn run(
        &mut self,
        py: Python<'_>,
        scene: &Scene,
        commands: Option<&Bound<'_, PyAny>>,
        seed: Option<u64>,
        gate: Option<&str>,
        expected: Option<Vec<u32>>,
    ) -> PyResult<Rollout> {
        let entries: Vec<CommandEntry> = commands.map(from_py).transpose()?.unwrap_or_default();
        let saved = (self.inner.config.exec.gate, self.inner.config.exec.sim.seed);
        if let Some(g) = gate {
            self.inner.config.exec.gate = g.parse().map_err(PyValueError::new_err)?;
        }
        if let Some(s) = seed {
            self.inner.config.exec.sim.seed = s;
        }
        let provider = self.provider();
        let scene = scene.inner.clone();
        let expected = expected.map(|v| v.into_iter().map(PartId).collect());
        let inner = &mut self.inner;
        let result = py
            .detach(|| executor::run_episode(inner, &provider, &scene, CommandQueue::from_entries(entries), expected));
        (self.inner.config.exec.gate, self.inner.config.exec.sim.seed) = saved;
        Ok(Rollout { inner: result.map_err(err)? })
    }

    /// Teaches a new successor at decision state `ds`; returns its part id.
    fn add_branch(&mut self, ds: u32, waypoints: &Bound<'_, PyAny>, scene: &Scene) -> PyResult<u32> {
        let waypoints: Vec<Waypoint> = from_py(waypoints)?;
        let provider = self.provider();
        let id = self.inner.add_branch_from_waypoints(DsId(ds), &waypoints, &scene.inner, &provider).map_err(err)?;
        Ok(id.0)
    }

    #[getter]
    fn task_id(&self) -> String {
        self.inner.graph.task_id.clone()
    }

    #[getter]
    fn parts(&self) -> Vec<u32> {
        self.inner.graph.parts.keys().map(|p| p.0).collect()
    }

    #[getter]
    fn decision_states<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.graph.decision_states)
    }

    #[getter]
    fn edges<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.graph.edges)
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    /// Graph invariant violations; empty for a well-formed task.
    fn validate(&self) -> Vec<String> {
        self.inner.graph.validate().iter().map(|v| format!("{v:?}")).collect()
    }
}

/// Per-DS evaluation of recorded rollouts; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (task, rollouts, methods = vec!["prototype-concat".to_string()], split = "default"))]
fn evaluate<'py>(
    py: Python<'py>,
    task: &Task,
    rollouts: Vec<PyRef<'py, Rollout>>,
    methods: Vec<String>,
    split: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let methods: Vec<Method> =
        methods.iter().map(|m| m.parse().map_err(PyValueError::new_err)).collect::<PyResult<_>>()?;
    let mode: SplitMode = split.parse().map_err(PyValueError::new_err)?;
    let recorded: Vec<executor::Rollout> = rollouts.iter().map(|r| r.inner.clone()).collect();
    let mut data = build_datasets(&recorded, &task.inner.graph, mode).map_err(err)?;
    let encoder = SyntheticEncoder::new(task.inner.config.encoder);
    let mut results = Vec::new();
    for ds in &mut data.classification {
        tag_observability(ds, &encoder);
        for &m in &methods {
            let mut cfg = EvalConfig {
                switcher: task.inner.config.switcher.clone(),
                latch_frames: task.inner.config.exec.latch_frames,
            };
            cfg.switcher.method = m;
            results.push(evaluate_ds(ds, FrameSource::Rollouts(&recorded), &cfg).map_err(err)?);
        }
    }
    to_py(py, &report(results))
}

/// Label-growth curve as CSV text.
#[pyfunction]
#[pyo3(signature = (min_classes = 2, max_classes = 8, methods = None))]
fn labelgrowth(
    py: Python<'_>,
    min_classes: usize,
    max_classes: usize,
    methods: Option<Vec<String>>,
) -> PyResult<String> {
    let mut cfg = LabelGrowthConfig { min_classes, max_classes, ..LabelGrowthConfig::default() };
    if let Some(m) = methods {
        cfg.methods = m.iter().map(|m| m.parse().map_err(PyValueError::new_err)).collect::<PyResult<_>>()?;
    }
    let points = py.detach(|| label_growth(&cfg)).map_err(err)?;
    Ok(growth_csv(&points))
}

/// Header and frame count of a `.swem` embedding file.
#[pyfunction]
fn swem_info<'py>(py: Python<'py>, path: PathBuf) -> PyResult<(Bound<'py, PyAny>, usize)> {
    let reader = SwemReader::open(&path).map_err(err)?;
    Ok((to_py(py, reader.header())?, reader.len()))
}

#[pymodule]
fn switchboard(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scene>()?;
    m.add_class::<Task>()?;
    m.add_class::<Rollout>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(labelgrowth, m)?)?;
    m.add_function(wrap_pyfunction!(swem_info, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
