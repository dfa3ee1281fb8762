//! Python bindings for the mifprop simulator: the MIF neuron primitives,
//! spike schedules, networks, and BPTT losses/gradients. Matrices cross the
//! boundary as plain nested lists of floats, so no numpy dependency is
//! needed on either side.

use mifprop::bptt::{backward, forward_record_mode, TapeMode};
use mifprop::{mif, network, seeding};
use ndarray::{Array1, Array2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let width = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err(format!("{what} rows have uneven lengths")));
    }
    Array2::from_shape_vec((n, width), rows.into_iter().flatten().collect()).map_err(value_err)
}

fn matrix_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Circuit constants of the MIF neuron and its alpha synapse. Instances are
/// immutable; build one with keyword arguments (unset fields keep their
/// defaults) and derive variants with `replace`.
#[pyclass(frozen, skip_from_py_object, module = "mifprop_py")]
#[derive(Clone)]
struct MifParams {
    inner: mif::MifParams,
}

fn apply_param_kwargs(p: &mut mif::MifParams, kwargs: &Bound<'_, PyDict>) -> PyResult<()> {
    for (key, value) in kwargs.iter() {
        let key: String = key.extract()?;
        match key.as_str() {
            "e_rest" => p.e_rest = value.extract()?,
            "e_reset" => p.e_reset = value.extract()?,
            "c" => p.c = value.extract()?,
            "k_th" => p.k_th = value.extract()?,
            "v_on1" => p.v_on1 = value.extract()?,
            "v_on2" => p.v_on2 = value.extract()?,
            "v_off1" => p.v_off1 = value.extract()?,
            "v_off2" => p.v_off2 = value.extract()?,
            "r_on1" => p.r_on1 = value.extract()?,
            "r_on2" => p.r_on2 = value.extract()?,
            "r_off1" => p.r_off1 = value.extract()?,
            "r_off2" => p.r_off2 = value.extract()?,
            "tau1" => p.tau1 = value.extract()?,
            "tau2" => p.tau2 = value.extract()?,
            "tau_syn" => p.tau_syn = value.extract()?,
            "literal_g2" => p.literal_g2 = value.extract()?,
            other => {
                return Err(PyValueError::new_err(format!("unknown parameter '{other}'")));
            }
        }
    }
    Ok(())
}

#[pymethods]
impl MifParams {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = mif::MifParams::default();
        if let Some(kw) = kwargs {
            apply_param_kwargs(&mut inner, kw)?;
        }
        Ok(Self { inner })
    }

    /// Copy of these parameters with the given fields replaced.
    #[pyo3(signature = (**kwargs))]
    fn replace(&self, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = self.inner;
        if let Some(kw) = kwargs {
            apply_param_kwargs(&mut inner, kw)?;
        }
        Ok(Self { inner })
    }

    /// Raises ValueError when the constants are physically inconsistent.
    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(value_err)
    }

    #[getter]
    fn e_rest(&self) -> f64 {
        self.inner.e_rest
    }
    #[getter]
    fn e_reset(&self) -> f64 {
        self.inner.e_reset
    }
    #[getter]
    fn c(&self) -> f64 {
        self.inner.c
    }
    #[getter]
    fn k_th(&self) -> f64 {
        self.inner.k_th
    }
    #[getter]
    fn v_on1(&self) -> f64 {
        self.inner.v_on1
    }
    #[getter]
    fn v_on2(&self) -> f64 {
        self.inner.v_on2
    }
    #[getter]
    fn v_off1(&self) -> f64 {
        self.inner.v_off1
    }
    #[getter]
    fn v_off2(&self) -> f64 {
        self.inner.v_off2
    }
    #[getter]
    fn r_on1(&self) -> f64 {
        self.inner.r_on1
    }
    #[getter]
    fn r_on2(&self) -> f64 {
        self.inner.r_on2
    }
    #[getter]
    fn r_off1(&self) -> f64 {
        self.inner.r_off1
    }
    #[getter]
    fn r_off2(&self) -> f64 {
        self.inner.r_off2
    }
    #[getter]
    fn tau1(&self) -> f64 {
        self.inner.tau1
    }
    #[getter]
    fn tau2(&self) -> f64 {
        self.inner.tau2
    }
    #[getter]
    fn tau_syn(&self) -> f64 {
        self.inner.tau_syn
    }
    #[getter]
    fn literal_g2(&self) -> bool {
        self.inner.literal_g2
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Dynamical state of one neuron: membrane potential `v`, memristor states
/// `x1`/`x2`, synapse current `i` and synapse internal state `a`.
#[pyclass(skip_from_py_object, module = "mifprop_py")]
#[derive(Clone)]
struct MifState {
    inner: mif::MifState,
}

#[pymethods]
impl MifState {
    #[new]
    #[pyo3(signature = (v=0.0, x1=0.0, x2=0.0, i=0.0, a=0.0))]
    fn new(v: f64, x1: f64, x2: f64, i: f64, a: f64) -> Self {
        Self { inner: mif::MifState { v, x1, x2, i, a } }
    }

    /// Resting state for the given parameters (v = e_rest, everything else 0).
    #[staticmethod]
    fn initial(params: &MifParams) -> Self {
        Self { inner: mif::MifState::initial(&params.inner) }
    }

    #[getter]
    fn v(&self) -> f64 {
        self.inner.v
    }
    #[getter]
    fn x1(&self) -> f64 {
        self.inner.x1
    }
    #[getter]
    fn x2(&self) -> f64 {
        self.inner.x2
    }
    #[getter]
    fn i(&self) -> f64 {
        self.inner.i
    }
    #[getter]
    fn a(&self) -> f64 {
        self.inner.a
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Injection schedule: (step, scale) pairs with strictly increasing steps.
#[pyclass(frozen, skip_from_py_object, module = "mifprop_py")]
#[derive(Clone)]
struct SpikeSchedule {
    inner: mifprop::SpikeSchedule,
}

#[pymethods]
impl SpikeSchedule {
    #[new]
    #[pyo3(signature = (entries=Vec::new()))]
    fn new(entries: Vec<(usize, f64)>) -> PyResult<Self> {
        Ok(Self { inner: mifprop::SpikeSchedule::new(entries).map_err(value_err)? })
    }

    /// Same scale at every listed step.
    #[staticmethod]
    #[pyo3(signature = (steps, scale=1.0))]
    fn uniform(steps: Vec<usize>, scale: f64) -> PyResult<Self> {
        Ok(Self { inner: mifprop::SpikeSchedule::uniform(&steps, scale).map_err(value_err)? })
    }

    #[getter]
    fn entries(&self) -> Vec<(usize, f64)> {
        self.inner.entries().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.entries().len()
    }

    fn __repr__(&self) -> String {
        format!("SpikeSchedule({:?})", self.inner.entries())
    }
}

/// Feedforward network of dense layers with one MIF neuron per output unit.
#[pyclass(module = "mifprop_py")]
struct Network {
    inner: mifprop::Network,
}

#[pymethods]
impl Network {
    /// Seeded uniform initialization (the layer draws derive from `seed`).
    #[new]
    fn new(widths: Vec<usize>, params: &MifParams, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: mifprop::Network::new(widths, params.inner, seed).map_err(value_err)? })
    }

    #[staticmethod]
    fn zeros(widths: Vec<usize>, params: &MifParams) -> PyResult<Self> {
        Ok(Self { inner: mifprop::Network::zeros(widths, params.inner).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_weights(
        widths: Vec<usize>,
        weights: Vec<Vec<Vec<f64>>>,
        params: &MifParams,
    ) -> PyResult<Self> {
        let weights = weights
            .into_iter()
            .map(|w| to_matrix(w, "weight"))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self {
            inner: mifprop::Network::from_weights(widths, weights, params.inner)
                .map_err(value_err)?,
        })
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.inner.widths().to_vec()
    }

    /// Per-layer weight matrices as nested lists, row-major.
    #[getter]
    fn weights(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.weights().iter().map(matrix_to_rows).collect()
    }

    /// Predicted class of one sample (argmax of time-summed potentials).
    fn predict(
        &self,
        input: Vec<f64>,
        schedule: &SpikeSchedule,
        t_total: usize,
    ) -> PyResult<usize> {
        self.inner
            .predict(Array1::from(input).view(), &schedule.inner, t_total)
            .map_err(value_err)
    }

    fn predict_batch(
        &self,
        inputs: Vec<Vec<f64>>,
        schedule: &SpikeSchedule,
        t_total: usize,
    ) -> PyResult<Vec<usize>> {
        let inputs = to_matrix(inputs, "input")?;
        self.inner.predict_batch(&inputs, &schedule.inner, t_total).map_err(value_err)
    }

    /// Loss of one sample summed over the run.
    fn total_loss(
        &self,
        input: Vec<f64>,
        target: usize,
        schedule: &SpikeSchedule,
        t_total: usize,
    ) -> PyResult<f64> {
        self.inner
            .total_loss(Array1::from(input).view(), target, &schedule.inner, t_total)
            .map_err(value_err)
    }

    /// Mean batch loss and its gradient with respect to every weight,
    /// computed by backpropagation through time. `mode` is "full" or
    /// "recompute" (the latter keeps tape snapshots every `segment` steps).
    #[pyo3(signature = (inputs, targets, schedule, t_total, mode="full", segment=100))]
    fn loss_and_grads(
        &self,
        inputs: Vec<Vec<f64>>,
        targets: Vec<usize>,
        schedule: &SpikeSchedule,
        t_total: usize,
        mode: &str,
        segment: usize,
    ) -> PyResult<(f64, Vec<Vec<Vec<f64>>>)> {
        let mode = match mode {
            "full" => TapeMode::Full,
            "recompute" => TapeMode::Recompute { segment },
            other => {
                return Err(PyValueError::new_err(format!(
                    "mode must be 'full' or 'recompute', got '{other}'"
                )));
            }
        };
        let inputs = to_matrix(inputs, "input")?;
        let (tape, loss) =
            forward_record_mode(&self.inner, &inputs, &targets, &schedule.inner, t_total, mode)
                .map_err(value_err)?;
        let grads = backward(&tape, &self.inner).map_err(value_err)?;
        Ok((loss, grads.layers.iter().map(matrix_to_rows).collect()))
    }

    fn __repr__(&self) -> String {
        format!("Network(widths={:?})", self.inner.widths())
    }
}

/// One forward-Euler step of a single neuron driven by `weighted_input`.
#[pyfunction]
fn mif_step(state: &MifState, weighted_input: f64, params: &MifParams) -> MifState {
    MifState { inner: mif::mif_step(&state.inner, weighted_input, &params.inner) }
}

/// Full state trajectory of one neuron, length t_total + 1 with the initial
/// state first.
#[pyfunction]
fn simulate_neuron(
    params: &MifParams,
    schedule: &SpikeSchedule,
    t_total: usize,
) -> PyResult<Vec<MifState>> {
    let traj = mif::simulate_neuron(&params.inner, &schedule.inner, t_total).map_err(value_err)?;
    Ok(traj.into_iter().map(|inner| MifState { inner }).collect())
}

/// Trajectory of the same dynamics integrated with `substeps` Euler substeps
/// per unit step, sampled at unit steps. substeps=1 reproduces
/// `simulate_neuron` exactly.
#[pyfunction]
#[pyo3(signature = (params, schedule, t_total, substeps=1))]
fn reference_integrate(
    params: &MifParams,
    schedule: &SpikeSchedule,
    t_total: usize,
    substeps: usize,
) -> PyResult<Vec<MifState>> {
    if substeps == 0 {
        return Err(PyValueError::new_err("substeps must be at least 1"));
    }
    let traj = mif::reference_integrate(&params.inner, &schedule.inner, t_total, substeps)
        .map_err(value_err)?;
    Ok(traj.into_iter().map(|inner| MifState { inner }).collect())
}

/// Memductance of one memristor at internal state x in [0, 1].
#[pyfunction]
fn memductance(x: f64, r_on: f64, r_off: f64) -> PyResult<f64> {
    mif::memductance(x, r_on, r_off).map_err(value_err)
}

/// Softmax cross-entropy of one step's output potentials against `target`.
#[pyfunction]
fn step_loss(potentials: Vec<f64>, target: usize) -> PyResult<f64> {
    if target >= potentials.len() {
        return Err(PyValueError::new_err(format!(
            "target {target} out of range for {} classes",
            potentials.len()
        )));
    }
    Ok(network::step_loss(&potentials, target))
}

/// Decorrelated child seed for a (master, stream) pair; used for layer
/// initialization and epoch shuffling streams.
#[pyfunction]
fn derive_seed(master: u64, stream: u64) -> u64 {
    seeding::derive_seed(master, stream)
}

#[pymodule]
fn mifprop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<MifParams>()?;
    m.add_class::<MifState>()?;
    m.add_class::<SpikeSchedule>()?;
    m.add_class::<Network>()?;
    m.add_function(wrap_pyfunction!(mif_step, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_neuron, m)?)?;
    m.add_function(wrap_pyfunction!(reference_integrate, m)?)?;
    m.add_function(wrap_pyfunction!(memductance, m)?)?;
    m.add_function(wrap_pyfunction!(step_loss, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    Ok(())
}
