//! Python bindings: potentials, objectives, integrators, certificates and the
//! duality and control checks.

use std::collections::BTreeMap;
use std::sync::Arc;

use precond_flow::certify::{run_certificate_suite, SuiteOptions};
use precond_flow::dualbridge::{self, ClosedLoopOptions, ControlSetup};
use precond_flow::integrate::{
    field_precondflow, integrate_adaptive, integrate_rk4, iterate_npgm, AdaptiveOptions,
    TrajectoryKind,
};
use precond_flow::objectives::{make_quadratic, make_quartic, make_rosenbrock};
use precond_flow::{DMatrix, DVector, ReferencePotential};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn vec(x: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(x)
}

fn list(x: &DVector<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

fn check_dim(expected: usize, x: &[f64]) -> PyResult<()> {
    if x.len() != expected {
        return Err(PyValueError::new_err(format!(
            "expected a vector of length {expected}, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// A reference function `φ` with its conjugate and preconditioner `∇φ*`.
#[pyclass(frozen, skip_from_py_object, name = "Potential")]
#[derive(Clone)]
struct PyPotential(ReferencePotential);

#[pymethods]
impl PyPotential {
    /// Builds a potential from its id (`quadratic`, `eps-normalized`,
    /// `cosh-clip`, `ball-moreau`) and parameters.
    #[new]
    #[pyo3(signature = (id, params = None))]
    fn new(id: &str, params: Option<BTreeMap<String, f64>>) -> PyResult<Self> {
        ReferencePotential::from_id(id, &params.unwrap_or_default())
            .map(Self)
            .map_err(value_err)
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.0.family().as_str()
    }

    #[getter]
    fn params(&self) -> BTreeMap<String, f64> {
        self.0.params().clone()
    }

    #[getter]
    fn closed_domain(&self) -> bool {
        self.0.closed_domain()
    }

    fn phi(&self, v: Vec<f64>) -> f64 {
        self.0.phi(&vec(v))
    }

    fn conjugate(&self, y: Vec<f64>) -> f64 {
        self.0.conjugate(&vec(y))
    }

    fn grad_conjugate(&self, y: Vec<f64>) -> Vec<f64> {
        list(&self.0.grad_conjugate(&vec(y)))
    }

    fn __repr__(&self) -> String {
        format!(
            "Potential({:?}, {:?})",
            self.0.family().as_str(),
            self.0.params()
        )
    }
}

/// A smooth cost with gradient and known minimizer when available.
#[pyclass(frozen, skip_from_py_object, name = "Objective")]
#[derive(Clone)]
struct PyObjective(Arc<dyn precond_flow::Objective>);

#[pymethods]
impl PyObjective {
    /// `½xᵀAx − bᵀx` for a symmetric positive definite `A`.
    #[staticmethod]
    #[pyo3(signature = (matrix, vector = None))]
    fn quadratic(matrix: Vec<Vec<f64>>, vector: Option<Vec<f64>>) -> PyResult<Self> {
        let n = matrix.len();
        if matrix.iter().any(|row| row.len() != n) {
            return Err(PyValueError::new_err("matrix must be square"));
        }
        let a = DMatrix::from_fn(n, n, |i, j| matrix[i][j]);
        let b = vector.unwrap_or_else(|| vec![0.0; n]);
        check_dim(n, &b)?;
        let q = make_quadratic(a, vec(b)).map_err(value_err)?;
        Ok(Self(Arc::new(q)))
    }

    /// `¼Σxᵢ⁴`.
    #[staticmethod]
    #[pyo3(signature = (dim = 2))]
    fn quartic(dim: usize) -> PyResult<Self> {
        Ok(Self(Arc::new(make_quartic(dim).map_err(value_err)?)))
    }

    #[staticmethod]
    #[pyo3(signature = (dim = 2))]
    fn rosenbrock(dim: usize) -> PyResult<Self> {
        Ok(Self(Arc::new(make_rosenbrock(dim).map_err(value_err)?)))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name().to_string()
    }

    #[getter]
    fn f_star(&self) -> Option<f64> {
        self.0.f_star()
    }

    #[getter]
    fn minimizer(&self) -> Option<Vec<f64>> {
        self.0.minimizer().as_ref().map(list)
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        check_dim(self.0.dim(), &x)?;
        Ok(self.0.value(&vec(x)))
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        check_dim(self.0.dim(), &x)?;
        Ok(list(&self.0.gradient(&vec(x))))
    }

    /// `D_f(x, xbar) = f(x) − f(xbar) − ⟨∇f(xbar), x − xbar⟩`.
    fn bregman(&self, x: Vec<f64>, xbar: Vec<f64>) -> PyResult<f64> {
        check_dim(self.0.dim(), &x)?;
        check_dim(self.0.dim(), &xbar)?;
        Ok(dualbridge::bregman(self.0.as_ref(), &vec(x), &vec(xbar)))
    }

    fn __repr__(&self) -> String {
        format!("Objective({:?}, dim={})", self.0.name(), self.0.dim())
    }
}

/// Recorded samples of a flow or of the discrete iteration.
#[pyclass(frozen, name = "Trajectory")]
struct PyTrajectory(precond_flow::Trajectory);

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times.clone()
    }

    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        self.0.states.iter().map(list).collect()
    }

    #[getter]
    fn velocities(&self) -> Vec<Vec<f64>> {
        self.0.velocities.iter().map(list).collect()
    }

    #[getter]
    fn terminal(&self) -> &'static str {
        self.0.terminal.as_str()
    }

    /// `None` for flows, the step size for the discrete iteration.
    #[getter]
    fn gamma(&self) -> Option<f64> {
        match self.0.kind {
            TrajectoryKind::Flow => None,
            TrajectoryKind::Discrete { gamma } => Some(gamma),
        }
    }

    #[getter]
    fn accepted_steps(&self) -> usize {
        self.0.accepted_steps
    }

    #[getter]
    fn rejected_steps(&self) -> usize {
        self.0.rejected_steps
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Integrates `ẋ = −∇φ*(∇f(x))` on `[0, t_end]` with the adaptive
/// Dormand–Prince pair or fixed-step RK4.
#[pyfunction]
#[pyo3(signature = (
    objective, potential, x0, t_end, method = "adaptive", rel_tol = 1e-10, abs_tol = 1e-12,
    record_every = 1e-2, step = 1e-3, stop_velocity = None
))]
#[allow(clippy::too_many_arguments)]
fn integrate(
    py: Python<'_>,
    objective: &PyObjective,
    potential: &PyPotential,
    x0: Vec<f64>,
    t_end: f64,
    method: &str,
    rel_tol: f64,
    abs_tol: f64,
    record_every: f64,
    step: f64,
    stop_velocity: Option<f64>,
) -> PyResult<PyTrajectory> {
    check_dim(objective.0.dim(), &x0)?;
    let (o, p, x0) = (objective.0.clone(), potential.0.clone(), vec(x0));
    let traj = py.detach(move || {
        let field = field_precondflow(o.as_ref(), &p);
        match method {
            "adaptive" => {
                let opts = AdaptiveOptions {
                    rel_tol,
                    abs_tol,
                    record_every,
                    stop_velocity,
                };
                Ok(integrate_adaptive(field, &x0, t_end, opts))
            }
            "rk4" => Ok(integrate_rk4(field, &x0, t_end, step, record_every)),
            other => Err(format!(
                "unknown method {other:?}, expected adaptive or rk4"
            )),
        }
    });
    traj.map_err(PyValueError::new_err)?
        .map(PyTrajectory)
        .map_err(value_err)
}

/// The discrete iteration `xᵏ⁺¹ = xᵏ − γ∇φ*(∇f(xᵏ))`.
#[pyfunction]
#[pyo3(signature = (objective, potential, x0, gamma, k_max = 1000, stop_grad = 0.0))]
fn npgm(
    objective: &PyObjective,
    potential: &PyPotential,
    x0: Vec<f64>,
    gamma: f64,
    k_max: usize,
    stop_grad: f64,
) -> PyResult<PyTrajectory> {
    check_dim(objective.0.dim(), &x0)?;
    iterate_npgm(
        objective.0.as_ref(),
        &potential.0,
        &vec(x0),
        gamma,
        k_max,
        stop_grad,
    )
    .map(PyTrajectory)
    .map_err(value_err)
}

/// Runs the trajectory claim checks and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (trajectory, objective, potential, rel_tol = 1e-10, mu = None, decrease_tol = None))]
fn certify(
    py: Python<'_>,
    trajectory: &PyTrajectory,
    objective: &PyObjective,
    potential: &PyPotential,
    rel_tol: f64,
    mu: Option<f64>,
    decrease_tol: Option<f64>,
) -> PyResult<String> {
    let mut opts = SuiteOptions {
        rel_tol,
        mu,
        ..SuiteOptions::default()
    };
    if let Some(tol) = decrease_tol {
        opts.decrease_tol = tol;
    }
    let report = py
        .detach(|| run_certificate_suite(&trajectory.0, objective.0.as_ref(), &potential.0, &opts));
    serde_json::to_string(&report).map_err(json_err)
}

/// Compares the discrete iteration with mirror descent through `z = ∇f(x)`
/// and returns the claim entry as JSON.
#[pyfunction]
#[pyo3(signature = (objective, potential, x0, gamma = 0.1, k_max = 50, tol = 1e-10, newton_tol = 1e-13))]
fn check_duality(
    objective: &PyObjective,
    potential: &PyPotential,
    x0: Vec<f64>,
    gamma: f64,
    k_max: usize,
    tol: f64,
    newton_tol: f64,
) -> PyResult<String> {
    check_dim(objective.0.dim(), &x0)?;
    let entry = dualbridge::check_discrete_duality(
        objective.0.as_ref(),
        &potential.0,
        &vec(x0),
        gamma,
        k_max,
        tol,
        newton_tol,
    )
    .map_err(value_err)?;
    serde_json::to_string(&entry).map_err(json_err)
}

/// Accumulated control cost `J` along the closed loop from `x0`, with
/// `V0 = f(x0) − f⋆` and their relative gap.
#[pyfunction]
#[pyo3(signature = (objective, potential, x0, t_end = 100.0))]
fn closed_loop_value<'py>(
    py: Python<'py>,
    objective: &PyObjective,
    potential: &PyPotential,
    x0: Vec<f64>,
    t_end: f64,
) -> PyResult<Bound<'py, PyDict>> {
    check_dim(objective.0.dim(), &x0)?;
    let setup = ControlSetup::new(objective.0.clone(), potential.0.clone()).map_err(value_err)?;
    let x0 = vec(x0);
    let v = py
        .detach(|| dualbridge::closed_loop_value(&setup, &x0, t_end, &ClosedLoopOptions::default()))
        .map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("j", v.j)?;
    d.set_item("v0", v.v0)?;
    d.set_item("gap", v.gap)?;
    d.set_item("tail", v.tail)?;
    d.set_item("tail_reliable", v.tail_reliable)?;
    Ok(d)
}

#[pymodule]
fn precond_flow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPotential>()?;
    m.add_class::<PyObjective>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(npgm, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(check_duality, m)?)?;
    m.add_function(wrap_pyfunction!(closed_loop_value, m)?)?;
    Ok(())
}
