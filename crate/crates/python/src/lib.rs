//! Python bindings: model loading, point evaluations and the report commands.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use falg::cli::{self, Options};
use falg::connection::{connection_at, spray};
use falg::curvature::flag_curvature;
use falg::dynamics::geodesic;
use falg::exprjet::{eval_value, parse};
use falg::linalg::matrix_rows;

fn err(e: falg::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Report commands accepted by [`Model::run`].
pub const COMMANDS: [&str; 6] = ["check", "connection", "geodesic", "hamiltonian", "curvature", "leaf"];

/// Build CLI options from keyword arguments; unknown keys are an error so
/// typos do not silently fall back to defaults.
pub fn options_from(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Options> {
    let mut o = Options::default();
    let Some(kw) = kwargs else { return Ok(o) };
    for (k, v) in kw.iter() {
        let key: String = k.extract()?;
        match key.as_str() {
            "points" => o.points = Some(v.extract()?),
            "tol" => o.tol = Some(v.extract()?),
            "x0" => o.x0 = Some(v.extract()?),
            "y0" => o.y0 = Some(v.extract()?),
            "t_end" | "time" => o.t_end = Some(v.extract()?),
            "rtol" => o.rtol = Some(v.extract()?),
            "point" => o.point = Some(v.extract()?),
            "flag" => o.flag = Some(v.extract()?),
            "velocity" => o.velocity = Some(v.extract()?),
            _ => return Err(PyValueError::new_err(format!("unknown option `{key}`"))),
        }
    }
    Ok(o)
}

#[pyclass(frozen, module = "falg_py")]
pub struct Model {
    inner: falg::Model,
}

#[pymethods]
impl Model {
    /// `gallery:NAME` or a path to a JSON model file.
    #[staticmethod]
    fn load(source: &str) -> PyResult<Model> {
        Ok(Model { inner: falg::Model::load(source).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Model> {
        Ok(Model { inner: falg::Model::from_json(text).map_err(err)? })
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn has_leaf(&self) -> bool {
        self.inner.leaf.is_some()
    }

    fn to_json(&self) -> String {
        self.inner.spec.to_json()
    }

    /// `F` (or `L` for Lagrangian models), `g` as nested lists and the
    /// smallest Cholesky pivot.
    fn metric_at<'py>(&self, py: Python<'py>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let m = self.inner.fd.metric_at(&x, &y).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("f", m.f)?;
        d.set_item("l", m.l)?;
        d.set_item("g", matrix_rows(&m.g))?;
        d.set_item("min_pivot", m.min_pivot)?;
        Ok(d)
    }

    fn spray(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(spray(&self.inner.bundle, &self.inner.fd, &x, &y).map_err(err)?.iter().copied().collect())
    }

    /// `gamma[c][a][b]` is the symbol with upper index `c`.
    fn christoffel(&self, py: Python<'_>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let (b, fd) = (&self.inner.bundle, &self.inner.fd);
        let cd = py.detach(|| connection_at(b, fd, &x, &y)).map_err(err)?;
        Ok(cd.gamma.to_nested())
    }

    fn nonlinear_connection(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let cd = connection_at(&self.inner.bundle, &self.inner.fd, &x, &y).map_err(err)?;
        Ok(matrix_rows(&cd.nonlinear))
    }

    fn flag_curvature(&self, py: Python<'_>, x: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
        let (b, fd) = (&self.inner.bundle, &self.inner.fd);
        Ok(py.detach(|| flag_curvature(b, fd, &x, &u, &v)).map_err(err)?.k)
    }

    /// Returns `(t, states)` with states `[x..., y...]`; the model's force is
    /// applied when present.
    #[pyo3(signature = (x0, y0, t_end = 1.0, rtol = 1e-9))]
    fn geodesic(&self, py: Python<'_>, x0: Vec<f64>, y0: Vec<f64>, t_end: f64, rtol: f64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let m = &self.inner;
        let run = py.detach(|| geodesic(&m.bundle, &m.fd, m.force.as_deref(), &x0, &y0, t_end, rtol)).map_err(err)?;
        Ok((run.trajectory.t, run.trajectory.states))
    }

    /// Run a report command; returns the report as a dict. Keyword options
    /// mirror the CLI flags (`points`, `tol`, `x0`, `y0`, `t_end`, `rtol`,
    /// `point`, `flag`, `velocity`).
    #[pyo3(signature = (command, **kwargs))]
    fn run<'py>(&self, py: Python<'py>, command: &str, kwargs: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyAny>> {
        if !COMMANDS.contains(&command) {
            return Err(PyValueError::new_err(format!("unknown command `{command}`")));
        }
        let opts = options_from(kwargs)?;
        let m = &self.inner;
        let rep = py.detach(|| cli::run(command, m, &opts)).map_err(err)?;
        let d = json_to_py(py, &rep.to_json())?;
        d.set_item("passed", rep.passed())?;
        if let Some(csv) = rep.csv {
            d.set_item("csv", csv)?;
        }
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Model(name={:?}, n={}, k={})", self.inner.name(), self.inner.n(), self.inner.k())
    }
}

#[pyfunction]
fn gallery_names() -> Vec<&'static str> {
    falg::gallery::names()
}

/// Parse and pretty-print an expression (fully parenthesised).
#[pyfunction]
fn parse_expr(source: &str) -> PyResult<String> {
    parse(source).map(|e| e.to_string()).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
#[pyo3(signature = (source, x, y = Vec::new()))]
fn evaluate(source: &str, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    let e = parse(source).map_err(|e| PyValueError::new_err(e.to_string()))?;
    eval_value(&e, &x, &y).map_err(err)
}

#[pymodule]
pub fn falg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(gallery_names, m)?)?;
    m.add_function(wrap_pyfunction!(parse_expr, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kwargs_map_onto_options() {
        Python::attach(|py| {
            let kw = PyDict::new(py);
            kw.set_item("points", 7).unwrap();
            kw.set_item("time", 0.5).unwrap();
            kw.set_item("flag", (vec![1.0, 0.0], vec![0.0, 1.0])).unwrap();
            let o = options_from(Some(&kw)).unwrap();
            assert_eq!(o.points, Some(7));
            assert_eq!(o.t_end, Some(0.5));
            assert_eq!(o.flag, Some((vec![1.0, 0.0], vec![0.0, 1.0])));
            kw.set_item("pionts", 3).unwrap();
            assert!(options_from(Some(&kw)).is_err());
        });
    }
}
