//! Python bindings for the `fklab` crate.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use fklab::cli::Format;
use fklab::kato::kinf_check;
use fklab::markov::{JumpFunction, ReversibleModel, SmoothMeasure};
use fklab::models::{
    build_diffusion_chain, build_stable_lattice, Boundary, Coefficient, DiffusionChainSpec, StableLatticeSpec,
};
use fklab::spectral::{lambda2_eigen, lambda2_reduced, lambda2_variational, spectral_report, SpectralOptions};

create_exception!(pyfklab, FklabError, PyValueError);

fn err(e: fklab::Error) -> PyErr {
    FklabError::new_err(e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn boundary(name: &str) -> PyResult<Boundary> {
    match name {
        "kill-outside" => Ok(Boundary::KillOutside),
        "reflect-truncate" => Ok(Boundary::ReflectTruncate),
        other => Err(FklabError::new_err(format!("unknown boundary {other:?}"))),
    }
}

/// A finite reversible jump chain.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: ReversibleModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ReversibleModel::from_json(text).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (half_width, spacing, alpha, c=1.0, boundary="kill-outside"))]
    fn stable_lattice(half_width: usize, spacing: f64, alpha: f64, c: f64, boundary: &str) -> PyResult<Self> {
        let mut spec = StableLatticeSpec::new(half_width, spacing, alpha);
        spec.c = Coefficient::Constant(c);
        spec.boundary = self::boundary(boundary)?;
        Ok(Self {
            inner: build_stable_lattice(&spec).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (half_width, spacing, a="1", boundary="kill-outside"))]
    fn diffusion_chain(half_width: usize, spacing: f64, a: &str, boundary: &str) -> PyResult<Self> {
        let mut spec = DiffusionChainSpec::new(half_width, spacing);
        spec.a = Coefficient::Expr(a.to_string());
        spec.boundary = self::boundary(boundary)?;
        Ok(Self {
            inner: build_diffusion_chain(&spec).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn m(&self) -> Vec<f64> {
        self.inner.m().to_vec()
    }

    #[getter]
    fn kappa(&self) -> Vec<f64> {
        self.inner.kappa().to_vec()
    }

    #[getter]
    fn conservative(&self) -> bool {
        self.inner.is_conservative()
    }

    fn generator(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.generator())
    }

    fn transition_semigroup(&self, t: f64) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.transition_semigroup(t).map_err(err)?))
    }

    fn tilt(&self, u: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.tilt(&u).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Model(states={}, conservative={})", self.inner.len(), self.inner.is_conservative())
    }
}

/// The triple `(u, μ̂, F)`.
#[pyclass(name = "Perturbation", frozen)]
struct PyPerturbation {
    inner: fklab::Perturbation,
}

#[pymethods]
impl PyPerturbation {
    #[new]
    #[pyo3(signature = (u, mu, f=None))]
    fn new(u: Vec<f64>, mu: Vec<f64>, f: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let n = u.len();
        let jumps = match f {
            None => JumpFunction::zero(n),
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(FklabError::new_err(format!("F must be {n}x{n}")));
                }
                JumpFunction::new(DMatrix::from_fn(n, n, |x, y| rows[x][y])).map_err(err)?
            }
        };
        let mu = SmoothMeasure::new(mu).map_err(err)?;
        Ok(Self {
            inner: fklab::Perturbation::new(u, mu, jumps).map_err(err)?,
        })
    }

    #[staticmethod]
    fn zero(n: usize) -> Self {
        Self {
            inner: fklab::Perturbation::zero(n),
        }
    }

    #[getter]
    fn u(&self) -> Vec<f64> {
        self.inner.u.clone()
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.inner.mu.density().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// `T_t f` from the exact matrix exponential.
#[pyfunction]
fn fk_apply_exact(model: &PyModel, pert: &PyPerturbation, t: f64, f: Vec<f64>) -> PyResult<Vec<f64>> {
    let op = fklab::fk_generator(&model.inner, &pert.inner).map_err(err)?;
    fklab::fk_apply_exact(&op, t, &f).map_err(err)
}

/// Monte Carlo `T_t f`; returns `(estimate, stderr)`.
#[pyfunction]
fn fk_apply_mc(
    py: Python<'_>,
    model: &PyModel,
    pert: &PyPerturbation,
    t: f64,
    f: Vec<f64>,
    n_paths: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let est = py
        .detach(|| fklab::semigroup::fk_apply_mc(&model.inner, &pert.inner, t, &f, n_paths, seed))
        .map_err(err)?;
    Ok((est.estimate, est.stderr))
}

/// Both sides of the Girsanov reduction: `(lhs, rhs, residual)`.
#[pyfunction]
fn reduce_via_girsanov(model: &PyModel, pert: &PyPerturbation, t: f64, f: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let r = fklab::reduce_via_girsanov(&model.inner, &pert.inner, t, &f).map_err(err)?;
    Ok((r.lhs, r.rhs, r.residual))
}

/// `λ₂` from the eigensolve, the variational form and the reduced operator.
#[pyfunction]
fn lambda2(model: &PyModel, pert: &PyPerturbation) -> PyResult<(f64, f64, f64)> {
    let op = fklab::fk_generator(&model.inner, &pert.inner).map_err(err)?;
    Ok((
        lambda2_eigen(&op),
        lambda2_variational(&model.inner, &pert.inner).map_err(err)?,
        lambda2_reduced(&model.inner, &pert.inner).map_err(err)?,
    ))
}

/// Spectral report as a JSON string.
#[pyfunction]
fn spectral_report_json(py: Python<'_>, model: &PyModel, pert: &PyPerturbation) -> PyResult<String> {
    let report = py
        .detach(|| spectral_report(&model.inner, &pert.inner, &SpectralOptions::default()))
        .map_err(err)?;
    report.to_json().map_err(err)
}

/// `K_∞` certificate for the measure with density `mu`, as a JSON string.
#[pyfunction]
#[pyo3(signature = (model, mu, eps=0.05, alpha=1.0))]
fn kinf_certificate_json(model: &PyModel, mu: Vec<f64>, eps: f64, alpha: f64) -> PyResult<String> {
    let mu = SmoothMeasure::new(mu).map_err(err)?;
    kinf_check(&model.inner, &mu, eps, alpha)
        .and_then(|c| c.to_json())
        .map_err(err)
}

/// Run a config file; returns the written paths.
#[pyfunction]
#[pyo3(signature = (config, out, seed=None, format="csv"))]
fn run_config(py: Python<'_>, config: PathBuf, out: PathBuf, seed: Option<u64>, format: &str) -> PyResult<Vec<String>> {
    let format: Format = format.parse().map_err(err)?;
    let outcome = py
        .detach(|| fklab::cli::run_file(&config, &out, seed, format))
        .map_err(err)?;
    if let Some(v) = outcome.violation {
        return Err(FklabError::new_err(format!("property violated: {v}")));
    }
    Ok(outcome.files.iter().map(|p| p.display().to_string()).collect())
}

#[pymodule]
fn pyfklab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FklabError", m.py().get_type::<FklabError>())?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPerturbation>()?;
    m.add_function(wrap_pyfunction!(fk_apply_exact, m)?)?;
    m.add_function(wrap_pyfunction!(fk_apply_mc, m)?)?;
    m.add_function(wrap_pyfunction!(reduce_via_girsanov, m)?)?;
    m.add_function(wrap_pyfunction!(lambda2, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_report_json, m)?)?;
    m.add_function(wrap_pyfunction!(kinf_certificate_json, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
