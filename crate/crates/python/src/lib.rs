//! Python bindings. Structured results come back as plain dicts and lists.

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use specbio::hamiltonian::{build_hamiltonian, estimate_bulk, CohortMatrix, SpectralModel};
use specbio::io::{cohort_to_csv, model_from_json, model_to_json, parse_cohort_csv, read_cohort_csv, read_model, write_model};
use specbio::perturbation::fingerprint as fingerprint_models;
use specbio::prognostic::{discriminant_modes, discriminant_residuals, llr_oracle, SpectralScorer};
use specbio::synth::{
    eigenplane_separation, regime_cohort as regime_draw, spiked_ensemble, two_group_demo, Regime, RegimeSpec, SpikedSpec,
    TwoGroupSpec,
};
use specbio::thermo::{free_energy, parse_beta_grid};
use specbio::transfer::{transfer_models, TransferPolicy};
use specbio::unification::{between_scatter_rank_ratio, cca_modes, lda_from_scatter, pca_modes, ScatterPair};
use specbio::{Error, ErrorClass};

create_exception!(specbio_py, SpecbioError, PyException, "Base class for specbio errors.");
create_exception!(specbio_py, InputError, SpecbioError, "Malformed, misaligned or out-of-contract input.");
create_exception!(specbio_py, NumericalError, SpecbioError, "The computation failed (no convergence, rank deficiency).");
create_exception!(specbio_py, CertificateError, SpecbioError, "A proven inequality failed to hold.");

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.class() {
        ErrorClass::Input => InputError::new_err(msg),
        ErrorClass::Numerical => NumericalError::new_err(msg),
        ErrorClass::Certificate => CertificateError::new_err(msg),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for specbio::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| SpecbioError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// A patient-by-biomarker table in raw units.
#[pyclass(module = "specbio_py", skip_from_py_object)]
#[derive(Clone)]
pub struct Cohort {
    inner: CohortMatrix,
}

#[pymethods]
impl Cohort {
    #[new]
    #[pyo3(signature = (rows, names, patient_ids = None))]
    fn new(rows: Vec<Vec<f64>>, names: Vec<String>, patient_ids: Option<Vec<String>>) -> PyResult<Self> {
        let n = rows.len();
        let p = names.len();
        if let Some(i) = rows.iter().position(|r| r.len() != p) {
            return Err(InputError::new_err(format!("row {i} has {} values for {p} biomarkers", rows[i].len())));
        }
        let data = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        let inner = match patient_ids {
            Some(ids) => CohortMatrix::new(data, names, ids),
            None => CohortMatrix::with_default_ids(data, names),
        }
        .or_py()?;
        Ok(Cohort { inner })
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        Ok(Cohort { inner: read_cohort_csv(path).or_py()? })
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Cohort { inner: parse_cohort_csv(text).or_py()? })
    }

    fn to_csv(&self) -> String {
        cohort_to_csv(&self.inner)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn patient_ids(&self) -> Vec<String> {
        self.inner.patient_ids().to_vec()
    }

    /// Rows in raw units.
    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n()).map(|i| self.inner.raw_row(i)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Cohort(n={}, p={})", self.inner.n(), self.inner.p())
    }
}

fn centered(c: &CohortMatrix) -> CohortMatrix {
    if c.is_centered() {
        c.clone()
    } else {
        c.clone().center()
    }
}

/// A fitted biomarker Hamiltonian and its spectrum.
#[pyclass(module = "specbio_py", skip_from_py_object)]
#[derive(Clone)]
pub struct Model {
    inner: SpectralModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn fit(cohort: PyRef<'_, Cohort>) -> PyResult<Self> {
        Ok(Model { inner: build_hamiltonian(&centered(&cohort.inner)).or_py()? })
    }

    #[staticmethod]
    #[pyo3(signature = (path, gamma = None))]
    fn load(path: &str, gamma: Option<f64>) -> PyResult<Self> {
        Ok(Model { inner: read_model(path, gamma).or_py()? })
    }

    #[staticmethod]
    #[pyo3(signature = (text, gamma = None))]
    fn from_json(text: &str, gamma: Option<f64>) -> PyResult<Self> {
        Ok(Model { inner: model_from_json(text, gamma).or_py()? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_model(&self.inner, path).or_py()
    }

    fn to_json(&self) -> PyResult<String> {
        model_to_json(&self.inner).or_py()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[getter]
    fn n(&self) -> Option<usize> {
        self.inner.n_source()
    }

    #[getter]
    fn means(&self) -> Vec<f64> {
        self.inner.means().to_vec()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    /// Eigenvectors as a list of columns, paired with `eigenvalues`.
    #[getter]
    fn eigenvectors(&self) -> Vec<Vec<f64>> {
        columns(self.inner.eigen().vectors())
    }

    #[getter]
    fn hamiltonian(&self) -> Vec<Vec<f64>> {
        self.inner.hamiltonian().to_rows()
    }

    /// Marchenko-Pastur bulk estimate.
    fn bulk<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &estimate_bulk(&self.inner).or_py()?)
    }

    fn __repr__(&self) -> String {
        format!("Model(p={}, gamma={})", self.inner.dim(), self.inner.gamma())
    }
}

/// Spectral fingerprint of `disease` against `reference`.
#[pyfunction]
fn fingerprint<'py>(py: Python<'py>, reference: PyRef<'_, Model>, disease: PyRef<'_, Model>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &fingerprint_models(&reference.inner, &disease.inner).or_py()?)
}

#[derive(Serialize)]
struct Discriminant {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    residuals: Vec<f64>,
    ridge: f64,
}

/// Generalized modes of `H_d v = nu (H_0 + ridge I) v`.
#[pyfunction]
#[pyo3(signature = (reference, disease, ridge = 0.0))]
fn discriminant<'py>(
    py: Python<'py>,
    reference: PyRef<'_, Model>,
    disease: PyRef<'_, Model>,
    ridge: f64,
) -> PyResult<Bound<'py, PyAny>> {
    reference.inner.check_aligned(&disease.inner).or_py()?;
    let (h0, hd) = (reference.inner.hamiltonian(), disease.inner.hamiltonian());
    let modes = discriminant_modes(h0, hd, ridge).or_py()?;
    let out = Discriminant {
        residuals: discriminant_residuals(h0, hd, &modes),
        vectors: columns(&modes.vectors),
        values: modes.values,
        ridge: modes.ridge,
    };
    to_py(py, &out)
}

/// Prognostic scorer against a disease model. Patients are given in raw
/// units; the model means are subtracted before scoring.
#[pyclass(module = "specbio_py")]
pub struct Scorer {
    model: SpectralModel,
    sigma2: f64,
}

impl Scorer {
    fn centered(&self, x: &[f64]) -> PyResult<Vec<f64>> {
        if x.len() != self.model.dim() {
            return Err(InputError::new_err(format!("{} values for {} biomarkers", x.len(), self.model.dim())));
        }
        Ok(x.iter().zip(self.model.means()).map(|(v, m)| v - m).collect())
    }

    fn scorer(&self) -> PyResult<SpectralScorer<'_>> {
        SpectralScorer::new(self.model.spectrum(), self.sigma2).or_py()
    }
}

#[pymethods]
impl Scorer {
    /// `sigma2=None` uses the bulk estimate of the model.
    #[new]
    #[pyo3(signature = (model, sigma2 = None))]
    fn new(model: PyRef<'_, Model>, sigma2: Option<f64>) -> PyResult<Self> {
        let sigma2 = match sigma2 {
            Some(v) => v,
            None => estimate_bulk(&model.inner).or_py()?.sigma2,
        };
        let s = Scorer { model: model.inner.clone(), sigma2 };
        s.scorer()?;
        Ok(s)
    }

    #[getter]
    fn sigma2(&self) -> f64 {
        self.sigma2
    }

    #[getter]
    fn weights(&self) -> PyResult<Vec<f64>> {
        Ok(self.scorer()?.weights().to_vec())
    }

    #[getter]
    fn constant(&self) -> PyResult<f64> {
        Ok(self.scorer()?.constant())
    }

    fn score(&self, x: Vec<f64>) -> PyResult<f64> {
        self.scorer()?.score(&self.centered(&x)?).or_py()
    }

    #[pyo3(signature = (x, patient_id = "patient"))]
    fn profile<'py>(&self, py: Python<'py>, x: Vec<f64>, patient_id: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.scorer()?.profile(patient_id, &self.centered(&x)?).or_py()?)
    }

    /// Direct Gaussian log-likelihood ratio of the same patient.
    fn llr(&self, x: Vec<f64>) -> PyResult<f64> {
        llr_oracle(&self.centered(&x)?, self.model.hamiltonian(), self.sigma2).or_py()
    }
}

/// Transfer diagnostics of the leading `r`-dimensional subspace.
#[pyfunction]
#[pyo3(signature = (source, target, r = 1))]
fn transfer<'py>(py: Python<'py>, source: PyRef<'_, Model>, target: PyRef<'_, Model>, r: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &transfer_models(&source.inner, &target.inner, r, &TransferPolicy::default()).or_py()?)
}

/// Partition function and free energy over a beta grid
/// (`default`, `log:LO:HI:N`, or comma-separated values).
#[pyfunction]
#[pyo3(signature = (model, grid = "default"))]
fn thermo<'py>(py: Python<'py>, model: PyRef<'_, Model>, grid: &str) -> PyResult<Bound<'py, PyAny>> {
    let eigs = model.inner.eigenvalues();
    let betas = parse_beta_grid(grid, eigs[0]).or_py()?;
    to_py(py, &free_energy(eigs, &betas).or_py()?)
}

/// Cohort drawn from one of the four coordination regimes.
#[pyfunction]
#[pyo3(signature = (regime, seed = 0, n = 500, p = 36))]
fn regime_cohort(regime: &str, seed: u64, n: usize, p: usize) -> PyResult<Cohort> {
    let regime: Regime = regime.parse().or_py()?;
    let spec = RegimeSpec { p, ..RegimeSpec::new(regime, n, seed) };
    Ok(Cohort { inner: regime_draw(&spec).or_py()?.0 })
}

/// Cohort from a spiked covariance `sigma2 I + sum theta_k u_k u_k^T`.
#[pyfunction]
#[pyo3(signature = (thetas, seed = 0, n = 500, gamma = 0.1, sigma2 = 1.0))]
fn spiked_cohort(thetas: Vec<f64>, seed: u64, n: usize, gamma: f64, sigma2: f64) -> PyResult<Cohort> {
    let e = spiked_ensemble(&SpikedSpec { thetas, gamma, sigma2, n, seed }).or_py()?;
    Ok(Cohort { inner: e.cohort })
}

#[derive(Serialize)]
struct TwoGroupSummary {
    patients: Vec<String>,
    labels: Vec<specbio::synth::Group>,
    scores: Vec<f64>,
    lambda1: f64,
    lambda2: f64,
    auc: f64,
}

/// Longitudinal two-group demo. Returns `(cohort, summary)`.
#[pyfunction]
#[pyo3(signature = (seed = 0, rate = 2.0, p = 10))]
fn two_group<'py>(py: Python<'py>, seed: u64, rate: f64, p: usize) -> PyResult<(Cohort, Bound<'py, PyAny>)> {
    let demo = two_group_demo(&TwoGroupSpec { seed, rate, p, ..Default::default() }).or_py()?;
    let sep = eigenplane_separation(&demo).or_py()?;
    let summary = TwoGroupSummary {
        patients: demo.patients.clone(),
        labels: demo.labels.clone(),
        scores: sep.scores,
        lambda1: sep.lambda1,
        lambda2: sep.lambda2,
        auc: sep.auc,
    };
    Ok((Cohort { inner: demo.cohort }, to_py(py, &summary)?))
}

#[derive(Serialize)]
struct Pca {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

#[pyfunction]
#[pyo3(signature = (cohort, r = 2))]
fn pca<'py>(py: Python<'py>, cohort: PyRef<'_, Cohort>, r: usize) -> PyResult<Bound<'py, PyAny>> {
    let m = pca_modes(&cohort.inner, r).or_py()?;
    to_py(py, &Pca { vectors: columns(&m.vectors), values: m.values })
}

/// Fisher direction; `None` when the class means coincide.
#[pyfunction]
#[pyo3(signature = (healthy, disease, ridge = 0.0))]
fn lda<'py>(py: Python<'py>, healthy: PyRef<'_, Cohort>, disease: PyRef<'_, Cohort>, ridge: f64) -> PyResult<Bound<'py, PyAny>> {
    let scatter = ScatterPair::from_cohorts(&healthy.inner, &disease.inner).or_py()?;
    let dir = lda_from_scatter(&scatter, ridge).or_py()?;
    let ratio = between_scatter_rank_ratio(&scatter).or_py()?;
    to_py(py, &serde_json::json!({ "direction": dir, "between_rank_ratio": ratio }))
}

#[pyfunction]
#[pyo3(signature = (x, y, r = 1, ridge = 0.0))]
fn cca<'py>(py: Python<'py>, x: PyRef<'_, Cohort>, y: PyRef<'_, Cohort>, r: usize, ridge: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &cca_modes(&x.inner, &y.inner, r, ridge).or_py()?)
}

#[pymodule]
fn specbio_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("SpecbioError", py.get_type::<SpecbioError>())?;
    m.add("InputError", py.get_type::<InputError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    m.add("CertificateError", py.get_type::<CertificateError>())?;
    m.add_class::<Cohort>()?;
    m.add_class::<Model>()?;
    m.add_class::<Scorer>()?;
    m.add_function(wrap_pyfunction!(fingerprint, m)?)?;
    m.add_function(wrap_pyfunction!(discriminant, m)?)?;
    m.add_function(wrap_pyfunction!(transfer, m)?)?;
    m.add_function(wrap_pyfunction!(thermo, m)?)?;
    m.add_function(wrap_pyfunction!(regime_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(spiked_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(two_group, m)?)?;
    m.add_function(wrap_pyfunction!(pca, m)?)?;
    m.add_function(wrap_pyfunction!(lda, m)?)?;
    m.add_function(wrap_pyfunction!(cca, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
