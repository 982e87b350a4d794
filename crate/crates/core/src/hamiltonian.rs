//! Cohort data, the biomarker Hamiltonian `H = XᵀX/n`, and bulk-noise
//! characterization through the Marchenko-Pastur support.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigendecompose, EigenSystem, SymMatrix};

/// Relative tolerance on negative eigenvalues of a PSD model.
pub const PSD_TOL: f64 = 1e-10;
/// Eigenvalues at or below this fraction of `λ₁` count as zero.
pub const RANK_TOL: f64 = 1e-8;
/// Relative change that ends the bulk fixed-point iteration.
pub const BULK_FIXED_POINT_TOL: f64 = 1e-6;
pub const BULK_MAX_ITERATIONS: usize = 20;

/// An `n × p` measurement matrix with biomarker labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortMatrix {
    data: DMatrix<f64>,
    names: Vec<String>,
    patient_ids: Vec<String>,
    /// Column means that were subtracted (zeros for a raw cohort).
    means: Vec<f64>,
    centered: bool,
}

impl CohortMatrix {
    /// A raw (uncentered) cohort.
    pub fn new(data: DMatrix<f64>, names: Vec<String>, patient_ids: Vec<String>) -> Result<Self> {
        let (n, p) = data.shape();
        if n < 2 {
            return Err(Error::input(format!("n >= 2 required, got {n}")));
        }
        if p < 1 {
            return Err(Error::input("p >= 1 required"));
        }
        if names.len() != p {
            return Err(Error::input(format!(
                "{} biomarker names for {p} columns",
                names.len()
            )));
        }
        if patient_ids.len() != n {
            return Err(Error::input(format!(
                "{} patient ids for {n} rows",
                patient_ids.len()
            )));
        }
        validate_names(&names)?;
        for i in 0..n {
            for j in 0..p {
                if !data[(i, j)].is_finite() {
                    return Err(Error::input(format!(
                        "non-finite value for patient {} biomarker {}",
                        patient_ids[i], names[j]
                    )));
                }
            }
        }
        Ok(CohortMatrix {
            data,
            names,
            patient_ids,
            means: vec![0.0; p],
            centered: false,
        })
    }

    /// Raw cohort with patient ids `p1..pn`.
    pub fn with_default_ids(data: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let ids = (1..=data.nrows()).map(|i| format!("p{i}")).collect();
        Self::new(data, names, ids)
    }

    /// Subtracts column means. Idempotent up to rounding.
    pub fn center(mut self) -> Self {
        let n = self.n() as f64;
        for j in 0..self.p() {
            let mean = self.data.column(j).sum() / n;
            for i in 0..self.n() {
                self.data[(i, j)] -= mean;
            }
            self.means[j] += mean;
        }
        self.centered = true;
        self
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn patient_ids(&self) -> &[String] {
        &self.patient_ids
    }

    /// Column means removed by centering.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Row `i` in original (uncentered) units.
    pub fn raw_row(&self, i: usize) -> Vec<f64> {
        (0..self.p())
            .map(|j| self.data[(i, j)] + self.means[j])
            .collect()
    }

    /// Indices of columns with zero variance. These are kept, only flagged.
    pub fn zero_variance_columns(&self) -> Vec<usize> {
        (0..self.p())
            .filter(|&j| {
                let col = self.data.column(j);
                let first = col[0];
                col.iter().all(|&v| v == first)
            })
            .collect()
    }

    /// The columns `cols`, in that order, as a new cohort.
    pub fn select_columns(&self, cols: &[usize]) -> Result<CohortMatrix> {
        let data = DMatrix::from_fn(self.n(), cols.len(), |i, j| self.data[(i, cols[j])]);
        let names = cols.iter().map(|&j| self.names[j].clone()).collect();
        let mut c = CohortMatrix::new(data, names, self.patient_ids.clone())?;
        c.means = cols.iter().map(|&j| self.means[j]).collect();
        c.centered = self.centered;
        Ok(c)
    }
}

fn validate_names(names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for name in names {
        if name.trim().is_empty() {
            return Err(Error::input("biomarker names must be non-empty"));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::input(format!("duplicate biomarker name '{name}'")));
        }
    }
    Ok(())
}

/// Centers `raw` column-wise; patient ids default to `p1..pn`.
pub fn center_columns(raw: DMatrix<f64>, names: Vec<String>) -> Result<CohortMatrix> {
    Ok(CohortMatrix::with_default_ids(raw, names)?.center())
}

/// A symmetric matrix together with its ordered eigendecomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    matrix: SymMatrix,
    eigen: EigenSystem,
}

impl Spectrum {
    pub fn new(matrix: SymMatrix) -> Result<Self> {
        let eigen = symmetric_eigendecompose(&matrix)?;
        Ok(Spectrum { matrix, eigen })
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn eigen(&self) -> &EigenSystem {
        &self.eigen
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.eigen.values()
    }

    /// `λ₁ - λ₂`, or `None` when `p = 1`.
    pub fn eigengap(&self) -> Option<f64> {
        let v = self.eigen.values();
        (v.len() >= 2).then(|| v[0] - v[1])
    }
}

impl AsRef<Spectrum> for Spectrum {
    fn as_ref(&self) -> &Spectrum {
        self
    }
}

/// A PSD biomarker Hamiltonian with its spectral decomposition and the
/// metadata needed to compare and score against it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    spectrum: Spectrum,
    names: Vec<String>,
    means: Vec<f64>,
    n_source: Option<usize>,
    gamma: f64,
}

impl SpectralModel {
    /// Wraps an existing PSD matrix. `gamma` must be given explicitly
    /// because there is no cohort to derive it from.
    pub fn from_matrix(
        h: SymMatrix,
        names: Vec<String>,
        gamma: f64,
        means: Option<Vec<f64>>,
        n_source: Option<usize>,
    ) -> Result<Self> {
        let p = h.dim();
        if names.len() != p {
            return Err(Error::input(format!("{} names for a {p}x{p} matrix", names.len())));
        }
        validate_names(&names)?;
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::input(format!("gamma must be positive, got {gamma}")));
        }
        let means = means.unwrap_or_else(|| vec![0.0; p]);
        if means.len() != p || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::input("means must be p finite values"));
        }
        let mut spectrum = Spectrum::new(h)?;
        let lead = spectrum.eigen.values()[0].max(0.0);
        let tol = PSD_TOL * lead;
        let min = *spectrum.eigen.values().last().expect("p >= 1");
        if min < -tol {
            return Err(Error::input(format!(
                "matrix is not positive semidefinite: smallest eigenvalue {min:e}"
            )));
        }
        spectrum.eigen.clamp_small_negatives(tol);
        Ok(SpectralModel {
            spectrum,
            names,
            means,
            n_source,
            gamma,
        })
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn hamiltonian(&self) -> &SymMatrix {
        &self.spectrum.matrix
    }

    pub fn eigen(&self) -> &EigenSystem {
        &self.spectrum.eigen
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.spectrum.eigen.values()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Column means of the source cohort; scoring subtracts these.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn n_source(&self) -> Option<usize> {
        self.n_source
    }

    /// Aspect ratio `p/n`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    /// Errors unless `other` has the same biomarkers in the same order.
    pub fn check_aligned(&self, other: &SpectralModel) -> Result<()> {
        if self.names == other.names {
            return Ok(());
        }
        let a: HashSet<&String> = self.names.iter().collect();
        let b: HashSet<&String> = other.names.iter().collect();
        let mut diff: Vec<&str> = a.symmetric_difference(&b).map(|s| s.as_str()).collect();
        diff.sort_unstable();
        if diff.is_empty() {
            return Err(Error::Alignment(
                "biomarker names match but their order differs".into(),
            ));
        }
        Err(Error::Alignment(format!(
            "biomarker names differ: {}",
            diff.join(", ")
        )))
    }
}

impl AsRef<Spectrum> for SpectralModel {
    fn as_ref(&self) -> &Spectrum {
        &self.spectrum
    }
}

/// `H = XᵀX / n` for a centered cohort.
pub fn hamiltonian_matrix(cohort: &CohortMatrix) -> Result<SymMatrix> {
    if !cohort.is_centered() {
        return Err(Error::input("cohort must be mean-centered"));
    }
    let (n, p) = cohort.data.shape();
    let x = &cohort.data;
    let mut h = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        for k in j..p {
            let mut s = 0.0;
            for i in 0..n {
                s += x[(i, j)] * x[(i, k)];
            }
            let v = s / n as f64;
            h[(j, k)] = v;
            h[(k, j)] = v;
        }
    }
    SymMatrix::new(h)
}

/// The biomarker Hamiltonian and its spectral model.
pub fn build_hamiltonian(cohort: &CohortMatrix) -> Result<SpectralModel> {
    let h = hamiltonian_matrix(cohort)?;
    let gamma = cohort.p() as f64 / cohort.n() as f64;
    SpectralModel::from_matrix(
        h,
        cohort.names.clone(),
        gamma,
        Some(cohort.means.clone()),
        Some(cohort.n()),
    )
}

/// Marchenko-Pastur support endpoints `((σ(1-√γ))², (σ(1+√γ))²)`.
pub fn mp_support(sigma2: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::input(format!("sigma2 must be positive, got {sigma2}")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::input(format!("gamma must be positive, got {gamma}")));
    }
    let sigma = sigma2.sqrt();
    let root = gamma.sqrt();
    Ok(((sigma * (1.0 - root)).powi(2), (sigma * (1.0 + root)).powi(2)))
}

/// Isotropic noise level and the Marchenko-Pastur edge it implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkModel {
    pub sigma2: f64,
    pub gamma: f64,
    pub lower_edge: f64,
    pub upper_edge: f64,
    /// Eigenvalues strictly above `upper_edge`.
    pub n_above_edge: usize,
    pub iterations: usize,
}

/// Estimates σ² by iterative trimming: σ² is the mean of all eigenvalues at
/// or below the current upper edge, repeated to a fixed point.
pub fn estimate_bulk(model: &SpectralModel) -> Result<BulkModel> {
    estimate_bulk_from(model.eigenvalues(), model.gamma())
}

/// [`estimate_bulk`] over a bare eigenvalue list.
pub fn estimate_bulk_from(eigenvalues: &[f64], gamma: f64) -> Result<BulkModel> {
    if eigenvalues.is_empty() {
        return Err(Error::input("no eigenvalues"));
    }
    let lead = eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let nonzero = eigenvalues
        .iter()
        .filter(|&&v| v > RANK_TOL * lead && v > 0.0)
        .count();
    if nonzero < 5 {
        return Err(Error::input(format!(
            "bulk estimation needs at least 5 nonzero eigenvalues, got {nonzero}"
        )));
    }
    let mean = |edge: f64| -> Option<f64> {
        let kept: Vec<f64> = eigenvalues.iter().copied().filter(|&v| v <= edge).collect();
        (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64)
    };

    let mut sigma2 = mean(f64::INFINITY).expect("non-empty");
    let mut trace = vec![sigma2];
    for it in 1..=BULK_MAX_ITERATIONS {
        if !(sigma2 > 0.0) {
            return Err(Error::Estimation { trace });
        }
        let (_, upper) = mp_support(sigma2, gamma)?;
        let next = match mean(upper) {
            Some(m) => m,
            None => return Err(Error::Estimation { trace }),
        };
        trace.push(next);
        let done = (next - sigma2).abs() <= BULK_FIXED_POINT_TOL * sigma2;
        sigma2 = next;
        if done {
            let (lower_edge, upper_edge) = mp_support(sigma2, gamma)?;
            let n_above_edge = eigenvalues.iter().filter(|&&v| v > upper_edge).count();
            return Ok(BulkModel {
                sigma2,
                gamma,
                lower_edge,
                upper_edge,
                n_above_edge,
                iterations: it,
            });
        }
    }
    Err(Error::Estimation { trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Detectability {
    Detectable,
    Undetectable,
}

/// A spike of strength θ separates from the bulk iff `θ > √γ` (strict).
pub fn bbp_detectability(theta: f64, gamma: f64) -> Result<Detectability> {
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::input(format!("theta must be non-negative, got {theta}")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::input(format!("gamma must be positive, got {gamma}")));
    }
    Ok(if theta > gamma.sqrt() {
        Detectability::Detectable
    } else {
        Detectability::Undetectable
    })
}
