//! Spectral prognostic scores.
//!
//! Per-mode projections `π_k = x·q_k^d` and the composite
//! `Π = ½ Σ_k (1/σ² − 1/λ_k^d) π_k²`, which equals the Gaussian
//! log-likelihood ratio of disease `N(0, H_d)` against healthy `N(0, σ²I)`
//! up to the constant `C = ½ log(det(σ²I)/det H_d)`.
//!
//! Modes with `λ_k^d < EIGEN_FLOOR·λ₁^d` get zero weight (pseudo-inverse
//! convention) and are listed in the output.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::Spectrum;
use crate::linalg::{cholesky, solve_lower, solve_lower_transpose, symmetric_eigendecompose, whiten, SymMatrix};

/// Relative eigenvalue floor below which a mode is excluded from scoring.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// `π_k = x·q_k^d` for every mode.
pub fn mode_scores(x: &[f64], hd: &Spectrum) -> Result<Vec<f64>> {
    check_patient(x, hd.dim())?;
    let q = hd.eigen().vectors();
    Ok((0..hd.dim())
        .map(|k| q.column(k).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect())
}

fn check_patient(x: &[f64], p: usize) -> Result<()> {
    if x.len() != p {
        return Err(Error::Alignment(format!(
            "patient vector has {} entries, model has {p} biomarkers",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("patient vector has non-finite entries"));
    }
    Ok(())
}

/// Per-patient scoring output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreProfile {
    pub patient_id: String,
    pub projections: Vec<f64>,
    pub composite: f64,
    pub sigma2_used: f64,
    pub weights: Vec<f64>,
    /// One-based excluded modes onto which this patient projects nonzero.
    pub truncated_modes: Vec<usize>,
}

/// Precomputed weights for scoring many patients against one disease model.
#[derive(Debug, Clone)]
pub struct SpectralScorer<'a> {
    spectrum: &'a Spectrum,
    sigma2: f64,
    weights: Vec<f64>,
    excluded: Vec<usize>,
    constant: f64,
}

impl<'a> SpectralScorer<'a> {
    pub fn new(hd: &'a Spectrum, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::input(format!("sigma2 must be positive, got {sigma2}")));
        }
        let values = hd.eigenvalues();
        let floor = EIGEN_FLOOR * values[0];
        let mut weights = Vec::with_capacity(values.len());
        let mut excluded = Vec::new();
        let mut log_det = 0.0;
        for (k, &l) in values.iter().enumerate() {
            if l > 0.0 && l >= floor {
                weights.push(0.5 * (1.0 / sigma2 - 1.0 / l));
                log_det += l.ln();
            } else {
                weights.push(0.0);
                excluded.push(k);
            }
        }
        let admissible = (values.len() - excluded.len()) as f64;
        let constant = 0.5 * (admissible * sigma2.ln() - log_det);
        Ok(SpectralScorer {
            spectrum: hd,
            sigma2,
            weights,
            excluded,
            constant,
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `w_k = ½(1/σ² − 1/λ_k^d)`, zero for excluded modes.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// One-based indices of modes excluded by the eigenvalue floor.
    pub fn excluded_modes(&self) -> Vec<usize> {
        self.excluded.iter().map(|k| k + 1).collect()
    }

    /// `C = ½ log(det(σ²I)/det H_d)` over admissible modes.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let pi = mode_scores(x, self.spectrum)?;
        Ok(self.composite(&pi))
    }

    fn composite(&self, projections: &[f64]) -> f64 {
        projections
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * p * p)
            .sum()
    }

    pub fn profile(&self, patient_id: &str, x: &[f64]) -> Result<ScoreProfile> {
        let projections = mode_scores(x, self.spectrum)?;
        let composite = self.composite(&projections);
        let truncated_modes = self
            .excluded
            .iter()
            .filter(|&&k| projections[k] != 0.0)
            .map(|k| k + 1)
            .collect();
        Ok(ScoreProfile {
            patient_id: patient_id.to_owned(),
            projections,
            composite,
            sigma2_used: self.sigma2,
            weights: self.weights.clone(),
            truncated_modes,
        })
    }
}

/// `Π(x)` for a single patient.
pub fn composite_score(x: &[f64], hd: &Spectrum, sigma2: f64) -> Result<f64> {
    SpectralScorer::new(hd, sigma2)?.score(x)
}

/// Direct Gaussian log-likelihood ratio of `N(0, H_d)` against `N(0, σ²I)`.
///
/// Uses a Cholesky solve and log-determinant, never the eigendecomposition,
/// so it can serve as an independent check on [`composite_score`].
pub fn llr_oracle(x: &[f64], hd: &SymMatrix, sigma2: f64) -> Result<f64> {
    check_patient(x, hd.dim())?;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::input(format!("sigma2 must be positive, got {sigma2}")));
    }
    let l = cholesky(hd).map_err(|e| match e {
        Error::RankDeficient { index, value } => Error::OracleInapplicable(format!(
            "disease Hamiltonian is singular (pivot {index} = {value:e})"
        )),
        other => other,
    })?;
    let xv = DMatrix::from_column_slice(x.len(), 1, x);
    let y = solve_lower(&l, &xv);
    let quad: f64 = y.iter().map(|v| v * v).sum();
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let p = x.len() as f64;
    Ok(-0.5 * quad + 0.5 * xx / sigma2 + 0.5 * (p * sigma2.ln() - log_det))
}

/// Generalized eigenpairs of `H_d v = ν (H₀ + αI) v`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminantModes {
    /// `ν_k`, descending.
    pub values: Vec<f64>,
    /// Column k is `v_k`, normalized so that `v_jᵀ(H₀+αI)v_k = δ_jk`.
    pub vectors: DMatrix<f64>,
    /// Ridge α added to `H₀` before whitening.
    pub ridge: f64,
    /// Cholesky factor `L` of `H₀ + αI`.
    pub whitening: DMatrix<f64>,
}

impl DiscriminantModes {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k).iter().copied().collect()
    }
}

/// Discriminant spectral modes via Cholesky whitening of the reference.
pub fn discriminant_modes(h0: &SymMatrix, hd: &SymMatrix, ridge: f64) -> Result<DiscriminantModes> {
    if h0.dim() != hd.dim() {
        return Err(Error::Alignment(format!(
            "dimension mismatch: {} vs {}",
            h0.dim(),
            hd.dim()
        )));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::input(format!("ridge must be non-negative, got {ridge}")));
    }
    let reference = if ridge > 0.0 { h0.shift(ridge) } else { h0.clone() };
    let l = cholesky(&reference).map_err(|e| match e {
        Error::RankDeficient { index, value } => Error::RidgeRequired(format!(
            "reference is not positive definite (pivot {index} = {value:e}); add a ridge"
        )),
        other => other,
    })?;
    let w = whiten(&l, hd)?;
    let eig = symmetric_eigendecompose(&w)?;
    let mut vectors = solve_lower_transpose(&l, eig.vectors());
    for k in 0..vectors.ncols() {
        let col = vectors.column(k);
        let max = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let first = col.iter().find(|v| v.abs() >= max - 1e-12 * max.max(1.0));
        if first.is_some_and(|v| *v < 0.0) {
            vectors.column_mut(k).neg_mut();
        }
    }
    Ok(DiscriminantModes {
        values: eig.values().to_vec(),
        vectors,
        ridge,
        whitening: l,
    })
}

/// `‖H_d v − ν H₀ v‖` for each mode.
pub fn discriminant_residuals(h0: &SymMatrix, hd: &SymMatrix, modes: &DiscriminantModes) -> Vec<f64> {
    let reference = if modes.ridge > 0.0 { h0.shift(modes.ridge) } else { h0.clone() };
    (0..modes.values.len())
        .map(|k| {
            let v: DVector<f64> = modes.vectors.column(k).into_owned();
            (hd.as_matrix() * &v - reference.as_matrix() * &v * modes.values[k]).norm()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, spectral_norm};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn diag(d: &[f64]) -> Spectrum {
        Spectrum::new(SymMatrix::from_diagonal(d).unwrap()).unwrap()
    }

    fn random_pd(rng: &mut ChaCha20Rng, p: usize) -> SymMatrix {
        let b = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::new(&b * b.transpose() + DMatrix::identity(p, p) * 0.2).unwrap()
    }

    #[test]
    fn basis_vector_projects_onto_single_mode() {
        let hd = Spectrum::new(SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap()).unwrap();
        let q1 = hd.eigen().vector(0);
        let pi = mode_scores(&q1, &hd).unwrap();
        assert!((pi[0] - 1.0).abs() < 1e-15 && pi[1].abs() < 1e-15);
        assert_eq!(mode_scores(&[0.0, 0.0], &hd).unwrap(), vec![0.0, 0.0]);
        assert!(mode_scores(&[1.0], &hd).is_err());
    }

    #[test]
    fn parseval() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let hd = Spectrum::new(random_pd(&mut rng, 7)).unwrap();
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
        let pi = mode_scores(&x, &hd).unwrap();
        let a: f64 = pi.iter().map(|v| v * v).sum();
        let b: f64 = x.iter().map(|v| v * v).sum();
        assert!((a - b).abs() <= 1e-10 * b);
    }

    #[test]
    fn composite_examples() {
        let hd = diag(&[2.0, 1.0, 1.0]);
        assert_eq!(composite_score(&[2.0, 0.0, 0.0], &hd, 1.0).unwrap(), 1.0);
        assert_eq!(composite_score(&[0.0; 3], &hd, 1.0).unwrap(), 0.0);
        let null = diag(&[1.5, 1.5, 1.5]);
        assert_eq!(composite_score(&[1.0, -2.0, 0.3], &null, 1.5).unwrap(), 0.0);
        assert!(composite_score(&[1.0; 3], &hd, 0.0).is_err());
    }

    #[test]
    fn weight_signs_follow_sigma2() {
        let hd = diag(&[3.0, 1.0, 0.25]);
        let s = SpectralScorer::new(&hd, 1.0).unwrap();
        assert!(s.weights()[0] > 0.0);
        assert_eq!(s.weights()[1], 0.0);
        assert!(s.weights()[2] < 0.0);
        let prof = s.profile("x", &[1.0, 2.0, 3.0]).unwrap();
        let sum: f64 = prof.weights.iter().zip(&prof.projections).map(|(w, p)| w * p * p).sum();
        assert!((prof.composite - sum).abs() <= 1e-10 * sum.abs().max(1e-300));
    }

    #[test]
    fn floor_excludes_null_modes() {
        let hd = diag(&[2.0, 1.0, 0.0]);
        let s = SpectralScorer::new(&hd, 1.0).unwrap();
        assert_eq!(s.excluded_modes(), vec![3]);
        let prof = s.profile("p", &[0.0, 1.0, 5.0]).unwrap();
        assert_eq!(prof.truncated_modes, vec![3]);
        assert_eq!(prof.composite, 0.0);
        assert!(s.profile("p", &[1.0, 0.0, 0.0]).unwrap().truncated_modes.is_empty());
    }

    #[test]
    fn oracle_examples() {
        let hd = diag(&[2.0, 1.0, 0.5]);
        let s = SpectralScorer::new(&hd, 1.0).unwrap();
        let at_zero = llr_oracle(&[0.0; 3], hd.matrix(), 1.0).unwrap();
        assert!((at_zero - s.constant()).abs() < 1e-15);
        let iso = SymMatrix::identity(3).scale(0.7);
        assert!(llr_oracle(&[1.0, 2.0, 3.0], &iso, 0.7).unwrap().abs() < 1e-14);
        let singular = SymMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        assert!(matches!(llr_oracle(&[1.0, 1.0], &singular, 1.0), Err(Error::OracleInapplicable(_))));
    }

    #[test]
    fn oracle_differs_from_score_by_constant() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let hd = Spectrum::new(random_pd(&mut rng, 6)).unwrap();
        let s = SpectralScorer::new(&hd, 0.8).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let gap = llr_oracle(&x, hd.matrix(), 0.8).unwrap() - s.score(&x).unwrap();
            assert!((gap - s.constant()).abs() < 1e-8);
        }
    }

    #[test]
    fn discriminant_identity_reference_is_plain_eigen() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let hd = random_pd(&mut rng, 5);
        let d = discriminant_modes(&SymMatrix::identity(5), &hd, 0.0).unwrap();
        let e = symmetric_eigendecompose(&hd).unwrap();
        assert_eq!(d.values, e.values());
        assert_eq!(&d.vectors, e.vectors());
    }

    #[test]
    fn discriminant_diagonal_case() {
        let h0 = SymMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let hd = SymMatrix::from_diagonal(&[4.0, 2.0]).unwrap();
        let d = discriminant_modes(&h0, &hd, 0.0).unwrap();
        assert_eq!(d.values, vec![2.0, 1.0]);
        assert_eq!(d.vector(0), vec![0.0, 1.0]);
        assert_eq!(d.vector(1), vec![0.5, 0.0]);
    }

    #[test]
    fn discriminant_requires_pd_reference() {
        let h0 = SymMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        let hd = SymMatrix::identity(2);
        assert!(matches!(discriminant_modes(&h0, &hd, 0.0), Err(Error::RidgeRequired(_))));
        let d = discriminant_modes(&h0, &hd, 0.5).unwrap();
        assert_eq!(d.ridge, 0.5);
        assert!((d.values[0] - 2.0).abs() < 1e-15);
        assert!((d.values[1] - 1.0 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn discriminant_random_residuals() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let h0 = random_pd(&mut rng, 8);
        let hd = random_pd(&mut rng, 8);
        let d = discriminant_modes(&h0, &hd, 0.0).unwrap();
        let norm = spectral_norm(&hd).unwrap();
        for r in discriminant_residuals(&h0, &hd, &d) {
            assert!(r <= 1e-7 * norm);
        }
        let gram = d.vectors.transpose() * h0.as_matrix() * &d.vectors;
        assert!(max_abs_diff(&gram, &DMatrix::identity(8, 8)) <= 1e-8);
        assert!(d.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn discriminant_isotropic_reference_rescales() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let hd = random_pd(&mut rng, 5);
        let sigma2 = 2.5;
        let d = discriminant_modes(&SymMatrix::identity(5).scale(sigma2), &hd, 0.0).unwrap();
        let e = symmetric_eigendecompose(&hd).unwrap();
        for k in 0..5 {
            assert!((d.values[k] - e.values()[k] / sigma2).abs() < 1e-12);
            let scaled: Vec<f64> = d.vector(k).iter().map(|v| v * sigma2.sqrt()).collect();
            assert!(crate::perturbation::line_angle(&scaled, &e.vector(k)) < 1e-8);
            let n: f64 = scaled.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn monotone_evidence(t in 0.1f64..5.0, dt in 0.01f64..2.0) {
            let hd = diag(&[3.0, 1.0, 0.4]);
            let s = SpectralScorer::new(&hd, 1.0).unwrap();
            let up = |a: f64| s.score(&[a, 0.0, 0.0]).unwrap();
            let down = |a: f64| s.score(&[0.0, 0.0, a]).unwrap();
            prop_assert!(up(t + dt) > up(t));
            prop_assert!(down(t + dt) < down(t));
        }

        #[test]
        fn rotation_invariance(seed in any::<u64>(), p in 2usize..8) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let hd = random_pd(&mut rng, p);
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
            let r = g.qr().q();
            let rotated = SymMatrix::new(&r * hd.as_matrix() * r.transpose()).unwrap();
            let rx = &r * DVector::from_column_slice(&x);
            let a = composite_score(&x, &Spectrum::new(hd).unwrap(), 1.3).unwrap();
            let b = composite_score(rx.as_slice(), &Spectrum::new(rotated).unwrap(), 1.3).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }
}
