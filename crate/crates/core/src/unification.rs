//! PCA, two-class LDA and CCA expressed through the same Hamiltonian and
//! whitening machinery as the rest of the crate.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{build_hamiltonian, hamiltonian_matrix, CohortMatrix};
use crate::linalg::{cholesky, small_svd, solve_lower, solve_lower_transpose, symmetric_eigendecompose, SymMatrix};
use crate::prognostic::discriminant_modes;

/// Leading eigenpairs of a cohort's Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModes {
    pub values: Vec<f64>,
    /// `p × r`, eigenvectors as columns.
    pub vectors: DMatrix<f64>,
}

fn centered(cohort: &CohortMatrix) -> CohortMatrix {
    if cohort.is_centered() {
        cohort.clone()
    } else {
        cohort.clone().center()
    }
}

/// Top-`r` eigenpairs of the cohort Hamiltonian (the cohort is centered
/// first if it is raw).
pub fn pca_modes(cohort: &CohortMatrix, r: usize) -> Result<PcaModes> {
    let p = cohort.p();
    if r == 0 || r > p {
        return Err(Error::input(format!("r must be in 1..={p}, got {r}")));
    }
    let model = build_hamiltonian(&centered(cohort))?;
    Ok(PcaModes {
        values: model.eigenvalues()[..r].to_vec(),
        vectors: model.eigen().leading(r),
    })
}

/// Two-class scatter matrices with equal priors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPair {
    /// `(n₀n_d/n)(μ_d − μ₀)(μ_d − μ₀)ᵀ`.
    pub s_b: SymMatrix,
    /// `(n₀/n)H₀ + (n_d/n)H_d`.
    pub s_w: SymMatrix,
    pub n0: usize,
    pub nd: usize,
    pub mu0: Vec<f64>,
    pub mud: Vec<f64>,
}

impl ScatterPair {
    pub fn new(h0: &SymMatrix, hd: &SymMatrix, mu0: Vec<f64>, mud: Vec<f64>, n0: usize, nd: usize) -> Result<Self> {
        let p = h0.dim();
        if hd.dim() != p || mu0.len() != p || mud.len() != p {
            return Err(Error::Alignment("scatter inputs disagree on dimension".into()));
        }
        if n0 == 0 || nd == 0 {
            return Err(Error::input("class sizes must be positive"));
        }
        let n = (n0 + nd) as f64;
        let d = DVector::from_iterator(p, mud.iter().zip(&mu0).map(|(a, b)| a - b));
        let s_b = SymMatrix::new(&d * d.transpose() * (n0 as f64 * nd as f64 / n))?;
        let s_w = h0.scale(n0 as f64 / n).add(&hd.scale(nd as f64 / n))?;
        Ok(ScatterPair { s_b, s_w, n0, nd, mu0, mud })
    }

    /// Scatter of two aligned raw cohorts.
    pub fn from_cohorts(healthy: &CohortMatrix, disease: &CohortMatrix) -> Result<Self> {
        if healthy.names() != disease.names() {
            return Err(Error::Alignment("healthy and disease cohorts have different biomarkers".into()));
        }
        let (c0, cd) = (centered(healthy), centered(disease));
        ScatterPair::new(
            &hamiltonian_matrix(&c0)?,
            &hamiltonian_matrix(&cd)?,
            c0.means().to_vec(),
            cd.means().to_vec(),
            c0.n(),
            cd.n(),
        )
    }

    pub fn mean_difference(&self) -> Vec<f64> {
        self.mud.iter().zip(&self.mu0).map(|(a, b)| a - b).collect()
    }
}

/// The Fisher direction and its closed-form counterpart.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdaDirection {
    /// Unit `w*`, oriented so that `w*·(μ_d − μ₀) > 0`.
    pub direction: Vec<f64>,
    /// Leading generalized eigenvalue of `S_B w = λ S_W w`.
    pub eigenvalue: f64,
    /// Unit `S_W⁻¹(μ_d − μ₀)`.
    pub closed_form: Vec<f64>,
    pub angle_to_closed_form: f64,
    pub ridge: f64,
}

/// Fisher direction of two cohorts; `None` when the class means coincide.
pub fn lda_direction(healthy: &CohortMatrix, disease: &CohortMatrix, ridge: f64) -> Result<Option<LdaDirection>> {
    lda_from_scatter(&ScatterPair::from_cohorts(healthy, disease)?, ridge)
}

fn unit(v: &DVector<f64>) -> Vec<f64> {
    let n = v.norm();
    v.iter().map(|x| x / n).collect()
}

pub fn lda_from_scatter(scatter: &ScatterPair, ridge: f64) -> Result<Option<LdaDirection>> {
    let d = DVector::from_vec(scatter.mean_difference());
    if d.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    let modes = discriminant_modes(&scatter.s_w, &scatter.s_b, ridge).map_err(|e| match e {
        Error::RidgeRequired(_) => Error::RidgeRequired(
            "within-class scatter S_W is not positive definite; add a ridge".into(),
        ),
        other => other,
    })?;
    let mut w: DVector<f64> = modes.vectors.column(0).into_owned();
    if w.dot(&d) < 0.0 {
        w.neg_mut();
    }
    let l = &modes.whitening;
    let closed = solve_lower_transpose(l, &solve_lower(l, &DMatrix::from_column_slice(d.len(), 1, d.as_slice())));
    let closed = DVector::from_column_slice(closed.as_slice());
    let direction = unit(&w);
    let closed_form = unit(&closed);
    let angle = crate::perturbation::line_angle(&direction, &closed_form);
    Ok(Some(LdaDirection {
        direction,
        eigenvalue: modes.values[0],
        closed_form,
        angle_to_closed_form: angle,
        ridge,
    }))
}

/// Canonical correlations and weight vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcaModes {
    /// `ρ_k ∈ [0, 1]`, descending.
    pub rho: Vec<f64>,
    /// `p₁ × r`, normalized so that `uᵀH_XX u = 1`.
    #[serde(serialize_with = "columns")]
    pub u: DMatrix<f64>,
    /// `p₂ × r`, normalized so that `vᵀH_YY v = 1`.
    #[serde(serialize_with = "columns")]
    pub v: DMatrix<f64>,
    pub ridge: f64,
}

fn columns<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let cols: Vec<Vec<f64>> = m.column_iter().map(|c| c.iter().copied().collect()).collect();
    cols.serialize(s)
}

fn block_cholesky(h: &SymMatrix, ridge: f64, block: &str) -> Result<DMatrix<f64>> {
    let a = if ridge > 0.0 { h.shift(ridge) } else { h.clone() };
    cholesky(&a).map_err(|e| match e {
        Error::RankDeficient { index, value } => Error::RidgeRequired(format!(
            "block {block} covariance is not positive definite (pivot {index} = {value:e}); add a ridge"
        )),
        other => other,
    })
}

/// Top-`r` canonical pairs of two blocks measured on the same patients.
pub fn cca_modes(x: &CohortMatrix, y: &CohortMatrix, r: usize, ridge: f64) -> Result<CcaModes> {
    if x.n() != y.n() {
        return Err(Error::Alignment(format!("blocks have {} and {} rows", x.n(), y.n())));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::input(format!("ridge must be non-negative, got {ridge}")));
    }
    let k = x.p().min(y.p());
    if r == 0 || r > k {
        return Err(Error::input(format!("r must be in 1..={k}, got {r}")));
    }
    let (xc, yc) = (centered(x), centered(y));
    let n = x.n() as f64;
    let hxx = hamiltonian_matrix(&xc)?;
    let hyy = hamiltonian_matrix(&yc)?;
    let hxy = xc.data().transpose() * yc.data() / n;
    let lx = block_cholesky(&hxx, ridge, "X")?;
    let ly = block_cholesky(&hyy, ridge, "Y")?;
    let half = solve_lower(&lx, &hxy);
    let w = solve_lower(&ly, &half.transpose()).transpose();
    let svd = small_svd(&w)?;
    let mut u = solve_lower_transpose(&lx, &svd.left.columns(0, r).into_owned());
    let mut v = solve_lower_transpose(&ly, &svd.right.columns(0, r).into_owned());
    for c in 0..r {
        let col = u.column(c);
        let max = col.amax();
        if col.iter().find(|e| e.abs() >= max - 1e-12 * max).is_some_and(|e| *e < 0.0) {
            u.column_mut(c).neg_mut();
            v.column_mut(c).neg_mut();
        }
    }
    let rho = svd.singular_values[..r].iter().map(|s| s.clamp(0.0, 1.0)).collect();
    Ok(CcaModes { rho, u, v, ridge })
}

/// Second-largest over largest eigenvalue of `S_B`.
pub fn between_scatter_rank_ratio(scatter: &ScatterPair) -> Result<f64> {
    let eig = symmetric_eigendecompose(&scatter.s_b)?;
    let v = eig.values();
    if v.len() < 2 || v[0] <= 0.0 {
        return Ok(0.0);
    }
    Ok(v[1].abs() / v[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::line_angle;
    use crate::synth::{biomarker_names, gaussian_cohort};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_cov(rng: &mut ChaCha20Rng, p: usize) -> SymMatrix {
        let g = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::new(&g * g.transpose() + DMatrix::identity(p, p) * 0.5).unwrap()
    }

    fn shifted(c: &CohortMatrix, shift: &[f64]) -> CohortMatrix {
        let mut data = c.data().clone();
        for mut row in data.row_iter_mut() {
            for (v, s) in row.iter_mut().zip(shift) {
                *v += s;
            }
        }
        CohortMatrix::with_default_ids(data, c.names().to_vec()).unwrap()
    }

    fn transformed(c: &CohortMatrix, a: &DMatrix<f64>) -> CohortMatrix {
        let data = c.data() * a.transpose();
        CohortMatrix::with_default_ids(data, biomarker_names(a.nrows())).unwrap()
    }

    fn lu_closed_form(s: &ScatterPair) -> Vec<f64> {
        let d = DVector::from_vec(s.mean_difference());
        let x = s.s_w.as_matrix().clone().lu().solve(&d).unwrap();
        unit(&x)
    }

    #[test]
    fn pca_is_the_model_spectrum() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let c = gaussian_cohort(&random_cov(&mut rng, 5), 40, 1).unwrap();
        let model = build_hamiltonian(&c.clone().center()).unwrap();
        let pca = pca_modes(&c, 2).unwrap();
        assert_eq!(pca.values, model.eigenvalues()[..2]);
        assert_eq!(pca.vectors, model.eigen().leading(2));
        assert_eq!(pca_modes(&c, 5).unwrap().vectors, *model.eigen().vectors());
        assert!(pca_modes(&c, 6).is_err());
        assert!(pca_modes(&c, 0).is_err());
    }

    #[test]
    fn isotropic_within_class() {
        let s = ScatterPair::new(
            &SymMatrix::identity(3),
            &SymMatrix::identity(3),
            vec![0.0; 3],
            vec![1.0, 0.0, 0.0],
            10,
            10,
        )
        .unwrap();
        let w = lda_from_scatter(&s, 0.0).unwrap().unwrap();
        assert!((w.direction[0] - 1.0).abs() < 1e-12);
        assert!(w.direction[1].abs() < 1e-12 && w.direction[2].abs() < 1e-12);
    }

    #[test]
    fn identical_means_have_no_direction() {
        let s = ScatterPair::new(&SymMatrix::identity(2), &SymMatrix::identity(2), vec![1.0, 2.0], vec![1.0, 2.0], 5, 5)
            .unwrap();
        assert_eq!(lda_from_scatter(&s, 0.0).unwrap(), None);
    }

    #[test]
    fn lda_matches_closed_form() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for seed in 0..10 {
            let sigma = random_cov(&mut rng, 6);
            let h = gaussian_cohort(&sigma, 80, 2 * seed).unwrap();
            let shift: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d = shifted(&gaussian_cohort(&sigma, 70, 2 * seed + 1).unwrap(), &shift);
            let s = ScatterPair::from_cohorts(&h, &d).unwrap();
            assert!(between_scatter_rank_ratio(&s).unwrap() <= 1e-8);
            let w = lda_direction(&h, &d, 0.0).unwrap().unwrap();
            assert!(line_angle(&w.direction, &lu_closed_form(&s)) < 1e-6);
            assert!(w.angle_to_closed_form < 1e-6);
        }
    }

    #[test]
    fn lda_follows_linear_transforms() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let sigma = random_cov(&mut rng, 4);
        let h = gaussian_cohort(&sigma, 60, 1).unwrap();
        let d = shifted(&gaussian_cohort(&sigma, 60, 2).unwrap(), &[1.0, -0.5, 0.2, 0.0]);
        let a = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { rng.random_range(-0.5..0.5) });
        let w = lda_direction(&h, &d, 0.0).unwrap().unwrap();
        let wt = lda_direction(&transformed(&h, &a), &transformed(&d, &a), 0.0).unwrap().unwrap();
        // x -> Ax sends the Fisher direction to A^-T w
        let predicted = a.transpose().lu().solve(&DVector::from_vec(w.direction)).unwrap();
        assert!(line_angle(&wt.direction, &unit(&predicted)) < 1e-6);
    }

    #[test]
    fn singular_within_scatter_needs_ridge() {
        let s = ScatterPair::new(
            &SymMatrix::from_diagonal(&[1.0, 0.0]).unwrap(),
            &SymMatrix::from_diagonal(&[1.0, 0.0]).unwrap(),
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            3,
            3,
        )
        .unwrap();
        assert!(matches!(lda_from_scatter(&s, 0.0), Err(Error::RidgeRequired(_))));
        assert!(lda_from_scatter(&s, 0.1).unwrap().is_some());
    }

    fn corr(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let (ma, mb) = (a.mean(), b.mean());
        let (ca, cb) = (a.add_scalar(-ma), b.add_scalar(-mb));
        ca.dot(&cb) / (ca.norm() * cb.norm())
    }

    #[test]
    fn self_correlation_is_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = gaussian_cohort(&random_cov(&mut rng, 3), 100, 5).unwrap();
        let c = cca_modes(&x, &x, 3, 0.0).unwrap();
        assert!(c.rho.iter().all(|r| (r - 1.0).abs() < 1e-9), "{:?}", c.rho);
    }

    #[test]
    fn independent_blocks_are_weakly_correlated() {
        for seed in 0..10 {
            let x = gaussian_cohort(&SymMatrix::identity(3), 2000, 100 + seed).unwrap();
            let y = gaussian_cohort(&SymMatrix::identity(3), 2000, 200 + seed).unwrap();
            let c = cca_modes(&x, &y, 1, 0.0).unwrap();
            assert!(c.rho[0] < 0.2, "{}", c.rho[0]);
        }
    }

    #[test]
    fn linear_map_and_variate_correlations() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let x = gaussian_cohort(&random_cov(&mut rng, 4), 300, 9).unwrap();
        // rank-2 map into 3 outputs plus small noise
        let b = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
        let noise = gaussian_cohort(&SymMatrix::identity(3).scale(1e-6), 300, 10).unwrap();
        let ydata = x.data() * (&b * &c).transpose() + noise.data();
        let y = CohortMatrix::with_default_ids(ydata, biomarker_names(3)).unwrap();
        let m = cca_modes(&x, &y, 3, 0.0).unwrap();
        assert!(m.rho[0] > 0.999 && m.rho[1] > 0.999);
        assert!(m.rho[2] < 0.9);
        assert!(m.rho.windows(2).all(|w| w[0] >= w[1]));
        for k in 0..3 {
            let a = x.data() * m.u.column(k);
            let b = y.data() * m.v.column(k);
            assert!((corr(&a, &b) - m.rho[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn correlations_are_invariant_to_block_transforms() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let joint = gaussian_cohort(&random_cov(&mut rng, 5), 200, 4).unwrap();
        let split = |cols: &[usize]| joint.select_columns(cols).unwrap();
        let (x, y) = (split(&[0, 1, 2]), split(&[3, 4]));
        let base = cca_modes(&x, &y, 2, 0.0).unwrap();
        let a = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.5 } else { rng.random_range(-0.4..0.4) });
        let b = DMatrix::from_fn(2, 2, |i, j| if i == j { -0.7 } else { rng.random_range(-0.4..0.4) });
        let moved = cca_modes(&transformed(&x, &a), &transformed(&y, &b), 2, 0.0).unwrap();
        for k in 0..2 {
            assert!((base.rho[k] - moved.rho[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn rank_deficient_block_is_named() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = gaussian_cohort(&random_cov(&mut rng, 2), 50, 1).unwrap();
        let mut ydata = gaussian_cohort(&random_cov(&mut rng, 2), 50, 2).unwrap().data().clone();
        for i in 0..50 {
            ydata[(i, 1)] = 2.0 * ydata[(i, 0)];
        }
        let y = CohortMatrix::with_default_ids(ydata, biomarker_names(2)).unwrap();
        match cca_modes(&x, &y, 1, 0.0) {
            Err(Error::RidgeRequired(msg)) => assert!(msg.contains("block Y")),
            other => panic!("{other:?}"),
        }
        assert!(cca_modes(&x, &y, 1, 1e-3).is_ok());
        assert!(cca_modes(&x, &y, 3, 0.0).is_err());
    }
}
