//! Eigenbasis transfer between cohorts: principal angles, subspace distance,
//! the leading-score degradation bound and a conditioning verdict.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{SpectralModel, Spectrum};
use crate::linalg::{orthonormality_defect, small_svd, spectral_norm_of, symmetric_eigendecompose};
use crate::perturbation::{line_angle, CERT_TOL, GAP_FLOOR};

/// Allowed deviation of `QᵀQ` from the identity for basis inputs.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Principal angles `θ₁ ≤ … ≤ θ_r` between the column spaces of two
/// `p × r` orthonormal bases.
///
/// Cosines are the singular values of `QsᵀQt` and sines those of
/// `Qt − Qs(QsᵀQt)`; each angle is taken from whichever is better
/// conditioned (sine below 45°, cosine above).
pub fn principal_angles(qs: &DMatrix<f64>, qt: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (p, r) = qs.shape();
    if qt.shape() != (p, r) {
        return Err(Error::Alignment(format!(
            "basis shapes differ: {p}x{r} vs {}x{}",
            qt.nrows(),
            qt.ncols()
        )));
    }
    if r == 0 || r > p {
        return Err(Error::input(format!("subspace rank {r} must be in 1..={p}")));
    }
    for (label, q) in [("source", qs), ("target", qt)] {
        let defect = orthonormality_defect(q);
        if !(defect <= ORTHONORMAL_TOL) {
            return Err(Error::input(format!(
                "{label} basis is not orthonormal (defect {defect:e})"
            )));
        }
    }
    if qs == qt {
        return Ok(vec![0.0; r]);
    }
    let cross = qs.transpose() * qt;
    let cosines = small_svd(&cross)?.singular_values;
    let residual = qt - qs * &cross;
    let mut sines = small_svd(&residual)?.singular_values;
    sines.reverse();

    let mut angles: Vec<f64> = cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| {
            let (c, s) = (c.clamp(0.0, 1.0), s.clamp(0.0, 1.0));
            if c * c >= 0.5 {
                s.asin()
            } else {
                c.acos()
            }
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

/// `‖sin Θ‖_F`.
pub fn subspace_distance(angles: &[f64]) -> f64 {
    angles.iter().map(|t| t.sin().powi(2)).sum::<f64>().sqrt()
}

/// Bound `M · 2 sin(θ₁/2)` on `|x·q₁ˢ − x·q₁ᵗ|` for `‖x‖ ≤ M`, valid once
/// the two eigenvectors are sign-aligned.
pub fn transfer_bound(norm_cap: f64, theta1: f64) -> f64 {
    norm_cap * 2.0 * (theta1 / 2.0).sin()
}

/// `target` flipped if needed so that `source·target ≥ 0`.
pub fn sign_align(source: &[f64], target: &[f64]) -> Vec<f64> {
    let dot: f64 = source.iter().zip(target).map(|(a, b)| a * b).sum();
    if dot < 0.0 {
        target.iter().map(|v| -v).collect()
    } else {
        target.to_vec()
    }
}

/// Configurable verdict thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferPolicy {
    /// Well conditioned needs `dk_ratio` at or below this...
    pub well_max_dk_ratio: f64,
    /// ...and `θ₁` at or below this many degrees.
    pub well_max_angle_deg: f64,
    /// Ill conditioned above this `dk_ratio`...
    pub ill_min_dk_ratio: f64,
    /// ...or above this many degrees.
    pub ill_min_angle_deg: f64,
}

impl Default for TransferPolicy {
    fn default() -> Self {
        TransferPolicy {
            well_max_dk_ratio: 0.2,
            well_max_angle_deg: 10.0,
            ill_min_dk_ratio: 1.0,
            ill_min_angle_deg: 45.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    WellConditioned,
    Marginal,
    IllConditioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferDkStatus {
    Certified,
    Vacuous,
    DegenerateGap,
    /// `sin θ₁ > dk_ratio` with `dk_ratio ≤ 1`; the residual bound held.
    SimplifiedGapExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferDiagnostics {
    pub r: usize,
    pub principal_angles: Vec<f64>,
    pub subspace_distance: f64,
    /// `2 sin(θ₁/2)`.
    pub leading_bound: f64,
    /// `‖H_s − H_t‖₂`.
    pub delta_norm: f64,
    pub source_eigengap: Option<f64>,
    /// `‖H_s − H_t‖₂ / (λ₁ˢ − λ₂ˢ)`; absent for a degenerate gap.
    pub dk_ratio: Option<f64>,
    pub dk_status: TransferDkStatus,
    pub verdict: Verdict,
    pub reasons: Vec<String>,
    pub policy: TransferPolicy,
}

/// Transfer diagnostics for two aligned models.
pub fn transfer_models(
    hs: &SpectralModel,
    ht: &SpectralModel,
    r: usize,
    policy: &TransferPolicy,
) -> Result<TransferDiagnostics> {
    hs.check_aligned(ht)?;
    transfer_verdict(hs.spectrum(), ht.spectrum(), r, policy)
}

/// Compares the top-`r` eigenspaces of source and target and classifies
/// the transfer.
pub fn transfer_verdict(
    hs: &Spectrum,
    ht: &Spectrum,
    r: usize,
    policy: &TransferPolicy,
) -> Result<TransferDiagnostics> {
    let p = hs.dim();
    if ht.dim() != p {
        return Err(Error::Alignment(format!("dimension mismatch: {p} vs {}", ht.dim())));
    }
    if r == 0 || r > p {
        return Err(Error::input(format!("r must be in 1..={p}, got {r}")));
    }
    let qs = hs.eigen().leading(r);
    let qt = ht.eigen().leading(r);
    let principal_angles = principal_angles(&qs, &qt)?;
    let theta1 = principal_angles[0];
    let subspace_distance = subspace_distance(&principal_angles);
    let leading_bound = 2.0 * (theta1 / 2.0).sin();

    let delta = hs.matrix().sub(ht.matrix())?;
    let delta_norm = spectral_norm_of(&symmetric_eigendecompose(&delta)?);
    let source_eigengap = hs.eigengap();

    // residual-form Davis-Kahan on the leading pair; failing it is a bug
    let ls = hs.eigenvalues();
    let lt1 = ht.eigenvalues()[0];
    let mixed_gap = ls[1..].iter().map(|v| (lt1 - v).abs()).fold(f64::INFINITY, f64::min);
    let lead_angle = line_angle(&hs.eigen().vector(0), &ht.eigen().vector(0));
    if mixed_gap.is_finite() && mixed_gap > GAP_FLOOR {
        let bound = delta_norm / mixed_gap;
        if lead_angle.sin() > bound + CERT_TOL {
            return Err(Error::Certificate(format!(
                "transfer Davis-Kahan residual bound violated: sin {} > {}",
                lead_angle.sin(),
                bound
            )));
        }
    }

    let mut reasons = Vec::new();
    let theta1_deg = theta1.to_degrees();
    let (dk_ratio, dk_status, verdict) = match source_eigengap {
        Some(gap) if gap > GAP_FLOOR => {
            let ratio = delta_norm / gap;
            let status = if ratio > 1.0 {
                TransferDkStatus::Vacuous
            } else if theta1.sin() <= ratio + CERT_TOL {
                TransferDkStatus::Certified
            } else {
                reasons.push("simplified-gap bound exceeded; residual bound holds".into());
                TransferDkStatus::SimplifiedGapExceeded
            };
            let verdict = if ratio > policy.ill_min_dk_ratio || theta1_deg > policy.ill_min_angle_deg {
                if ratio > policy.ill_min_dk_ratio {
                    reasons.push(format!("dk_ratio {ratio:.4} above {}", policy.ill_min_dk_ratio));
                }
                if theta1_deg > policy.ill_min_angle_deg {
                    reasons.push(format!(
                        "leading principal angle {theta1_deg:.2} deg above {}",
                        policy.ill_min_angle_deg
                    ));
                }
                Verdict::IllConditioned
            } else if ratio <= policy.well_max_dk_ratio && theta1_deg <= policy.well_max_angle_deg {
                Verdict::WellConditioned
            } else {
                reasons.push(format!(
                    "dk_ratio {ratio:.4} / angle {theta1_deg:.2} deg between the well and ill thresholds"
                ));
                Verdict::Marginal
            };
            (Some(ratio), status, verdict)
        }
        _ => {
            reasons.push("degenerate source eigengap".into());
            (None, TransferDkStatus::DegenerateGap, Verdict::IllConditioned)
        }
    };

    Ok(TransferDiagnostics {
        r,
        principal_angles,
        subspace_distance,
        leading_bound,
        delta_norm,
        source_eigengap,
        dk_ratio,
        dk_status,
        verdict,
        reasons,
        policy: *policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_orthonormal(rng: &mut ChaCha20Rng, p: usize, r: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(p, r, |_, _| rng.random_range(-1.0..1.0));
        g.qr().q().columns(0, r).into_owned()
    }

    fn random_orthogonal(rng: &mut ChaCha20Rng, p: usize) -> DMatrix<f64> {
        random_orthonormal(rng, p, p)
    }

    #[test]
    fn identical_bases_have_zero_angles() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let q = random_orthonormal(&mut rng, 6, 3);
        assert_eq!(principal_angles(&q, &q).unwrap(), vec![0.0; 3]);
        // same span, different basis
        let rot = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let a = principal_angles(&q, &(&q * rot)).unwrap();
        assert!(a.iter().all(|t| t.abs() < 1e-12));
        assert!(subspace_distance(&a) < 1e-12);
    }

    #[test]
    fn orthogonal_lines() {
        let qs = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let qt = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        assert_eq!(principal_angles(&qs, &qt).unwrap(), vec![FRAC_PI_2]);
    }

    #[test]
    fn planar_rotation_grid() {
        let qs = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        for i in 0..=30 {
            let phi = FRAC_PI_2 * i as f64 / 30.0;
            let qt = DMatrix::from_column_slice(3, 1, &[phi.cos(), phi.sin(), 0.0]);
            let a = principal_angles(&qs, &qt).unwrap();
            assert!((a[0] - phi).abs() < 1e-12, "{phi} vs {}", a[0]);
        }
    }

    #[test]
    fn rejects_bad_bases() {
        let qs = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let bad = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]);
        assert!(principal_angles(&qs, &bad).is_err());
        let wide = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(principal_angles(&qs, &wide).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(subspace_distance(&[0.0, 0.0]), 0.0);
        assert!((subspace_distance(&[FRAC_PI_2, FRAC_PI_2]) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn distance_matches_projector_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for _ in 0..20 {
            let qs = random_orthonormal(&mut rng, 10, 3);
            let qt = random_orthonormal(&mut rng, 10, 3);
            let d = subspace_distance(&principal_angles(&qs, &qt).unwrap());
            let proj = (&qs * qs.transpose() - &qt * qt.transpose()).norm() / 2f64.sqrt();
            assert!((d - proj).abs() < 1e-8);
        }
    }

    #[test]
    fn bound_examples() {
        assert_eq!(transfer_bound(3.0, 0.0), 0.0);
        let b = transfer_bound(1.0, FRAC_PI_2);
        assert!((b - 2f64.sqrt()).abs() < 1e-15);
        let qs = [1.0, 0.0];
        let qt = [0.0, 1.0];
        let diff: f64 = qs.iter().zip(&qt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!((diff - b).abs() < 1e-15);
    }

    #[test]
    fn bound_chain_is_tight_under_alignment() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            let qs = random_orthonormal(&mut rng, 5, 1);
            let qt = random_orthonormal(&mut rng, 5, 1);
            let theta = principal_angles(&qs, &qt).unwrap()[0];
            let s: Vec<f64> = qs.iter().copied().collect();
            let t = sign_align(&s, &qt.iter().copied().collect::<Vec<_>>());
            let diff: f64 = s.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!((diff - 2.0 * (theta / 2.0).sin()).abs() < 1e-12);
        }
    }

    fn spectrum(m: DMatrix<f64>) -> Spectrum {
        Spectrum::new(SymMatrix::new(m).unwrap()).unwrap()
    }

    #[test]
    fn same_model_is_well_conditioned() {
        let h = spectrum(DMatrix::from_row_slice(3, 3, &[4.0, 0.5, 0.0, 0.5, 2.0, 0.1, 0.0, 0.1, 1.0]));
        let d = transfer_verdict(&h, &h, 1, &TransferPolicy::default()).unwrap();
        assert_eq!(d.verdict, Verdict::WellConditioned);
        assert!(d.principal_angles.iter().all(|&t| t < 1e-12));
        assert_eq!(d.dk_ratio, Some(0.0));
        assert_eq!(d.dk_status, TransferDkStatus::Certified);
        let d2 = transfer_verdict(&h, &h, 3, &TransferPolicy::default()).unwrap();
        assert_eq!(d2.principal_angles.len(), 3);
    }

    #[test]
    fn small_rotation_with_large_gap_is_certified() {
        let hs = spectrum(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[10.0, 1.0, 0.5])));
        let th: f64 = 0.02;
        let r = DMatrix::from_row_slice(3, 3, &[th.cos(), -th.sin(), 0.0, th.sin(), th.cos(), 0.0, 0.0, 0.0, 1.0]);
        let ht = spectrum(&r * hs.matrix().as_matrix() * r.transpose());
        let d = transfer_verdict(&hs, &ht, 1, &TransferPolicy::default()).unwrap();
        assert!((d.principal_angles[0] - th).abs() < 1e-12);
        assert!(th.sin() <= d.dk_ratio.unwrap() + 1e-9);
        assert_eq!(d.dk_status, TransferDkStatus::Certified);
        assert_eq!(d.verdict, Verdict::WellConditioned);
    }

    #[test]
    fn flat_source_spectrum_is_ill_conditioned() {
        let hs = spectrum(DMatrix::identity(4, 4));
        let ht = spectrum(DMatrix::identity(4, 4) * 1.000001);
        let d = transfer_verdict(&hs, &ht, 1, &TransferPolicy::default()).unwrap();
        assert_eq!(d.verdict, Verdict::IllConditioned);
        assert_eq!(d.dk_status, TransferDkStatus::DegenerateGap);
        assert!(d.reasons.iter().any(|r| r.contains("degenerate source eigengap")));
    }

    #[test]
    fn large_rotation_is_ill_conditioned() {
        let hs = spectrum(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[3.0, 1.0])));
        let ht = spectrum(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[1.0, 3.5])));
        let d = transfer_verdict(&hs, &ht, 1, &TransferPolicy::default()).unwrap();
        assert_eq!(d.verdict, Verdict::IllConditioned);
        assert_eq!(d.dk_status, TransferDkStatus::Vacuous);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn angles_symmetric_and_orthogonally_invariant(seed in any::<u64>(), p in 2usize..10, r in 1usize..4) {
            prop_assume!(r <= p);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let qs = random_orthonormal(&mut rng, p, r);
            let qt = random_orthonormal(&mut rng, p, r);
            let a = principal_angles(&qs, &qt).unwrap();
            let b = principal_angles(&qt, &qs).unwrap();
            let o = random_orthogonal(&mut rng, p);
            let c = principal_angles(&(&o * &qs), &(&o * &qt)).unwrap();
            for k in 0..r {
                prop_assert!((a[k] - b[k]).abs() < 1e-10);
                prop_assert!((a[k] - c[k]).abs() < 1e-10);
                prop_assert!(a[k] >= 0.0 && a[k] <= FRAC_PI_2);
            }
            prop_assert!(a.windows(2).all(|w| w[0] <= w[1]));
            let d = subspace_distance(&a);
            prop_assert!(d <= (r as f64).sqrt() + 1e-12);
            let sum: f64 = a.iter().map(|t| t.sin().powi(2)).sum();
            prop_assert!((d * d - sum).abs() < 1e-10);
        }
    }
}
