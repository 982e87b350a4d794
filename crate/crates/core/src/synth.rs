//! Seeded synthetic cohorts: covariance regimes, spiked ensembles and a
//! two-group trajectory demonstration.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64`; normal variates use the ziggurat sampler of
//! `rand_distr::StandardNormal`. Values are drawn row-major, so a cohort is
//! fully determined by the seed, the covariance and `n`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{build_hamiltonian, CohortMatrix};
use crate::linalg::{cholesky, symmetric_eigendecompose, SymMatrix};

/// Smallest eigenvalue a generated covariance must have.
pub const PD_FLOOR: f64 = 1e-6;
/// Largest ridge the PD repair may add.
pub const RIDGE_BUDGET: f64 = 0.5;
/// The gain factor is clipped to this fraction of the PD boundary.
pub const GAIN_CLIP_FRACTION: f64 = 0.95;

/// Biomarker names `b01, b02, …`, zero-padded to a common width.
pub fn biomarker_names(p: usize) -> Vec<String> {
    let width = p.to_string().len().max(2);
    (1..=p).map(|j| format!("b{j:0width$}")).collect()
}

fn draw_rows(rng: &mut ChaCha20Rng, l: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let p = l.nrows();
    let mut out = DMatrix::zeros(n, p);
    let mut z = DVector::zeros(p);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let x = l * &z;
        out.set_row(i, &x.transpose());
    }
    out
}

/// `n` i.i.d. rows from `N(0, Σ)`, as a raw cohort.
pub fn gaussian_cohort(sigma: &SymMatrix, n: usize, seed: u64) -> Result<CohortMatrix> {
    if n < 2 {
        return Err(Error::input(format!("n >= 2 required, got {n}")));
    }
    let l = cholesky(sigma)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = draw_rows(&mut rng, &l, n);
    CohortMatrix::with_default_ids(data, biomarker_names(sigma.dim()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    NoInterdependency,
    HealthyCoordination,
    GainOfCoordination,
    LossOfCoordination,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::NoInterdependency,
        Regime::HealthyCoordination,
        Regime::GainOfCoordination,
        Regime::LossOfCoordination,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::NoInterdependency => "no_interdependency",
            Regime::HealthyCoordination => "healthy_coordination",
            Regime::GainOfCoordination => "gain_of_coordination",
            Regime::LossOfCoordination => "loss_of_coordination",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::input(format!("unknown regime '{s}'")))
    }
}

/// A covariance regime and its sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeSpec {
    pub regime: Regime,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    /// Half-open index ranges; `None` means two overlapping blocks covering
    /// roughly the first 5/9 and the last 11/18 of the biomarkers.
    pub blocks: Option<Vec<(usize, usize)>>,
    /// Within-block off-diagonal strength of the healthy regime.
    pub strength: f64,
    pub gain_factor: f64,
    pub loss_factor: f64,
}

impl Default for RegimeSpec {
    fn default() -> Self {
        RegimeSpec {
            regime: Regime::HealthyCoordination,
            p: 36,
            n: 500,
            seed: 0,
            blocks: None,
            strength: 0.3,
            gain_factor: 2.0,
            loss_factor: 0.3,
        }
    }
}

impl RegimeSpec {
    pub fn new(regime: Regime, n: usize, seed: u64) -> Self {
        RegimeSpec {
            regime,
            n,
            seed,
            ..Default::default()
        }
    }

    pub fn resolved_blocks(&self) -> Vec<(usize, usize)> {
        self.blocks.clone().unwrap_or_else(|| {
            let p = self.p as f64;
            vec![(0, (5.0 * p / 9.0).round() as usize), ((7.0 * p / 18.0).round() as usize, self.p)]
        })
    }
}

/// A regime covariance and how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeCovariance {
    pub covariance: SymMatrix,
    pub blocks: Vec<(usize, usize)>,
    /// Multiplier actually applied to the healthy off-diagonals.
    pub factor: f64,
    /// Set when the requested gain factor was clipped.
    pub requested_factor: Option<f64>,
    /// Ridge added by the PD repair (0 when none was needed).
    pub ridge: f64,
    pub min_eigenvalue: f64,
}

fn off_diagonal(p: usize, blocks: &[(usize, usize)], strength: f64) -> Result<DMatrix<f64>> {
    let mut o = DMatrix::zeros(p, p);
    for &(lo, hi) in blocks {
        if lo >= hi || hi > p {
            return Err(Error::input(format!("block [{lo}, {hi}) invalid for p = {p}")));
        }
        for i in lo..hi {
            for j in lo..hi {
                if i != j {
                    o[(i, j)] += strength;
                }
            }
        }
    }
    Ok(o)
}

/// Population covariance for a regime: unit diagonal plus block
/// off-diagonals (summed where blocks overlap), scaled per regime.
pub fn regime_covariance(spec: &RegimeSpec) -> Result<RegimeCovariance> {
    let p = spec.p;
    if p < 2 {
        return Err(Error::input("regimes need p >= 2"));
    }
    for (label, v) in [
        ("strength", spec.strength),
        ("gain_factor", spec.gain_factor),
        ("loss_factor", spec.loss_factor),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::input(format!("{label} must be finite and non-negative")));
        }
    }
    let blocks = spec.resolved_blocks();
    let o = off_diagonal(p, &blocks, spec.strength)?;
    let mut requested_factor = None;
    let factor = match spec.regime {
        Regime::NoInterdependency => 0.0,
        Regime::HealthyCoordination => 1.0,
        Regime::LossOfCoordination => spec.loss_factor,
        Regime::GainOfCoordination => {
            let mu_min = *symmetric_eigendecompose(&SymMatrix::new(o.clone())?)?
                .values()
                .last()
                .expect("p >= 2");
            let cap = if mu_min < 0.0 { GAIN_CLIP_FRACTION / -mu_min } else { f64::INFINITY };
            if spec.gain_factor > cap {
                requested_factor = Some(spec.gain_factor);
                cap
            } else {
                spec.gain_factor
            }
        }
    };
    let sigma = DMatrix::identity(p, p) + &o * factor;
    let mut covariance = SymMatrix::new(sigma)?;
    let mut min_eigenvalue = *symmetric_eigendecompose(&covariance)?.values().last().expect("p >= 2");
    let mut ridge = 0.0;
    if min_eigenvalue < PD_FLOOR {
        ridge = PD_FLOOR - min_eigenvalue;
        if ridge > RIDGE_BUDGET {
            return Err(Error::input(format!(
                "regime covariance needs ridge {ridge:e}, above the budget {RIDGE_BUDGET}"
            )));
        }
        covariance = covariance.shift(ridge);
        min_eigenvalue = *symmetric_eigendecompose(&covariance)?.values().last().expect("p >= 2");
    }
    Ok(RegimeCovariance {
        covariance,
        blocks,
        factor,
        requested_factor,
        ridge,
        min_eigenvalue,
    })
}

/// Samples a regime cohort; returns the cohort and its population covariance.
pub fn regime_cohort(spec: &RegimeSpec) -> Result<(CohortMatrix, RegimeCovariance)> {
    let cov = regime_covariance(spec)?;
    let cohort = gaussian_cohort(&cov.covariance, spec.n, spec.seed)?;
    Ok((cohort, cov))
}

/// Parameters of a spiked ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikedSpec {
    pub thetas: Vec<f64>,
    pub gamma: f64,
    pub sigma2: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for SpikedSpec {
    fn default() -> Self {
        SpikedSpec {
            thetas: vec![2.0],
            gamma: 0.1,
            sigma2: 1.0,
            n: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikedEnsemble {
    pub cohort: CohortMatrix,
    /// Spike directions as columns.
    pub directions: DMatrix<f64>,
    pub covariance: SymMatrix,
}

fn random_orthonormal(rng: &mut ChaCha20Rng, p: usize, k: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(p, k);
    let mut j = 0;
    while j < k {
        let mut v = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        for _ in 0..2 {
            for i in 0..j {
                let c = q.column(i).dot(&v);
                v -= q.column(i) * c;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            q.set_column(j, &(v / norm));
            j += 1;
        }
    }
    q
}

/// Samples `n` rows from `σ²(I + Σ θ_k u_k u_kᵀ)` with `p = round(γn)` and
/// seeded random orthonormal `u_k`.
pub fn spiked_ensemble(spec: &SpikedSpec) -> Result<SpikedEnsemble> {
    if !(spec.gamma > 0.0) || !spec.gamma.is_finite() {
        return Err(Error::input("gamma must be positive"));
    }
    if !(spec.sigma2 > 0.0) || !spec.sigma2.is_finite() {
        return Err(Error::input("sigma2 must be positive"));
    }
    if let Some(t) = spec.thetas.iter().find(|t| !(**t > -1.0) || !t.is_finite()) {
        return Err(Error::input(format!("spike strengths must exceed -1, got {t}")));
    }
    if spec.n < 2 {
        return Err(Error::input(format!("n >= 2 required, got {}", spec.n)));
    }
    let p = (spec.gamma * spec.n as f64).round() as usize;
    if p < 2 {
        return Err(Error::input(format!("p = round(gamma * n) = {p}, need >= 2")));
    }
    if spec.thetas.len() > p {
        return Err(Error::input("more spikes than dimensions"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let directions = random_orthonormal(&mut rng, p, spec.thetas.len());
    let mut sigma = DMatrix::identity(p, p);
    for (k, &theta) in spec.thetas.iter().enumerate() {
        let u = directions.column(k);
        sigma += u * u.transpose() * theta;
    }
    let covariance = SymMatrix::new(sigma * spec.sigma2)?;
    let l = cholesky(&covariance)?;
    let data = draw_rows(&mut rng, &l, spec.n);
    let cohort = CohortMatrix::with_default_ids(data, biomarker_names(p))?;
    Ok(SpikedEnsemble {
        cohort,
        directions,
        covariance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Progressive,
    Stable,
}

/// Two-group trajectory demo parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoGroupSpec {
    pub p: usize,
    pub n_progressive: usize,
    pub n_stable: usize,
    pub time_points: usize,
    /// Drift per time step along the hidden direction.
    pub rate: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for TwoGroupSpec {
    fn default() -> Self {
        TwoGroupSpec {
            p: 10,
            n_progressive: 40,
            n_stable: 40,
            time_points: 6,
            rate: 2.0,
            noise_sd: 1.0,
            seed: 0,
        }
    }
}

/// Stacked patient-time observations with group labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoGroupDemo {
    /// One row per (patient, time point), patients in order.
    pub cohort: CohortMatrix,
    pub patients: Vec<String>,
    pub labels: Vec<Group>,
    /// Row index to patient index.
    pub row_patient: Vec<usize>,
    pub direction: Vec<f64>,
}

/// Progressive rows are `rate·t·u + noise` for `t = 0..T`; stable rows are
/// noise. `u` is a seeded random unit vector.
pub fn two_group_demo(spec: &TwoGroupSpec) -> Result<TwoGroupDemo> {
    if spec.p < 2 {
        return Err(Error::input("two-group demo needs p >= 2"));
    }
    if spec.n_progressive == 0 || spec.n_stable == 0 {
        return Err(Error::input("both groups need at least one patient"));
    }
    if spec.time_points == 0 {
        return Err(Error::input("time_points must be positive"));
    }
    if !spec.rate.is_finite() || spec.rate < 0.0 {
        return Err(Error::input("rate must be finite and non-negative"));
    }
    if !(spec.noise_sd > 0.0) || !spec.noise_sd.is_finite() {
        return Err(Error::input("noise_sd must be positive"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let u = random_orthonormal(&mut rng, spec.p, 1);
    let n_patients = spec.n_progressive + spec.n_stable;
    let rows = n_patients * spec.time_points;
    let mut data = DMatrix::zeros(rows, spec.p);
    let mut patients = Vec::with_capacity(n_patients);
    let mut labels = Vec::with_capacity(n_patients);
    let mut row_patient = Vec::with_capacity(rows);
    let mut ids = Vec::with_capacity(rows);
    for i in 0..n_patients {
        let (group, id) = if i < spec.n_progressive {
            (Group::Progressive, format!("A{:03}", i + 1))
        } else {
            (Group::Stable, format!("B{:03}", i - spec.n_progressive + 1))
        };
        for t in 0..spec.time_points {
            let r = i * spec.time_points + t;
            let drift = if group == Group::Progressive { spec.rate * t as f64 } else { 0.0 };
            for j in 0..spec.p {
                let noise: f64 = rng.sample(StandardNormal);
                data[(r, j)] = drift * u[(j, 0)] + spec.noise_sd * noise;
            }
            row_patient.push(i);
            ids.push(format!("{id}_t{t}"));
        }
        patients.push(id);
        labels.push(group);
    }
    let cohort = CohortMatrix::new(data, biomarker_names(spec.p), ids)?;
    Ok(TwoGroupDemo {
        cohort,
        patients,
        labels,
        row_patient,
        direction: u.column(0).iter().copied().collect(),
    })
}

/// Mann-Whitney AUC of `positive` over `negative`, ties counting one half.
pub fn auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::input("AUC needs both groups non-empty"));
    }
    let mut wins = 0.0;
    for &a in positive {
        for &b in negative {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (positive.len() * negative.len()) as f64)
}

/// Eigenplane projection of the demo cohort.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Separation {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Per patient: mean over time of `π₁² + π₂²`.
    pub scores: Vec<f64>,
    /// Per row: `(π₁, π₂)`.
    pub projections: Vec<(f64, f64)>,
    /// AUC of the progressive group over the stable group.
    pub auc: f64,
}

/// Projects every observation onto the two leading eigenmodes of the pooled
/// Hamiltonian and scores each patient by mean squared eigenplane radius.
pub fn eigenplane_separation(demo: &TwoGroupDemo) -> Result<Separation> {
    let centered = demo.cohort.clone().center();
    let model = build_hamiltonian(&centered)?;
    let eig = model.eigen();
    let (q1, q2) = (eig.vector(0), eig.vector(1));
    let x = centered.data();
    let mut sums = vec![0.0; demo.patients.len()];
    let mut counts = vec![0usize; demo.patients.len()];
    let mut projections = Vec::with_capacity(x.nrows());
    for r in 0..x.nrows() {
        let row = x.row(r);
        let a: f64 = row.iter().zip(&q1).map(|(u, v)| u * v).sum();
        let b: f64 = row.iter().zip(&q2).map(|(u, v)| u * v).sum();
        projections.push((a, b));
        let i = demo.row_patient[r];
        sums[i] += a * a + b * b;
        counts[i] += 1;
    }
    let scores: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let pick = |g: Group| -> Vec<f64> {
        scores
            .iter()
            .zip(&demo.labels)
            .filter(|(_, l)| **l == g)
            .map(|(s, _)| *s)
            .collect()
    };
    let auc = auc(&pick(Group::Progressive), &pick(Group::Stable))?;
    Ok(Separation {
        lambda1: eig.values()[0],
        lambda2: eig.values()[1],
        scores,
        projections,
        auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_sample_covariance_converges() {
        let c = gaussian_cohort(&SymMatrix::identity(4), 10_000, 1).unwrap();
        let h = build_hamiltonian(&c.center()).unwrap();
        let err = (h.hamiltonian().as_matrix() - DMatrix::<f64>::identity(4, 4)).abs().max();
        assert!(err <= 0.1, "{err}");
    }

    #[test]
    fn variance_ratio() {
        let sigma = SymMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let h = build_hamiltonian(&gaussian_cohort(&sigma, 10_000, 2).unwrap().center()).unwrap();
        let ratio = h.hamiltonian().get(0, 0) / h.hamiltonian().get(1, 1);
        assert!((ratio - 4.0).abs() <= 0.8, "{ratio}");
    }

    #[test]
    fn cohorts_are_deterministic() {
        let sigma = SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let a = gaussian_cohort(&sigma, 50, 7).unwrap();
        let b = gaussian_cohort(&sigma, 50, 7).unwrap();
        let c = gaussian_cohort(&sigma, 50, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(gaussian_cohort(&sigma, 1, 7).is_err());
    }

    #[test]
    fn regime_structure() {
        let flat = regime_covariance(&RegimeSpec::new(Regime::NoInterdependency, 500, 0)).unwrap();
        assert_eq!(flat.covariance, SymMatrix::identity(36));
        let lead = |r: Regime| {
            let c = regime_covariance(&RegimeSpec::new(r, 500, 0)).unwrap();
            assert!(c.min_eigenvalue >= PD_FLOOR);
            for i in 0..36 {
                assert_eq!(c.covariance.get(i, i), 1.0 + c.ridge);
            }
            (symmetric_eigendecompose(&c.covariance).unwrap().values()[0], c)
        };
        let (healthy, hc) = lead(Regime::HealthyCoordination);
        let (gain, gc) = lead(Regime::GainOfCoordination);
        let (loss, _) = lead(Regime::LossOfCoordination);
        assert!(gain > healthy && healthy > loss);
        assert_eq!(hc.blocks, vec![(0, 20), (14, 36)]);
        assert_eq!(hc.covariance.get(0, 1), 0.3);
        assert!((hc.covariance.get(15, 16) - 0.6).abs() < 1e-15);
        assert_eq!(hc.covariance.get(0, 30), 0.0);
        assert_eq!(gc.requested_factor, Some(2.0));
        assert!(gc.factor < 2.0 && gc.factor > 1.0);
        assert_eq!(gc.ridge, 0.0);
    }

    #[test]
    fn ridge_repair_is_recorded() {
        let spec = RegimeSpec {
            regime: Regime::HealthyCoordination,
            p: 4,
            blocks: Some(vec![(0, 4)]),
            strength: 1.0,
            ..Default::default()
        };
        let c = regime_covariance(&spec).unwrap();
        assert!(c.ridge > 0.9 * PD_FLOOR);
        assert!(c.min_eigenvalue >= PD_FLOOR * (1.0 - 1e-6));
        let bad = RegimeSpec { strength: 2.0, ..spec };
        assert!(regime_covariance(&bad).is_err());
    }

    #[test]
    fn regime_names_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        assert!("nope".parse::<Regime>().is_err());
    }

    #[test]
    fn spiked_shapes() {
        let e = spiked_ensemble(&SpikedSpec { thetas: vec![], n: 200, ..Default::default() }).unwrap();
        assert_eq!(e.cohort.p(), 20);
        assert_eq!(e.covariance, SymMatrix::identity(20));
        let e = spiked_ensemble(&SpikedSpec { thetas: vec![3.0, 1.0], n: 100, ..Default::default() }).unwrap();
        let d = &e.directions;
        assert!((d.transpose() * d - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-12);
        assert!(spiked_ensemble(&SpikedSpec { thetas: vec![-1.0], ..Default::default() }).is_err());
        assert!(spiked_ensemble(&SpikedSpec { n: 10, ..Default::default() }).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0], &[1.0]).unwrap(), 0.5);
        let (a, b) = ([0.3, 2.0, 1.1, 0.7], [0.5, 1.1, 0.1]);
        assert!((auc(&a, &b).unwrap() + auc(&b, &a).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_group_layout() {
        let spec = TwoGroupSpec { n_progressive: 3, n_stable: 2, time_points: 4, ..Default::default() };
        let d = two_group_demo(&spec).unwrap();
        assert_eq!(d.cohort.n(), 20);
        assert_eq!(d.cohort.p(), 10);
        assert_eq!(d.labels.iter().filter(|l| **l == Group::Progressive).count(), 3);
        assert_eq!(d.row_patient[7], 1);
        let norm: f64 = d.direction.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(two_group_demo(&spec).unwrap(), d);
    }

    #[test]
    fn default_demo_separates() {
        let sep = eigenplane_separation(&two_group_demo(&TwoGroupSpec::default()).unwrap()).unwrap();
        assert!(sep.auc >= 0.9, "{}", sep.auc);
        assert!(sep.lambda1 > sep.lambda2);
    }
}
