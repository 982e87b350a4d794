//! Partition function and free energy of a spectrum.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::fmt_num;

/// Points in the default β grid.
pub const DEFAULT_GRID_POINTS: usize = 64;

fn check_eigenvalues(eigenvalues: &[f64]) -> Result<f64> {
    if eigenvalues.is_empty() {
        return Err(Error::input("empty spectrum"));
    }
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite eigenvalue"));
    }
    Ok(eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("beta must be positive and finite, got {beta}")))
    }
}

/// `ln Z(β)`, with the smallest eigenvalue factored out.
pub fn log_partition_function(eigenvalues: &[f64], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let lmin = check_eigenvalues(eigenvalues)?;
    let sum: f64 = eigenvalues.iter().map(|l| (-beta * (l - lmin)).exp()).sum();
    Ok(-beta * lmin + sum.ln())
}

/// `Z(β) = Σ exp(−βλ_k)`.
pub fn partition_function(eigenvalues: &[f64], beta: f64) -> Result<f64> {
    let lmin = check_eigenvalues(eigenvalues)?;
    check_beta(beta)?;
    let sum: f64 = eigenvalues.iter().map(|l| (-beta * (l - lmin)).exp()).sum();
    Ok((-beta * lmin).exp() * sum)
}

/// `F(β) = −ln Z(β) / β`.
pub fn free_energy_at(eigenvalues: &[f64], beta: f64) -> Result<f64> {
    let lmin = check_eigenvalues(eigenvalues)?;
    check_beta(beta)?;
    let sum: f64 = eigenvalues.iter().map(|l| (-beta * (l - lmin)).exp()).sum();
    Ok(lmin - sum.ln() / beta)
}

/// 64 log-spaced points over `[1e-2/λ₁, 1e2/λ₁]`, or `[1e-2, 1e2]` when
/// `λ₁ ≤ 0`.
pub fn default_beta_grid(lambda1: f64) -> Vec<f64> {
    let scale = if lambda1 > 0.0 && lambda1.is_finite() { lambda1 } else { 1.0 };
    log_grid(1e-2 / scale, 1e2 / scale, DEFAULT_GRID_POINTS).expect("valid default grid")
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::input(format!("log grid needs 0 < lo < hi, got {lo}, {hi}")));
    }
    if n < 2 {
        return Err(Error::input("log grid needs at least 2 points"));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect();
    grid[0] = lo;
    grid[n - 1] = hi;
    Ok(grid)
}

/// Parses a grid spec: `default`, `log:LO:HI:N`, or a comma-separated list.
pub fn parse_beta_grid(spec: &str, lambda1: f64) -> Result<Vec<f64>> {
    let spec = spec.trim();
    if spec.is_empty() || spec == "default" {
        return Ok(default_beta_grid(lambda1));
    }
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::input(format!("bad number '{s}' in beta grid")))
    };
    if let Some(rest) = spec.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::input("log grid spec is log:LO:HI:N"));
        }
        let n = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::input(format!("bad point count '{}'", parts[2])))?;
        return log_grid(num(parts[0])?, num(parts[1])?, n);
    }
    let grid = spec.split(',').map(num).collect::<Result<Vec<_>>>()?;
    check_grid(&grid)?;
    Ok(grid)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::input("empty beta grid"));
    }
    for &b in grid {
        check_beta(b)?;
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("beta grid must be strictly ascending"));
    }
    Ok(())
}

/// Limit behaviour of `F` at the grid ends.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Asymptotes {
    /// `λ_p`, the large-β limit of `F`.
    pub lambda_min: f64,
    /// `λ_p − F(β_max)`, which lies in `[0, ln p / β_max]`.
    pub high_beta_gap: f64,
    /// `ln p / β_max`.
    pub high_beta_bound: f64,
    /// `F(β_min) / (−ln p / β_min)`; tends to 1 as `β → 0`. Absent for `p = 1`.
    pub low_beta_ratio: Option<f64>,
}

/// `Z` and `F` over a β grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermoProfile {
    pub beta_grid: Vec<f64>,
    pub z_values: Vec<f64>,
    pub log_z_values: Vec<f64>,
    pub f_values: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub asymptotes: Asymptotes,
}

impl ThermoProfile {
    /// `beta,Z,F` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("beta,Z,F\n");
        for ((b, z), f) in self.beta_grid.iter().zip(&self.z_values).zip(&self.f_values) {
            out.push_str(&format!("{},{},{}\n", fmt_num(*b), fmt_num(*z), fmt_num(*f)));
        }
        out
    }
}

/// Free-energy profile over an ascending positive grid.
pub fn free_energy(eigenvalues: &[f64], beta_grid: &[f64]) -> Result<ThermoProfile> {
    let lmin = check_eigenvalues(eigenvalues)?;
    check_grid(beta_grid)?;
    let p = eigenvalues.len() as f64;
    let mut z_values = Vec::with_capacity(beta_grid.len());
    let mut log_z_values = Vec::with_capacity(beta_grid.len());
    let mut f_values = Vec::with_capacity(beta_grid.len());
    for &beta in beta_grid {
        let sum: f64 = eigenvalues.iter().map(|l| (-beta * (l - lmin)).exp()).sum();
        let log_z = -beta * lmin + sum.ln();
        z_values.push((-beta * lmin).exp() * sum);
        log_z_values.push(log_z);
        f_values.push(lmin - sum.ln() / beta);
    }
    let last = beta_grid.len() - 1;
    let bmin = beta_grid[0];
    let asymptotes = Asymptotes {
        lambda_min: lmin,
        high_beta_gap: lmin - f_values[last],
        high_beta_bound: p.ln() / beta_grid[last],
        low_beta_ratio: (p > 1.0).then(|| f_values[0] / (-p.ln() / bmin)),
    };
    Ok(ThermoProfile {
        beta_grid: beta_grid.to_vec(),
        z_values,
        log_z_values,
        f_values,
        eigenvalues: eigenvalues.to_vec(),
        asymptotes,
    })
}
