//! Estimation and selection quality of a fit against a known truth.

use crate::coef::SparseCoef;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::loss::sigmoid;

/// One per-replication results row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub method: String,
    pub seed: u64,
    pub rep: u64,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    /// Support size used (selected `T` for tuned fits).
    pub t: usize,
    pub rho: f64,
    pub r: f64,
    pub are: f64,
    pub pdr: f64,
    pub fdr: f64,
    pub cdr: f64,
    pub car: Option<f64>,
    pub iters: usize,
    pub time_s: Option<f64>,
    /// `ok`, `warn:<kind>` for a usable fit with a solver warning, or
    /// `error:<kind>` for a failed cell.
    pub status: String,
}

impl EvalRecord {
    /// True unless the cell failed.
    pub fn is_ok(&self) -> bool {
        !self.status.starts_with("error")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscoveryRates {
    pub pdr: f64,
    pub fdr: f64,
    pub cdr: f64,
}

/// `||beta_hat - beta*|| / ||beta*||`.
pub fn relative_error(beta_hat: &SparseCoef, beta_star: &SparseCoef) -> Result<f64> {
    if beta_hat.dim() != beta_star.dim() {
        return Err(Error::DimensionMismatch("coefficient dimensions differ".into()));
    }
    let denom = beta_star.norm2();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("relative error against a zero truth".into()));
    }
    let a = beta_hat.to_dense();
    let b = beta_star.to_dense();
    let num = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok(num / denom)
}

/// Positive, false and combined discovery rates of `a_hat` against `a_star`.
/// Both index lists must be sorted. An empty `a_hat` has `fdr = 0`.
pub fn discovery_rates(a_hat: &[usize], a_star: &[usize]) -> Result<DiscoveryRates> {
    if a_star.is_empty() {
        return Err(Error::UndefinedMetric("discovery rates against an empty true support".into()));
    }
    let hits = a_hat.iter().filter(|j| a_star.binary_search(j).is_ok()).count();
    let pdr = hits as f64 / a_star.len() as f64;
    let fdr = if a_hat.is_empty() {
        0.0
    } else {
        (a_hat.len() - hits) as f64 / a_hat.len() as f64
    };
    Ok(DiscoveryRates {
        pdr,
        fdr,
        cdr: pdr + (1.0 - fdr),
    })
}

/// Share of `rows` whose predicted class matches the 0/1 label; a predicted
/// probability of exactly one half counts as class 1.
pub fn classification_accuracy(design: &DenseMatrix, labels: &[f64], beta: &SparseCoef, rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::UndefinedMetric("accuracy over no rows".into()));
    }
    let eta = design.mul_columns(beta.support(), beta.values());
    let correct = rows
        .iter()
        .filter(|&&i| {
            let predicted = if sigmoid(eta[i]) >= 0.5 { 1.0 } else { 0.0 };
            predicted == labels[i]
        })
        .count();
    Ok(correct as f64 / rows.len() as f64)
}
