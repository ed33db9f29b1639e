//! Independent checks for small instances: exhaustive best-subset search,
//! KKT certification of a coefficient vector and finite-difference gradients.
//!
//! Nothing here calls the solver's restricted minimizers; the linear case is
//! solved by an SVD least-squares fit of `X_A` and the logistic case by a
//! separate Newton loop with a tighter tolerance.

use nalgebra::{DMatrix, DVector};

use crate::coef::SparseCoef;
use crate::error::{invalid, Error, Result};
use crate::loss::{sigmoid, LinearLoss, LogisticLoss, Loss, Model};
use crate::solver::hard_threshold;

/// KKT tolerance in sup-norm.
pub const KKT_TOL: f64 = 1e-8;

/// Size limits enforced before enumerating supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleBudget {
    pub max_p: usize,
    pub max_t: usize,
    pub max_supports: u64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self {
            max_p: 14,
            max_t: 4,
            max_supports: 10_000,
        }
    }
}

impl OracleBudget {
    pub fn check(&self, p: usize, t: usize) -> Result<u64> {
        if p > self.max_p {
            return Err(Error::BudgetExceeded(format!("p = {p} exceeds {}", self.max_p)));
        }
        if t > self.max_t {
            return Err(Error::BudgetExceeded(format!("T = {t} exceeds {}", self.max_t)));
        }
        if t == 0 || t > p {
            return invalid(format!("T = {t} must lie in 1..={p}"));
        }
        let count = binomial(p as u64, t as u64);
        if count > self.max_supports {
            return Err(Error::BudgetExceeded(format!(
                "{count} supports exceed {}",
                self.max_supports
            )));
        }
        Ok(count)
    }
}

pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Losses the oracle can minimize exactly on a fixed support.
pub trait ExactRestricted: Loss {
    fn exact_restricted(&self, active: &[usize]) -> SparseCoef;
}

impl ExactRestricted for LinearLoss {
    fn exact_restricted(&self, active: &[usize]) -> SparseCoef {
        let n = self.n_samples();
        let xa = DMatrix::from_fn(n, active.len(), |i, c| self.design().get(i, active[c]));
        let b = DVector::from_vec(self.target());
        let svd = xa.svd(true, true);
        let tol = 1e-12 * svd.singular_values.max().max(1.0);
        let sol = svd.solve(&b, tol).expect("both singular bases were requested");
        SparseCoef::new(self.n_features(), active.to_vec(), sol.iter().copied().collect())
            .expect("finite least-squares solution")
    }
}

impl ExactRestricted for LogisticLoss {
    fn exact_restricted(&self, active: &[usize]) -> SparseCoef {
        let n = self.n_samples();
        let k = active.len();
        let xa = DMatrix::from_fn(n, k, |i, c| self.design().get(i, active[c]));
        let y = DVector::from_column_slice(self.response());
        let objective = |b: &DVector<f64>| -> f64 {
            let eta = &xa * b;
            eta.iter()
                .zip(y.iter())
                .map(|(&z, &yi)| z.max(0.0) + (-z.abs()).exp().ln_1p() - yi * z)
                .sum::<f64>()
                / n as f64
        };
        let mut b = DVector::zeros(k);
        let mut f = objective(&b);
        for _ in 0..200 {
            let eta = &xa * &b;
            let pi = eta.map(sigmoid);
            let grad = xa.transpose() * (&pi - &y) / n as f64;
            if grad.amax() <= 1e-11 {
                break;
            }
            let w = pi.map(|v| v * (1.0 - v));
            let mut h = DMatrix::zeros(k, k);
            for i in 0..n {
                let row = xa.row(i);
                h += row.transpose() * row * (w[i] / n as f64);
            }
            let step = match h.clone().cholesky() {
                Some(c) => c.solve(&(-&grad)),
                None => {
                    let eye = DMatrix::identity(k, k) * 1e-12;
                    match (h + eye).cholesky() {
                        Some(c) => c.solve(&(-&grad)),
                        None => -grad.clone(),
                    }
                }
            };
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-14 {
                let cand = &b + &step * t;
                let fc = objective(&cand);
                if fc <= f {
                    b = cand;
                    f = fc;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        SparseCoef::new(self.n_features(), active.to_vec(), b.iter().copied().collect())
            .expect("finite Newton iterate")
    }
}

impl ExactRestricted for Model {
    fn exact_restricted(&self, active: &[usize]) -> SparseCoef {
        match self {
            Model::Linear(l) => l.exact_restricted(active),
            Model::Logistic(l) => l.exact_restricted(active),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestSubset {
    pub active: Vec<usize>,
    pub beta: SparseCoef,
    pub loss: f64,
    /// Number of supports evaluated.
    pub enumerated: u64,
    /// Loss of every support, in lexicographic order of the supports.
    pub all_losses: Vec<f64>,
}

/// Minimizes the loss over every support of size exactly `t`.
///
/// Ties go to the lexicographically first support.
pub fn brute_force_best_support<L: ExactRestricted>(loss: &L, t: usize, budget: &OracleBudget) -> Result<BestSubset> {
    let p = loss.n_features();
    budget.check(p, t)?;
    let mut comb: Vec<usize> = (0..t).collect();
    let mut best: Option<(Vec<usize>, SparseCoef, f64)> = None;
    let mut all_losses = Vec::new();
    loop {
        let beta = loss.exact_restricted(&comb);
        let f = loss.value(&beta);
        all_losses.push(f);
        if best.as_ref().is_none_or(|b| f < b.2) {
            best = Some((comb.clone(), beta, f));
        }
        if !next_combination(&mut comb, p) {
            break;
        }
    }
    let (active, beta, loss_best) = best.expect("at least one support");
    Ok(BestSubset {
        active,
        beta,
        loss: loss_best,
        enumerated: all_losses.len() as u64,
        all_losses,
    })
}

fn next_combination(comb: &mut [usize], p: usize) -> bool {
    let t = comb.len();
    let mut i = t;
    while i > 0 {
        i -= 1;
        if comb[i] < p - t + i {
            comb[i] += 1;
            for j in i + 1..t {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Outcome of a KKT check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktCertificate {
    pub pass: bool,
    /// Sup-norm violation of `beta = H(beta + tau d)`.
    pub primal_residual: f64,
    /// Sup-norm violation of `d = -grad F(beta)`.
    pub dual_residual: f64,
}

impl KktCertificate {
    pub fn residual(&self) -> f64 {
        self.primal_residual.max(self.dual_residual)
    }
}

/// Checks both KKT lines at `(lambda, tau)` for an explicit dual `d`.
pub fn certify_kkt_pair<L: Loss + ?Sized>(loss: &L, beta: &SparseCoef, d: &[f64], tau: f64, lambda: f64) -> KktCertificate {
    let grad = loss.gradient(beta);
    let dual_residual = grad
        .iter()
        .zip(d)
        .fold(0.0f64, |m, (g, di)| m.max((di + g).abs()));
    let b = beta.to_dense();
    let u: Vec<f64> = b.iter().zip(d).map(|(bi, di)| bi + tau * di).collect();
    let h = hard_threshold(&u, lambda * tau);
    let primal_residual = b.iter().zip(&h).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    KktCertificate {
        pass: primal_residual <= KKT_TOL && dual_residual <= KKT_TOL,
        primal_residual,
        dual_residual,
    }
}

/// Checks the KKT system with `d = -grad F(beta)`.
pub fn certify_kkt<L: Loss + ?Sized>(loss: &L, beta: &SparseCoef, tau: f64, lambda: f64) -> KktCertificate {
    let d: Vec<f64> = loss.gradient(beta).into_iter().map(|g| -g).collect();
    certify_kkt_pair(loss, beta, &d, tau, lambda)
}

/// `lambda` values for which `beta` with `d = -grad F(beta)` satisfies the
/// thresholding line, given `tau`: `(lo, hi]` with
/// `lo = max_{beta_i = 0} (tau |d_i|)^2 / (2 tau)` and
/// `hi = min_{beta_i != 0} |beta_i + tau d_i|^2 / (2 tau)`.
///
/// Returns `None` when the interval is empty or the gradient on the support
/// exceeds [`KKT_TOL`].
pub fn admissible_lambda_interval<L: Loss + ?Sized>(loss: &L, beta: &SparseCoef, tau: f64) -> Option<(f64, f64)> {
    let d: Vec<f64> = loss.gradient(beta).into_iter().map(|g| -g).collect();
    let b = beta.to_dense();
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    for (bi, di) in b.iter().zip(&d) {
        if *bi != 0.0 {
            if di.abs() > KKT_TOL {
                return None;
            }
            hi = hi.min((bi + tau * di).abs());
        } else {
            lo = lo.max(tau * di.abs());
        }
    }
    let to_lambda = |thr: f64| thr * thr / (2.0 * tau);
    (lo < hi).then(|| (to_lambda(lo), to_lambda(hi)))
}

/// Central differences, one coordinate at a time.
pub fn finite_diff_gradient<L: Loss + ?Sized>(loss: &L, beta: &SparseCoef, h: f64) -> Vec<f64> {
    let base = beta.to_dense();
    (0..base.len())
        .map(|j| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[j] += h;
            minus[j] -= h;
            let fp = loss.value(&SparseCoef::from_dense(&plus));
            let fm = loss.value(&SparseCoef::from_dense(&minus));
            (fp - fm) / (2.0 * h)
        })
        .collect()
}
