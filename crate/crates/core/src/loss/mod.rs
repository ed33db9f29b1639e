//! Loss functions the solvers minimize.
//!
//! Every solver step goes through the [`Loss`] trait: value, full gradient
//! and minimization restricted to an index set.

mod linear;
mod logistic;

pub use linear::LinearLoss;
pub use logistic::{log1p_exp, sigmoid, LogisticLoss};

use crate::coef::SparseCoef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Linear,
    Logistic,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Linear => "linear",
            LossKind::Logistic => "logistic",
        }
    }
}

/// Stopping rules for iterative restricted solves (Newton for logistic).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsolverOptions {
    /// Stop once the restricted gradient's sup-norm drops to this value.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Ridge added to the Newton system when its factorization fails.
    pub jitter: f64,
    /// Gradient level that must be reached to rule out separation.
    pub separation_grad_tol: f64,
    /// Coefficient magnitude treated as divergent.
    pub separation_coef: f64,
}

impl Default for SubsolverOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 100,
            jitter: 1e-10,
            separation_grad_tol: 1e-4,
            separation_coef: 30.0,
        }
    }
}

/// Output of a restricted minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedFit {
    /// Minimizer supported on the requested index set (explicit zeros kept).
    pub beta: SparseCoef,
    /// Loss at `beta`.
    pub loss: f64,
    pub iterations: usize,
    /// The restricted problem has no finite minimizer (logistic separation).
    pub separated: bool,
}

/// A smooth convex loss `F` on `R^p`.
pub trait Loss: Send + Sync {
    fn kind(&self) -> LossKind;

    fn n_samples(&self) -> usize;

    fn n_features(&self) -> usize;

    fn value(&self, beta: &SparseCoef) -> f64;

    /// Full gradient, length `p`.
    fn gradient(&self, beta: &SparseCoef) -> Vec<f64>;

    /// Minimizes `F(beta|_A)` over coefficients supported on `active`
    /// (sorted). `warm` seeds iterative solvers; its entries outside
    /// `active` are ignored.
    fn minimize_restricted(
        &self,
        active: &[usize],
        warm: Option<&SparseCoef>,
        opts: &SubsolverOptions,
    ) -> RestrictedFit;

    /// Columns allowed into an active set; `None` means all.
    fn eligible(&self) -> Option<&[bool]> {
        None
    }

    fn n_eligible(&self) -> usize {
        self.eligible()
            .map_or(self.n_features(), |m| m.iter().filter(|&&e| e).count())
    }
}

/// Losses that can be rebuilt on a subset of their rows (cross-validation).
pub trait RowSubset: Loss + Sized {
    fn subset_rows(&self, rows: &[usize]) -> Self;

    /// Out-of-sample loss on `rows`: mean squared residual for linear
    /// models, mean negative log-likelihood for logistic ones.
    fn heldout_loss(&self, beta: &SparseCoef, rows: &[usize]) -> f64;

    /// True when the rows carry a single class (logistic only).
    fn single_class(&self) -> bool {
        false
    }
}

/// Either loss behind one type, for callers that pick the model at runtime.
#[derive(Debug, Clone)]
pub enum Model {
    Linear(LinearLoss),
    Logistic(LogisticLoss),
}

macro_rules! dispatch {
    ($self:ident, $l:ident => $e:expr) => {
        match $self {
            Model::Linear($l) => $e,
            Model::Logistic($l) => $e,
        }
    };
}

impl Loss for Model {
    fn kind(&self) -> LossKind {
        dispatch!(self, l => l.kind())
    }
    fn n_samples(&self) -> usize {
        dispatch!(self, l => l.n_samples())
    }
    fn n_features(&self) -> usize {
        dispatch!(self, l => l.n_features())
    }
    fn value(&self, beta: &SparseCoef) -> f64 {
        dispatch!(self, l => l.value(beta))
    }
    fn gradient(&self, beta: &SparseCoef) -> Vec<f64> {
        dispatch!(self, l => l.gradient(beta))
    }
    fn minimize_restricted(
        &self,
        active: &[usize],
        warm: Option<&SparseCoef>,
        opts: &SubsolverOptions,
    ) -> RestrictedFit {
        dispatch!(self, l => l.minimize_restricted(active, warm, opts))
    }
    fn eligible(&self) -> Option<&[bool]> {
        dispatch!(self, l => l.eligible())
    }
}

impl RowSubset for Model {
    fn subset_rows(&self, rows: &[usize]) -> Self {
        match self {
            Model::Linear(l) => Model::Linear(l.subset_rows(rows)),
            Model::Logistic(l) => Model::Logistic(l.subset_rows(rows)),
        }
    }
    fn heldout_loss(&self, beta: &SparseCoef, rows: &[usize]) -> f64 {
        dispatch!(self, l => l.heldout_loss(beta, rows))
    }
    fn single_class(&self) -> bool {
        dispatch!(self, l => l.single_class())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{normalize_columns, DenseMatrix};
    use crate::oracle::finite_diff_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_design(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let raw = DenseMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        normalize_columns(&raw).unwrap().0
    }

    fn random_beta(p: usize, rng: &mut ChaCha8Rng) -> SparseCoef {
        let dense: Vec<f64> = (0..p)
            .map(|_| {
                if rng.random_bool(0.6) {
                    rng.sample::<f64, _>(StandardNormal) * 0.5
                } else {
                    0.0
                }
            })
            .collect();
        SparseCoef::from_dense(&dense)
    }

    fn check_fd<L: Loss>(loss: &L, beta: &SparseCoef) {
        let g = loss.gradient(beta);
        let fd = finite_diff_gradient(loss, beta, 1e-6);
        for (j, (a, b)) in g.iter().zip(&fd).enumerate() {
            let rel = (a - b).abs() / a.abs().max(1e-4);
            assert!(rel <= 1e-6, "coordinate {j}: analytic {a}, fd {b}, rel {rel}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..50 {
            let n = 10 + trial % 15;
            let p = 3 + trial % 18;
            let x = random_design(n, p, &mut rng);
            let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let lin = LinearLoss::new(x.clone(), y, trial % 2 == 0).unwrap();
            let beta = random_beta(p, &mut rng);
            check_fd(&lin, &beta);

            let yb: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
            let logit = LogisticLoss::new(x, yb).unwrap();
            check_fd(&logit, &beta);
        }
    }

    #[test]
    fn loss_invariant_under_joint_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, p) = (12, 6);
        let x = random_design(n, p, &mut rng);
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let beta = random_beta(p, &mut rng).to_dense();
        let perm = [3, 0, 5, 1, 4, 2];
        let xp = DenseMatrix::from_fn(n, p, |i, j| x.get(i, perm[j]));
        let bp: Vec<f64> = perm.iter().map(|&j| beta[j]).collect();
        let a = LinearLoss::new(x, y.clone(), true).unwrap();
        let b = LinearLoss::new(xp, y, true).unwrap();
        let fa = a.value(&SparseCoef::from_dense(&beta));
        let fb = b.value(&SparseCoef::from_dense(&bp));
        assert!((fa - fb).abs() <= 1e-12 * fa.max(1.0));
    }

    #[test]
    fn model_dispatch_matches_inner() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_design(8, 3, &mut rng);
        let y = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let inner = LogisticLoss::new(x, y).unwrap();
        let model = Model::Logistic(inner.clone());
        let b = SparseCoef::from_dense(&[0.3, 0.0, -0.2]);
        assert_eq!(model.value(&b), inner.value(&b));
        assert_eq!(model.kind(), LossKind::Logistic);
    }
}
