use nalgebra::DMatrix;

use super::{Loss, LossKind, RestrictedFit, RowSubset, SubsolverOptions};
use crate::coef::SparseCoef;
use crate::error::{Error, Result};
use crate::linalg::{solve_spd_min_norm, solve_spd_strict, DenseMatrix};

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-z})` without overflow.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Negative mean log-likelihood of a logistic model without intercept,
/// `F(beta) = (1/n) sum_i [ln(1 + e^{x_i beta}) - y_i x_i beta]`.
#[derive(Debug, Clone)]
pub struct LogisticLoss {
    design: DenseMatrix,
    response: Vec<f64>,
    eligible: Option<Vec<bool>>,
}

impl LogisticLoss {
    pub fn new(design: DenseMatrix, response: Vec<f64>) -> Result<Self> {
        if response.len() != design.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, response has {}",
                design.nrows(),
                response.len()
            )));
        }
        if response.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidArgument("logistic responses must be 0 or 1".into()));
        }
        Ok(Self {
            design,
            response,
            eligible: None,
        })
    }

    pub fn with_eligible(mut self, eligible: Vec<bool>) -> Result<Self> {
        if eligible.len() != self.design.ncols() {
            return Err(Error::DimensionMismatch("eligibility mask length".into()));
        }
        self.eligible = Some(eligible);
        Ok(self)
    }

    pub fn design(&self) -> &DenseMatrix {
        &self.design
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    /// Linear predictor `X beta`.
    pub fn linear_predictor(&self, beta: &SparseCoef) -> Vec<f64> {
        assert_eq!(beta.dim(), self.design.ncols(), "coefficient dimension mismatch");
        self.design.mul_columns(beta.support(), beta.values())
    }

    fn value_from_eta(&self, eta: &[f64]) -> f64 {
        let s: f64 = eta
            .iter()
            .zip(&self.response)
            .map(|(&z, &y)| log1p_exp(z) - y * z)
            .sum();
        s / self.response.len() as f64
    }

    fn residual_from_eta(&self, eta: &[f64]) -> Vec<f64> {
        eta.iter()
            .zip(&self.response)
            .map(|(&z, &y)| sigmoid(z) - y)
            .collect()
    }

    /// Every row strictly on the correct side of the boundary: scaling the
    /// coefficients up then decreases the loss forever.
    fn strictly_separates(&self, eta: &[f64]) -> bool {
        eta.iter()
            .zip(&self.response)
            .all(|(&z, &y)| if y == 1.0 { z > 0.0 } else { z < 0.0 })
    }

    fn newton_direction(&self, hess: &DMatrix<f64>, grad: &[f64], jitter: f64) -> Vec<f64> {
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        if let Some(step) = solve_spd_strict(hess, &neg) {
            return step;
        }
        let ridged = hess + DMatrix::identity(hess.nrows(), hess.nrows()) * jitter;
        if let Some(chol) = ridged.clone().cholesky() {
            let step = chol.solve(&nalgebra::DVector::from_vec(neg.clone()));
            if step.iter().all(|v| v.is_finite()) {
                return step.iter().copied().collect();
            }
        }
        solve_spd_min_norm(&ridged, &neg).expect("hessian is symmetric by construction")
    }
}

impl Loss for LogisticLoss {
    fn kind(&self) -> LossKind {
        LossKind::Logistic
    }

    fn n_samples(&self) -> usize {
        self.design.nrows()
    }

    fn n_features(&self) -> usize {
        self.design.ncols()
    }

    fn value(&self, beta: &SparseCoef) -> f64 {
        self.value_from_eta(&self.linear_predictor(beta))
    }

    fn gradient(&self, beta: &SparseCoef) -> Vec<f64> {
        let r = self.residual_from_eta(&self.linear_predictor(beta));
        let n = self.n_samples() as f64;
        let mut g = self.design.tr_mul_vec(&r);
        for v in &mut g {
            *v /= n;
        }
        g
    }

    /// Damped Newton on the `|A|`-dimensional problem.
    ///
    /// Starts from `warm` restricted to `A` (zeros elsewhere); each step
    /// halves until the loss decreases. Stops at `grad_tol` or `max_iter`
    /// and returns the lowest-loss iterate.
    fn minimize_restricted(
        &self,
        active: &[usize],
        warm: Option<&SparseCoef>,
        opts: &SubsolverOptions,
    ) -> RestrictedFit {
        let n = self.n_samples() as f64;
        let p = self.n_features();
        let mut vals: Vec<f64> = match warm {
            Some(w) => active.iter().map(|&j| w.get(j)).collect(),
            None => vec![0.0; active.len()],
        };
        let mut eta = self.design.mul_columns(active, &vals);
        let mut f = self.value_from_eta(&eta);
        let mut grad_inf = f64::INFINITY;
        let mut iterations = 0;

        while iterations < opts.max_iter {
            let resid = self.residual_from_eta(&eta);
            let grad: Vec<f64> = self
                .design
                .tr_mul_columns(active, &resid)
                .into_iter()
                .map(|v| v / n)
                .collect();
            grad_inf = grad.iter().fold(0.0, |m, g| m.max(g.abs()));
            if grad_inf <= opts.grad_tol {
                break;
            }
            iterations += 1;
            let weights: Vec<f64> = eta
                .iter()
                .map(|&z| {
                    let s = sigmoid(z);
                    s * (1.0 - s)
                })
                .collect();
            let hess = self.design.weighted_gram(active, Some(&weights), n);
            let step = self.newton_direction(&hess, &grad, opts.jitter);
            let step_eta = self.design.mul_columns(active, &step);

            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-12 {
                let cand_eta: Vec<f64> = eta.iter().zip(&step_eta).map(|(e, s)| e + t * s).collect();
                let fc = self.value_from_eta(&cand_eta);
                if fc < f {
                    for (v, s) in vals.iter_mut().zip(&step) {
                        *v += t * s;
                    }
                    // recompute rather than accumulate to avoid drift
                    eta = self.design.mul_columns(active, &vals);
                    f = self.value_from_eta(&eta);
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }

        if grad_inf.is_infinite() || iterations == opts.max_iter {
            let resid = self.residual_from_eta(&eta);
            grad_inf = self
                .design
                .tr_mul_columns(active, &resid)
                .iter()
                .fold(0.0, |m, g| m.max((g / n).abs()));
        }
        let diverging = grad_inf > opts.separation_grad_tol
            && vals.iter().any(|v| v.abs() > opts.separation_coef);
        let separated = diverging || (!active.is_empty() && self.strictly_separates(&eta));

        RestrictedFit {
            beta: SparseCoef::from_parts_unchecked(p, active.to_vec(), vals),
            loss: f,
            iterations,
            separated,
        }
    }

    fn eligible(&self) -> Option<&[bool]> {
        self.eligible.as_deref()
    }
}

impl RowSubset for LogisticLoss {
    fn subset_rows(&self, rows: &[usize]) -> Self {
        Self {
            design: self.design.select_rows(rows),
            response: rows.iter().map(|&i| self.response[i]).collect(),
            eligible: self.eligible.clone(),
        }
    }

    fn heldout_loss(&self, beta: &SparseCoef, rows: &[usize]) -> f64 {
        let eta = self.linear_predictor(beta);
        rows.iter()
            .map(|&i| log1p_exp(eta[i]) - self.response[i] * eta[i])
            .sum::<f64>()
            / rows.len() as f64
    }

    fn single_class(&self) -> bool {
        let ones = self.response.iter().filter(|&&y| y == 1.0).count();
        ones == 0 || ones == self.response.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::normalize_columns;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, p: usize, seed: u64) -> LogisticLoss {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DenseMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        let x = normalize_columns(&raw).unwrap().0;
        let truth: Vec<f64> = (0..p).map(|j| if j < 2 { 0.8 } else { 0.0 }).collect();
        let eta = x.mul_vec(&truth);
        let y = eta
            .iter()
            .map(|&z| f64::from(u8::from(rng.random_bool(sigmoid(z)))))
            .collect();
        LogisticLoss::new(x, y).unwrap()
    }

    #[test]
    fn value_at_zero_is_ln2() {
        let l = random_problem(15, 4, 1);
        let f = l.value(&SparseCoef::zeros(4));
        assert!((f - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gradient_at_zero_is_half_minus_y() {
        let l = random_problem(15, 4, 2);
        let g = l.gradient(&SparseCoef::zeros(4));
        for j in 0..4 {
            let direct: f64 = (0..15)
                .map(|i| l.design().get(i, j) * (0.5 - l.response()[i]))
                .sum::<f64>()
                / 15.0;
            assert!((g[j] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn value_matches_naive_summation() {
        let l = random_problem(12, 3, 3);
        let beta = [0.3, -0.7, 1.1];
        let mut naive = 0.0;
        for i in 0..12 {
            let z: f64 = (0..3).map(|j| l.design().get(i, j) * beta[j]).sum();
            naive += (1.0 + z.exp()).ln() - l.response()[i] * z;
        }
        naive /= 12.0;
        let f = l.value(&SparseCoef::from_dense(&beta));
        assert!((f - naive).abs() <= 1e-12 * naive.abs());
    }

    #[test]
    fn stable_for_large_predictors() {
        for z in [-700.0, -300.0, -1.0, 0.0, 1.0, 300.0, 700.0] {
            assert!(log1p_exp(z).is_finite());
            let s = sigmoid(z);
            assert!((0.0..=1.0).contains(&s));
        }
        assert_eq!(log1p_exp(700.0), 700.0);
    }

    #[test]
    fn newton_reaches_gradient_tolerance() {
        let l = random_problem(200, 6, 4);
        let active = [0, 1, 3];
        let fit = l.minimize_restricted(&active, None, &SubsolverOptions::default());
        assert!(!fit.separated);
        let g = l.gradient(&fit.beta);
        assert!(active.iter().all(|&j| g[j].abs() <= 1e-8), "{g:?}");
        assert!(fit.loss < std::f64::consts::LN_2);
    }

    #[test]
    fn warm_start_converges_to_same_point() {
        let l = random_problem(150, 5, 5);
        let active = [1, 2];
        let opts = SubsolverOptions::default();
        let cold = l.minimize_restricted(&active, None, &opts);
        let warm = l.minimize_restricted(&active, Some(&cold.beta.scaled(0.9)), &opts);
        for (a, b) in cold.beta.values().iter().zip(warm.beta.values()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(warm.iterations <= cold.iterations);
    }

    #[test]
    fn perfect_separation_is_flagged() {
        // one positive column and every label 1: the likelihood increases without bound
        let x = DenseMatrix::from_fn(20, 3, |i, j| match j {
            0 => 0.5 + (i as f64) * 0.1,
            _ => ((i * (j + 3)) % 7) as f64 - 3.0,
        });
        let x = normalize_columns(&x).unwrap().0;
        let l = LogisticLoss::new(x, vec![1.0; 20]).unwrap();
        let fit = l.minimize_restricted(&[0], None, &SubsolverOptions::default());
        assert!(fit.separated);
        assert!(fit.beta.values()[0] > 10.0, "{:?}", fit.beta);
        assert!(l.single_class());
    }

    #[test]
    fn rejects_non_binary_labels() {
        let x = DenseMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(LogisticLoss::new(x, vec![0.0, 2.0]).is_err());
    }
}
