use super::{Loss, LossKind, RestrictedFit, RowSubset, SubsolverOptions};
use crate::coef::SparseCoef;
use crate::error::{Error, Result};
use crate::linalg::{dot, solve_spd_min_norm, DenseMatrix};

/// Least squares `F(beta) = ||X beta + b0 - y||^2 / (2n)`, where `b0` is a
/// fixed all-ones offset when `intercept` is set (it is not estimated).
#[derive(Debug, Clone)]
pub struct LinearLoss {
    design: DenseMatrix,
    response: Vec<f64>,
    intercept: bool,
    eligible: Option<Vec<bool>>,
}

impl LinearLoss {
    pub fn new(design: DenseMatrix, response: Vec<f64>, intercept: bool) -> Result<Self> {
        if response.len() != design.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, response has {}",
                design.nrows(),
                response.len()
            )));
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("response must be finite".into()));
        }
        Ok(Self {
            design,
            response,
            intercept,
            eligible: None,
        })
    }

    /// Excludes columns from active-set eligibility.
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

    pub fn intercept(&self) -> bool {
        self.intercept
    }

    /// `y - b0`: the target the linear predictor has to match.
    pub fn target(&self) -> Vec<f64> {
        let shift = if self.intercept { 1.0 } else { 0.0 };
        self.response.iter().map(|y| y - shift).collect()
    }

    /// `X beta + b0 - y`.
    pub fn residual(&self, beta: &SparseCoef) -> Vec<f64> {
        assert_eq!(beta.dim(), self.design.ncols(), "coefficient dimension mismatch");
        let mut r = self.design.mul_columns(beta.support(), beta.values());
        let shift = if self.intercept { 1.0 } else { 0.0 };
        for (ri, yi) in r.iter_mut().zip(&self.response) {
            *ri += shift - yi;
        }
        r
    }
}

impl Loss for LinearLoss {
    fn kind(&self) -> LossKind {
        LossKind::Linear
    }

    fn n_samples(&self) -> usize {
        self.design.nrows()
    }

    fn n_features(&self) -> usize {
        self.design.ncols()
    }

    fn value(&self, beta: &SparseCoef) -> f64 {
        let r = self.residual(beta);
        dot(&r, &r) / (2.0 * self.n_samples() as f64)
    }

    fn gradient(&self, beta: &SparseCoef) -> Vec<f64> {
        let r = self.residual(beta);
        let n = self.n_samples() as f64;
        let mut g = self.design.tr_mul_vec(&r);
        for v in &mut g {
            *v /= n;
        }
        g
    }

    /// Exact solve of the restricted normal equations; minimum-norm when the
    /// active columns are linearly dependent.
    fn minimize_restricted(
        &self,
        active: &[usize],
        _warm: Option<&SparseCoef>,
        _opts: &SubsolverOptions,
    ) -> RestrictedFit {
        let n = self.n_samples() as f64;
        let gram = self.design.weighted_gram(active, None, n);
        let target = self.target();
        let rhs: Vec<f64> = self
            .design
            .tr_mul_columns(active, &target)
            .into_iter()
            .map(|v| v / n)
            .collect();
        let values = solve_spd_min_norm(&gram, &rhs).expect("gram matrix is symmetric by construction");
        let beta = SparseCoef::from_parts_unchecked(self.n_features(), active.to_vec(), values);
        let loss = self.value(&beta);
        RestrictedFit {
            beta,
            loss,
            iterations: 1,
            separated: false,
        }
    }

    fn eligible(&self) -> Option<&[bool]> {
        self.eligible.as_deref()
    }
}

impl RowSubset for LinearLoss {
    fn subset_rows(&self, rows: &[usize]) -> Self {
        Self {
            design: self.design.select_rows(rows),
            response: rows.iter().map(|&i| self.response[i]).collect(),
            intercept: self.intercept,
            eligible: self.eligible.clone(),
        }
    }

    fn heldout_loss(&self, beta: &SparseCoef, rows: &[usize]) -> f64 {
        let r = self.residual(beta);
        rows.iter().map(|&i| r[i] * r[i]).sum::<f64>() / rows.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::normalize_columns;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn setup(n: usize, p: usize, seed: u64) -> (DenseMatrix, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DenseMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        (normalize_columns(&raw).unwrap().0, rng)
    }

    #[test]
    fn zero_loss_on_identity_zero_response() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let l = LinearLoss::new(x, vec![0.0, 0.0], false).unwrap();
        assert_eq!(l.value(&SparseCoef::zeros(2)), 0.0);
    }

    #[test]
    fn value_matches_direct_sum() {
        let (x, mut rng) = setup(9, 4, 1);
        let y: Vec<f64> = (0..9).map(|_| rng.sample(StandardNormal)).collect();
        let beta = [0.4, -1.0, 0.0, 2.0];
        let l = LinearLoss::new(x.clone(), y.clone(), true).unwrap();
        let mut direct = 0.0;
        for i in 0..9 {
            let mut e = 1.0 - y[i];
            for j in 0..4 {
                e += x.get(i, j) * beta[j];
            }
            direct += e * e;
        }
        direct /= 18.0;
        let f = l.value(&SparseCoef::from_dense(&beta));
        assert!((f - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn stationary_at_least_squares_solution() {
        let (x, mut rng) = setup(30, 5, 2);
        let y: Vec<f64> = (0..30).map(|_| rng.sample(StandardNormal)).collect();
        let l = LinearLoss::new(x, y, true).unwrap();
        let all: Vec<usize> = (0..5).collect();
        let fit = l.minimize_restricted(&all, None, &SubsolverOptions::default());
        let g = l.gradient(&fit.beta);
        assert!(g.iter().all(|v| v.abs() <= 1e-10), "{g:?}");
    }

    #[test]
    fn interpolates_noiseless_response() {
        let (x, _) = setup(20, 8, 3);
        let truth = SparseCoef::new(8, vec![1, 4, 6], vec![2.0, -1.5, 0.7]).unwrap();
        let mut y = x.mul_columns(truth.support(), truth.values());
        y.iter_mut().for_each(|v| *v += 1.0);
        let l = LinearLoss::new(x, y, true).unwrap();
        let fit = l.minimize_restricted(truth.support(), None, &SubsolverOptions::default());
        for (a, b) in fit.beta.values().iter().zip(truth.values()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    /// Random-probe oracle: no perturbation supported on A does better.
    #[test]
    fn restricted_minimum_beats_random_probes() {
        let (x, mut rng) = setup(20, 8, 4);
        let y: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
        let l = LinearLoss::new(x, y, true).unwrap();
        let active = [0, 2, 5, 7];
        let fit = l.minimize_restricted(&active, None, &SubsolverOptions::default());
        for _ in 0..1000 {
            let scale = 10f64.powf(rng.random_range(-4.0..0.0));
            let vals: Vec<f64> = fit
                .beta
                .values()
                .iter()
                .map(|v| v + scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let probe = SparseCoef::new(8, active.to_vec(), vals).unwrap();
            assert!(l.value(&probe) >= fit.loss);
        }
        let g = l.gradient(&fit.beta);
        assert!(active.iter().all(|&j| g[j].abs() <= 1e-8));
    }

    #[test]
    fn rank_deficient_active_set_gives_min_norm() {
        // duplicated column: any split of the weight fits equally well
        let (base, mut rng) = setup(10, 2, 5);
        let x = DenseMatrix::from_fn(10, 3, |i, j| base.get(i, if j == 2 { 0 } else { j }));
        let y: Vec<f64> = (0..10).map(|_| rng.sample(StandardNormal)).collect();
        let l = LinearLoss::new(x, y, false).unwrap();
        let fit = l.minimize_restricted(&[0, 1, 2], None, &SubsolverOptions::default());
        let v = fit.beta.values();
        assert!((v[0] - v[2]).abs() <= 1e-8, "min-norm splits evenly: {v:?}");
    }
}
