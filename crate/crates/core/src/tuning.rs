//! Adaptive choice of the support size: fit `T = alpha, 2 alpha, ...` with
//! warm starts until `T` passes `Q`, then keep the fit with the lowest
//! HBIC or cross-validation score.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::coef::SparseCoef;
use crate::datagen::{stream_rng, Purpose};
use crate::error::{invalid, Error, Result};
use crate::loss::{Loss, LossKind, RowSubset};
use crate::solver::{fit_sdarl, FitResult, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Hbic,
    Cv { folds: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningConfig {
    /// Grid step for `T`.
    pub alpha: usize,
    /// Largest `T` of interest; `None` means `floor(n / ln n)`.
    pub q: Option<usize>,
    pub criterion: Criterion,
    /// Solver settings; its `t` is overwritten along the path.
    pub base: SolverConfig,
    /// Seed for fold assignment.
    pub cv_seed: u64,
}

impl TuningConfig {
    pub fn new(base: SolverConfig) -> Self {
        Self {
            alpha: 1,
            q: None,
            criterion: Criterion::Hbic,
            base,
            cv_seed: 1,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.alpha == 0 {
            return invalid("alpha must be at least 1");
        }
        if let Criterion::Cv { folds } = self.criterion {
            if folds < 2 || folds > n {
                return invalid(format!("{folds} folds need 2 <= folds <= n = {n}"));
            }
        }
        if self.resolved_q(n) == 0 {
            return invalid("Q must be at least 1");
        }
        self.base.with_t(1).validate()
    }

    pub fn resolved_q(&self, n: usize) -> usize {
        self.q.unwrap_or_else(|| default_q(n))
    }
}

/// `floor(n / ln n)`; 1 when `n < 3`.
pub fn default_q(n: usize) -> usize {
    if n < 3 {
        return 1;
    }
    (n as f64 / (n as f64).ln()).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEntry {
    pub t: usize,
    pub fit: FitResult,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    /// Score of the all-zero head `beta(0) = 0`; reported, never selected.
    pub null_score: f64,
    pub entries: Vec<PathEntry>,
    pub selected: usize,
    pub q: usize,
}

impl SolutionPath {
    pub fn selected_entry(&self) -> &PathEntry {
        &self.entries[self.selected]
    }

    /// Restricted solves summed over the path.
    pub fn total_iterations(&self) -> usize {
        self.entries.iter().map(|e| e.fit.iterations).sum()
    }
}

/// High-dimensional BIC: `n ln(2F) + df ln(ln n) ln p` for least squares,
/// `2nF + df ln(ln n) ln p` for logistic; `df` counts entries above 1e-10.
/// A linear fit with zero loss scores negative infinity.
pub fn hbic_score<L: Loss + ?Sized>(loss: &L, beta: &SparseCoef) -> f64 {
    let n = loss.n_samples() as f64;
    let p = loss.n_features() as f64;
    let f = loss.value(beta);
    let penalty = beta.effective_l0() as f64 * n.ln().ln() * p.ln();
    match loss.kind() {
        LossKind::Linear => {
            if f <= 0.0 {
                f64::NEG_INFINITY
            } else {
                n * (2.0 * f).ln() + penalty
            }
        }
        LossKind::Logistic => 2.0 * n * f + penalty,
    }
}

/// Seeded shuffled round-robin assignment of rows to folds.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, 0, Purpose::Folds));
    let mut out = vec![Vec::new(); folds];
    for (i, row) in perm.into_iter().enumerate() {
        out[i % folds].push(row);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    /// Mean held-out loss over the folds that ran.
    pub score: f64,
    /// Folds whose training rows held a single class.
    pub skipped: Vec<usize>,
}

/// K-fold cross-validated held-out loss of the solver at `cfg.t`.
pub fn cv_score<L: RowSubset>(loss: &L, cfg: &SolverConfig, folds: usize, seed: u64) -> Result<CvOutcome> {
    let n = loss.n_samples();
    if folds < 2 || folds > n {
        return invalid(format!("{folds} folds need 2 <= folds <= n = {n}"));
    }
    let assignment = fold_assignment(n, folds, seed);
    let per_fold: Vec<Result<Option<f64>>> = assignment
        .par_iter()
        .map(|test| {
            let mut in_test = vec![false; n];
            for &i in test {
                in_test[i] = true;
            }
            let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
            let sub = loss.subset_rows(&train);
            if sub.single_class() {
                return Ok(None);
            }
            let fit = fit_sdarl(&sub, cfg, &SparseCoef::zeros(loss.n_features()))?;
            Ok(Some(loss.heldout_loss(&fit.beta, test)))
        })
        .collect();
    let mut total = 0.0;
    let mut used = 0;
    let mut skipped = Vec::new();
    for (k, r) in per_fold.into_iter().enumerate() {
        match r? {
            Some(v) => {
                total += v;
                used += 1;
            }
            None => skipped.push(k),
        }
    }
    if used == 0 {
        return Err(Error::AllFoldsSkipped { folds });
    }
    Ok(CvOutcome {
        score: total / used as f64,
        skipped,
    })
}

/// Runs the warm-started path and scores every entry.
pub fn fit_asdarl<L: RowSubset>(loss: &L, cfg: &TuningConfig) -> Result<SolutionPath> {
    let n = loss.n_samples();
    cfg.validate(n)?;
    let q = cfg.resolved_q(n);
    let p = loss.n_features();
    let zero = SparseCoef::zeros(p);
    let score = |beta: &SparseCoef, t: usize| -> Result<f64> {
        match cfg.criterion {
            Criterion::Hbic => Ok(hbic_score(loss, beta)),
            Criterion::Cv { folds } => Ok(cv_score(loss, &cfg.base.with_t(t), folds, cfg.cv_seed)?.score),
        }
    };
    let null_score = match cfg.criterion {
        Criterion::Hbic => hbic_score(loss, &zero),
        Criterion::Cv { folds } => {
            let assignment = fold_assignment(n, folds, cfg.cv_seed);
            assignment.iter().map(|rows| loss.heldout_loss(&zero, rows)).sum::<f64>() / folds as f64
        }
    };

    let mut entries: Vec<PathEntry> = Vec::new();
    let mut k = 1;
    loop {
        let t = cfg.alpha * k;
        if t > loss.n_eligible() {
            if entries.is_empty() {
                return invalid(format!("alpha = {} exceeds the selectable features", cfg.alpha));
            }
            break;
        }
        let warm = entries.last().map_or(zero.clone(), |e| e.fit.beta.clone());
        let fit = fit_sdarl(loss, &cfg.base.with_t(t), &warm)?;
        let s = score(&fit.beta, t)?;
        entries.push(PathEntry { t, fit, score: s });
        if t > q {
            break;
        }
        k += 1;
    }
    let selected = argmin(entries.iter().map(|e| e.score));
    Ok(SolutionPath {
        null_score,
        entries,
        selected,
        q,
    })
}

/// First index of the smallest value; NaN counts as `+inf`.
fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if i == 0 || v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_replication, GenSpec};
    use crate::loss::{LinearLoss, LogisticLoss, Model};
    use crate::solver::Termination;

    fn easy_linear(n: usize, p: usize, k: usize, sigma1: f64, seed: u64) -> (Model, SparseCoef) {
        let spec = GenSpec {
            sigma1,
            seed,
            ..GenSpec::new(LossKind::Linear, n, p, k)
        };
        let d = generate_replication(&spec, 0).unwrap();
        (d.train_loss().unwrap(), d.beta_star)
    }

    #[test]
    fn default_q_values() {
        assert_eq!(default_q(800), 119);
        assert_eq!(default_q(100), 21);
        assert_eq!(default_q(2), 1);
    }

    #[test]
    fn argmin_prefers_first_and_skips_nan() {
        assert_eq!(argmin([3.0, 1.0, 1.0].into_iter()), 1);
        assert_eq!(argmin([f64::NAN, 2.0, 5.0].into_iter()), 1);
        assert_eq!(argmin([f64::NEG_INFINITY, f64::NEG_INFINITY].into_iter()), 0);
    }

    #[test]
    fn hbic_penalizes_support_size() {
        let (loss, _) = easy_linear(40, 30, 3, 1.0, 1);
        let a = SparseCoef::new(30, (0..5).collect(), vec![1e-6; 5]).unwrap();
        let b = SparseCoef::new(30, (0..10).collect(), vec![1e-6; 10]).unwrap();
        assert!((loss.value(&a) - loss.value(&b)).abs() < 1e-4);
        assert!(hbic_score(&loss, &a) < hbic_score(&loss, &b));
        let pen = 5.0 * 40f64.ln().ln() * 30f64.ln();
        let expect = 40.0 * (2.0 * loss.value(&a)).ln() + pen;
        assert!((hbic_score(&loss, &a) - expect).abs() < 1e-9);
        // explicit zeros do not count as degrees of freedom
        let z = SparseCoef::new(30, vec![0], vec![0.0]).unwrap();
        assert_eq!(hbic_score(&loss, &z), hbic_score(&loss, &SparseCoef::zeros(30)));
    }

    #[test]
    fn hbic_logistic_null_model() {
        let spec = GenSpec {
            r: 5.0,
            ..GenSpec::new(LossKind::Logistic, 50, 20, 2)
        };
        let d = generate_replication(&spec, 0).unwrap();
        let l = LogisticLoss::new(d.design, d.response).unwrap();
        let s = hbic_score(&l, &SparseCoef::zeros(20));
        assert!((s - 2.0 * 50.0 * std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn hbic_zero_loss_is_negative_infinity() {
        let (loss, truth) = easy_linear(30, 20, 2, 0.0, 3);
        assert_eq!(hbic_score(&loss, &truth), f64::NEG_INFINITY);
    }

    #[test]
    fn path_stopping_rule() {
        let (loss, _) = easy_linear(60, 40, 3, 1.0, 4);
        let mut cfg = TuningConfig::new(SolverConfig::new(1));
        cfg.alpha = 5;
        cfg.q = Some(12);
        let path = fit_asdarl(&loss, &cfg).unwrap();
        let ts: Vec<usize> = path.entries.iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![5, 10, 15]);
        assert_eq!(path.entries.len(), 12 / 5 + 1);
        cfg.alpha = 20;
        let path = fit_asdarl(&loss, &cfg).unwrap();
        assert_eq!(path.entries.len(), 1);
    }

    #[test]
    fn stopping_rule_at_paper_dimensions() {
        // T = 50, 100, 150 with Q = floor(800 / ln 800) = 119
        let q = default_q(800);
        let ts: Vec<usize> = (1..).map(|k| 50 * k).take_while(|&t| t - 50 <= q).collect();
        assert_eq!(ts, vec![50, 100, 150]);
    }

    /// The penalty per variable, ln(ln n) ln p, is below the roughly 2 ln p
    /// drop the best spurious column buys at this n, so small overshoots
    /// happen; a pilot over these seeds gave T = K in 14 of 20.
    #[test]
    fn selects_near_true_sparsity_on_easy_data() {
        let mut exact = 0;
        for seed in 0..20 {
            let (loss, truth) = easy_linear(400, 800, 5, 1.0, seed);
            let mut cfg = TuningConfig::new(SolverConfig::new(1));
            cfg.q = Some(12);
            let path = fit_asdarl(&loss, &cfg).unwrap();
            let sel = path.selected_entry();
            assert!((5..=7).contains(&sel.t), "seed {seed}: T = {}", sel.t);
            let supp = sel.fit.beta.effective_support();
            assert!(truth.support().iter().all(|j| supp.contains(j)));
            let min = path.entries.iter().map(|e| e.score).fold(f64::INFINITY, f64::min);
            assert_eq!(sel.score, min);
            exact += usize::from(sel.t == 5);
        }
        assert!(exact >= 12, "{exact}");
    }

    #[test]
    fn warm_path_is_not_slower_than_cold() {
        let (mut warm_total, mut cold_total) = (0, 0);
        for seed in 0..20 {
            let (loss, _) = easy_linear(80, 150, 5, 0.5, 100 + seed);
            let mut cfg = TuningConfig::new(SolverConfig::new(1));
            cfg.q = Some(10);
            let path = fit_asdarl(&loss, &cfg).unwrap();
            warm_total += path.total_iterations();
            for e in &path.entries {
                let cold = fit_sdarl(&loss, &cfg.base.with_t(e.t), &SparseCoef::zeros(150)).unwrap();
                cold_total += cold.iterations;
            }
        }
        assert!(warm_total as f64 <= 1.5 * cold_total as f64, "{warm_total} vs {cold_total}");
    }

    #[test]
    fn folds_partition_rows() {
        let f = fold_assignment(23, 5, 9);
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(f.iter().all(|x| x.len() == 4 || x.len() == 5));
        assert_eq!(f, fold_assignment(23, 5, 9));
        assert_ne!(f, fold_assignment(23, 5, 10));
    }

    #[test]
    fn leave_one_out_matches_enumeration() {
        let (loss, _) = easy_linear(10, 6, 2, 0.5, 6);
        let Model::Linear(lin) = &loss else { unreachable!() };
        let cfg = SolverConfig::new(2);
        let cv = cv_score(lin, &cfg, 10, 3).unwrap();
        let mut direct = 0.0;
        for i in 0..10 {
            let rows: Vec<usize> = (0..10).filter(|&r| r != i).collect();
            let sub: LinearLoss = lin.subset_rows(&rows);
            let fit = fit_sdarl(&sub, &cfg, &SparseCoef::zeros(6)).unwrap();
            let r = lin.residual(&fit.beta)[i];
            direct += r * r;
        }
        direct /= 10.0;
        assert!((cv.score - direct).abs() <= 1e-12 * direct.max(1.0));
        assert_eq!(cv, cv_score(lin, &cfg, 10, 3).unwrap());
    }

    #[test]
    fn cv_does_not_reward_overfitting_noiseless_data() {
        let (loss, _) = easy_linear(60, 40, 4, 0.0, 7);
        let at_k = cv_score(&loss, &SolverConfig::new(4), 5, 1).unwrap().score;
        let above = cv_score(&loss, &SolverConfig::new(8), 5, 1).unwrap().score;
        assert!(above >= at_k - 1e-12, "{above} < {at_k}");
    }

    #[test]
    fn cv_skips_single_class_folds() {
        use crate::linalg::DenseMatrix;
        let x = DenseMatrix::from_fn(4, 2, |i, j| (i + j + 1) as f64 * if i % 2 == 0 { 1.0 } else { -1.0 });
        let l = LogisticLoss::new(x, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let res = cv_score(&l, &SolverConfig::new(1), 4, 1).unwrap();
        assert_eq!(res.skipped.len(), 1);
        let all_one = LogisticLoss::new(DenseMatrix::from_fn(4, 2, |i, j| (i * 2 + j) as f64 + 1.0), vec![1.0; 4]).unwrap();
        assert!(matches!(
            cv_score(&all_one, &SolverConfig::new(1), 2, 1),
            Err(Error::AllFoldsSkipped { folds: 2 })
        ));
    }

    #[test]
    fn path_entries_are_converged_fits() {
        let (loss, _) = easy_linear(80, 100, 4, 0.5, 8);
        let mut cfg = TuningConfig::new(SolverConfig::new(1));
        cfg.q = Some(6);
        let path = fit_asdarl(&loss, &cfg).unwrap();
        assert!(path
            .entries
            .iter()
            .all(|e| e.fit.termination != Termination::LineSearchCap));
        assert!(path.null_score.is_finite());
    }
}
