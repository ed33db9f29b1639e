//! Small-instance verification battery: gradient checks, solver invariants
//! over a matrix of synthetic problems, and agreement with the exhaustive
//! oracle. Each property reports how many cases it checked and passed.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::coef::SparseCoef;
use crate::datagen::{generate_replication, CoefKind, DesignKind, GenSpec};
use crate::experiment::{emit_with_cross_check, preset, run_bench, BenchOptions};
use crate::linalg::{normalize_columns, DenseMatrix};
use crate::loss::{LinearLoss, LogisticLoss, Loss, LossKind, Model, RestrictedFit, SubsolverOptions};
use crate::oracle::{admissible_lambda_interval, brute_force_best_support, certify_kkt, finite_diff_gradient, OracleBudget};
use crate::solver::{fit_sdarl, FitResult, SolverConfig, Termination};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub name: String,
    pub checked: usize,
    pub passed: usize,
    /// Passes needed for the property to hold.
    pub required: usize,
    /// First failure or a summary statistic.
    pub detail: String,
}

impl PropertyReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            checked: 0,
            passed: 0,
            required: 0,
            detail: String::new(),
        }
    }

    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checked += 1;
        if ok {
            self.passed += 1;
        } else if self.detail.is_empty() {
            self.detail = what();
        }
    }

    /// Requires every checked case to pass (and at least one case).
    fn all(mut self) -> Self {
        self.required = self.checked.max(1);
        self
    }

    pub fn pass(&self) -> bool {
        self.checked > 0 && self.passed >= self.required
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub properties: Vec<PropertyReport>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.properties.iter().all(PropertyReport::pass)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.properties.iter().filter(|p| !p.pass()).map(|p| p.name.as_str()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for p in &self.properties {
            let _ = write!(
                out,
                "{} {:<28} {:>5}/{:<5} (need {})",
                if p.pass() { "PASS" } else { "FAIL" },
                p.name,
                p.passed,
                p.checked,
                p.required
            );
            if !p.detail.is_empty() {
                let _ = write!(out, "  {}", p.detail);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Size of the solver invariant matrix.
    pub matrix_runs: usize,
    /// Test hook: perturb the analytic gradient so the gradient checks must fail.
    pub corrupt_gradient: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            matrix_runs: 120,
            corrupt_gradient: false,
        }
    }
}

/// A loss whose gradient is off by `offset` in coordinate 0.
pub struct CorruptGradient<L> {
    pub inner: L,
    pub offset: f64,
}

impl<L: Loss> Loss for CorruptGradient<L> {
    fn kind(&self) -> LossKind {
        self.inner.kind()
    }

    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    fn value(&self, beta: &SparseCoef) -> f64 {
        self.inner.value(beta)
    }

    fn gradient(&self, beta: &SparseCoef) -> Vec<f64> {
        let mut g = self.inner.gradient(beta);
        g[0] += self.offset;
        g
    }

    fn minimize_restricted(&self, active: &[usize], warm: Option<&SparseCoef>, opts: &SubsolverOptions) -> RestrictedFit {
        self.inner.minimize_restricted(active, warm, opts)
    }
}

/// Largest per-coordinate relative gap between the analytic gradient and
/// central differences at step `h`; the scale is floored at `1e-3`.
pub fn gradient_check_error<L: Loss + ?Sized>(loss: &L, beta: &SparseCoef, h: f64) -> f64 {
    let g = loss.gradient(beta);
    let fd = finite_diff_gradient(loss, beta, h);
    g.iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1e-3))
        .fold(0.0, f64::max)
}

/// Random small problems for the gradient checks (`p <= 20`).
pub fn gradient_trial(kind: LossKind, rng: &mut ChaCha8Rng) -> (Model, SparseCoef) {
    let n = rng.random_range(10..40);
    let p = rng.random_range(2..=20);
    let x = DenseMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    let beta: Vec<f64> = (0..p)
        .map(|_| if rng.random_bool(0.6) { rng.sample::<f64, _>(StandardNormal) * 0.7 } else { 0.0 })
        .collect();
    let model = match kind {
        LossKind::Linear => {
            let y = (0..n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            Model::Linear(LinearLoss::new(x, y, rng.random_bool(0.5)).expect("consistent shapes"))
        }
        LossKind::Logistic => {
            let y = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
            Model::Logistic(LogisticLoss::new(x, y).expect("consistent shapes"))
        }
    };
    (model, SparseCoef::from_dense(&beta))
}

/// `trials` central-difference checks at `h = 1e-5`, relative tolerance `tol`.
pub fn check_gradients(kind: LossKind, trials: usize, tol: f64, seed: u64, corrupt: bool) -> PropertyReport {
    let mut rep = PropertyReport::new(&format!("gradient_check_{}", kind.as_str()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let (model, beta) = gradient_trial(kind, &mut rng);
        let err = if corrupt {
            gradient_check_error(&CorruptGradient { inner: model, offset: 1e-3 }, &beta, 1e-5)
        } else {
            gradient_check_error(&model, &beta, 1e-5)
        };
        worst = worst.max(err);
        rep.record(err <= tol, || format!("trial {trial}: relative error {err:.3e}"));
    }
    if rep.detail.is_empty() {
        rep.detail = format!("worst {worst:.2e}");
    }
    rep.all()
}

/// One problem in the solver invariant matrix.
pub struct MatrixInstance {
    pub label: String,
    pub loss: Model,
    pub t: usize,
    /// Largest eigenvalue of `X^T X / n` (linear only).
    pub curvature: Option<f64>,
}

/// Largest eigenvalue of `X^T X / n`.
pub fn gram_curvature(design: &DenseMatrix) -> f64 {
    let all: Vec<usize> = (0..design.ncols()).collect();
    let g = design.weighted_gram(&all, None, design.nrows() as f64);
    g.symmetric_eigenvalues().max()
}

/// `runs` synthetic problems cycling through both models, both designs and
/// coefficient schemes, several correlations, sizes with `p <= 200` and
/// support sizes below, at and above `K`.
pub fn instance_matrix(runs: usize, seed: u64) -> Result<Vec<MatrixInstance>> {
    const RHOS: [f64; 4] = [0.0, 0.2, 0.5, 0.8];
    const PS: [usize; 4] = [30, 60, 120, 200];
    const KS: [usize; 3] = [2, 4, 6];
    (0..runs)
        .map(|i| {
            let model = if i % 2 == 0 { LossKind::Linear } else { LossKind::Logistic };
            let n = match model {
                LossKind::Linear => [40, 80, 150][i % 3],
                LossKind::Logistic => [120, 200][(i / 2) % 2],
            };
            let p = PS[(i / 3) % 4];
            let k = KS[(i / 5) % 3];
            let t = match (i / 7) % 3 {
                0 => k,
                1 => k + 3,
                _ => (k - 1).max(1),
            };
            let gen = GenSpec {
                rho: RHOS[(i / 11) % 4],
                r: [10.0, 100.0][(i / 13) % 2],
                sigma1: [0.1, 1.0][(i / 17) % 2],
                design: if (i / 19) % 2 == 0 { DesignKind::Ar1 } else { DesignKind::Neighbor },
                coef: if (i / 23) % 2 == 0 { CoefKind::UnitFloor } else { CoefKind::LogFloor },
                seed: seed.wrapping_add(i as u64),
                ..GenSpec::new(model, n, p, k)
            };
            let data = generate_replication(&gen, 0)?;
            let loss = data.train_loss()?;
            let curvature = match &loss {
                Model::Linear(l) => Some(gram_curvature(l.design())),
                Model::Logistic(_) => None,
            };
            Ok(MatrixInstance {
                label: format!(
                    "{} n={n} p={p} K={k} T={t} rho={} {} {}",
                    model.as_str(),
                    gen.rho,
                    gen.design.as_str(),
                    gen.coef.as_str()
                ),
                loss,
                t,
                curvature,
            })
        })
        .collect()
}

/// Loss never increases after the first restricted solve (slack `1e-12`).
pub fn descent_holds(fit: &FitResult) -> bool {
    fit.loss_trajectory.iter().skip(1).zip(fit.loss_trajectory.iter().skip(2)).all(|(a, b)| *b <= *a + 1e-12)
}

/// Every step was found below `m_max`, and for linear problems with known
/// curvature `L` every accepted step satisfies `tau >= nu (1 - sigma) / L`.
pub fn line_search_holds(fit: &FitResult, cfg: &SolverConfig, curvature: Option<f64>) -> std::result::Result<(), String> {
    if fit.termination == Termination::LineSearchCap {
        return Err("hit the backtracking cap".into());
    }
    if let Some(m) = fit.backtracks.iter().find(|&&m| m >= cfg.m_max) {
        return Err(format!("exponent {m} reached m_max"));
    }
    if let Some(l) = curvature {
        let bound = cfg.nu * (1.0 - cfg.sigma) / l - 1e-12;
        if let Some(tau) = fit.tau_history.iter().find(|&&tau| tau < bound) {
            return Err(format!("tau {tau:.4e} below bound {bound:.4e}"));
        }
    }
    Ok(())
}

/// A converged fit certifies at its implied `lambda`, which must also sit
/// inside the admissible interval.
pub fn kkt_holds<L: Loss + ?Sized>(loss: &L, fit: &FitResult) -> std::result::Result<(), String> {
    let tau = fit.last_tau();
    let lambda = fit.implied_lambda();
    let cert = certify_kkt(loss, &fit.beta, tau, lambda);
    if !cert.pass {
        return Err(format!("residual {:.3e}", cert.residual()));
    }
    match admissible_lambda_interval(loss, &fit.beta, tau) {
        Some((lo, hi)) if lo < lambda && lambda <= hi => Ok(()),
        Some((lo, hi)) => Err(format!("lambda {lambda:.6e} outside ({lo:.6e}, {hi:.6e}]")),
        None => Err("empty admissible interval".into()),
    }
}

/// Solver invariants over [`instance_matrix`]: descent, line search and KKT.
pub fn check_matrix(instances: &[MatrixInstance], cfg: &SolverConfig) -> Result<Vec<PropertyReport>> {
    use rayon::prelude::*;
    let fits: Vec<Result<FitResult>> = instances
        .par_iter()
        .map(|inst| fit_sdarl(&inst.loss, &cfg.with_t(inst.t), &SparseCoef::zeros(inst.loss.n_features())))
        .collect();
    let mut descent = PropertyReport::new("descent_invariant");
    let mut search = PropertyReport::new("line_search_defined");
    let mut kkt = PropertyReport::new("kkt_at_convergence");
    for (inst, fit) in instances.iter().zip(fits) {
        let fit = fit?;
        descent.record(descent_holds(&fit), || format!("{}: trajectory increases", inst.label));
        let ls = line_search_holds(&fit, cfg, inst.curvature);
        search.record(ls.is_ok(), || format!("{}: {}", inst.label, ls.clone().unwrap_err()));
        if fit.termination == Termination::Converged {
            let k = kkt_holds(&inst.loss, &fit);
            kkt.record(k.is_ok(), || format!("{}: {}", inst.label, k.clone().unwrap_err()));
        }
    }
    Ok(vec![descent.all(), search.all(), kkt.all()])
}

/// An easy noiseless or low-noise linear problem within the oracle budget.
pub fn easy_instance(rng: &mut ChaCha8Rng) -> (LinearLoss, usize) {
    let p = rng.random_range(6..=12);
    let t = rng.random_range(1..=3);
    let n = rng.random_range(20..=40);
    let raw = DenseMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    let x = normalize_columns(&raw).expect("gaussian columns are nonzero").0;
    let mut idx: Vec<usize> = rand::seq::index::sample(rng, p, t).into_vec();
    idx.sort_unstable();
    // magnitudes in [1, 10] with random signs
    let vals: Vec<f64> = idx
        .iter()
        .map(|_| {
            let m = rng.random_range(1.0..10.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    let noise = if rng.random_bool(0.5) { 0.0 } else { 0.01 };
    let mut y = x.mul_columns(&idx, &vals);
    for v in &mut y {
        *v += 1.0 + noise * rng.sample::<f64, _>(StandardNormal);
    }
    (LinearLoss::new(x, y, true).expect("consistent shapes"), t)
}

/// SDARL against exhaustive search on `count` easy instances.
pub fn check_oracle(count: usize, min_matches: usize, seed: u64) -> Result<Vec<PropertyReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matches = PropertyReport::new("oracle_best_loss");
    let mut kkt = PropertyReport::new("oracle_kkt");
    for case in 0..count {
        let (loss, t) = easy_instance(&mut rng);
        let p = loss.n_features();
        let fit = fit_sdarl(&loss, &SolverConfig::new(t), &SparseCoef::zeros(p))?;
        let best = brute_force_best_support(&loss, t, &OracleBudget::default())?;
        let f = fit.loss_trajectory.last().copied().unwrap_or(f64::NAN);
        matches.record((f - best.loss).abs() <= 1e-8, || {
            format!("case {case}: sdarl {f:.6e} vs best {:.6e}", best.loss)
        });
        let k = kkt_holds(&loss, &fit);
        kkt.record(k.is_ok(), || format!("case {case}: {}", k.clone().unwrap_err()));
    }
    matches.required = min_matches;
    Ok(vec![matches, kkt.all()])
}

/// `certify_kkt` gives the same answer with explicit zeros on the support.
pub fn check_explicit_zeros(count: usize, seed: u64) -> PropertyReport {
    let mut rep = PropertyReport::new("kkt_explicit_zero_invariance");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..count {
        let (loss, t) = easy_instance(&mut rng);
        let p = loss.n_features();
        let Ok(fit) = fit_sdarl(&loss, &SolverConfig::new(t), &SparseCoef::zeros(p)) else {
            continue;
        };
        let mut padded = fit.active.clone();
        padded.extend((0..p).filter(|j| !fit.active.contains(j)).take(2));
        padded.sort_unstable();
        let tau = fit.last_tau();
        let lambda = fit.implied_lambda();
        let a = certify_kkt(&loss, &fit.beta.pruned(), tau, lambda);
        let b = certify_kkt(&loss, &fit.beta.restrict(&padded), tau, lambda);
        rep.record(a == b, || format!("case {case}: {a:?} vs {b:?}"));
    }
    rep.all()
}

/// Two runs of a small preset give byte-identical results and the summary
/// recomputes from the written CSV.
pub fn check_bench_determinism() -> Result<PropertyReport> {
    let mut rep = PropertyReport::new("bench_determinism");
    for name in ["smoke", "smoke-logistic"] {
        let mut spec = preset(name).expect("built-in preset");
        spec.reps = 2;
        let a = emit_with_cross_check(&run_bench(&spec, BenchOptions::default())?)?;
        let b = emit_with_cross_check(&run_bench(&spec, BenchOptions { workers: Some(1), ..Default::default() })?)?;
        rep.record(a == b, || format!("{name}: outputs differ"));
    }
    Ok(rep.all())
}

/// Runs the whole battery.
pub fn run_verification(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut properties = vec![
        check_gradients(LossKind::Linear, 50, 1e-6, opts.seed, opts.corrupt_gradient),
        check_gradients(LossKind::Logistic, 50, 1e-6, opts.seed.wrapping_add(1), opts.corrupt_gradient),
    ];
    properties.extend(check_matrix(&instance_matrix(opts.matrix_runs, opts.seed)?, &SolverConfig::new(1))?);
    properties.extend(check_oracle(50, 45, opts.seed)?);
    properties.push(check_explicit_zeros(20, opts.seed));
    properties.push(check_bench_determinism()?);
    Ok(VerifyReport { properties })
}
