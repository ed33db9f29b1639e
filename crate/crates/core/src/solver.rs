//! Support detection and root finding with a data-driven line search.
//!
//! Each outer iteration
//! 1. minimizes the loss restricted to the current active set `A^k`,
//! 2. forms the dual `d = -grad F` off `A^k` (zero on it),
//! 3. backtracks `tau = tau0 nu^m` (`tau0 = 1` by default) until the trial point
//!    `(beta + tau d)|_{A(m)}` on the freshly detected set `A(m)` decreases
//!    the loss by `sigma * tau * ||grad_{A(m) \ A^k} F||^2`,
//! 4. stops when the detected set repeats.
//!
//! [`fit_fixed_step`] is the same loop with `tau = tau0` and no acceptance test.

use std::collections::HashSet;

use crate::coef::SparseCoef;
use crate::error::{invalid, Result};
use crate::linalg::top_t_select_masked;
use crate::loss::{Loss, SubsolverOptions};

/// Solver parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Target support size `T`.
    pub t: usize,
    /// Step tried first (`m = 0`) and used by the fixed-step variant.
    pub tau0: f64,
    /// Backtracking factor, in (0, 1).
    pub nu: f64,
    /// Sufficient-decrease constant, in (0, 1/2).
    pub sigma: f64,
    pub max_outer: usize,
    /// Largest backtracking exponent tried before giving up.
    pub m_max: usize,
    pub subsolver: SubsolverOptions,
}

impl SolverConfig {
    pub fn new(t: usize) -> Self {
        Self {
            t,
            tau0: 1.0,
            nu: 0.9,
            sigma: 0.1,
            max_outer: 50,
            m_max: 200,
            subsolver: SubsolverOptions::default(),
        }
    }

    pub fn with_t(&self, t: usize) -> Self {
        Self { t, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return invalid(format!("tau0 = {} must be positive", self.tau0));
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return invalid(format!("nu = {} must lie in (0, 1)", self.nu));
        }
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return invalid(format!("sigma = {} must lie in (0, 1/2)", self.sigma));
        }
        if self.t == 0 {
            return invalid("T must be at least 1");
        }
        if self.max_outer == 0 || self.m_max == 0 {
            return invalid("iteration caps must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    /// Two consecutive active sets coincide.
    Converged,
    /// The detected set repeats one seen earlier (not the previous one).
    CycleDetected,
    MaxOuter,
    /// Backtracking reached `m_max` without meeting the decrease condition.
    LineSearchCap,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::CycleDetected => "cycle_detected",
            Termination::MaxOuter => "max_outer",
            Termination::LineSearchCap => "line_search_cap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverWarning {
    /// The restricted logistic problem at this outer iteration has no finite minimizer.
    Separated { iteration: usize },
    LineSearchCap { iteration: usize },
}

/// Everything a fit produces, including its full trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: SparseCoef,
    /// Index set `beta` was fitted on.
    pub active: Vec<usize>,
    /// `-grad F(beta)` zeroed on `active`.
    pub dual: Vec<f64>,
    /// `F(beta^0), F(beta^1), ...`; entry `k` is the loss after `k` restricted solves.
    pub loss_trajectory: Vec<f64>,
    /// Accepted step per outer iteration.
    pub tau_history: Vec<f64>,
    /// Accepted backtracking exponent per outer iteration.
    pub backtracks: Vec<usize>,
    /// `A^0, A^1, ...` including the final detected set.
    pub active_set_history: Vec<Vec<usize>>,
    /// Number of restricted solves.
    pub iterations: usize,
    pub termination: Termination,
    pub warnings: Vec<SolverWarning>,
    /// `||beta + tau d||_{T,inf}` at the last accepted step; equals `sqrt(2 lambda tau)`.
    pub threshold: f64,
}

impl FitResult {
    /// Last accepted step size.
    pub fn last_tau(&self) -> f64 {
        self.tau_history.last().copied().unwrap_or(1.0)
    }

    /// `lambda` implied by the final threshold, `threshold^2 / (2 tau)`.
    pub fn implied_lambda(&self) -> f64 {
        lambda_for_threshold(self.threshold, self.last_tau())
    }

    pub fn separated(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| matches!(w, SolverWarning::Separated { .. }))
    }
}

/// Largest `lambda` with `sqrt(2 lambda tau) <= threshold` in floating point,
/// so that thresholding at it keeps entries equal to `threshold`.
pub fn lambda_for_threshold(threshold: f64, tau: f64) -> f64 {
    let mut lambda = threshold * threshold / (2.0 * tau);
    while lambda > 0.0 && (2.0 * lambda * tau).sqrt() > threshold {
        lambda = lambda.next_down();
    }
    lambda
}

/// Componentwise hard thresholding at `sqrt(2 * lambda_tau)`.
///
/// Entries exactly at the threshold are kept.
pub fn hard_threshold(u: &[f64], lambda_tau: f64) -> Vec<f64> {
    let thr = (2.0 * lambda_tau).sqrt();
    u.iter().map(|&v| if v.abs() >= thr { v } else { 0.0 }).collect()
}

/// Active set: the `T` largest entries of `beta + tau d` (ties to lower
/// index), and its complement. An all-zero shifted vector selects `0..T`.
pub fn detect_active(beta: &SparseCoef, d: &[f64], tau: f64, t: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let shifted = shifted_iterate(beta, d, tau);
    let sel = top_t_select_masked(&shifted, t, None)?;
    let inactive = complement(&sel.indices, d.len());
    Ok((sel.indices, inactive))
}

fn shifted_iterate(beta: &SparseCoef, d: &[f64], tau: f64) -> Vec<f64> {
    let mut u: Vec<f64> = d.iter().map(|v| tau * v).collect();
    for (j, b) in beta.iter() {
        u[j] += b;
    }
    u
}

fn complement(active: &[usize], p: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(p - active.len());
    let mut it = active.iter().peekable();
    for j in 0..p {
        if it.peek() == Some(&&j) {
            it.next();
        } else {
            out.push(j);
        }
    }
    out
}

/// Accepted line-search step.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    pub tau: f64,
    pub active: Vec<usize>,
    pub m: usize,
    /// `m_max` was reached; `tau` and `active` are the `m_max` candidate.
    pub capped: bool,
    /// `(beta_next + tau d_next)|_{active}`.
    pub trial: SparseCoef,
    /// `F(trial) - F(beta_next)`.
    pub decrease: f64,
    /// `sigma * tau * ||grad_{active \ A_prev} F(beta_next)||^2`.
    pub required: f64,
    /// `T`-th largest magnitude of `beta_next + tau d_next`.
    pub threshold: f64,
}

struct Candidate {
    tau: f64,
    active: Vec<usize>,
    trial: SparseCoef,
    decrease: f64,
    required: f64,
    threshold: f64,
}

fn evaluate_candidate<L: Loss + ?Sized>(
    loss: &L,
    beta_next: &SparseCoef,
    f_next: f64,
    d_next: &[f64],
    in_prev: &[bool],
    m: usize,
    cfg: &SolverConfig,
) -> Result<Candidate> {
    let tau = cfg.tau0 * cfg.nu.powi(m as i32);
    let shifted = shifted_iterate(beta_next, d_next, tau);
    let sel = top_t_select_masked(&shifted, cfg.t, loss.eligible())?;
    // beta_next vanishes off A_prev and d_next on it, so shifted[j] is
    // beta_next[j] on A_prev and tau * d_next[j] elsewhere.
    let values: Vec<f64> = sel.indices.iter().map(|&j| shifted[j]).collect();
    let trial = SparseCoef::from_parts_unchecked(beta_next.dim(), sel.indices.clone(), values);
    let entering: f64 = sel
        .indices
        .iter()
        .filter(|&&j| !in_prev[j])
        .map(|&j| d_next[j] * d_next[j])
        .sum();
    let decrease = loss.value(&trial) - f_next;
    Ok(Candidate {
        tau,
        active: sel.indices,
        trial,
        decrease,
        required: cfg.sigma * tau * entering,
        threshold: sel.threshold,
    })
}

/// Backtracking over `tau = tau0 nu^m`, `m = 0, 1, ...`: returns the first `m`
/// whose trial point on the detected set `A(m)` satisfies
/// `F(trial) - F(beta_next) <= -sigma tau ||grad_{A(m) \ A_prev} F(beta_next)||^2`.
///
/// `beta_next` must be supported in `a_prev` and `d_next` must vanish on it.
pub fn line_search<L: Loss + ?Sized>(
    loss: &L,
    beta_next: &SparseCoef,
    d_next: &[f64],
    a_prev: &[usize],
    cfg: &SolverConfig,
) -> Result<LineSearchOutcome> {
    cfg.validate()?;
    let f_next = loss.value(beta_next);
    line_search_with_value(loss, beta_next, f_next, d_next, a_prev, cfg)
}

fn line_search_with_value<L: Loss + ?Sized>(
    loss: &L,
    beta_next: &SparseCoef,
    f_next: f64,
    d_next: &[f64],
    a_prev: &[usize],
    cfg: &SolverConfig,
) -> Result<LineSearchOutcome> {
    let mut in_prev = vec![false; d_next.len()];
    for &j in a_prev {
        in_prev[j] = true;
    }
    for m in 0..cfg.m_max {
        let c = evaluate_candidate(loss, beta_next, f_next, d_next, &in_prev, m, cfg)?;
        if c.decrease <= -c.required {
            return Ok(outcome(c, m, false));
        }
    }
    let c = evaluate_candidate(loss, beta_next, f_next, d_next, &in_prev, cfg.m_max, cfg)?;
    Ok(outcome(c, cfg.m_max, true))
}

fn outcome(c: Candidate, m: usize, capped: bool) -> LineSearchOutcome {
    LineSearchOutcome {
        tau: c.tau,
        active: c.active,
        m,
        capped,
        trial: c.trial,
        decrease: c.decrease,
        required: c.required,
        threshold: c.threshold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepRule {
    LineSearch,
    Fixed,
}

/// Runs the line-search solver from `beta0`.
pub fn fit_sdarl<L: Loss + ?Sized>(loss: &L, cfg: &SolverConfig, beta0: &SparseCoef) -> Result<FitResult> {
    run(loss, cfg, beta0, StepRule::LineSearch)
}

/// Runs the same iteration with the step fixed at `tau0` (1 by default).
pub fn fit_fixed_step<L: Loss + ?Sized>(loss: &L, cfg: &SolverConfig, beta0: &SparseCoef) -> Result<FitResult> {
    run(loss, cfg, beta0, StepRule::Fixed)
}

fn run<L: Loss + ?Sized>(loss: &L, cfg: &SolverConfig, beta0: &SparseCoef, rule: StepRule) -> Result<FitResult> {
    cfg.validate()?;
    let p = loss.n_features();
    if beta0.dim() != p {
        return invalid(format!("initial coefficients have dimension {}, loss has {p}", beta0.dim()));
    }
    if cfg.t > loss.n_eligible() {
        return invalid(format!(
            "T = {} exceeds the {} selectable features",
            cfg.t,
            loss.n_eligible()
        ));
    }

    // Step 0
    let d0: Vec<f64> = loss.gradient(beta0).into_iter().map(|g| -g).collect();
    let shifted = shifted_iterate(beta0, &d0, cfg.tau0);
    let mut active = top_t_select_masked(&shifted, cfg.t, loss.eligible())?.indices;

    let mut history = vec![active.clone()];
    let mut seen: HashSet<Vec<usize>> = HashSet::from([active.clone()]);
    let mut loss_trajectory = vec![loss.value(beta0)];
    let mut tau_history = Vec::new();
    let mut backtracks = Vec::new();
    let mut warnings = Vec::new();
    let mut warm = beta0.clone();

    loop {
        // Step 1: root finding on the active set.
        let iteration = loss_trajectory.len();
        let sub = loss.minimize_restricted(&active, Some(&warm), &cfg.subsolver);
        if sub.separated {
            warnings.push(SolverWarning::Separated { iteration });
        }
        let beta = sub.beta;
        let f_beta = loss.value(&beta);
        loss_trajectory.push(f_beta);
        let neg_grad: Vec<f64> = loss.gradient(&beta).into_iter().map(|g| -g).collect();
        let mut dual = neg_grad.clone();
        for &j in &active {
            dual[j] = 0.0;
        }

        // Step 2: step size and the next active set.
        let step = match rule {
            StepRule::LineSearch => line_search_with_value(loss, &beta, f_beta, &dual, &active, cfg)?,
            StepRule::Fixed => {
                let mut in_prev = vec![false; p];
                for &j in &active {
                    in_prev[j] = true;
                }
                let c = evaluate_candidate(loss, &beta, f_beta, &dual, &in_prev, 0, cfg)?;
                outcome(c, 0, false)
            }
        };
        tau_history.push(step.tau);
        backtracks.push(step.m);

        // Step 3: stopping rules.
        let termination = if step.capped {
            warnings.push(SolverWarning::LineSearchCap { iteration });
            Some(Termination::LineSearchCap)
        } else if step.active == active {
            Some(Termination::Converged)
        } else if seen.contains(&step.active) {
            Some(Termination::CycleDetected)
        } else if iteration >= cfg.max_outer {
            Some(Termination::MaxOuter)
        } else {
            None
        };
        history.push(step.active.clone());

        if let Some(termination) = termination {
            // Recorded against the full gradient (not the zeroed dual) so the
            // threshold matches what `kkt_residual` thresholds.
            let full = shifted_iterate(&beta, &neg_grad, step.tau);
            let threshold = top_t_select_masked(&full, cfg.t, loss.eligible())?.threshold;
            return Ok(FitResult {
                beta,
                active,
                dual,
                iterations: iteration,
                loss_trajectory,
                tau_history,
                backtracks,
                active_set_history: history,
                termination,
                warnings,
                threshold,
            });
        }

        seen.insert(step.active.clone());
        // The trial point already satisfies the decrease condition, so the
        // next restricted solve can only improve on it.
        warm = match rule {
            StepRule::LineSearch => step.trial,
            StepRule::Fixed => beta,
        };
        active = step.active;
    }
}

/// `||beta - H_{lambda tau}(beta + tau d)||_inf` with `d = -grad F(beta)`;
/// zero exactly at KKT pairs for `(lambda, tau)`.
pub fn kkt_residual<L: Loss + ?Sized>(loss: &L, beta: &SparseCoef, tau: f64, lambda: f64) -> f64 {
    let d: Vec<f64> = loss.gradient(beta).into_iter().map(|g| -g).collect();
    let b = beta.to_dense();
    let u: Vec<f64> = b.iter().zip(&d).map(|(bi, di)| bi + tau * di).collect();
    let h = hard_threshold(&u, lambda * tau);
    b.iter().zip(&h).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
