//! Replicated experiments: specs, named presets, the parallel bench runner
//! and mean/sd summaries.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::coef::SparseCoef;
use crate::datagen::{generate_replication, stream_rng, train_test_split, CoefKind, Dataset, DesignKind, GenSpec, Purpose};
use crate::dataio::{fmt_f64, parse_config, read_results, write_results, ConfigMap, LabelMode, SparseData};
use crate::error::{Error, Result};
use crate::loss::{LossKind, Model, RowSubset};
use crate::metrics::{classification_accuracy, discovery_rates, relative_error, EvalRecord};
use crate::solver::{fit_fixed_step, fit_sdarl, FitResult, SolverConfig, SolverWarning};
use crate::tuning::{fit_asdarl, Criterion, SolutionPath, TuningConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Sdarl,
    FixedStep,
    Asdarl,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sdarl => "sdarl",
            Method::FixedStep => "fixed_step",
            Method::Asdarl => "asdarl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sdarl" => Some(Method::Sdarl),
            "fixed_step" => Some(Method::FixedStep),
            "asdarl" => Some(Method::Asdarl),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SweepParam {
    N,
    P,
    K,
    Rho,
}

impl SweepParam {
    pub fn key(self) -> &'static str {
        match self {
            SweepParam::N => "sweep_n",
            SweepParam::P => "sweep_p",
            SweepParam::K => "sweep_k",
            SweepParam::Rho => "sweep_rho",
        }
    }
}

/// A replicated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub gen: GenSpec,
    /// Sparse text file to use instead of synthetic draws.
    pub data: Option<PathBuf>,
    pub label_mode: LabelMode,
    pub methods: Vec<Method>,
    pub reps: usize,
    /// Support size; `None` means `K` for synthetic data and
    /// `floor(gamma n / ln n)` for real data.
    pub t: Option<usize>,
    pub gamma: f64,
    /// Solver settings (`t` is set per cell).
    pub solver: SolverConfig,
    pub alpha: usize,
    pub q: Option<usize>,
    pub criterion: Criterion,
    pub cv_seed: u64,
    /// Fixed all-ones offset in linear models.
    pub intercept: bool,
    /// Parameter grids; cells are their cartesian product.
    pub sweeps: Vec<(SweepParam, Vec<f64>)>,
}

impl ExperimentSpec {
    pub fn new(name: &str, gen: GenSpec) -> Self {
        Self {
            name: name.to_string(),
            label_mode: match gen.model {
                LossKind::Linear => LabelMode::Real,
                LossKind::Logistic => LabelMode::Binary,
            },
            gen,
            data: None,
            methods: vec![Method::Sdarl],
            reps: 100,
            t: None,
            gamma: 1.0,
            solver: SolverConfig::new(1),
            alpha: 1,
            q: None,
            criterion: Criterion::Hbic,
            cv_seed: 1,
            intercept: true,
            sweeps: Vec::new(),
        }
    }

    pub fn tuning(&self) -> TuningConfig {
        TuningConfig {
            alpha: self.alpha,
            q: self.q,
            criterion: self.criterion,
            base: self.solver.clone(),
            cv_seed: self.cv_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        self.solver.with_t(1).validate()?;
        if self.alpha == 0 {
            return Err(Error::Config("alpha must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if self.data.is_none() {
            for cell in self.cells()? {
                cell.gen.validate()?;
            }
        }
        Ok(())
    }

    /// One generator spec per sweep cell, in row-major order of `sweeps`.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut cells = vec![Cell {
            gen: self.gen.clone(),
            t: self.t,
        }];
        for (param, values) in &self.sweeps {
            let mut next = Vec::with_capacity(cells.len() * values.len());
            for c in &cells {
                for &v in values {
                    let mut c = c.clone();
                    let as_count = || -> Result<usize> {
                        if v >= 1.0 && v.fract() == 0.0 {
                            Ok(v as usize)
                        } else {
                            Err(Error::Config(format!("{} needs positive integers, got {v}", param.key())))
                        }
                    };
                    match param {
                        SweepParam::N => c.gen.n = as_count()?,
                        SweepParam::P => c.gen.p = as_count()?,
                        SweepParam::K => c.gen.k = as_count()?,
                        SweepParam::Rho => c.gen.rho = v,
                    }
                    next.push(c);
                }
            }
            cells = next;
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub gen: GenSpec,
    pub t: Option<usize>,
}

impl Cell {
    pub fn support_size(&self) -> usize {
        self.t.unwrap_or(self.gen.k)
    }
}

/// Config keys understood by [`spec_from_config`].
pub const CONFIG_KEYS: [&str; 35] = [
    "name", "model", "n", "p", "k", "t", "rho", "r", "sigma1", "design", "coef", "split", "seed", "reps", "methods",
    "tau0", "nu", "sigma", "max_outer", "m_max", "grad_tol", "newton_max_iter", "alpha", "q", "criterion", "folds",
    "cv_seed", "gamma", "intercept", "data", "labels", "sweep_n", "sweep_p", "sweep_k",
    "sweep_rho",
];

/// A spec built from a config, with the defaults that were filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSpec {
    pub spec: ExperimentSpec,
    /// `key = value` for every key the config left out.
    pub defaults_applied: Vec<String>,
}

fn cfg_err<T>(key: &str, line: usize, msg: impl std::fmt::Display) -> Result<T> {
    Err(Error::Config(format!("`{key}` (line {line}): {msg}")))
}

/// `a:b:c` (start:step:stop, inclusive) or a comma list.
pub fn parse_grid(s: &str) -> Option<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    if parts.len() == 3 {
        let a: f64 = parts[0].parse().ok()?;
        let h: f64 = parts[1].parse().ok()?;
        let b: f64 = parts[2].parse().ok()?;
        if !(h > 0.0) || b < a {
            return None;
        }
        let steps = ((b - a) / h + 1e-9).floor() as usize;
        // rounding to 12 decimals keeps 0.1-step grids on their nominal values
        return Some(
            (0..=steps)
                .map(|i| ((a + i as f64 * h) * 1e12).round() / 1e12)
                .collect(),
        );
    }
    s.split(',').map(|v| v.trim().parse().ok()).collect()
}

/// Builds a spec from `key = value` pairs, filling defaults for absent keys.
///
/// Required: `model`, plus `n`, `p` and `k` unless `data` is given.
pub fn spec_from_config(map: &ConfigMap) -> Result<LoadedSpec> {
    let mut lower = ConfigMap::new();
    for (k, v) in map {
        if lower.insert(k.to_ascii_lowercase(), v.clone()).is_some() {
            return Err(Error::Config(format!("key `{k}` given twice")));
        }
    }
    let unknown: Vec<&str> = lower
        .keys()
        .map(String::as_str)
        .filter(|k| !CONFIG_KEYS.contains(k))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    let has_data = lower.contains_key("data");
    let mut required = vec!["model"];
    if !has_data {
        required.extend(["n", "p", "k"]);
    }
    let missing: Vec<&str> = required.into_iter().filter(|k| !lower.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("missing required keys: {}", missing.join(", "))));
    }

    let model = match lower["model"].0.as_str() {
        "linear" => LossKind::Linear,
        "logistic" => LossKind::Logistic,
        other => return cfg_err("model", lower["model"].1, format!("expected linear or logistic, got `{other}`")),
    };
    let count = |key: &str| -> Result<Option<usize>> {
        match lower.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).or_else(|_| cfg_err(key, *line, "expected a nonnegative integer")),
        }
    };
    let real = |key: &str| -> Result<Option<f64>> {
        match lower.get(key) {
            None => Ok(None),
            Some((v, line)) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Some(x)),
                _ => cfg_err(key, *line, "expected a finite number"),
            },
        }
    };
    let text = |key: &str| lower.get(key).map(|(v, line)| (v.as_str(), *line));

    let mut gen = GenSpec::new(model, count("n")?.unwrap_or(0), count("p")?.unwrap_or(0), count("k")?.unwrap_or(0));
    let mut spec = ExperimentSpec::new("custom", gen.clone());
    let mut defaults = Vec::new();
    let mut note = |key: &str, value: String| defaults.push(format!("{key} = {value}"));

    macro_rules! set_or_default {
        ($key:literal, $getter:expr, $target:expr, $show:expr) => {
            match $getter {
                Some(v) => $target = v,
                None => note($key, $show),
            }
        };
    }

    set_or_default!("rho", real("rho")?, gen.rho, gen.rho.to_string());
    set_or_default!("r", real("r")?, gen.r, gen.r.to_string());
    set_or_default!("sigma1", real("sigma1")?, gen.sigma1, gen.sigma1.to_string());
    set_or_default!("split", real("split")?, gen.split, gen.split.to_string());
    set_or_default!("seed", count("seed")?.map(|v| v as u64), gen.seed, gen.seed.to_string());
    match text("design") {
        Some((v, line)) => match DesignKind::parse(v) {
            Some(d) => gen.design = d,
            None => return cfg_err("design", line, "expected ar1 or neighbor"),
        },
        None => note("design", gen.design.as_str().into()),
    }
    match text("coef") {
        Some((v, line)) => match CoefKind::parse(v) {
            Some(c) => gen.coef = c,
            None => return cfg_err("coef", line, "expected unit_floor or logfloor"),
        },
        None => note("coef", gen.coef.as_str().into()),
    }
    match text("name") {
        Some((v, _)) => spec.name = v.to_string(),
        None => note("name", spec.name.clone()),
    }
    match text("methods") {
        Some((v, line)) => {
            let mut ms = Vec::new();
            for m in v.split(',').map(str::trim) {
                match Method::parse(m) {
                    Some(m) if !ms.contains(&m) => ms.push(m),
                    Some(_) => {}
                    None => return cfg_err("methods", line, format!("unknown method `{m}`")),
                }
            }
            spec.methods = ms;
        }
        None => note("methods", "sdarl".into()),
    }
    set_or_default!("reps", count("reps")?, spec.reps, spec.reps.to_string());
    match count("t")? {
        Some(t) => spec.t = Some(t),
        None => note("t", if has_data { "floor(gamma n / ln n)".into() } else { "K".into() }),
    }
    set_or_default!("gamma", real("gamma")?, spec.gamma, spec.gamma.to_string());
    set_or_default!("tau0", real("tau0")?, spec.solver.tau0, spec.solver.tau0.to_string());
    set_or_default!("nu", real("nu")?, spec.solver.nu, spec.solver.nu.to_string());
    set_or_default!("sigma", real("sigma")?, spec.solver.sigma, spec.solver.sigma.to_string());
    set_or_default!("max_outer", count("max_outer")?, spec.solver.max_outer, spec.solver.max_outer.to_string());
    set_or_default!("m_max", count("m_max")?, spec.solver.m_max, spec.solver.m_max.to_string());
    set_or_default!(
        "grad_tol",
        real("grad_tol")?,
        spec.solver.subsolver.grad_tol,
        spec.solver.subsolver.grad_tol.to_string()
    );
    set_or_default!(
        "newton_max_iter",
        count("newton_max_iter")?,
        spec.solver.subsolver.max_iter,
        spec.solver.subsolver.max_iter.to_string()
    );
    set_or_default!("alpha", count("alpha")?, spec.alpha, spec.alpha.to_string());
    match count("q")? {
        Some(q) => spec.q = Some(q),
        None => note("q", "floor(n / ln n)".into()),
    }
    let folds = count("folds")?;
    match text("criterion") {
        Some(("hbic", _)) => spec.criterion = Criterion::Hbic,
        Some(("cv", _)) => spec.criterion = Criterion::Cv { folds: folds.unwrap_or(10) },
        Some((_, line)) => return cfg_err("criterion", line, "expected hbic or cv"),
        None => note("criterion", "hbic".into()),
    }
    set_or_default!("cv_seed", count("cv_seed")?.map(|v| v as u64), spec.cv_seed, spec.cv_seed.to_string());
    match text("intercept") {
        Some(("true", _)) => spec.intercept = true,
        Some(("false", _)) => spec.intercept = false,
        Some((_, line)) => return cfg_err("intercept", line, "expected true or false"),
        None => note("intercept", "true".into()),
    }
    match text("labels") {
        Some(("binary", _)) => spec.label_mode = LabelMode::Binary,
        Some(("real", _)) => spec.label_mode = LabelMode::Real,
        Some((_, line)) => return cfg_err("labels", line, "expected binary or real"),
        None => note("labels", if model == LossKind::Logistic { "binary".into() } else { "real".into() }),
    }
    if let Some((v, _)) = text("data") {
        spec.data = Some(PathBuf::from(v));
    }
    for param in [SweepParam::N, SweepParam::P, SweepParam::K, SweepParam::Rho] {
        if let Some((v, line)) = text(param.key()) {
            match parse_grid(v) {
                Some(values) if !values.is_empty() => spec.sweeps.push((param, values)),
                _ => return cfg_err(param.key(), line, "expected start:step:stop or a comma list"),
            }
        }
    }
    spec.gen = gen;
    for key in ["tau0", "nu", "sigma"] {
        if lower.contains_key(key) {
            if let Err(e) = spec.solver.with_t(1).validate() {
                return cfg_err(key, lower[key].1, e);
            }
        }
    }
    spec.validate()?;
    Ok(LoadedSpec {
        spec,
        defaults_applied: defaults,
    })
}

/// The config that [`spec_from_config`] turns back into `spec`.
pub fn to_config_map(spec: &ExperimentSpec) -> ConfigMap {
    let mut m = ConfigMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), (v, 0));
    };
    let g = &spec.gen;
    put("name", spec.name.clone());
    put("model", g.model.as_str().into());
    put("n", g.n.to_string());
    put("p", g.p.to_string());
    put("k", g.k.to_string());
    put("rho", g.rho.to_string());
    put("r", g.r.to_string());
    put("sigma1", g.sigma1.to_string());
    put("design", g.design.as_str().into());
    put("coef", g.coef.as_str().into());
    put("split", g.split.to_string());
    put("seed", g.seed.to_string());
    put("reps", spec.reps.to_string());
    put("methods", spec.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","));
    if let Some(t) = spec.t {
        put("t", t.to_string());
    }
    put("gamma", spec.gamma.to_string());
    put("tau0", spec.solver.tau0.to_string());
    put("nu", spec.solver.nu.to_string());
    put("sigma", spec.solver.sigma.to_string());
    put("max_outer", spec.solver.max_outer.to_string());
    put("m_max", spec.solver.m_max.to_string());
    put("grad_tol", spec.solver.subsolver.grad_tol.to_string());
    put("newton_max_iter", spec.solver.subsolver.max_iter.to_string());
    put("alpha", spec.alpha.to_string());
    if let Some(q) = spec.q {
        put("q", q.to_string());
    }
    match spec.criterion {
        Criterion::Hbic => put("criterion", "hbic".into()),
        Criterion::Cv { folds } => {
            put("criterion", "cv".into());
            put("folds", folds.to_string());
        }
    }
    put("cv_seed", spec.cv_seed.to_string());
    put("intercept", spec.intercept.to_string());
    put(
        "labels",
        match spec.label_mode {
            LabelMode::Binary => "binary".into(),
            LabelMode::Real => "real".into(),
        },
    );
    if let Some(d) = &spec.data {
        put("data", d.display().to_string());
    }
    for (param, values) in &spec.sweeps {
        put(param.key(), values.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    }
    m
}

/// `key = value` lines for a config map.
pub fn config_text(map: &ConfigMap) -> String {
    map.iter().map(|(k, (v, _))| format!("{k} = {v}\n")).collect()
}

pub fn read_config(path: &std::path::Path) -> Result<LoadedSpec> {
    spec_from_config(&parse_config(&std::fs::read_to_string(path)?)?)
}

pub const PRESET_NAMES: [&str; 20] = [
    "smoke",
    "fig1",
    "fig2",
    "fig3",
    "fig4",
    "fig5",
    "fig6",
    "table1-rho02",
    "table1-rho05",
    "table1-rho08",
    "fig7",
    "fig8",
    "fig9",
    "fig10",
    "fig11",
    "fig12",
    "table2-rho02",
    "table2-rho05",
    "table2-rho08",
    "smoke-logistic",
];

fn grid(a: f64, h: f64, b: f64) -> Vec<f64> {
    parse_grid(&format!("{a}:{h}:{b}")).expect("valid preset grid")
}

/// Named protocols for the published tables and figures.
pub fn preset(name: &str) -> Option<ExperimentSpec> {
    use LossKind::{Linear, Logistic};
    let illustrative = |model, n, p, k, r: f64| GenSpec {
        r,
        ..GenSpec::new(model, n, p, k)
    };
    let comparison = |model, n, p, k, rho| GenSpec {
        rho,
        r: 100.0,
        design: DesignKind::Neighbor,
        coef: CoefKind::LogFloor,
        ..GenSpec::new(model, n, p, k)
    };
    let mut s = match name {
        "smoke" => {
            let mut s = ExperimentSpec::new(name, illustrative(Linear, 60, 100, 4, 10.0));
            s.methods = vec![Method::Sdarl, Method::FixedStep, Method::Asdarl];
            s.reps = 3;
            s
        }
        "smoke-logistic" => {
            let mut s = ExperimentSpec::new(name, illustrative(Logistic, 120, 100, 3, 5.0));
            s.methods = vec![Method::Sdarl, Method::FixedStep, Method::Asdarl];
            s.reps = 3;
            s
        }
        "fig1" => {
            let mut s = ExperimentSpec::new(name, illustrative(Linear, 500, 1000, 20, 100.0));
            s.methods = vec![Method::Sdarl, Method::FixedStep];
            s
        }
        "fig2" => {
            let mut s = ExperimentSpec::new(name, illustrative(Linear, 500, 1000, 20, 100.0));
            s.sweeps = vec![(SweepParam::K, grid(5.0, 5.0, 50.0)), (SweepParam::Rho, vec![0.2, 0.5, 0.8])];
            s
        }
        "fig3" | "fig4" | "fig5" | "fig6" => {
            let (gen, sweep) = match name {
                "fig3" => (illustrative(Linear, 50, 1000, 20, 5.0), (SweepParam::N, grid(50.0, 50.0, 400.0))),
                "fig4" => (illustrative(Linear, 100, 200, 10, 100.0), (SweepParam::P, grid(200.0, 100.0, 1000.0))),
                "fig5" => (illustrative(Linear, 200, 500, 10, 10.0), (SweepParam::K, grid(10.0, 10.0, 70.0))),
                _ => (illustrative(Linear, 200, 500, 20, 100.0), (SweepParam::Rho, grid(0.1, 0.1, 0.8))),
            };
            let mut s = ExperimentSpec::new(name, gen);
            s.methods = vec![Method::Asdarl];
            s.reps = 10;
            s.sweeps = vec![sweep];
            s
        }
        "table1-rho02" | "table1-rho05" | "table1-rho08" => {
            let rho = match name {
                "table1-rho02" => 0.2,
                "table1-rho05" => 0.5,
                _ => 0.8,
            };
            let mut s = ExperimentSpec::new(name, comparison(Linear, 800, 5000, 100, rho));
            s.methods = vec![Method::Sdarl, Method::Asdarl];
            s.alpha = 50;
            s
        }
        "fig7" => {
            let mut s = ExperimentSpec::new(name, illustrative(Logistic, 300, 5000, 10, 100.0));
            s.methods = vec![Method::Sdarl, Method::FixedStep];
            s
        }
        "fig8" => {
            let mut s = ExperimentSpec::new(name, illustrative(Logistic, 300, 5000, 10, 100.0));
            s.sweeps = vec![(SweepParam::K, grid(5.0, 5.0, 50.0)), (SweepParam::Rho, vec![0.2, 0.5, 0.8])];
            s
        }
        "fig9" | "fig10" | "fig11" | "fig12" => {
            let (gen, sweep) = match name {
                "fig9" => (illustrative(Logistic, 100, 500, 5, 10.0), (SweepParam::N, grid(100.0, 50.0, 400.0))),
                "fig10" => (illustrative(Logistic, 200, 200, 5, 10.0), (SweepParam::P, grid(200.0, 100.0, 800.0))),
                "fig11" => (illustrative(Logistic, 800, 1000, 5, 10.0), (SweepParam::K, grid(5.0, 5.0, 35.0))),
                _ => (illustrative(Logistic, 500, 1000, 10, 10.0), (SweepParam::Rho, grid(0.1, 0.1, 0.8))),
            };
            let mut s = ExperimentSpec::new(name, gen);
            s.methods = vec![Method::Asdarl];
            s.reps = 10;
            s.sweeps = vec![sweep];
            s
        }
        "table2-rho02" | "table2-rho05" | "table2-rho08" => {
            let rho = match name {
                "table2-rho02" => 0.2,
                "table2-rho05" => 0.5,
                _ => 0.8,
            };
            let mut s = ExperimentSpec::new(name, comparison(Logistic, 300, 5000, 10, rho));
            s.methods = vec![Method::Sdarl, Method::Asdarl];
            s
        }
        _ => return None,
    };
    s.name = name.to_string();
    Some(s)
}

/// Output of one method on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodFit {
    pub beta: SparseCoef,
    pub t: usize,
    pub iterations: usize,
    /// The fit itself (the selected entry for ASDARL).
    pub fit: FitResult,
    pub path: Option<SolutionPath>,
}

impl MethodFit {
    pub fn status(&self) -> &'static str {
        let warned = |f: &FitResult, pick: fn(&SolverWarning) -> bool| f.warnings.iter().any(pick);
        let fits: Vec<&FitResult> = match &self.path {
            Some(p) => p.entries.iter().map(|e| &e.fit).collect(),
            None => vec![&self.fit],
        };
        if fits.iter().any(|f| warned(f, |w| matches!(w, SolverWarning::LineSearchCap { .. }))) {
            "warn:line_search_cap"
        } else if fits.iter().any(|f| warned(f, |w| matches!(w, SolverWarning::Separated { .. }))) {
            "warn:separated"
        } else {
            "ok"
        }
    }
}

/// Runs `method` at support size `t` (the path start for ASDARL is `alpha`).
pub fn run_method<L: RowSubset>(loss: &L, method: Method, t: usize, spec: &ExperimentSpec) -> Result<MethodFit> {
    let zero = SparseCoef::zeros(loss.n_features());
    match method {
        Method::Sdarl | Method::FixedStep => {
            let cfg = spec.solver.with_t(t);
            let fit = if method == Method::Sdarl {
                fit_sdarl(loss, &cfg, &zero)?
            } else {
                fit_fixed_step(loss, &cfg, &zero)?
            };
            Ok(MethodFit {
                beta: fit.beta.clone(),
                t,
                iterations: fit.iterations,
                fit,
                path: None,
            })
        }
        Method::Asdarl => {
            let path = fit_asdarl(loss, &spec.tuning())?;
            let sel = path.selected_entry().clone();
            Ok(MethodFit {
                beta: sel.fit.beta.clone(),
                t: sel.t,
                iterations: path.total_iterations(),
                fit: sel.fit,
                path: Some(path),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BenchOptions {
    /// Record wall time per cell (makes CSVs run-dependent).
    pub wall_time: bool,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

fn error_code(e: &Error) -> &'static str {
    match e {
        Error::DegenerateColumn { .. } => "error:degenerate_column",
        Error::InvalidArgument(_) => "error:invalid_argument",
        Error::DimensionMismatch(_) => "error:dimension_mismatch",
        Error::Parse { .. } => "error:parse",
        Error::Config(_) => "error:config",
        Error::BudgetExceeded(_) => "error:budget",
        Error::AllFoldsSkipped { .. } => "error:all_folds_skipped",
        Error::UndefinedMetric(_) => "error:undefined_metric",
        Error::Io(_) => "error:io",
        Error::Csv(_) => "error:csv",
    }
}

struct Job<'a> {
    cell: &'a Cell,
    rep: u64,
}

fn blank_record(cell: &Cell, rep: u64, method: Method) -> EvalRecord {
    EvalRecord {
        method: method.as_str().to_string(),
        seed: cell.gen.seed,
        rep,
        n: cell.gen.n,
        p: cell.gen.p,
        k: cell.gen.k,
        t: cell.support_size(),
        rho: cell.gen.rho,
        r: cell.gen.r,
        are: f64::NAN,
        pdr: f64::NAN,
        fdr: f64::NAN,
        cdr: f64::NAN,
        car: None,
        iters: 0,
        time_s: None,
        status: String::new(),
    }
}

fn evaluate(
    spec: &ExperimentSpec,
    cell: &Cell,
    rep: u64,
    method: Method,
    data: &Dataset,
    loss: &Model,
    opts: BenchOptions,
) -> EvalRecord {
    let mut rec = blank_record(cell, rep, method);
    let start = Instant::now();
    let outcome = run_method(loss, method, cell.support_size(), spec);
    let elapsed = start.elapsed().as_secs_f64();
    let result = outcome.and_then(|fit| {
        let are = relative_error(&fit.beta, &data.beta_star)?;
        let rates = discovery_rates(&fit.beta.effective_support(), data.true_support())?;
        let car = match data.model {
            LossKind::Logistic => Some(classification_accuracy(
                &data.design,
                &data.response,
                &fit.beta,
                &data.test_rows,
            )?),
            LossKind::Linear => None,
        };
        Ok((fit, are, rates, car))
    });
    match result {
        Ok((fit, are, rates, car)) => {
            rec.t = fit.t;
            rec.are = are;
            rec.pdr = rates.pdr;
            rec.fdr = rates.fdr;
            rec.cdr = rates.cdr;
            rec.car = car;
            rec.iters = fit.iterations;
            rec.status = fit.status().to_string();
        }
        Err(e) => rec.status = error_code(&e).to_string(),
    }
    if opts.wall_time {
        rec.time_s = Some(elapsed);
    }
    rec
}

fn run_synthetic_job(spec: &ExperimentSpec, job: &Job, opts: BenchOptions) -> Vec<EvalRecord> {
    let prepared = generate_replication(&job.cell.gen, job.rep).and_then(|d| {
        let loss = d.train_loss()?;
        let loss = match loss {
            Model::Linear(l) if !spec.intercept => {
                Model::Linear(crate::loss::LinearLoss::new(l.design().clone(), l.response().to_vec(), false)?)
            }
            other => other,
        };
        Ok((d, loss))
    });
    match prepared {
        Ok((data, loss)) => spec
            .methods
            .iter()
            .map(|&m| evaluate(spec, job.cell, job.rep, m, &data, &loss, opts))
            .collect(),
        Err(e) => spec
            .methods
            .iter()
            .map(|&m| {
                let mut r = blank_record(job.cell, job.rep, m);
                r.status = error_code(&e).to_string();
                r
            })
            .collect(),
    }
}

/// `floor(gamma n / ln n)`, clamped to `1..=max`.
pub fn gamma_support_size(gamma: f64, n: usize, max: usize) -> usize {
    let t = if n < 3 { 1.0 } else { (gamma * n as f64 / (n as f64).ln()).floor() };
    (t.max(1.0) as usize).min(max.max(1))
}

fn run_data_rep(spec: &ExperimentSpec, data: &SparseData, rep: u64, opts: BenchOptions) -> Vec<EvalRecord> {
    let kind = spec.gen.model;
    let n = data.n();
    let (train, test) = match kind {
        LossKind::Logistic => train_test_split(n, spec.gen.split, &mut stream_rng(spec.gen.seed, rep, Purpose::Split)),
        LossKind::Linear => ((0..n).collect(), (0..n).collect()),
    };
    let eligible = data.eligible.iter().filter(|&&e| e).count();
    let cell = Cell {
        gen: GenSpec {
            n,
            p: data.p(),
            k: 0,
            ..spec.gen.clone()
        },
        t: Some(spec.t.unwrap_or_else(|| gamma_support_size(spec.gamma, train.len(), eligible))),
    };
    let full = match data.to_model(kind, spec.intercept) {
        Ok(m) => m,
        Err(e) => {
            return spec
                .methods
                .iter()
                .map(|&m| {
                    let mut r = blank_record(&cell, rep, m);
                    r.status = error_code(&e).to_string();
                    r
                })
                .collect()
        }
    };
    let loss = if train.len() == n { full } else { full.subset_rows(&train) };
    spec.methods
        .iter()
        .map(|&m| {
            let mut rec = blank_record(&cell, rep, m);
            let start = Instant::now();
            match run_method(&loss, m, cell.support_size(), spec) {
                Ok(fit) => {
                    rec.t = fit.t;
                    rec.iters = fit.iterations;
                    rec.status = fit.status().to_string();
                    if kind == LossKind::Logistic {
                        rec.car = classification_accuracy(&data.design, &data.response, &fit.beta, &test).ok();
                    }
                }
                Err(e) => rec.status = error_code(&e).to_string(),
            }
            if opts.wall_time {
                rec.time_s = Some(start.elapsed().as_secs_f64());
            }
            rec
        })
        .collect()
}

/// Per-replication records, in (cell, rep, method) order.
pub fn run_bench(spec: &ExperimentSpec, opts: BenchOptions) -> Result<Vec<EvalRecord>> {
    spec.validate()?;
    let work = || -> Result<Vec<EvalRecord>> {
        if let Some(path) = &spec.data {
            let data = crate::dataio::read_sparse_text(path, spec.label_mode)?;
            let recs: Vec<Vec<EvalRecord>> = (0..spec.reps as u64)
                .into_par_iter()
                .map(|rep| run_data_rep(spec, &data, rep, opts))
                .collect();
            return Ok(recs.concat());
        }
        let cells = spec.cells()?;
        let jobs: Vec<Job> = cells
            .iter()
            .flat_map(|cell| (0..spec.reps as u64).map(move |rep| Job { cell, rep }))
            .collect();
        let recs: Vec<Vec<EvalRecord>> = jobs.par_iter().map(|j| run_synthetic_job(spec, j, opts)).collect();
        Ok(recs.concat())
    };
    match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub rho: f64,
    pub r: f64,
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub t_mean: f64,
    pub are: (f64, f64),
    pub pdr: (f64, f64),
    pub fdr: (f64, f64),
    pub cdr: (f64, f64),
    pub car: Option<(f64, f64)>,
    pub iters: (f64, f64),
    pub time: Option<(f64, f64)>,
}

/// Groups records by (method, n, p, K, rho, R) in first-appearance order;
/// failed cells are counted but left out of the statistics.
pub fn summarize(records: &[EvalRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, usize, usize, usize, u64, u64)> = Vec::new();
    let mut groups: Vec<Vec<&EvalRecord>> = Vec::new();
    for r in records {
        let key = (r.method.clone(), r.n, r.p, r.k, r.rho.to_bits(), r.r.to_bits());
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r),
            None => {
                keys.push(key);
                groups.push(vec![r]);
            }
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let ok: Vec<&EvalRecord> = g.iter().copied().filter(|r| !r.status.starts_with("error")).collect();
            let col = |f: fn(&EvalRecord) -> f64| mean_sd(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            let opt_col = |f: fn(&EvalRecord) -> Option<f64>| {
                let v: Option<Vec<f64>> = ok.iter().map(|r| f(r)).collect();
                v.filter(|v| !v.is_empty()).map(|v| mean_sd(&v))
            };
            let first = g[0];
            SummaryRow {
                method: first.method.clone(),
                n: first.n,
                p: first.p,
                k: first.k,
                rho: first.rho,
                r: first.r,
                reps_ok: ok.len(),
                reps_failed: g.len() - ok.len(),
                t_mean: col(|r| r.t as f64).0,
                are: col(|r| r.are),
                pdr: col(|r| r.pdr),
                fdr: col(|r| r.fdr),
                cdr: col(|r| r.cdr),
                car: opt_col(|r| r.car),
                iters: col(|r| r.iters as f64),
                time: opt_col(|r| r.time_s),
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "method,n,p,K,rho,R,reps_ok,reps_failed,T_mean,are_mean,are_sd,pdr_mean,pdr_sd,fdr_mean,fdr_sd,cdr_mean,cdr_sd,car_mean,car_sd,iters_mean,iters_sd,time_mean,time_sd";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let pair = |v: (f64, f64)| format!("{},{}", fmt_f64(v.0), fmt_f64(v.1));
    let opt_pair = |v: Option<(f64, f64)>| v.map(pair).unwrap_or_else(|| ",".to_string());
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.n,
            r.p,
            r.k,
            fmt_f64(r.rho),
            fmt_f64(r.r),
            r.reps_ok,
            r.reps_failed,
            fmt_f64(r.t_mean),
            pair(r.are),
            pair(r.pdr),
            pair(r.fdr),
            pair(r.cdr),
            opt_pair(r.car),
            pair(r.iters),
            opt_pair(r.time),
        )
        .expect("writing to a String");
    }
    out
}

/// Writes the records as CSV, reads the bytes back and checks that the
/// summary recomputed from them matches the in-memory one exactly.
pub fn emit_with_cross_check(records: &[EvalRecord]) -> Result<(Vec<u8>, String)> {
    let mut bytes = Vec::new();
    write_results(&mut bytes, records)?;
    let summary = summary_csv(&summarize(records));
    let reread = read_results(bytes.as_slice())?;
    let again = summary_csv(&summarize(&reread));
    if again != summary {
        return Err(Error::InvalidArgument(
            "summary recomputed from the written CSV differs from the in-memory summary".into(),
        ));
    }
    Ok((bytes, summary))
}

/// Human-readable table with the `mean (sd)` convention.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<11} {:>5} {:>6} {:>4} {:>5} {:>6} {:>5} {:>22} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "method", "n", "p", "K", "rho", "R", "reps", "ARE (sd)", "PDR", "FDR", "CDR", "CAR", "iters"
    )
    .expect("string write");
    for r in rows {
        let car = r.car.map_or("-".to_string(), |c| format!("{:.4}", c.0));
        writeln!(
            out,
            "{:<11} {:>5} {:>6} {:>4} {:>5} {:>6} {:>5} {:>22} {:>7.4} {:>7.4} {:>7.4} {:>7} {:>7.2}",
            r.method,
            r.n,
            r.p,
            r.k,
            r.rho,
            r.r,
            r.reps_ok,
            format!("{:.2e} ({:.2e})", r.are.0, r.are.1),
            r.pdr.0,
            r.fdr.0,
            r.cdr.0,
            car,
            r.iters.0
        )
        .expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(text: &str) -> ConfigMap {
        parse_config(text).unwrap()
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("5:5:20").unwrap(), vec![5.0, 10.0, 15.0, 20.0]);
        assert_eq!(parse_grid("0.1:0.1:0.8").unwrap().len(), 8);
        assert_eq!(parse_grid("0.1:0.1:0.8").unwrap()[2], 0.3);
        assert_eq!(parse_grid("0.2, 0.5,0.8").unwrap(), vec![0.2, 0.5, 0.8]);
        assert!(parse_grid("1:0:3").is_none());
        assert!(parse_grid("a,b").is_none());
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let loaded = spec_from_config(&map("model = linear\nn = 50\np = 100\nK = 5\n")).unwrap();
        let s = &loaded.spec;
        assert_eq!((s.gen.n, s.gen.p, s.gen.k), (50, 100, 5));
        assert_eq!(s.solver.nu, 0.9);
        assert_eq!(s.solver.sigma, 0.1);
        assert_eq!(s.reps, 100);
        assert_eq!(s.cells().unwrap()[0].support_size(), 5);
        assert!(loaded.defaults_applied.contains(&"nu = 0.9".to_string()));
        assert!(loaded.defaults_applied.iter().any(|d| d.starts_with("rho = ")));
    }

    #[test]
    fn config_errors() {
        let e = spec_from_config(&map("model = linear\nn = 50\np = 100\nk = 5\nnu = 1.5\n")).unwrap_err();
        assert!(e.to_string().contains("nu"), "{e}");
        let e = spec_from_config(&map("model = linear\nn = 50\nbogus = 1\nother = 2\n")).unwrap_err();
        assert!(e.to_string().contains("bogus") && e.to_string().contains("other"), "{e}");
        let e = spec_from_config(&map("model = linear\nn = 50\n")).unwrap_err();
        assert!(e.to_string().contains("p, k"), "{e}");
        assert!(spec_from_config(&map("model = probit\nn = 5\np = 5\nk = 1\n")).is_err());
        assert!(spec_from_config(&map("model = linear\nn = 50\np = 100\nk = 5\nmethods = lasso\n")).is_err());
    }

    #[test]
    fn sweeps_expand_to_cells() {
        let loaded = spec_from_config(&map(
            "model = linear\nn = 50\np = 100\nk = 5\nsweep_k = 5:5:15\nsweep_rho = 0.2,0.8\n",
        ))
        .unwrap();
        let cells = loaded.spec.cells().unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1].gen.k, 5);
        assert_eq!(cells[1].gen.rho, 0.8);
        assert_eq!(cells[5].support_size(), 15);
    }

    #[test]
    fn all_presets_validate() {
        for name in PRESET_NAMES {
            let s = preset(name).unwrap();
            assert_eq!(s.name, name);
            s.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(preset("nope").is_none());
        let t1 = preset("table1-rho05").unwrap();
        assert_eq!((t1.gen.n, t1.gen.p, t1.gen.k, t1.alpha), (800, 5000, 100, 50));
        assert_eq!(preset("fig2").unwrap().cells().unwrap().len(), 30);
    }

    #[test]
    fn presets_round_trip_through_config() {
        for name in PRESET_NAMES {
            let s = preset(name).unwrap();
            let text = config_text(&to_config_map(&s));
            let back = spec_from_config(&parse_config(&text).unwrap()).unwrap();
            assert_eq!(back.spec, s, "{name}");
            assert!(back.defaults_applied.iter().all(|d| d.starts_with("t =") || d.starts_with("q =")), "{name}");
        }
    }

    #[test]
    fn mean_sd_values() {
        assert_eq!(mean_sd(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn smoke_bench_is_deterministic_and_cross_checks() {
        let spec = preset("smoke").unwrap();
        let a = run_bench(&spec, BenchOptions::default()).unwrap();
        let b = run_bench(&spec, BenchOptions { workers: Some(1), ..Default::default() }).unwrap();
        let (bytes_a, summary) = emit_with_cross_check(&a).unwrap();
        let (bytes_b, _) = emit_with_cross_check(&b).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert_eq!(a.len(), 9);
        assert!(a.iter().all(|r| r.is_ok() && r.time_s.is_none()));
        assert_eq!(summary.lines().count(), 4);
    }

    #[test]
    fn logistic_smoke_reports_accuracy() {
        let recs = run_bench(&preset("smoke-logistic").unwrap(), BenchOptions::default()).unwrap();
        assert!(recs.iter().all(|r| r.car.is_some_and(|c| (0.0..=1.0).contains(&c))));
    }

    #[test]
    fn failed_cells_become_rows() {
        let mut spec = preset("smoke").unwrap();
        spec.t = Some(500); // more than p
        spec.methods = vec![Method::Sdarl];
        let recs = run_bench(&spec, BenchOptions::default()).unwrap();
        assert!(recs.iter().all(|r| r.status == "error:invalid_argument"));
        let rows = summarize(&recs);
        assert_eq!(rows[0].reps_failed, 3);
    }

    #[test]
    fn gamma_rule() {
        assert_eq!(gamma_support_size(1.0, 800, 10_000), 119);
        assert_eq!(gamma_support_size(1.0, 800, 50), 50);
        assert_eq!(gamma_support_size(0.01, 100, 50), 1);
    }
}
