//! Seeded synthetic designs, coefficients and responses.
//!
//! Randomness comes from ChaCha20 seeded with the experiment's base seed.
//! Each (replication, purpose) pair reads its own stream, numbered
//! `rep * 256 + purpose`, so replications are independent of each other
//! and of how many draws another purpose consumed.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use crate::coef::SparseCoef;
use crate::error::{invalid, Result};
use crate::linalg::{normalize_columns, DenseMatrix};
use crate::loss::{sigmoid, LinearLoss, LogisticLoss, LossKind, Model, RowSubset};

/// Stream purposes inside one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Design = 1,
    Coef = 2,
    Noise = 3,
    Split = 4,
    Folds = 5,
}

/// Generator for one (seed, replication, purpose) stream.
pub fn stream_rng(seed: u64, rep: u64, purpose: Purpose) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(rep.wrapping_mul(256).wrapping_add(purpose as u64));
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    /// Rows from `N(0, Sigma)`, `Sigma_jk = rho^|j-k|`.
    Ar1,
    /// `X_j = Xbar_j + rho (Xbar_{j+1} + Xbar_{j-1})` on interior columns.
    Neighbor,
}

impl DesignKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DesignKind::Ar1 => "ar1",
            DesignKind::Neighbor => "neighbor",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ar1" => Some(DesignKind::Ar1),
            "neighbor" => Some(DesignKind::Neighbor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefKind {
    /// `m1 = 1`.
    UnitFloor,
    /// `m1 = 5 sqrt(2 ln p / n)`.
    LogFloor,
}

impl CoefKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CoefKind::UnitFloor => "unit_floor",
            CoefKind::LogFloor => "logfloor",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unit_floor" => Some(CoefKind::UnitFloor),
            "logfloor" => Some(CoefKind::LogFloor),
            _ => None,
        }
    }

    pub fn m1(self, n: usize, p: usize) -> f64 {
        match self {
            CoefKind::UnitFloor => 1.0,
            CoefKind::LogFloor => 5.0 * (2.0 * (p as f64).ln() / n as f64).sqrt(),
        }
    }
}

/// Everything needed to draw one synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub model: LossKind,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub rho: f64,
    /// Signal ratio `m2 / m1`.
    pub r: f64,
    /// Noise standard deviation (linear only).
    pub sigma1: f64,
    pub design: DesignKind,
    pub coef: CoefKind,
    /// Training fraction (logistic only).
    pub split: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(model: LossKind, n: usize, p: usize, k: usize) -> Self {
        Self {
            model,
            n,
            p,
            k,
            rho: 0.2,
            r: 100.0,
            sigma1: 1.0,
            design: DesignKind::Ar1,
            coef: CoefKind::UnitFloor,
            split: 0.8,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.k == 0 {
            return invalid("n, p and K must be at least 1");
        }
        if self.k > self.p {
            return invalid(format!("K = {} exceeds p = {}", self.k, self.p));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return invalid(format!("rho = {} must lie in [0, 1)", self.rho));
        }
        if !(self.r >= 1.0 && self.r.is_finite()) {
            return invalid(format!("R = {} must be at least 1", self.r));
        }
        if !(self.sigma1 >= 0.0 && self.sigma1.is_finite()) {
            return invalid("sigma1 must be nonnegative");
        }
        if self.design == DesignKind::Neighbor && self.p < 3 {
            return invalid("the neighbor design needs p >= 3");
        }
        if self.model == LossKind::Logistic {
            if !(self.split > 0.0 && self.split < 1.0) {
                return invalid(format!("split = {} must lie in (0, 1)", self.split));
            }
            let train = train_size(self.n, self.split);
            if train == 0 || train == self.n {
                return invalid("the train/test split leaves an empty side");
            }
        }
        Ok(())
    }
}

fn train_size(n: usize, split: f64) -> usize {
    (split * n as f64).round() as usize
}

/// One synthetic draw.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub model: LossKind,
    /// Columns normalized to length `sqrt(n)`.
    pub design: DenseMatrix,
    pub response: Vec<f64>,
    pub beta_star: SparseCoef,
    /// All rows for linear models.
    pub train_rows: Vec<usize>,
    /// Empty for linear models.
    pub test_rows: Vec<usize>,
}

impl Dataset {
    pub fn true_support(&self) -> &[usize] {
        self.beta_star.support()
    }

    /// Loss over the training rows; linear models carry the all-ones offset.
    pub fn train_loss(&self) -> Result<Model> {
        let full = self.full_loss()?;
        if self.train_rows.len() == self.design.nrows() {
            Ok(full)
        } else {
            Ok(full.subset_rows(&self.train_rows))
        }
    }

    pub fn full_loss(&self) -> Result<Model> {
        Ok(match self.model {
            LossKind::Linear => Model::Linear(LinearLoss::new(self.design.clone(), self.response.clone(), true)?),
            LossKind::Logistic => Model::Logistic(LogisticLoss::new(self.design.clone(), self.response.clone())?),
        })
    }
}

/// One AR(1) row from standard normal innovations `e`: `z_1 = e_1`,
/// `z_j = rho z_{j-1} + sqrt(1 - rho^2) e_j`.
pub fn ar1_row_from_normals(e: &[f64], rho: f64) -> Vec<f64> {
    let c = (1.0 - rho * rho).sqrt();
    let mut z = Vec::with_capacity(e.len());
    for (j, &ej) in e.iter().enumerate() {
        z.push(if j == 0 { ej } else { rho * z[j - 1] + c * ej });
    }
    z
}

/// AR(1) design before column normalization.
pub fn gen_ar1_design_raw<R: Rng>(n: usize, p: usize, rho: f64, rng: &mut R) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(n, p);
    let mut e = vec![0.0; p];
    for i in 0..n {
        for v in e.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for (j, z) in ar1_row_from_normals(&e, rho).into_iter().enumerate() {
            m.set(i, j, z);
        }
    }
    m
}

pub fn gen_ar1_design<R: Rng>(n: usize, p: usize, rho: f64, rng: &mut R) -> Result<DenseMatrix> {
    if !(0.0..1.0).contains(&rho) {
        return invalid(format!("rho = {rho} must lie in [0, 1)"));
    }
    Ok(normalize_columns(&gen_ar1_design_raw(n, p, rho, rng))?.0)
}

pub fn gen_neighbor_design<R: Rng>(n: usize, p: usize, rho: f64, rng: &mut R) -> Result<DenseMatrix> {
    if p < 3 {
        return invalid("the neighbor design needs p >= 3");
    }
    let raw = DenseMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    let base = normalize_columns(&raw)?.0;
    let mut mixed = base.clone();
    for j in 1..p - 1 {
        let (left, mid, right) = (base.column(j - 1), base.column(j), base.column(j + 1));
        for (i, v) in mixed.column_mut(j).iter_mut().enumerate() {
            *v = mid[i] + rho * (left[i] + right[i]);
        }
    }
    Ok(normalize_columns(&mixed)?.0)
}

/// `K` positive coefficients on a uniformly drawn support, values
/// `Uniform(m1, R m1)`; the first drawn coordinate is pinned to `m1` so the
/// smallest signal is exactly `m1`.
pub fn gen_coef<R: Rng>(p: usize, k: usize, m1: f64, ratio: f64, rng: &mut R) -> Result<SparseCoef> {
    if k == 0 || k > p {
        return invalid(format!("K = {k} must lie in 1..={p}"));
    }
    if !(ratio >= 1.0) || !(m1 > 0.0) {
        return invalid("need R >= 1 and m1 > 0");
    }
    let idx = sample(rng, p, k).into_vec();
    let m2 = ratio * m1;
    let mut pairs = Vec::with_capacity(k);
    for (pos, &j) in idx.iter().enumerate() {
        let v = if pos == 0 || m2 <= m1 {
            m1
        } else {
            Uniform::new(m1, m2).expect("m1 < m2").sample(rng)
        };
        pairs.push((j, v));
    }
    SparseCoef::from_pairs(p, pairs)
}

/// Linear: `X beta* + 1 + N(0, sigma1^2)`. Logistic: Bernoulli labels.
pub fn gen_response<R: Rng>(
    design: &DenseMatrix,
    beta_star: &SparseCoef,
    model: LossKind,
    sigma1: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let eta = design.mul_columns(beta_star.support(), beta_star.values());
    Ok(match model {
        LossKind::Linear => {
            let noise = Normal::new(0.0, sigma1).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
            eta.iter()
                .map(|&z| if sigma1 == 0.0 { z + 1.0 } else { z + 1.0 + noise.sample(rng) })
                .collect()
        }
        LossKind::Logistic => eta
            .iter()
            .map(|&z| f64::from(u8::from(rng.random_bool(sigmoid(z)))))
            .collect(),
    })
}

/// Seeded shuffle into sorted (train, test) row lists of sizes
/// `round(split n)` and the rest.
pub fn train_test_split<R: Rng>(n: usize, split: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(rng);
    let cut = train_size(n, split);
    let mut train = rows[..cut].to_vec();
    let mut test = rows[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Draws replication `rep` of `spec`.
pub fn generate_replication(spec: &GenSpec, rep: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut design_rng = stream_rng(spec.seed, rep, Purpose::Design);
    let design = match spec.design {
        DesignKind::Ar1 => gen_ar1_design(spec.n, spec.p, spec.rho, &mut design_rng)?,
        DesignKind::Neighbor => gen_neighbor_design(spec.n, spec.p, spec.rho, &mut design_rng)?,
    };
    let m1 = spec.coef.m1(spec.n, spec.p);
    let beta_star = gen_coef(spec.p, spec.k, m1, spec.r, &mut stream_rng(spec.seed, rep, Purpose::Coef))?;
    let response = gen_response(
        &design,
        &beta_star,
        spec.model,
        spec.sigma1,
        &mut stream_rng(spec.seed, rep, Purpose::Noise),
    )?;
    let (train_rows, test_rows) = match spec.model {
        LossKind::Linear => ((0..spec.n).collect(), Vec::new()),
        LossKind::Logistic => train_test_split(spec.n, spec.split, &mut stream_rng(spec.seed, rep, Purpose::Split)),
    };
    Ok(Dataset {
        model: spec.model,
        design,
        response,
        beta_star,
        train_rows,
        test_rows,
    })
}

pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    generate_replication(spec, 0)
}
