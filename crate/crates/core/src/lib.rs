//! L0-penalized sparse regression by support detection and root finding
//! with a data-driven line search.
//!
//! The solver ([`solver::fit_sdarl`]) alternates between detecting a support
//! of size `T` by hard thresholding and minimizing the loss restricted to it,
//! choosing the thresholding step by backtracking. [`tuning::fit_asdarl`]
//! sweeps `T` and picks one by HBIC or cross-validation.

pub mod coef;
pub mod datagen;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod oracle;
pub mod solver;
pub mod tuning;
pub mod verify;

pub use coef::SparseCoef;
pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use loss::{LinearLoss, LogisticLoss, Loss, LossKind, Model, RowSubset, SubsolverOptions};
pub use solver::{fit_fixed_step, fit_sdarl, FitResult, SolverConfig, Termination};
