//! Two-level nested linear mixed models: maximum-likelihood fitting, analytic
//! Fisher information, and model selection with an effective-sample-size BIC
//! whose penalty splits into `K1·log(N) + K2·log(J)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`dataio`] loads clustered tables, parses mixed-model formulas and builds
//!   per-cluster design matrices.
//! * [`lmmfit`] evaluates the marginal log-likelihood and maximises it.
//! * [`fisher`] computes the fixed-effect and covariance-parameter blocks of
//!   the expected information without forming any `n_j × n_j` inverse.
//! * [`bic`] counts penalty terms, computes BIC_E / BIC_N / BIC_J and ranks
//!   candidate models.
//! * [`simlab`] generates moment-matched data and regresses information
//!   log-determinants on `log n` and `log J`.

pub mod bic;
pub mod dataio;
mod error;
pub mod fisher;
pub mod lmmfit;
mod optim;
pub mod simlab;

pub use bic::{bic_all, count_penalty, enumerate_and_rank, BicReport, BicValues, PenaltyCount};
pub use error::{Error, Result};
pub use dataio::{build_designs, load_table, parse_formula, Dataset, DesignSet, ModelSpec, Term};
pub use fisher::{info_blocks, InfoBlocks};
pub use lmmfit::{fit_ml, icc, log_likelihood, FitOptions, FitResult, Theta};
