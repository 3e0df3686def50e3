//! Gender skew and stereotype measurement for masked language models.
//!
//! The crate turns WinoBias-style Winograd schema sentences into masked
//! pronoun queries, scores them against a masked-LM backend, and reduces the
//! resulting pronoun probabilities into per-gender F1 scores plus two bias
//! aggregates:
//!
//! * **skew**: the mean absolute gap between male and female F1 within each
//!   of the pro- and anti-stereotypical sets;
//! * **stereotype**: the mean absolute gap between the pro and anti sets
//!   within each gender.
//!
//! It also implements two mitigation procedures (prior normalization of the
//! pronoun probabilities and gender-swap data augmentation), the competency
//! analysis (majority vote, Fleiss' kappa, female-pronoun proportions), and the
//! report emitters used by the `winoprobe` CLI.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`). The aliases at
//! the crate root fix the scalar to `f64`, which is what the CLI and the wire
//! protocol use.

pub mod backend;
pub mod competency;
pub mod corpus;
pub mod metrics;
pub mod mitigation;
pub mod probe;
pub mod report;
mod scalar;

pub use scalar::Real;

pub use corpus::{Gender, Polarity, PronounCase, Span, Task};

/// Pronoun probabilities at a mask position, in `f64`.
pub type PronounDistribution = backend::PronounDistribution<f64>;
/// Deterministic test-double backend, in `f64`.
pub type StubOracle = backend::StubOracle<f64>;
/// Configuration of a [`StubOracle`].
pub type StubOracleSpec = backend::StubOracleSpec<f64>;
/// A thresholded gender decision, in `f64`.
pub type GenderPrediction = metrics::GenderPrediction<f64>;
/// Per-gender, per-set F1 scores with skew and stereotype, in `f64`.
pub type BiasReport = metrics::BiasReport<f64>;
/// The four F1 cells of one evaluation, in `f64`.
pub type F1Quad = metrics::F1Quad<f64>;
/// Raw, prior and normalized pronoun scores, in `f64`.
pub type NormalizedDistribution = mitigation::NormalizedDistribution<f64>;
/// Female-pronoun proportions per competency class, in `f64`.
pub type CompetencyTable = competency::CompetencyTable<f64>;
