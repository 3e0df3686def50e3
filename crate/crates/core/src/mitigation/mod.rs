//! Bias mitigation: online prior normalization of pronoun scores and
//! gender-swap data augmentation.

mod augment;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::PronounDistribution;
use crate::Real;

pub use augment::{
    anonymize, build_augmented_corpus, build_unaugmented_corpus, gender_swap, read_annotated,
    write_training_examples, AnnotatedExample, EntityAnnotation, EntityKind,
    GenderedWordAnnotation, MaskedTrainingExample, PronounAnnotation,
};

/// Priors at or below this are treated as zero.
pub const PRIOR_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MitigationError {
    #[error("prior probability of {0:?} is zero")]
    ZeroPrior(String),
    #[error("prior has no probability for {0:?}")]
    MissingPrior(String),
    #[error("example {example}: annotated word {word:?} at {index} has no gendered counterpart")]
    UnmappedGenderedWord {
        example: usize,
        index: usize,
        word: String,
    },
    #[error("example {example}: {reason}")]
    InvalidAnnotation { example: usize, reason: String },
    #[error("example {example}: person names must be anonymized before building a corpus")]
    NotAnonymized { example: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
}

/// Raw pronoun scores divided by their profession-free prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedDistribution<T> {
    pub raw: PronounDistribution<T>,
    pub prior: PronounDistribution<T>,
    /// `raw[c] / prior[c]`; not bounded by 1.
    pub normalized: BTreeMap<String, T>,
    /// `normalized` rescaled to sum to 1 over the candidates.
    pub renormalized: PronounDistribution<T>,
}

/// Divides each raw probability by the prior of the same candidate, taken
/// from the query with both professions masked.
///
/// If every raw probability is zero the renormalized scores are split evenly,
/// which resolves to an abstention.
pub fn online_normalize<T: Real>(
    raw: &PronounDistribution<T>,
    prior: &PronounDistribution<T>,
) -> Result<NormalizedDistribution<T>, MitigationError> {
    let mut normalized = BTreeMap::new();
    for (candidate, &p) in raw.probs() {
        let q = prior
            .get(candidate)
            .ok_or_else(|| MitigationError::MissingPrior(candidate.clone()))?;
        if q <= T::lit(PRIOR_EPSILON) {
            return Err(MitigationError::ZeroPrior(candidate.clone()));
        }
        normalized.insert(candidate.clone(), p / q);
    }
    let total: T = normalized.values().copied().sum();
    let renormalized = if total > T::zero() {
        normalized
            .iter()
            .map(|(c, &v)| (c.clone(), v / total))
            .collect()
    } else {
        let even = T::one() / T::from_count(normalized.len().max(1));
        normalized.keys().map(|c| (c.clone(), even)).collect()
    };
    Ok(NormalizedDistribution {
        raw: raw.clone(),
        prior: prior.clone(),
        normalized,
        renormalized: PronounDistribution::new(renormalized)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{resolve, Decision};
    use crate::probe::CandidatePair;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dist(m: f64, f: f64) -> PronounDistribution<f64> {
        PronounDistribution::from_pairs([("he", m), ("she", f)]).unwrap()
    }

    fn pair() -> CandidatePair {
        CandidatePair {
            male: "he".into(),
            female: "she".into(),
        }
    }

    #[test]
    fn uniform_prior_keeps_argmax() {
        let n = online_normalize(&dist(0.6, 0.2), &dist(0.5, 0.5)).unwrap();
        assert_abs_diff_eq!(n.normalized["he"], 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(n.normalized["she"], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(n.renormalized.get("he").unwrap(), 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(n.renormalized.get("she").unwrap(), 0.25, epsilon = 1e-12);
        assert_eq!(resolve(&n.renormalized, &pair(), 0.1).unwrap().value, Decision::Male);
    }

    #[test]
    fn skewed_prior_flips_decision() {
        // 0.6 / 0.8 = 0.75 and 0.3 / 0.2 = 1.5.
        let n = online_normalize(&dist(0.6, 0.3), &dist(0.8, 0.2)).unwrap();
        assert_abs_diff_eq!(n.normalized["he"], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(n.normalized["she"], 1.5, epsilon = 1e-12);
        assert_eq!(
            resolve(&n.renormalized, &pair(), 0.1).unwrap().value,
            Decision::Female
        );
    }

    #[test]
    fn zero_prior_is_an_error() {
        assert_eq!(
            online_normalize(&dist(0.6, 0.3), &dist(0.4, 0.0)).unwrap_err(),
            MitigationError::ZeroPrior("she".into())
        );
        let partial = PronounDistribution::from_pairs([("he", 0.5)]).unwrap();
        assert_eq!(
            online_normalize(&dist(0.6, 0.3), &partial).unwrap_err(),
            MitigationError::MissingPrior("she".into())
        );
    }

    #[test]
    fn all_zero_raw_abstains() {
        let n = online_normalize(&dist(0.0, 0.0), &dist(0.3, 0.3)).unwrap();
        assert_eq!(n.renormalized.get("he"), Some(0.5));
        assert_eq!(resolve(&n.renormalized, &pair(), 0.0).unwrap().value, Decision::Abstain);
    }

    proptest! {
        #[test]
        fn uniform_prior_preserves_argmax(m in 0.0f64..0.5, f in 0.0f64..0.5, p in 0.01f64..0.5) {
            let raw = dist(m, f);
            let n = online_normalize(&raw, &dist(p, p)).unwrap();
            let before = resolve(&raw, &pair(), 0.0).unwrap().value;
            let after = resolve(&n.renormalized, &pair(), 0.0).unwrap().value;
            prop_assert_eq!(before, after);
            let sum: f64 = n.renormalized.probs().values().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }

        #[test]
        fn normalized_is_ratio(m in 0.0f64..0.5, f in 0.0f64..0.5, pm in 0.01f64..0.5, pf in 0.01f64..0.5) {
            let n = online_normalize(&dist(m, f), &dist(pm, pf)).unwrap();
            prop_assert_eq!(n.normalized["he"], m / pm);
            prop_assert_eq!(n.normalized["she"], f / pf);
        }
    }
}
