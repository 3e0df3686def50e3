//! Providers of masked-LM candidate probabilities.
//!
//! [`ScoringBackend`] is implemented by [`HttpBackend`], which speaks the JSON
//! protocol below, and by [`StubOracle`], a deterministic test double.
//!
//! ```text
//! POST /v1/score  {"model": m, "items": [{"tokens": [..], "target_index": i, "candidates": [..]}]}
//!              -> {"results": [{"probs": {c: p}} | {"error": {"code": s, "message": s}}]}
//! GET  /v1/models -> {"models": [..]}
//! ```

mod http;
mod stub;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::{MaskedQuery, MASK};
use crate::Real;

pub use http::{HttpBackend, HttpConfig};
pub use stub::{OverrideRule, StubOracle, StubOracleSpec};

/// Slack allowed on the candidate mass sum.
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub model_id: String,
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub candidates: Vec<String>,
}

impl ScoreRequest {
    pub fn from_query(model_id: &str, query: &MaskedQuery) -> Self {
        ScoreRequest {
            model_id: model_id.to_string(),
            tokens: query.tokens.clone(),
            target_index: query.target_index,
            candidates: query.candidates.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.tokens.get(self.target_index).map(String::as_str) != Some(MASK) {
            return Err(BackendError::InvalidRequest(format!(
                "target index {} is not a mask",
                self.target_index
            )));
        }
        if self.candidates.is_empty() {
            return Err(BackendError::InvalidRequest("no candidates".into()));
        }
        Ok(())
    }
}

/// Vocabulary probability of each candidate at the target position. These
/// are raw softmax mass, not renormalized over the candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PronounDistribution<T> {
    probs: BTreeMap<String, T>,
}

impl<T: Real> PronounDistribution<T> {
    /// Checks each probability is in `[0, 1]` and the total is at most
    /// `1 + MASS_TOLERANCE`.
    pub fn new(probs: BTreeMap<String, T>) -> Result<Self, BackendError> {
        let mut total = T::zero();
        for (candidate, &p) in &probs {
            if !(p >= T::zero() && p <= T::one()) {
                return Err(BackendError::InvalidResponse(format!(
                    "probability {p} for {candidate:?} outside [0, 1]"
                )));
            }
            total += p;
        }
        if total > T::one() + T::lit(MASS_TOLERANCE) {
            return Err(BackendError::InvalidResponse(format!(
                "candidate mass {total} exceeds 1"
            )));
        }
        Ok(PronounDistribution { probs })
    }

    pub fn from_pairs<S: Into<String>>(
        pairs: impl IntoIterator<Item = (S, T)>,
    ) -> Result<Self, BackendError> {
        Self::new(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn get(&self, candidate: &str) -> Option<T> {
        self.probs.get(candidate).copied()
    }

    pub fn probs(&self) -> &BTreeMap<String, T> {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> PronounDistribution<U> {
        PronounDistribution {
            probs: self.probs.iter().map(|(k, &v)| (k.clone(), f(v))).collect(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("candidate {0:?} is not a single vocabulary token")]
    MultiTokenCandidate(String),
    #[error("unknown model {0:?}")]
    ModelUnknown(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("backend error {code}: {message}")]
    Remote { code: String, message: String },
}

impl BackendError {
    /// Whether the error concerns the backend as a whole rather than one item.
    pub fn is_systemic(&self) -> bool {
        matches!(
            self,
            BackendError::BackendUnavailable(_) | BackendError::ModelUnknown(_)
        )
    }
}

pub type ScoreResult<T> = Result<PronounDistribution<T>, BackendError>;

pub trait ScoringBackend<T: Real>: Send + Sync {
    /// Scores a batch. The output has one entry per request, in request order;
    /// a failing item does not abort the others.
    fn score_batch(&self, requests: &[ScoreRequest]) -> Vec<ScoreResult<T>>;

    fn score(&self, request: &ScoreRequest) -> ScoreResult<T> {
        self.score_batch(std::slice::from_ref(request))
            .pop()
            .expect("one result per request")
    }

    /// Identifiers of the models the backend serves.
    fn models(&self) -> Result<Vec<String>, BackendError>;
}

impl<T: Real, B: ScoringBackend<T> + ?Sized> ScoringBackend<T> for &B {
    fn score_batch(&self, requests: &[ScoreRequest]) -> Vec<ScoreResult<T>> {
        (**self).score_batch(requests)
    }

    fn models(&self) -> Result<Vec<String>, BackendError> {
        (**self).models()
    }
}

impl<T: Real, B: ScoringBackend<T> + ?Sized> ScoringBackend<T> for Box<B> {
    fn score_batch(&self, requests: &[ScoreRequest]) -> Vec<ScoreResult<T>> {
        (**self).score_batch(requests)
    }

    fn models(&self) -> Result<Vec<String>, BackendError> {
        (**self).models()
    }
}

/// Wire types for the HTTP protocol.
pub mod wire {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Serialize};

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ScoreItem {
        pub tokens: Vec<String>,
        pub target_index: usize,
        pub candidates: Vec<String>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ScoreBody {
        pub model: String,
        pub items: Vec<ScoreItem>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ErrorBody {
        pub code: String,
        pub message: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(untagged)]
    pub enum ItemResult {
        Probs { probs: BTreeMap<String, f64> },
        Error { error: ErrorBody },
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ScoreResponse {
        pub results: Vec<ItemResult>,
    }

    /// Body of a whole-request error (4xx/5xx).
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ErrorResponse {
        pub error: ErrorBody,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ModelsResponse {
        pub models: Vec<String>,
    }

    pub const MULTI_TOKEN_CANDIDATE: &str = "MultiTokenCandidate";
    pub const MODEL_UNKNOWN: &str = "ModelUnknown";
    pub const MODEL_LOADING: &str = "ModelLoading";
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distribution_validation() {
        assert!(PronounDistribution::<f64>::from_pairs([("he", 0.6), ("she", 0.4)]).is_ok());
        assert!(PronounDistribution::<f64>::from_pairs([("he", 0.6), ("she", 0.4000005)]).is_ok());
        assert!(PronounDistribution::<f64>::from_pairs([("he", 0.7), ("she", 0.4)]).is_err());
        assert!(PronounDistribution::<f64>::from_pairs([("he", -0.1)]).is_err());
        assert!(PronounDistribution::<f64>::from_pairs([("he", f64::NAN)]).is_err());
    }

    #[test]
    fn request_validation() {
        let mut req = ScoreRequest {
            model_id: "m".into(),
            tokens: vec!["a".into(), MASK.into()],
            target_index: 1,
            candidates: vec!["he".into()],
        };
        assert!(req.validate().is_ok());
        req.target_index = 0;
        assert!(req.validate().is_err());
        req.target_index = 5;
        assert!(req.validate().is_err());
        req.target_index = 1;
        req.candidates.clear();
        assert!(req.validate().is_err());
    }

    #[test]
    fn wire_item_results_decode() {
        let body = r#"{"results":[{"probs":{"he":0.5,"she":0.25}},{"error":{"code":"MultiTokenCandidate","message":"x"}}]}"#;
        let resp: wire::ScoreResponse = serde_json::from_str(body).unwrap();
        assert!(matches!(resp.results[0], wire::ItemResult::Probs { .. }));
        assert!(matches!(resp.results[1], wire::ItemResult::Error { .. }));
    }
}
