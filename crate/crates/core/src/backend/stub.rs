use serde::{Deserialize, Serialize};

use super::{BackendError, PronounDistribution, ScoreRequest, ScoreResult, ScoringBackend};
use crate::corpus::{pronoun_info, Gender, ProfessionLexicon};
use crate::Real;

/// Fixed probabilities for queries mentioning `profession`.
///
/// `context` is `"*"` to match any query, or a word that must also occur in
/// the query (case-insensitive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRule<T> {
    pub profession: String,
    #[serde(default = "any_context")]
    pub context: String,
    pub p_male: T,
    pub p_female: T,
}

fn any_context() -> String {
    "*".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubOracleSpec<T> {
    /// Male mass when no override applies; the female candidate gets the
    /// complement.
    pub default_male_prob: T,
    #[serde(default)]
    pub overrides: Vec<OverrideRule<T>>,
    /// Models the stub claims to serve. Empty means any model id is accepted.
    #[serde(default)]
    pub models: Vec<String>,
}

impl<T: Real> StubOracleSpec<T> {
    pub fn symmetric() -> Self {
        StubOracleSpec {
            default_male_prob: T::lit(0.5),
            overrides: Vec::new(),
            models: Vec::new(),
        }
    }

    /// Every lexicon profession favours its stereotype gender by `margin`;
    /// anything else is a coin flip.
    pub fn stereotyped(lexicon: &ProfessionLexicon, margin: T) -> Self {
        let two = T::lit(2.0);
        let high = (T::one() + margin) / two;
        let low = (T::one() - margin) / two;
        let overrides = lexicon
            .iter()
            .map(|(profession, gender)| {
                let (p_male, p_female) = match gender {
                    Gender::Male => (high, low),
                    Gender::Female => (low, high),
                };
                OverrideRule {
                    profession: profession.to_string(),
                    context: any_context(),
                    p_male,
                    p_female,
                }
            })
            .collect();
        StubOracleSpec {
            default_male_prob: T::lit(0.5),
            overrides,
            models: Vec::new(),
        }
    }
}

/// Deterministic backend answering from a [`StubOracleSpec`].
///
/// When several override professions occur in a query, the occurrence closest
/// before the mask wins (falling back to the nearest one after it). For
/// WinoBias T2 sentences that is the referent.
#[derive(Debug, Clone)]
pub struct StubOracle<T> {
    spec: StubOracleSpec<T>,
    patterns: Vec<Vec<String>>,
}

fn in_unit(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl<T: Real> StubOracle<T> {
    pub fn new(spec: StubOracleSpec<T>) -> Result<Self, BackendError> {
        let invalid = |msg: String| BackendError::InvalidRequest(format!("stub oracle: {msg}"));
        if !in_unit(spec.default_male_prob.as_f64()) {
            return Err(invalid("default_male_prob outside [0, 1]".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for rule in &spec.overrides {
            let (m, f) = (rule.p_male.as_f64(), rule.p_female.as_f64());
            if !in_unit(m) || !in_unit(f) || m + f > 1.0 + super::MASS_TOLERANCE {
                return Err(invalid(format!(
                    "override for {:?} has invalid probabilities",
                    rule.profession
                )));
            }
            let key = (rule.profession.to_lowercase(), rule.context.to_lowercase());
            if !seen.insert(key) {
                return Err(invalid(format!(
                    "duplicate override for {:?}/{:?}",
                    rule.profession, rule.context
                )));
            }
        }
        let patterns = spec
            .overrides
            .iter()
            .map(|r| r.profession.split_whitespace().map(str::to_lowercase).collect())
            .collect();
        Ok(StubOracle { spec, patterns })
    }

    pub fn spec(&self) -> &StubOracleSpec<T> {
        &self.spec
    }

    fn pick_rule(&self, lowered: &[String], target: usize) -> Option<&OverrideRule<T>> {
        // (distance class, distance, specificity) -- smaller is better.
        let mut best: Option<((u8, usize, u8, usize), usize)> = None;
        for (rule_index, (rule, pattern)) in
            self.spec.overrides.iter().zip(&self.patterns).enumerate()
        {
            if pattern.is_empty() {
                continue;
            }
            let context = rule.context.to_lowercase();
            if context != "*" && !lowered.contains(&context) {
                continue;
            }
            let specificity = u8::from(context == "*");
            for start in 0..lowered.len().saturating_sub(pattern.len() - 1) {
                if lowered[start..start + pattern.len()] != pattern[..] {
                    continue;
                }
                let rank = if start < target {
                    (0, target - start, specificity, usize::MAX - pattern.len())
                } else {
                    (1, start - target, specificity, usize::MAX - pattern.len())
                };
                if best.is_none_or(|(b, _)| rank < b) {
                    best = Some((rank, rule_index));
                }
            }
        }
        best.map(|(_, i)| &self.spec.overrides[i])
    }

    fn score_one(&self, request: &ScoreRequest) -> ScoreResult<T> {
        request.validate()?;
        if !self.spec.models.is_empty() && !self.spec.models.contains(&request.model_id) {
            return Err(BackendError::ModelUnknown(request.model_id.clone()));
        }
        if let Some(c) = request
            .candidates
            .iter()
            .find(|c| c.is_empty() || c.contains(char::is_whitespace))
        {
            return Err(BackendError::MultiTokenCandidate(c.clone()));
        }
        let lowered: Vec<String> = request.tokens.iter().map(|t| t.to_lowercase()).collect();
        let (p_male, p_female) = match self.pick_rule(&lowered, request.target_index) {
            Some(rule) => (rule.p_male, rule.p_female),
            None => (
                self.spec.default_male_prob,
                T::one() - self.spec.default_male_prob,
            ),
        };
        PronounDistribution::new(
            request
                .candidates
                .iter()
                .map(|c| {
                    let p = match pronoun_info(c) {
                        Some((Gender::Male, _)) => p_male,
                        Some((Gender::Female, _)) => p_female,
                        None => T::zero(),
                    };
                    (c.clone(), p)
                })
                .collect(),
        )
    }
}

impl<T: Real> ScoringBackend<T> for StubOracle<T> {
    fn score_batch(&self, requests: &[ScoreRequest]) -> Vec<ScoreResult<T>> {
        requests.iter().map(|r| self.score_one(r)).collect()
    }

    fn models(&self) -> Result<Vec<String>, BackendError> {
        Ok(self.spec.models.clone())
    }
}
