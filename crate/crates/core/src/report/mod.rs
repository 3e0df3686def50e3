//! End-to-end evaluation runs and their persisted outputs.

mod config;
mod emit;
mod svg;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ScoreRequest, ScoreResult, ScoringBackend};
use crate::competency::{self, CompetencyBallot, CompetencyClass, CompetencyTable};
use crate::corpus::{EntitySlot, Gender, SchemaPair, Task};
use crate::metrics::{self, BiasReport, GenderConfusion, GenderPrediction};
use crate::mitigation::online_normalize;
use crate::probe::{self, MaskedQuery};

pub use config::{EvalVariant, NameConfig, RunConfig, TestSetPaths, BACKEND_URL_ENV};
pub use emit::{
    bias_chart_entries, emit_bias_chart, emit_histogram, emit_tables, render_bias_chart,
    render_histogram_csv, render_histogram_svg, render_table1_csv, render_table2_csv,
    render_table2_json, table1_rows, table2_rows, write_outputs, BiasChartEntry, TableFormat,
    Table1Row, Table2Row, TABLE1_HEADER, TABLE2_HEADER,
};

/// Baseline inclusion cutoff on both T2 name-baseline F1 values, in percent.
pub const INCLUSION_THRESHOLD: f64 = 75.0;
/// Number of equal-width margin bins on `[0, 1]`.
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("every model failed: {0}")]
    AllBackendsFailed(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ReportError {
    /// Process exit code: 1 configuration, 2 backend, 3 data or I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ReportError::ConfigInvalid(_) => 1,
            ReportError::AllBackendsFailed(_) => 2,
            ReportError::Data(_) | ReportError::Io { .. } => 3,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        ReportError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// Counts of scoring margins in equal-width bins over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginHistogram {
    pub counts: Vec<usize>,
}

impl Default for MarginHistogram {
    fn default() -> Self {
        MarginHistogram {
            counts: vec![0; HISTOGRAM_BINS],
        }
    }
}

impl MarginHistogram {
    pub fn from_margins(margins: impl IntoIterator<Item = f64>) -> Self {
        let mut h = MarginHistogram::default();
        for m in margins {
            h.add(m);
        }
        h
    }

    /// Adds one margin; values outside `[0, 1]` are clamped into the end bins.
    pub fn add(&mut self, margin: f64) {
        let bins = self.counts.len();
        let bin = ((margin.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
        self.counts[bin] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn bin_edges(&self, bin: usize) -> (f64, f64) {
        let width = 1.0 / self.counts.len() as f64;
        (bin as f64 * width, (bin + 1) as f64 * width)
    }
}

/// One scored query as persisted in the raw outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub id: u32,
    pub polarity: crate::Polarity,
    pub text: String,
    pub gold: Gender,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probs: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<GenderPrediction<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub variant: EvalVariant,
    pub task: Task,
    pub report: BiasReport<f64>,
    /// Margins of every scored item (abstentions included).
    pub histogram: MarginHistogram,
    pub failed_items: usize,
    pub items: Vec<ScoredItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScores {
    pub task: Task,
    /// `Standard` for raw scores, `Online` for prior-normalized ones.
    pub variant: EvalVariant,
    /// F1 over the pooled counts of both name placements.
    pub f1_male: f64,
    pub f1_female: f64,
    /// `(male name slot, F1 male, F1 female)` per assignment.
    pub per_assignment: Vec<(EntitySlot, f64, f64)>,
    pub n_abstained: usize,
    pub failed_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model_id: String,
    /// Set when the model could not be evaluated at all.
    pub error: Option<String>,
    pub evaluations: Vec<Evaluation>,
    pub baseline: Vec<BaselineScores>,
    /// Both T2 baseline F1 values reach the inclusion threshold. `None` when
    /// the name baseline was not run on T2.
    pub included: Option<bool>,
    /// Person-probe predictions on T2, keyed by sentence id.
    pub person_predictions: BTreeMap<u32, GenderPrediction<f64>>,
    pub competency: Option<CompetencyTable<f64>>,
}

impl ModelResult {
    pub fn evaluation(&self, variant: EvalVariant, task: Task) -> Option<&Evaluation> {
        self.evaluations
            .iter()
            .find(|e| e.variant == variant && e.task == task)
    }

    pub fn baseline(&self, variant: EvalVariant, task: Task) -> Option<&BaselineScores> {
        self.baseline
            .iter()
            .find(|b| b.variant == variant && b.task == task)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub threshold: f64,
    pub models: Vec<ModelResult>,
    /// Fleiss' kappa of the competency labels, when supplied.
    pub competency_kappa: Option<f64>,
}

/// Parsed inputs of a run.
#[derive(Debug, Clone)]
pub struct EvaluationInputs {
    pub pairs: BTreeMap<Task, Vec<SchemaPair>>,
    pub ballots: Option<Vec<CompetencyBallot>>,
}

fn score_queries(
    backend: &dyn ScoringBackend<f64>,
    model: &str,
    queries: &[MaskedQuery],
) -> Vec<ScoreResult<f64>> {
    let requests: Vec<ScoreRequest> = queries
        .iter()
        .map(|q| ScoreRequest::from_query(model, q))
        .collect();
    backend.score_batch(&requests)
}

/// The first systemic error when every item failed with one.
fn systemic_failure(results: &[ScoreResult<f64>]) -> Option<BackendError> {
    if results.is_empty() {
        return None;
    }
    let mut first = None;
    for r in results {
        match r {
            Err(e) if e.is_systemic() => {
                first.get_or_insert_with(|| e.clone());
            }
            _ => return None,
        }
    }
    first
}

struct Resolved {
    items: Vec<ScoredItem>,
    confusion: BTreeMap<crate::Polarity, GenderConfusion>,
    failed: usize,
}

fn resolve_items(
    queries: &[MaskedQuery],
    results: impl IntoIterator<Item = Result<crate::PronounDistribution, String>>,
    threshold: f64,
) -> Resolved {
    let mut out = Resolved {
        items: Vec::with_capacity(queries.len()),
        confusion: BTreeMap::new(),
        failed: 0,
    };
    for (query, result) in queries.iter().zip(results) {
        let mut item = ScoredItem {
            id: query.provenance.id,
            polarity: query.provenance.polarity,
            text: query.text(),
            gold: query.gold,
            probs: None,
            prediction: None,
            error: None,
        };
        let confusion = out.confusion.entry(query.provenance.polarity).or_default();
        match result.and_then(|dist| {
            metrics::resolve(&dist, &query.candidates, threshold)
                .map(|p| (dist, p))
                .map_err(|e| e.to_string())
        }) {
            Ok((dist, prediction)) => {
                confusion.record(query.gold, prediction.value);
                item.probs = Some(dist.probs().clone());
                item.prediction = Some(prediction);
            }
            Err(e) => {
                out.failed += 1;
                item.error = Some(e);
            }
        }
        out.items.push(item);
    }
    out
}

fn evaluation_from(
    variant: EvalVariant,
    task: Task,
    resolved: Resolved,
) -> Evaluation {
    let get = |p| resolved.confusion.get(&p).copied().unwrap_or_default();
    let report = BiasReport::from_confusions(&get(crate::Polarity::Pro), &get(crate::Polarity::Anti));
    let histogram = MarginHistogram::from_margins(
        resolved
            .items
            .iter()
            .filter_map(|i| i.prediction.map(|p| p.margin)),
    );
    Evaluation {
        variant,
        task,
        report,
        histogram,
        failed_items: resolved.failed,
        items: resolved.items,
    }
}

struct ModelRun<'a> {
    config: &'a RunConfig,
    inputs: &'a EvaluationInputs,
    backend: &'a dyn ScoringBackend<f64>,
    model: &'a str,
}

type Dist = crate::PronounDistribution;

impl ModelRun<'_> {
    fn wants(&self, v: EvalVariant) -> bool {
        self.config.variants.contains(&v)
    }

    fn run(&self) -> Result<ModelResult, BackendError> {
        let mut result = ModelResult {
            model_id: self.model.to_string(),
            error: None,
            evaluations: Vec::new(),
            baseline: Vec::new(),
            included: None,
            person_predictions: BTreeMap::new(),
            competency: None,
        };
        for (&task, pairs) in &self.inputs.pairs {
            let priors = if self.wants(EvalVariant::Online) {
                Some(self.priors(pairs)?)
            } else {
                None
            };
            if self.wants(EvalVariant::Standard) || self.wants(EvalVariant::Online) {
                self.standard_and_online(task, pairs, priors.as_deref(), &mut result)?;
            }
            if self.wants(EvalVariant::NamedBaseline) {
                let standard = self.named_baseline(task, EvalVariant::Standard, pairs, None)?;
                if task == Task::T2 {
                    result.included = Some(
                        standard.f1_male >= INCLUSION_THRESHOLD
                            && standard.f1_female >= INCLUSION_THRESHOLD,
                    );
                }
                result.baseline.push(standard);
                if let Some(priors) = &priors {
                    let online =
                        self.named_baseline(task, EvalVariant::Online, pairs, Some(priors))?;
                    result.baseline.push(online);
                }
            }
            if self.wants(EvalVariant::PersonProbe) && task == Task::T2 {
                result.person_predictions = self.person_probe(pairs)?;
            }
        }
        if let Some(ballots) = &self.inputs.ballots {
            if !result.person_predictions.is_empty() {
                let labels: BTreeMap<u32, CompetencyClass> = competency::voted_labels(ballots)
                    .into_iter()
                    .filter(|(id, _)| result.person_predictions.contains_key(id))
                    .collect();
                result.competency =
                    competency::competency_table(&labels, &result.person_predictions).ok();
            }
        }
        Ok(result)
    }

    fn score(&self, queries: &[MaskedQuery]) -> Result<Vec<ScoreResult<f64>>, BackendError> {
        let results = score_queries(self.backend, self.model, queries);
        match systemic_failure(&results) {
            Some(e) => Err(e),
            None => Ok(results),
        }
    }

    /// One prior per pair, from the pro sentence with both entities masked.
    /// Pro and anti share a frame, and so do the name-substituted variants,
    /// so the same prior serves all of them.
    fn priors(&self, pairs: &[SchemaPair]) -> Result<Vec<Result<Dist, String>>, BackendError> {
        let built: Vec<Result<MaskedQuery, String>> = pairs
            .iter()
            .map(|p| probe::mask_professions(&p.pro).map_err(|e| e.to_string()))
            .collect();
        let queries: Vec<MaskedQuery> = built.iter().filter_map(|q| q.clone().ok()).collect();
        let mut scores = self.score(&queries)?.into_iter();
        Ok(built
            .into_iter()
            .map(|q| {
                q.and_then(|_| {
                    scores
                        .next()
                        .expect("one score per prior query")
                        .map_err(|e| e.to_string())
                })
            })
            .collect())
    }

    fn standard_and_online(
        &self,
        task: Task,
        pairs: &[SchemaPair],
        priors: Option<&[Result<Dist, String>]>,
        result: &mut ModelResult,
    ) -> Result<(), BackendError> {
        let queries: Vec<MaskedQuery> = pairs
            .iter()
            .map(|p| probe::mask_pronoun(&p.pro))
            .chain(pairs.iter().map(|p| probe::mask_pronoun(&p.anti)))
            .collect();
        let raw = self.score(&queries)?;
        let pair_of = |i: usize| i % pairs.len();
        if self.wants(EvalVariant::Standard) {
            let resolved = resolve_items(
                &queries,
                raw.iter().map(|r| r.clone().map_err(|e| e.to_string())),
                self.config.threshold,
            );
            result
                .evaluations
                .push(evaluation_from(EvalVariant::Standard, task, resolved));
        }
        if let Some(priors) = priors {
            let normalized = raw
                .iter()
                .enumerate()
                .map(|(i, r)| normalize(r, &priors[pair_of(i)]));
            let resolved = resolve_items(&queries, normalized, self.config.threshold);
            result
                .evaluations
                .push(evaluation_from(EvalVariant::Online, task, resolved));
        }
        Ok(())
    }

    /// Pro sentences with both entities replaced by names, once per name
    /// placement. Counts are pooled before computing F1: within one placement
    /// every T2 referent has the same gender, so the other gender's F1 is
    /// undefined there.
    fn named_baseline(
        &self,
        task: Task,
        variant: EvalVariant,
        pairs: &[SchemaPair],
        priors: Option<&[Result<Dist, String>]>,
    ) -> Result<BaselineScores, BackendError> {
        let mut per_assignment = Vec::new();
        let mut pooled = GenderConfusion::default();
        let mut failed_items = 0;
        for slot in [EntitySlot::Entity1, EntitySlot::Entity2] {
            let names = self
                .config
                .names
                .assignment(slot)
                .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
            let built: Vec<(usize, MaskedQuery)> = pairs
                .iter()
                .enumerate()
                .filter_map(|(i, p)| probe::substitute_names(&p.pro, &names).ok().map(|q| (i, q)))
                .collect();
            failed_items += pairs.len() - built.len();
            let queries: Vec<MaskedQuery> = built.iter().map(|(_, q)| q.clone()).collect();
            let scores = self.score(&queries)?;
            let dists: Vec<Result<Dist, String>> = match priors {
                None => scores
                    .into_iter()
                    .map(|r| r.map_err(|e| e.to_string()))
                    .collect(),
                Some(priors) => scores
                    .iter()
                    .zip(&built)
                    .map(|(r, (i, _))| normalize(r, &priors[*i]))
                    .collect(),
            };
            let resolved = resolve_items(&queries, dists, self.config.threshold);
            failed_items += resolved.failed;
            let c = resolved
                .confusion
                .get(&crate::Polarity::Pro)
                .copied()
                .unwrap_or_default();
            per_assignment.push((slot, c.male.f1::<f64>(), c.female.f1::<f64>()));
            pooled += c;
        }
        Ok(BaselineScores {
            task,
            variant,
            f1_male: pooled.male.f1(),
            f1_female: pooled.female.f1(),
            per_assignment,
            n_abstained: pooled.n_abstained,
            failed_items,
        })
    }

    fn person_probe(
        &self,
        pairs: &[SchemaPair],
    ) -> Result<BTreeMap<u32, GenderPrediction<f64>>, BackendError> {
        let queries: Vec<MaskedQuery> = pairs
            .iter()
            .filter_map(|p| probe::substitute_person(&p.pro).ok())
            .collect();
        let scores = self.score(&queries)?;
        Ok(queries
            .iter()
            .zip(scores)
            .filter_map(|(q, r)| {
                let dist = r.ok()?;
                let p = metrics::resolve(&dist, &q.candidates, self.config.threshold).ok()?;
                Some((q.provenance.id, p))
            })
            .collect())
    }
}

fn normalize(raw: &ScoreResult<f64>, prior: &Result<Dist, String>) -> Result<Dist, String> {
    let raw = raw.as_ref().map_err(|e| e.to_string())?;
    let prior = prior.as_ref().map_err(|e| format!("prior: {e}"))?;
    online_normalize(raw, prior)
        .map(|d| d.renormalized)
        .map_err(|e| e.to_string())
}


/// Runs every configured model and variant. A model whose backend fails as a
/// whole is recorded with its error and the run continues; the run fails only
/// when no model could be evaluated.
pub fn run_evaluation(
    config: &RunConfig,
    inputs: &EvaluationInputs,
    backend: &dyn ScoringBackend<f64>,
) -> Result<RunResult, ReportError> {
    config.validate()?;
    let mut models = Vec::new();
    let mut failures = Vec::new();
    for model in &config.model_ids {
        let run = ModelRun {
            config,
            inputs,
            backend,
            model,
        };
        match run.run() {
            Ok(r) => models.push(r),
            Err(e) => {
                failures.push(format!("{model}: {e}"));
                models.push(ModelResult {
                    model_id: model.clone(),
                    error: Some(e.to_string()),
                    evaluations: Vec::new(),
                    baseline: Vec::new(),
                    included: None,
                    person_predictions: BTreeMap::new(),
                    competency: None,
                });
            }
        }
    }
    if failures.len() == config.model_ids.len() {
        return Err(ReportError::AllBackendsFailed(failures.join("; ")));
    }
    let competency_kappa = inputs
        .ballots
        .as_ref()
        .and_then(|b| competency::fleiss_kappa::<f64>(b).ok());
    Ok(RunResult {
        threshold: config.threshold,
        models,
        competency_kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_binning() {
        let h = MarginHistogram::from_margins([0.0, 0.049, 0.05, 0.95, 1.0, 1.2]);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[19], 3);
        assert_eq!(h.total(), 6);
        assert_eq!(h.bin_edges(1), (0.05, 0.1));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(ReportError::ConfigInvalid("x".into()).exit_code(), 1);
        assert_eq!(ReportError::AllBackendsFailed("x".into()).exit_code(), 2);
        assert_eq!(ReportError::Data("x".into()).exit_code(), 3);
    }
}
