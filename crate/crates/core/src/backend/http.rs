use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire::{self, ItemResult};
use super::{BackendError, PronounDistribution, ScoreRequest, ScoreResult, ScoringBackend};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_concurrency: usize,
    /// Items per POST.
    pub batch_size: usize,
    pub retry_backoff_ms: u64,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            timeout_ms: 30_000,
            max_retries: 2,
            max_concurrency: 8,
            batch_size: 32,
            retry_backoff_ms: 250,
        }
    }
}

/// Client for a remote scoring server.
///
/// Batches are split into per-model chunks of at most `batch_size` items, and
/// up to `max_concurrency` chunks are in flight at once. Results are placed by
/// request position, so completion order never affects the output.
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
}

enum Reply {
    Results(Vec<ItemResult>),
    Failed { status: u16, error: Option<wire::ErrorBody> },
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend { config, agent }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post(&self, body: &wire::ScoreBody) -> Result<Reply, BackendError> {
        let mut response = self
            .agent
            .post(&self.url("/v1/score"))
            .send_json(body)
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 200 {
            let parsed: wire::ScoreResponse = response
                .body_mut()
                .read_json()
                .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
            Ok(Reply::Results(parsed.results))
        } else {
            let error = response
                .body_mut()
                .read_json::<wire::ErrorResponse>()
                .ok()
                .map(|e| e.error);
            Ok(Reply::Failed { status, error })
        }
    }

    fn backoff(&self, attempt: u32) {
        thread::sleep(Duration::from_millis(
            self.config.retry_backoff_ms * u64::from(attempt + 1),
        ));
    }

    fn send_chunk<T: Real>(&self, model: &str, items: &[&ScoreRequest]) -> Vec<ScoreResult<T>> {
        let body = wire::ScoreBody {
            model: model.to_string(),
            items: items
                .iter()
                .map(|r| wire::ScoreItem {
                    tokens: r.tokens.clone(),
                    target_index: r.target_index,
                    candidates: r.candidates.clone(),
                })
                .collect(),
        };
        let all = |e: BackendError| vec![Err(e); items.len()];
        let mut attempt = 0;
        loop {
            let retryable = match self.post(&body) {
                Ok(Reply::Results(results)) => {
                    if results.len() != items.len() {
                        return all(BackendError::InvalidResponse(format!(
                            "{} results for {} items",
                            results.len(),
                            items.len()
                        )));
                    }
                    return results
                        .into_iter()
                        .zip(items)
                        .map(|(result, request)| convert_item(result, request))
                        .collect();
                }
                Ok(Reply::Failed { status: 404, .. }) => {
                    return all(BackendError::ModelUnknown(model.to_string()))
                }
                Ok(Reply::Failed { status, error }) if (400..500).contains(&status) => {
                    // One bad item rejects the whole POST; retry items alone so
                    // the rest still get scored.
                    if items.len() > 1 {
                        return items
                            .iter()
                            .flat_map(|item| self.send_chunk(model, std::slice::from_ref(item)))
                            .collect();
                    }
                    return all(match error {
                        Some(e) => error_from_code(e, model),
                        None => BackendError::Remote {
                            code: status.to_string(),
                            message: "request rejected".into(),
                        },
                    });
                }
                Ok(Reply::Failed { status, error }) => BackendError::BackendUnavailable(match error {
                    Some(e) => format!("HTTP {status}: {} {}", e.code, e.message),
                    None => format!("HTTP {status}"),
                }),
                Err(e) => e,
            };
            if attempt >= self.config.max_retries {
                return all(retryable);
            }
            self.backoff(attempt);
            attempt += 1;
        }
    }
}

fn error_from_code(error: wire::ErrorBody, model: &str) -> BackendError {
    match error.code.as_str() {
        wire::MULTI_TOKEN_CANDIDATE => BackendError::MultiTokenCandidate(error.message),
        wire::MODEL_UNKNOWN => BackendError::ModelUnknown(model.to_string()),
        wire::MODEL_LOADING => BackendError::BackendUnavailable(error.message),
        _ => BackendError::Remote {
            code: error.code,
            message: error.message,
        },
    }
}

fn convert_item<T: Real>(result: ItemResult, request: &ScoreRequest) -> ScoreResult<T> {
    match result {
        ItemResult::Error { error } => Err(error_from_code(error, &request.model_id)),
        ItemResult::Probs { probs } => {
            let mut picked = BTreeMap::new();
            for candidate in &request.candidates {
                let p = probs.get(candidate).ok_or_else(|| {
                    BackendError::InvalidResponse(format!("no probability for {candidate:?}"))
                })?;
                let p = T::from_f64(*p).ok_or_else(|| {
                    BackendError::InvalidResponse(format!("unrepresentable probability {p}"))
                })?;
                picked.insert(candidate.clone(), p);
            }
            PronounDistribution::new(picked)
        }
    }
}

impl<T: Real> ScoringBackend<T> for HttpBackend {
    fn score_batch(&self, requests: &[ScoreRequest]) -> Vec<ScoreResult<T>> {
        let mut results: Vec<Option<ScoreResult<T>>> = vec![None; requests.len()];

        // Per-model chunks of request indices, in first-seen order.
        let mut chunks: Vec<(String, Vec<usize>)> = Vec::new();
        let mut open: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, request) in requests.iter().enumerate() {
            if let Err(e) = request.validate() {
                results[i] = Some(Err(e));
                continue;
            }
            let slot = open.get(request.model_id.as_str()).copied().filter(|&c| {
                chunks[c].1.len() < self.config.batch_size.max(1)
            });
            match slot {
                Some(c) => chunks[c].1.push(i),
                None => {
                    open.insert(&request.model_id, chunks.len());
                    chunks.push((request.model_id.clone(), vec![i]));
                }
            }
        }

        let next = AtomicUsize::new(0);
        let filled = Mutex::new(&mut results);
        let workers = self.config.max_concurrency.max(1).min(chunks.len());
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let c = next.fetch_add(1, Ordering::Relaxed);
                    let Some((model, indices)) = chunks.get(c) else {
                        break;
                    };
                    let items: Vec<&ScoreRequest> = indices.iter().map(|&i| &requests[i]).collect();
                    let scored = self.send_chunk::<T>(model, &items);
                    let mut guard = filled.lock().expect("result lock");
                    for (&i, result) in indices.iter().zip(scored) {
                        guard[i] = Some(result);
                    }
                });
            }
        });

        results
            .into_iter()
            .map(|r| r.expect("every request answered"))
            .collect()
    }

    fn models(&self) -> Result<Vec<String>, BackendError> {
        let mut attempt = 0;
        loop {
            let outcome = self
                .agent
                .get(&self.url("/v1/models"))
                .call()
                .map_err(|e| BackendError::BackendUnavailable(e.to_string()))
                .and_then(|mut response| {
                    let status = response.status().as_u16();
                    if status != 200 {
                        return Err(BackendError::BackendUnavailable(format!("HTTP {status}")));
                    }
                    response
                        .body_mut()
                        .read_json::<wire::ModelsResponse>()
                        .map(|m| m.models)
                        .map_err(|e| BackendError::InvalidResponse(e.to_string()))
                });
            match outcome {
                Err(BackendError::BackendUnavailable(_)) if attempt < self.config.max_retries => {
                    self.backoff(attempt);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
