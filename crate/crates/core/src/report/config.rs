use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EvaluationInputs, ReportError};
use crate::backend::{HttpBackend, HttpConfig, ScoringBackend, StubOracle, StubOracleSpec};
use crate::competency;
use crate::corpus::{self, EntitySlot, GenderedWordMap, Polarity, ProfessionLexicon, Task};
use crate::metrics::DEFAULT_THRESHOLD;
use crate::probe::NameAssignment;

/// Overrides `backend_url` when set.
pub const BACKEND_URL_ENV: &str = "WINOPROBE_BACKEND_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvalVariant {
    Standard,
    Online,
    NamedBaseline,
    PersonProbe,
}

impl EvalVariant {
    pub const ALL: [EvalVariant; 4] = [
        EvalVariant::Standard,
        EvalVariant::Online,
        EvalVariant::NamedBaseline,
        EvalVariant::PersonProbe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalVariant::Standard => "standard",
            EvalVariant::Online => "online",
            EvalVariant::NamedBaseline => "named_baseline",
            EvalVariant::PersonProbe => "person_probe",
        }
    }
}

impl std::str::FromStr for EvalVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        EvalVariant::ALL
            .into_iter()
            .find(|v| v.as_str().replace('_', "") == key || format!("{v:?}").to_ascii_lowercase() == key)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TestSetPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1_pro: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1_anti: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_pro: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_anti: Option<PathBuf>,
}

impl TestSetPaths {
    /// `(task, pro, anti)` for every task with both files configured.
    pub fn tasks(&self) -> Vec<(Task, &Path, &Path)> {
        let mut out = Vec::new();
        if let (Some(p), Some(a)) = (&self.t1_pro, &self.t1_anti) {
            out.push((Task::T1, p.as_path(), a.as_path()));
        }
        if let (Some(p), Some(a)) = (&self.t2_pro, &self.t2_anti) {
            out.push((Task::T2, p.as_path(), a.as_path()));
        }
        out
    }

    fn each_mut(&mut self) -> [&mut Option<PathBuf>; 4] {
        [
            &mut self.t1_pro,
            &mut self.t1_anti,
            &mut self.t2_pro,
            &mut self.t2_anti,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameConfig {
    pub male: String,
    pub female: String,
}

impl Default for NameConfig {
    fn default() -> Self {
        NameConfig {
            male: "Bob".into(),
            female: "Alice".into(),
        }
    }
}

impl NameConfig {
    pub fn assignment(&self, male_slot: EntitySlot) -> Result<NameAssignment, crate::probe::ProbeError> {
        NameAssignment::new(self.male.clone(), self.female.clone(), male_slot)
    }
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_variants() -> Vec<EvalVariant> {
    vec![EvalVariant::Standard]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_timeout() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}
fn default_concurrency() -> usize {
    8
}

/// A run configuration, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_url: Option<String>,
    pub model_ids: Vec<String>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub test_sets: TestSetPaths,
    /// Profession lexicon TSV; the bundled WinoBias list when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon_path: Option<PathBuf>,
    /// Gendered word map TSV; the bundled English map when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_map_path: Option<PathBuf>,
    #[serde(default = "default_variants")]
    pub variants: Vec<EvalVariant>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_timeout")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub names: NameConfig,
    /// Answers from a deterministic oracle instead of a server. Used when
    /// no backend URL is configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stub: Option<StubOracleSpec<f64>>,
    /// Rater TSV for the competency table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub competency_labels: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(model_ids: Vec<String>) -> Self {
        RunConfig {
            backend_url: None,
            model_ids,
            threshold: DEFAULT_THRESHOLD,
            test_sets: TestSetPaths::default(),
            lexicon_path: None,
            word_map_path: None,
            variants: default_variants(),
            output_dir: default_output_dir(),
            request_timeout_ms: default_timeout(),
            max_retries: default_retries(),
            max_concurrency: default_concurrency(),
            names: NameConfig::default(),
            stub: None,
            competency_labels: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::ConfigInvalid(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory, and [`BACKEND_URL_ENV`] overrides `backend_url`.
    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ReportError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.apply_env();
        Ok(config)
    }

    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(BACKEND_URL_ENV) {
            if !url.trim().is_empty() {
                self.backend_url = Some(url);
            }
        }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        for p in self.test_sets.each_mut() {
            fix(p);
        }
        fix(&mut self.lexicon_path);
        fix(&mut self.word_map_path);
        fix(&mut self.competency_labels);
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        let bad = |msg: String| Err(ReportError::ConfigInvalid(msg));
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} is outside [0, 1]", self.threshold));
        }
        if self.model_ids.is_empty() {
            return bad("at least one model id is required".into());
        }
        if self.model_ids.iter().any(|m| m.trim().is_empty()) {
            return bad("model ids must not be empty".into());
        }
        if self.variants.is_empty() {
            return bad("at least one variant is required".into());
        }
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be positive".into());
        }
        if self.backend_url.is_none() && self.stub.is_none() {
            return bad(format!(
                "no backend: set backend_url, {BACKEND_URL_ENV}, or a stub oracle"
            ));
        }
        let ts = &self.test_sets;
        if ts.t1_pro.is_some() != ts.t1_anti.is_some() || ts.t2_pro.is_some() != ts.t2_anti.is_some()
        {
            return bad("test sets need both a pro and an anti file".into());
        }
        if ts.tasks().is_empty() {
            return bad("no test set configured".into());
        }
        if let Err(e) = self.names.assignment(EntitySlot::Entity1) {
            return bad(e.to_string());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of this config with `output_dir`
    /// cleared, so the same run written to two places hashes the same.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let value = serde_json::to_value(&canonical).expect("config serializes");
        let bytes = serde_json::to_vec(&value).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn lexicon(&self) -> Result<ProfessionLexicon, ReportError> {
        match &self.lexicon_path {
            None => Ok(ProfessionLexicon::winobias_default()),
            Some(p) => ProfessionLexicon::from_tsv(&read(p)?)
                .map_err(|e| ReportError::Data(format!("{}: {e}", p.display()))),
        }
    }

    pub fn word_map(&self) -> Result<GenderedWordMap, ReportError> {
        match &self.word_map_path {
            None => Ok(GenderedWordMap::default_english()),
            Some(p) => GenderedWordMap::from_tsv(&read(p)?)
                .map_err(|e| ReportError::Data(format!("{}: {e}", p.display()))),
        }
    }

    /// Reads and pairs the configured test sets and competency labels.
    pub fn load_inputs(&self) -> Result<EvaluationInputs, ReportError> {
        let lexicon = self.lexicon()?;
        let mut pairs = BTreeMap::new();
        for (task, pro_path, anti_path) in self.test_sets.tasks() {
            let parse = |path: &Path, polarity| {
                corpus::parse_winobias(&read(path)?, task, polarity, &lexicon)
                    .map_err(|e| ReportError::Data(format!("{}: {e}", path.display())))
            };
            let pro = parse(pro_path, Polarity::Pro)?;
            let anti = parse(anti_path, Polarity::Anti)?;
            let paired = corpus::pair_sentences(pro, anti)
                .map_err(|e| ReportError::Data(format!("{}: {e}", pro_path.display())))?;
            pairs.insert(task, paired);
        }
        let ballots = match &self.competency_labels {
            None => None,
            Some(p) => Some(
                competency::parse_label_file(&read(p)?)
                    .map_err(|e| ReportError::Data(format!("{}: {e}", p.display())))?,
            ),
        };
        Ok(EvaluationInputs { pairs, ballots })
    }

    /// The HTTP client when a URL is configured, else the stub oracle.
    pub fn backend(&self) -> Result<Box<dyn ScoringBackend<f64>>, ReportError> {
        if let Some(url) = &self.backend_url {
            let mut http = HttpConfig::new(url.clone());
            http.timeout_ms = self.request_timeout_ms;
            http.max_retries = self.max_retries;
            http.max_concurrency = self.max_concurrency;
            return Ok(Box::new(HttpBackend::new(http)));
        }
        match &self.stub {
            Some(spec) => StubOracle::new(spec.clone())
                .map(|s| Box::new(s) as Box<dyn ScoringBackend<f64>>)
                .map_err(|e| ReportError::ConfigInvalid(e.to_string())),
            None => Err(ReportError::ConfigInvalid("no backend configured".into())),
        }
    }
}

fn read(path: &Path) -> Result<String, ReportError> {
    fs::read_to_string(path).map_err(|e| ReportError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> RunConfig {
        let mut c = RunConfig::new(vec!["bert-base-uncased".into()]);
        c.stub = Some(StubOracleSpec::symmetric());
        c.test_sets.t2_pro = Some("pro.txt".into());
        c.test_sets.t2_anti = Some("anti.txt".into());
        c
    }

    #[test]
    fn threshold_out_of_range_is_invalid() {
        let mut c = minimal();
        assert!(c.validate().is_ok());
        c.threshold = 1.5;
        assert!(matches!(c.validate(), Err(ReportError::ConfigInvalid(_))));
    }

    #[test]
    fn needs_models_variants_and_backend() {
        let mut c = minimal();
        c.model_ids.clear();
        assert!(c.validate().is_err());
        let mut c = minimal();
        c.variants.clear();
        assert!(c.validate().is_err());
        let mut c = minimal();
        c.stub = None;
        assert!(c.validate().is_err());
        let mut c = minimal();
        c.test_sets.t2_anti = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn defaults_from_json() {
        let c = RunConfig::from_json(
            r#"{"model_ids": ["m"], "test_sets": {"t2_pro": "a", "t2_anti": "b"}}"#,
        )
        .unwrap();
        assert_eq!(c.threshold, 0.1);
        assert_eq!(c.max_concurrency, 8);
        assert_eq!(c.variants, vec![EvalVariant::Standard]);
        assert_eq!(c.names, NameConfig::default());
        assert!(RunConfig::from_json(r#"{"model_ids": ["m"], "bogus": 1}"#).is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = minimal();
        let mut b = minimal();
        b.output_dir = "/elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.threshold = 0.2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let mut c = minimal();
        c.resolve_paths(Path::new("/data"));
        assert_eq!(c.test_sets.t2_pro, Some(PathBuf::from("/data/pro.txt")));
        assert_eq!(c.output_dir, PathBuf::from("/data/out"));
    }

    #[test]
    fn variant_names_parse() {
        assert_eq!("online".parse::<EvalVariant>(), Ok(EvalVariant::Online));
        assert_eq!("named-baseline".parse::<EvalVariant>(), Ok(EvalVariant::NamedBaseline));
        assert_eq!("PersonProbe".parse::<EvalVariant>(), Ok(EvalVariant::PersonProbe));
        assert!("x".parse::<EvalVariant>().is_err());
    }
}
