use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use winoprobe::competency;
use winoprobe::corpus::{self, GenderedWordMap, ProfessionLexicon};
use winoprobe::mitigation;
use winoprobe::report::{self, EvalVariant, ReportError, RunConfig, RunResult};
use winoprobe::Task;

#[derive(Parser)]
#[command(name = "winoprobe", version, about = "Gender bias probes for masked language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score the configured test sets and write tables, figures and raw outputs.
    Evaluate(EvaluateArgs),
    /// Build a masked-pronoun training corpus from annotated examples.
    Augment(AugmentArgs),
    /// Rater agreement, majority labels and the competency/gender table.
    Competency(CompetencyArgs),
    /// Draw the skew/stereotype bar chart from one or more run results.
    Chart(ChartArgs),
    /// Parse a pro/anti file pair and check the corpus invariants.
    ValidateCorpus(ValidateArgs),
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    /// Comma-separated model ids.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Variants to run (repeatable or comma-separated).
    #[arg(long = "variant", value_delimiter = ',')]
    variants: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    backend_url: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Args)]
struct AugmentArgs {
    /// Annotated examples, one JSON record per line.
    #[arg(long)]
    input: PathBuf,
    /// Output JSONL; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Emit only the original examples, without swapped duplicates.
    #[arg(long)]
    no_swap: bool,
    /// Gendered word map TSV; the bundled English map when absent.
    #[arg(long)]
    word_map: Option<PathBuf>,
}

#[derive(Args)]
struct CompetencyArgs {
    /// Rater TSV: sentence_id, rater_id, label.
    #[arg(long)]
    labels: PathBuf,
    /// `raw/run_result.json` of an evaluate run with the person probe.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Where to write the competency table CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ChartArgs {
    /// `raw/run_result.json` files.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    T1,
    T2,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    pro: PathBuf,
    #[arg(long)]
    anti: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    word_map: Option<PathBuf>,
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const CONFIG: u8 = 1;
const DATA: u8 = 3;

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

trait OrFail<T> {
    fn or_fail(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn or_fail(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .or_fail(DATA)
}

fn write_or_stdout(path: Option<&Path>, contents: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, contents)
            .with_context(|| format!("writing {}", p.display()))
            .or_fail(DATA),
        None => io::stdout().write_all(contents).or_fail(DATA),
    }
}

fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(t) = args.threshold {
        config.threshold = t;
    }
    if let Some(models) = args.models {
        config.model_ids = models;
    }
    if let Some(variants) = args.variants {
        config.variants = variants
            .iter()
            .map(|v| v.parse::<EvalVariant>())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure {
                code: CONFIG,
                error: anyhow!(e),
            })?;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    if let Some(url) = args.backend_url {
        config.backend_url = Some(url);
    }
    if let Some(ms) = args.timeout_ms {
        config.request_timeout_ms = ms;
    }
    if let Some(n) = args.retries {
        config.max_retries = n;
    }
    if let Some(n) = args.concurrency {
        config.max_concurrency = n;
    }
    config.validate()?;
    let inputs = config.load_inputs()?;
    let backend = config.backend()?;
    let result = report::run_evaluation(&config, &inputs, backend.as_ref())?;
    let backend_models = backend.models().unwrap_or_default();
    report::write_outputs(&config, &result, &backend_models)?;

    print!("{}", report::render_table2_csv(&report::table2_rows(&result)));
    for model in &result.models {
        if let Some(e) = &model.error {
            eprintln!("warning: {} was not evaluated: {e}", model.model_id);
        }
    }
    eprintln!("outputs written to {}", config.output_dir.display());
    Ok(())
}

fn augment(args: AugmentArgs) -> Result<(), Failure> {
    let examples = mitigation::read_annotated(&read(&args.input)?).or_fail(DATA)?;
    let anonymized: Vec<_> = examples.iter().map(mitigation::anonymize).collect();
    let corpus = if args.no_swap {
        mitigation::build_unaugmented_corpus(&anonymized)
    } else {
        let map = match &args.word_map {
            Some(p) => GenderedWordMap::from_tsv(&read(p)?).or_fail(DATA)?,
            None => GenderedWordMap::default_english(),
        };
        mitigation::build_augmented_corpus(&anonymized, &map)
    }
    .or_fail(DATA)?;
    let mut buf = Vec::new();
    mitigation::write_training_examples(BufWriter::new(&mut buf), &corpus).or_fail(DATA)?;
    write_or_stdout(args.output.as_deref(), &buf)?;
    eprintln!(
        "{} annotated examples, {} training examples",
        examples.len(),
        corpus.len()
    );
    Ok(())
}

fn competency_cmd(args: CompetencyArgs) -> Result<(), Failure> {
    let ballots = competency::parse_label_file(&read(&args.labels)?).or_fail(DATA)?;
    let labels = competency::voted_labels(&ballots);
    match competency::fleiss_kappa::<f64>(&ballots) {
        Ok(k) => eprintln!("fleiss kappa: {k:.4}"),
        Err(e) => eprintln!("fleiss kappa: unavailable ({e})"),
    }
    eprintln!(
        "{} sentences, {} with a majority label",
        ballots.len(),
        labels.len()
    );
    let Some(run_path) = args.run else {
        return Ok(());
    };
    let run: RunResult = serde_json::from_str(&read(&run_path)?)
        .with_context(|| format!("parsing {}", run_path.display()))
        .or_fail(DATA)?;
    let mut columns = Vec::new();
    for model in &run.models {
        if model.person_predictions.is_empty() {
            continue;
        }
        let scoped = labels
            .iter()
            .filter(|(id, _)| model.person_predictions.contains_key(id))
            .map(|(&id, &c)| (id, c))
            .collect();
        let table = competency::competency_table(&scoped, &model.person_predictions)
            .with_context(|| format!("model {}", model.model_id))
            .or_fail(DATA)?;
        columns.push((model.model_id.clone(), table));
    }
    if columns.is_empty() {
        return Err(Failure {
            code: DATA,
            error: anyhow!("{} has no person-probe predictions", run_path.display()),
        });
    }
    write_or_stdout(
        args.out.as_deref(),
        competency::write_table_csv(&columns).as_bytes(),
    )
}

fn chart(args: ChartArgs) -> Result<(), Failure> {
    let mut runs = Vec::new();
    for path in &args.runs {
        let run: RunResult = serde_json::from_str(&read(path)?)
            .with_context(|| format!("parsing {}", path.display()))
            .or_fail(DATA)?;
        runs.push(run);
    }
    report::emit_bias_chart(&runs, &args.out)?;
    Ok(())
}

fn validate_corpus(args: ValidateArgs) -> Result<(), Failure> {
    let lexicon = match &args.lexicon {
        Some(p) => ProfessionLexicon::from_tsv(&read(p)?).or_fail(DATA)?,
        None => ProfessionLexicon::winobias_default(),
    };
    let map = match &args.word_map {
        Some(p) => GenderedWordMap::from_tsv(&read(p)?).or_fail(DATA)?,
        None => GenderedWordMap::default_english(),
    };
    let task = match args.task {
        TaskArg::T1 => Task::T1,
        TaskArg::T2 => Task::T2,
    };
    let (_, audit) = corpus::audit_corpus(&read(&args.pro)?, &read(&args.anti)?, task, &lexicon, &map)
        .or_fail(DATA)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&audit).expect("audit serializes")
    );
    if audit.is_clean() {
        Ok(())
    } else {
        Err(Failure {
            code: DATA,
            error: anyhow!("corpus invariants violated"),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Evaluate(a) => evaluate(a),
        Command::Augment(a) => augment(a),
        Command::Competency(a) => competency_cmd(a),
        Command::Chart(a) => chart(a),
        Command::ValidateCorpus(a) => validate_corpus(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
