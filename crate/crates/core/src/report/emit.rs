use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::svg::Svg;
use super::{EvalVariant, Evaluation, MarginHistogram, ReportError, RunConfig, RunResult};
use super::INCLUSION_THRESHOLD;
use crate::competency;
use crate::metrics::display_value;
use crate::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
}

pub const TABLE2_HEADER: &str =
    "model,variant,task,f1_male_pro,f1_male_anti,f1_female_pro,f1_female_anti,stereo,skew";
pub const TABLE1_HEADER: &str =
    "model,variant,t1_f1_male,t1_f1_female,t2_f1_male,t2_f1_female,included";

/// A bias table row with display-rounded values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub model: String,
    pub variant: String,
    pub task: String,
    pub f1_male_pro: f64,
    pub f1_male_anti: f64,
    pub f1_female_pro: f64,
    pub f1_female_anti: f64,
    pub stereo: f64,
    pub skew: f64,
}

/// A name-baseline row with display-rounded values. Missing tasks are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub model: String,
    pub variant: String,
    pub t1_f1_male: Option<f64>,
    pub t1_f1_female: Option<f64>,
    pub t2_f1_male: Option<f64>,
    pub t2_f1_female: Option<f64>,
    /// Both unrounded T2 values reach the inclusion threshold.
    pub included: Option<bool>,
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::T1 => "T1",
        Task::T2 => "T2",
    }
}

fn eval_order(e: &Evaluation) -> (Task, EvalVariant) {
    (e.task, e.variant)
}

pub fn table2_rows(result: &RunResult) -> Vec<Table2Row> {
    let mut rows = Vec::new();
    for model in &result.models {
        let mut evals: Vec<&Evaluation> = model.evaluations.iter().collect();
        evals.sort_by_key(|e| eval_order(e));
        for e in evals {
            let [mp, ma, fp, fa, stereo, skew] = e.report.display_row();
            rows.push(Table2Row {
                model: model.model_id.clone(),
                variant: e.variant.as_str().to_string(),
                task: task_name(e.task).to_string(),
                f1_male_pro: mp,
                f1_male_anti: ma,
                f1_female_pro: fp,
                f1_female_anti: fa,
                stereo,
                skew,
            });
        }
    }
    rows
}

pub fn table1_rows(result: &RunResult) -> Vec<Table1Row> {
    let mut rows = Vec::new();
    for model in &result.models {
        for variant in [EvalVariant::Standard, EvalVariant::Online] {
            let t1 = model.baseline(variant, Task::T1);
            let t2 = model.baseline(variant, Task::T2);
            if t1.is_none() && t2.is_none() {
                continue;
            }
            rows.push(Table1Row {
                model: model.model_id.clone(),
                variant: variant.as_str().to_string(),
                t1_f1_male: t1.map(|b| display_value(b.f1_male)),
                t1_f1_female: t1.map(|b| display_value(b.f1_female)),
                t2_f1_male: t2.map(|b| display_value(b.f1_male)),
                t2_f1_female: t2.map(|b| display_value(b.f1_female)),
                included: t2
                    .map(|b| b.f1_male >= INCLUSION_THRESHOLD && b.f1_female >= INCLUSION_THRESHOLD),
            });
        }
    }
    rows
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn num(x: f64) -> String {
    format!("{x:.1}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn render_table2_csv(rows: &[Table2Row]) -> String {
    let mut out = format!("{TABLE2_HEADER}\n");
    for r in rows {
        let cells = [
            csv_field(&r.model),
            r.variant.clone(),
            r.task.clone(),
            num(r.f1_male_pro),
            num(r.f1_male_anti),
            num(r.f1_female_pro),
            num(r.f1_female_anti),
            num(r.stereo),
            num(r.skew),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn render_table2_json(rows: &[Table2Row]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
    s.push('\n');
    s
}

pub fn render_table1_csv(rows: &[Table1Row]) -> String {
    let mut out = format!("{TABLE1_HEADER}\n");
    for r in rows {
        let cells = [
            csv_field(&r.model),
            r.variant.clone(),
            opt_num(r.t1_f1_male),
            opt_num(r.t1_f1_female),
            opt_num(r.t2_f1_male),
            opt_num(r.t2_f1_female),
            r.included.map(|b| b.to_string()).unwrap_or_default(),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<PathBuf, ReportError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| ReportError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| ReportError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Writes `table2` (bias metrics) and, when a name baseline ran, `table1`
/// into `dir`. Values are rounded to one decimal here and nowhere earlier.
pub fn emit_tables(
    result: &RunResult,
    dir: &Path,
    format: TableFormat,
) -> Result<Vec<PathBuf>, ReportError> {
    let t2 = table2_rows(result);
    let t1 = table1_rows(result);
    let mut written = Vec::new();
    match format {
        TableFormat::Csv => {
            written.push(write_file(&dir.join("table2.csv"), &render_table2_csv(&t2))?);
            if !t1.is_empty() {
                written.push(write_file(&dir.join("table1.csv"), &render_table1_csv(&t1))?);
            }
        }
        TableFormat::Json => {
            written.push(write_file(&dir.join("table2.json"), &render_table2_json(&t2))?);
            if !t1.is_empty() {
                let mut s = serde_json::to_string_pretty(&t1).expect("rows serialize");
                s.push('\n');
                written.push(write_file(&dir.join("table1.json"), &s)?);
            }
        }
    }
    Ok(written)
}

pub fn render_histogram_csv(h: &MarginHistogram) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let (lo, hi) = h.bin_edges(i);
        out.push_str(&format!("{lo:.2},{hi:.2},{c}\n"));
    }
    out
}

const PLOT_LEFT: f64 = 60.0;
const PLOT_TOP: f64 = 40.0;
const PLOT_WIDTH: f64 = 560.0;
const PLOT_HEIGHT: f64 = 300.0;

/// Bar chart of margin counts with a dashed marker at `threshold`.
pub fn render_histogram_svg(h: &MarginHistogram, threshold: f64, title: &str) -> String {
    let mut svg = Svg::new(PLOT_LEFT + PLOT_WIDTH + 20.0, PLOT_TOP + PLOT_HEIGHT + 60.0);
    let bottom = PLOT_TOP + PLOT_HEIGHT;
    svg.text(PLOT_LEFT + PLOT_WIDTH / 2.0, 24.0, "middle", 14, title);
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bin_w = PLOT_WIDTH / h.counts.len() as f64;
    for (i, &c) in h.counts.iter().enumerate() {
        let height = PLOT_HEIGHT * c as f64 / max;
        svg.rect(
            PLOT_LEFT + i as f64 * bin_w,
            bottom - height,
            bin_w,
            height,
            "#4c72b0",
            &format!(r#" stroke="white" data-bin="{i}" data-count="{c}""#),
        );
    }
    svg.line(PLOT_LEFT, bottom, PLOT_LEFT + PLOT_WIDTH, bottom, "black", "");
    svg.line(PLOT_LEFT, PLOT_TOP, PLOT_LEFT, bottom, "black", "");
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let x = PLOT_LEFT + v * PLOT_WIDTH;
        svg.line(x, bottom, x, bottom + 5.0, "black", "");
        svg.text(x, bottom + 18.0, "middle", 11, &format!("{v:.1}"));
    }
    svg.text(PLOT_LEFT - 8.0, PLOT_TOP + 4.0, "end", 11, &format!("{}", max as usize));
    svg.text(PLOT_LEFT - 8.0, bottom + 4.0, "end", 11, "0");
    let tx = PLOT_LEFT + threshold.clamp(0.0, 1.0) * PLOT_WIDTH;
    svg.line(
        tx,
        PLOT_TOP,
        tx,
        bottom,
        "#c44e52",
        &format!(r#" stroke-width="2" stroke-dasharray="6 4" data-threshold="{threshold}""#),
    );
    svg.text(
        PLOT_LEFT + PLOT_WIDTH / 2.0,
        bottom + 40.0,
        "middle",
        12,
        "|P(male) - P(female)|",
    );
    svg.finish()
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `histogram_<model>_<variant>_<task>.{svg,csv}` for one evaluation.
pub fn emit_histogram(
    model: &str,
    evaluation: &Evaluation,
    threshold: f64,
    dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let stem = format!(
        "histogram_{}_{}_{}",
        file_stem(model),
        evaluation.variant.as_str(),
        task_name(evaluation.task)
    );
    let title = format!(
        "{model} {} {}: pronoun probability margins",
        evaluation.variant.as_str(),
        task_name(evaluation.task)
    );
    Ok(vec![
        write_file(
            &dir.join(format!("{stem}.svg")),
            &render_histogram_svg(&evaluation.histogram, threshold, &title),
        )?,
        write_file(
            &dir.join(format!("{stem}.csv")),
            &render_histogram_csv(&evaluation.histogram),
        )?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasChartEntry {
    pub label: String,
    pub skew: f64,
    pub stereo: f64,
}

/// One entry per model and scoring variant, from T2 when it was evaluated
/// and T1 otherwise. Online rows get an `-O` suffix.
pub fn bias_chart_entries(results: &[RunResult]) -> Vec<BiasChartEntry> {
    let mut entries = Vec::new();
    for result in results {
        for model in &result.models {
            for variant in [EvalVariant::Standard, EvalVariant::Online] {
                let e = model
                    .evaluation(variant, Task::T2)
                    .or_else(|| model.evaluation(variant, Task::T1));
                if let Some(e) = e {
                    let suffix = if variant == EvalVariant::Online { "-O" } else { "" };
                    entries.push(BiasChartEntry {
                        label: format!("{}{suffix}", model.model_id),
                        skew: e.report.mu_skew,
                        stereo: e.report.mu_stereo,
                    });
                }
            }
        }
    }
    entries
}

/// Grouped skew/stereotype bars per entry, sorted by skew descending. Bar
/// heights are proportional to the values on a fixed 0-100 scale.
pub fn render_bias_chart(entries: &[BiasChartEntry]) -> String {
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| {
        b.skew
            .total_cmp(&a.skew)
            .then_with(|| a.label.cmp(&b.label))
    });
    let group_w = 60.0;
    let bar_w = 22.0;
    let width = PLOT_LEFT + group_w * sorted.len().max(1) as f64 + 140.0;
    let mut svg = Svg::new(width, PLOT_TOP + PLOT_HEIGHT + 110.0);
    let bottom = PLOT_TOP + PLOT_HEIGHT;
    let scale = PLOT_HEIGHT / 100.0;
    svg.text(width / 2.0, 24.0, "middle", 14, "Bias of masked language models");
    for tick in 0..=5 {
        let v = tick as f64 * 20.0;
        let y = bottom - v * scale;
        svg.line(PLOT_LEFT - 5.0, y, PLOT_LEFT, y, "black", "");
        svg.text(PLOT_LEFT - 8.0, y + 4.0, "end", 11, &format!("{v:.0}"));
    }
    let series = [("skew", "#4c72b0"), ("stereo", "#dd8452")];
    for (i, entry) in sorted.iter().enumerate() {
        let x0 = PLOT_LEFT + i as f64 * group_w + (group_w - 2.0 * bar_w) / 2.0;
        for (j, (metric, color)) in series.iter().enumerate() {
            let value = if j == 0 { entry.skew } else { entry.stereo };
            let height = value.max(0.0) * scale;
            svg.rect(
                x0 + j as f64 * bar_w,
                bottom - height,
                bar_w,
                height,
                color,
                &format!(
                    r#" data-label="{}" data-metric="{metric}" data-value="{value:.4}""#,
                    super::svg::escape(&entry.label)
                ),
            );
        }
        svg.rotated_text(x0 + bar_w, bottom + 14.0, -45, 11, &entry.label);
    }
    svg.line(PLOT_LEFT, PLOT_TOP, PLOT_LEFT, bottom, "black", "");
    svg.line(
        PLOT_LEFT,
        bottom,
        PLOT_LEFT + group_w * sorted.len().max(1) as f64,
        bottom,
        "black",
        "",
    );
    let legend_x = PLOT_LEFT + group_w * sorted.len().max(1) as f64 + 20.0;
    for (j, (metric, color)) in series.iter().enumerate() {
        let y = PLOT_TOP + 20.0 * j as f64;
        svg.rect(legend_x, y, 12.0, 12.0, color, "");
        let name = if *metric == "skew" { "Skew" } else { "Stereotype" };
        svg.text(legend_x + 18.0, y + 11.0, "start", 12, name);
    }
    svg.finish()
}

pub fn emit_bias_chart(results: &[RunResult], path: &Path) -> Result<PathBuf, ReportError> {
    write_file(path, &render_bias_chart(&bias_chart_entries(results)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestFile {
    path: String,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestModel {
    model_id: String,
    evaluated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    tool_version: String,
    config_hash: String,
    threshold: f64,
    models: Vec<ManifestModel>,
    /// Models the backend reported serving.
    backend_models: Vec<String>,
    files: Vec<ManifestFile>,
}

/// Writes every output of a run under `config.output_dir`:
/// `tables/`, `figures/`, `raw/` and `manifest.json`. Returns the written
/// paths relative to the output directory, in a fixed order.
pub fn write_outputs(
    config: &RunConfig,
    result: &RunResult,
    backend_models: &[String],
) -> Result<Vec<PathBuf>, ReportError> {
    let root = &config.output_dir;
    let tables = root.join("tables");
    let figures = root.join("figures");
    let raw = root.join("raw");
    let mut written = Vec::new();
    written.extend(emit_tables(result, &tables, TableFormat::Csv)?);
    written.extend(emit_tables(result, &tables, TableFormat::Json)?);

    let competency_columns: Vec<_> = result
        .models
        .iter()
        .filter_map(|m| m.competency.clone().map(|t| (m.model_id.clone(), t)))
        .collect();
    if !competency_columns.is_empty() {
        written.push(write_file(
            &tables.join("competency.csv"),
            &competency::write_table_csv(&competency_columns),
        )?);
    }

    for model in &result.models {
        let mut evals: Vec<&Evaluation> = model.evaluations.iter().collect();
        evals.sort_by_key(|e| eval_order(e));
        for e in evals {
            written.extend(emit_histogram(&model.model_id, e, result.threshold, &figures)?);
        }
    }
    written.push(emit_bias_chart(std::slice::from_ref(result), &figures.join("bias_chart.svg"))?);

    let mut run_json = serde_json::to_string_pretty(result).expect("result serializes");
    run_json.push('\n');
    written.push(write_file(&raw.join("run_result.json"), &run_json)?);
    for model in &result.models {
        let mut lines = String::new();
        let mut evals: Vec<&Evaluation> = model.evaluations.iter().collect();
        evals.sort_by_key(|e| eval_order(e));
        for e in evals {
            for item in &e.items {
                let record = serde_json::json!({
                    "variant": e.variant.as_str(),
                    "task": task_name(e.task),
                    "item": item,
                });
                lines.push_str(&serde_json::to_string(&record).expect("item serializes"));
                lines.push('\n');
            }
        }
        written.push(write_file(
            &raw.join(format!("{}.jsonl", file_stem(&model.model_id))),
            &lines,
        )?);
    }

    let mut files = Vec::new();
    for path in &written {
        let bytes = fs::read(path).map_err(|e| ReportError::io(path, e))?;
        files.push(ManifestFile {
            path: relative(root, path),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        threshold: result.threshold,
        models: result
            .models
            .iter()
            .map(|m| ManifestModel {
                model_id: m.model_id.clone(),
                evaluated: m.error.is_none(),
                error: m.error.clone(),
            })
            .collect(),
        backend_models: backend_models.to_vec(),
        files,
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_json.push('\n');
    written.push(write_file(&root.join("manifest.json"), &manifest_json)?);
    Ok(written
        .iter()
        .map(|p| PathBuf::from(relative(root, p)))
        .collect())
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{Confusion, GenderConfusion};
    use crate::report::ModelResult;
    use std::collections::BTreeMap;

    fn evaluation(variant: EvalVariant, task: Task, pro: GenderConfusion, anti: GenderConfusion) -> Evaluation {
        Evaluation {
            variant,
            task,
            report: crate::metrics::BiasReport::from_confusions(&pro, &anti),
            histogram: MarginHistogram::default(),
            failed_items: 0,
            items: Vec::new(),
        }
    }

    fn model(id: &str, evaluations: Vec<Evaluation>) -> ModelResult {
        ModelResult {
            model_id: id.into(),
            error: None,
            evaluations,
            baseline: Vec::new(),
            included: None,
            person_predictions: BTreeMap::new(),
            competency: None,
        }
    }

    fn confusion(m: (usize, usize, usize), f: (usize, usize, usize)) -> GenderConfusion {
        let c = |(tp, fp, fn_)| Confusion { tp, fp, fn_ };
        GenderConfusion {
            male: c(m),
            female: c(f),
            n_total: m.0 + m.2 + f.0 + f.2,
            n_abstained: 0,
        }
    }

    #[test]
    fn empty_result_gives_header_only() {
        let r = RunResult {
            threshold: 0.1,
            models: Vec::new(),
            competency_kappa: None,
        };
        assert_eq!(render_table2_csv(&table2_rows(&r)), format!("{TABLE2_HEADER}\n"));
        assert_eq!(render_table2_json(&table2_rows(&r)), "[]\n");
    }

    #[test]
    fn csv_and_json_carry_the_same_numbers() {
        // Male tp=2 fp=1 fn=1 and female tp=1 fp=1 fn=1 on pro; all wrong on anti.
        let pro = confusion((2, 1, 1), (1, 1, 1));
        let anti = confusion((0, 2, 2), (0, 2, 2));
        let r = RunResult {
            threshold: 0.1,
            models: vec![model("m,1", vec![evaluation(EvalVariant::Standard, Task::T2, pro, anti)])],
            competency_kappa: None,
        };
        let rows = table2_rows(&r);
        let csv = render_table2_csv(&rows);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "\"m,1\",standard,T2,66.7,0.0,50.0,0.0,58.3,8.3"
        );
        let back: Vec<Table2Row> = serde_json::from_str(&render_table2_json(&rows)).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn histogram_svg_marks_threshold() {
        let h = MarginHistogram::from_margins([0.95; 7]);
        let svg = render_histogram_svg(&h, 0.1, "t");
        assert!(svg.contains(r#"data-threshold="0.1""#));
        assert!(svg.contains(r#"data-bin="19" data-count="7""#));
        assert_eq!(svg.matches("data-count=\"0\"").count(), 19);
        let csv = render_histogram_csv(&h);
        assert_eq!(csv.lines().count(), 21);
        assert_eq!(csv.lines().last().unwrap(), "0.95,1.00,7");
    }

    #[test]
    fn bias_chart_sorted_by_skew() {
        let entries = vec![
            BiasChartEntry { label: "RoBERTa".into(), skew: 9.2, stereo: 32.8 },
            BiasChartEntry { label: "BERT".into(), skew: 43.8, stereo: 17.3 },
        ];
        let svg = render_bias_chart(&entries);
        let bert = svg.find(r#"data-label="BERT""#).unwrap();
        let roberta = svg.find(r#"data-label="RoBERTa""#).unwrap();
        assert!(bert < roberta);
        assert!(svg.contains(r##"height="131.40" fill="#4c72b0" data-label="BERT""##));
    }

    #[test]
    fn zero_metrics_still_draw_bars() {
        let svg = render_bias_chart(&[BiasChartEntry { label: "flat".into(), skew: 0.0, stereo: 0.0 }]);
        assert_eq!(svg.matches(r#"data-label="flat""#).count(), 2);
        assert!(svg.contains(r#"height="0.00""#));
        assert!(svg.contains(">flat</text>"));
    }
}
