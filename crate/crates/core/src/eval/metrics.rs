use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use num_rational::Ratio;
use serde::Serialize;

use super::{io_err, load_runs_index, EvalError, RunRecord, RunStatus, SHEET_HEADER};
use crate::model::{ReviewMode, ReviewReport, Severity};

pub const TOP_K_USEFULNESS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Yes,
    No,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRow {
    /// Line number in the CSV file (header is line 1).
    pub row: u64,
    pub run_id: String,
    pub finding_id: String,
    pub file: String,
    pub line: u32,
    pub system_severity: Severity,
    pub issue: String,
    pub suggestion: String,
    pub valid: Option<Validity>,
    pub actionable: Option<bool>,
    pub duplicate_of: Option<String>,
    pub annotator_severity: Option<Severity>,
    pub usefulness: Option<u8>,
}

impl AnnotationRow {
    /// A row counts as annotated once its `valid` column is filled.
    pub fn is_annotated(&self) -> bool {
        self.valid.is_some()
    }
}

fn row_err(row: u64, column: &str, message: impl Into<String>) -> EvalError {
    EvalError::Row {
        row,
        column: Some(column.to_string()),
        message: message.into(),
    }
}

fn parse_row(row: u64, rec: &csv::StringRecord) -> Result<AnnotationRow, EvalError> {
    if rec.len() != SHEET_HEADER.len() {
        return Err(EvalError::Row {
            row,
            column: None,
            message: format!("expected {} columns, found {}", SHEET_HEADER.len(), rec.len()),
        });
    }
    let cell = |i: usize| rec.get(i).unwrap_or("").trim();
    let blank = |s: &str| if s.is_empty() { None } else { Some(s.to_string()) };
    let line = cell(3)
        .parse::<u32>()
        .map_err(|_| row_err(row, "line", format!("not a line number: {:?}", cell(3))))?;
    let system_severity = cell(4)
        .parse::<Severity>()
        .map_err(|_| row_err(row, "system_severity", format!("unknown severity {:?}", cell(4))))?;
    let valid = match cell(7).to_ascii_lowercase().as_str() {
        "" => None,
        "yes" => Some(Validity::Yes),
        "no" => Some(Validity::No),
        "unsure" => Some(Validity::Unsure),
        other => return Err(row_err(row, "valid", format!("expected yes, no or unsure, got {other:?}"))),
    };
    let actionable = match cell(8).to_ascii_lowercase().as_str() {
        "" => None,
        "yes" => Some(true),
        "no" => Some(false),
        other => return Err(row_err(row, "actionable", format!("expected yes or no, got {other:?}"))),
    };
    let annotator_severity = match cell(10) {
        "" => None,
        s => Some(
            s.to_ascii_lowercase()
                .parse::<Severity>()
                .map_err(|_| row_err(row, "annotator_severity", format!("unknown severity {s:?}")))?,
        ),
    };
    let usefulness = match cell(11) {
        "" => None,
        s => match s.parse::<u8>() {
            Ok(n @ 1..=5) => Some(n),
            _ => return Err(row_err(row, "usefulness", format!("expected an integer 1-5, got {s:?}"))),
        },
    };
    let run_id = cell(0).to_string();
    let finding_id = cell(1).to_string();
    if run_id.is_empty() {
        return Err(row_err(row, "run_id", "empty"));
    }
    if finding_id.is_empty() {
        return Err(row_err(row, "finding_id", "empty"));
    }
    Ok(AnnotationRow {
        row,
        run_id,
        finding_id,
        file: cell(2).to_string(),
        line,
        system_severity,
        issue: rec.get(5).unwrap_or("").to_string(),
        suggestion: rec.get(6).unwrap_or("").to_string(),
        valid,
        actionable,
        duplicate_of: blank(cell(9)),
        annotator_severity,
        usefulness,
    })
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRow>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| EvalError::Row {
        row: 1,
        column: None,
        message: e.to_string(),
    })?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found.is_empty() || (found.len() == 1 && found[0].is_empty()) {
        return Err(EvalError::NoRows);
    }
    if found != SHEET_HEADER {
        return Err(EvalError::Row {
            row: 1,
            column: None,
            message: format!("header must be {}", SHEET_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| EvalError::Row {
            row: e.position().map(|p| p.line()).unwrap_or(0),
            column: None,
            message: e.to_string(),
        })?;
        let row = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        rows.push(parse_row(row, &rec)?);
    }
    if rows.is_empty() {
        return Err(EvalError::NoRows);
    }
    Ok(rows)
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRow>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_annotations(&text)
}

/// Numerator over denominator; undefined when the denominator is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn value(self) -> Option<Ratio<u64>> {
        (self.den > 0).then(|| Ratio::new(self.num, self.den))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub mode: ReviewMode,
    pub n_runs: u64,
    pub n_findings: u64,
    pub n_annotated: u64,
    pub n_unsure: u64,
    pub precision: Fraction,
    pub actionable_rate: Fraction,
    pub duplicate_rate: Fraction,
    pub severity_agreement: Fraction,
    pub top5_usefulness: Option<Ratio<u64>>,
    /// Runs contributing to `top5_usefulness`.
    pub top5_runs: u64,
    pub mean_runtime_s: Option<f64>,
    pub mean_cost_usd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Pools annotations per mode. Every row must reference a finding of an ok
/// run in `records`.
pub fn aggregate(
    rows: &[AnnotationRow],
    records: &[RunRecord],
    runs_dir: &Path,
) -> Result<MetricsTable, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::NoRows);
    }
    let mut reports: HashMap<&str, (&RunRecord, ReviewReport)> = HashMap::new();
    for rec in records.iter().filter(|r| r.status == RunStatus::Ok) {
        if let Some(report) = rec.load_report(runs_dir)? {
            reports.insert(rec.run_id.as_str(), (rec, report));
        }
    }
    let mut ids: HashMap<&str, HashSet<&str>> = HashMap::new();
    for (run, (_, report)) in &reports {
        ids.insert(run, report.findings.iter().map(|c| c.id.as_str()).collect());
    }
    for r in rows {
        let Some(known) = ids.get(r.run_id.as_str()) else {
            return Err(row_err(r.row, "run_id", format!("unknown run {:?}", r.run_id)));
        };
        if !known.contains(r.finding_id.as_str()) {
            return Err(row_err(
                r.row,
                "finding_id",
                format!("{:?} is not a finding of run {}", r.finding_id, r.run_id),
            ));
        }
        if let Some(d) = &r.duplicate_of {
            if !known.contains(d.as_str()) {
                return Err(row_err(r.row, "duplicate_of", format!("{d:?} is not a finding of run {}", r.run_id)));
            }
            if *d == r.finding_id {
                return Err(row_err(r.row, "duplicate_of", "a finding cannot duplicate itself"));
            }
        }
    }

    let mut by_mode: BTreeMap<ReviewMode, Vec<&AnnotationRow>> = BTreeMap::new();
    for r in rows {
        by_mode.entry(reports[r.run_id.as_str()].0.mode).or_default().push(r);
    }
    let modes: Vec<ReviewMode> = ReviewMode::ALL
        .into_iter()
        .filter(|m| records.iter().any(|r| r.mode == *m))
        .collect();

    let mut out = Vec::new();
    for mode in modes {
        let mode_rows = by_mode.get(&mode).cloned().unwrap_or_default();
        let ok_runs: Vec<&RunRecord> = records
            .iter()
            .filter(|r| r.mode == mode && r.status == RunStatus::Ok)
            .collect();
        let annotated: Vec<&&AnnotationRow> = mode_rows.iter().filter(|r| r.is_annotated()).collect();
        let count = |f: &dyn Fn(&AnnotationRow) -> bool| mode_rows.iter().filter(|r| f(r)).count() as u64;

        let yes = count(&|r| r.valid == Some(Validity::Yes));
        let no = count(&|r| r.valid == Some(Validity::No));
        let n_annotated = annotated.len() as u64;
        let precision = Fraction { num: yes, den: yes + no };
        let actionable_rate = Fraction {
            num: annotated.iter().filter(|r| r.actionable == Some(true)).count() as u64,
            den: n_annotated,
        };
        let duplicate_rate = Fraction {
            num: annotated.iter().filter(|r| r.duplicate_of.is_some()).count() as u64,
            den: n_annotated,
        };
        let severity_agreement = Fraction {
            num: count(&|r| r.annotator_severity == Some(r.system_severity)),
            den: count(&|r| r.annotator_severity.is_some()),
        };

        let mut per_run: Vec<Ratio<u64>> = Vec::new();
        for rec in &ok_runs {
            let Some((_, report)) = reports.get(rec.run_id.as_str()) else { continue };
            let top: HashSet<&str> = report
                .findings
                .iter()
                .take(TOP_K_USEFULNESS)
                .map(|c| c.id.as_str())
                .collect();
            let scores: Vec<u64> = mode_rows
                .iter()
                .filter(|r| r.run_id == rec.run_id && top.contains(r.finding_id.as_str()))
                .filter_map(|r| r.usefulness.map(u64::from))
                .collect();
            if !scores.is_empty() {
                per_run.push(Ratio::new(scores.iter().sum(), scores.len() as u64));
            }
        }
        let top5_usefulness = (!per_run.is_empty())
            .then(|| per_run.iter().fold(Ratio::from_integer(0), |a, b| a + b) / Ratio::from_integer(per_run.len() as u64));

        let stats: Vec<_> = ok_runs.iter().filter_map(|r| r.stats.as_ref()).collect();
        out.push(MetricsRow {
            mode,
            n_runs: ok_runs.len() as u64,
            n_findings: mode_rows.len() as u64,
            n_annotated,
            n_unsure: count(&|r| r.valid == Some(Validity::Unsure)),
            precision,
            actionable_rate,
            duplicate_rate,
            severity_agreement,
            top5_usefulness,
            top5_runs: per_run.len() as u64,
            mean_runtime_s: mean(&stats.iter().map(|s| s.duration_s).collect::<Vec<_>>()),
            mean_cost_usd: mean(&stats.iter().map(|s| s.est_cost_usd).collect::<Vec<_>>()),
        });
    }
    Ok(MetricsTable { rows: out })
}

/// Reads `annotations` and `{runs_dir}/runs.json`, then aggregates.
pub fn aggregate_files(annotations: &Path, runs_dir: &Path) -> Result<MetricsTable, EvalError> {
    let rows = read_annotations(annotations)?;
    let records = load_runs_index(runs_dir)?;
    aggregate(&rows, &records, runs_dir)
}

/// Decimal rendering of an exact ratio, rounding half away from zero.
pub fn format_ratio(r: Ratio<u64>, decimals: u32) -> String {
    let scale = 10u128.pow(decimals);
    let (n, d) = (*r.numer() as u128, *r.denom() as u128);
    let scaled = (n * scale * 2 + d) / (2 * d);
    let (int, frac) = (scaled / scale, scaled % scale);
    if decimals == 0 {
        int.to_string()
    } else {
        format!("{int}.{frac:0width$}", width = decimals as usize)
    }
}

pub const METRICS_CSV_HEADER: [&str; 10] = [
    "mode",
    "n_runs",
    "n_findings",
    "precision",
    "actionable_rate",
    "duplicate_rate",
    "severity_agreement",
    "top5_usefulness",
    "mean_runtime_s",
    "mean_cost_usd",
];

const UNDEFINED_CSV: &str = "—";
const UNDEFINED_TEX: &str = "--";

struct Cells {
    precision: Option<String>,
    actionable: Option<String>,
    duplicate: Option<String>,
    agreement: Option<String>,
    top5: Option<String>,
    runtime: Option<String>,
    cost: Option<String>,
}

fn cells(row: &MetricsRow) -> Cells {
    let rate = |f: Fraction| f.value().map(|v| format_ratio(v, 3));
    Cells {
        precision: rate(row.precision),
        actionable: rate(row.actionable_rate),
        duplicate: rate(row.duplicate_rate),
        agreement: rate(row.severity_agreement),
        top5: row.top5_usefulness.map(|v| format_ratio(v, 3)),
        runtime: row.mean_runtime_s.map(|v| format!("{v:.1}")),
        cost: row.mean_cost_usd.map(|v| format!("{v:.4}")),
    }
}

pub fn render_metrics_csv(table: &MetricsTable) -> String {
    let mut out = METRICS_CSV_HEADER.join(",");
    out.push('\n');
    for row in &table.rows {
        let c = cells(row);
        let fields = [
            row.mode.to_string(),
            row.n_runs.to_string(),
            row.n_findings.to_string(),
            c.precision.unwrap_or_else(|| UNDEFINED_CSV.into()),
            c.actionable.unwrap_or_else(|| UNDEFINED_CSV.into()),
            c.duplicate.unwrap_or_else(|| UNDEFINED_CSV.into()),
            c.agreement.unwrap_or_else(|| UNDEFINED_CSV.into()),
            c.top5.unwrap_or_else(|| UNDEFINED_CSV.into()),
            c.runtime.unwrap_or_else(|| UNDEFINED_CSV.into()),
            c.cost.unwrap_or_else(|| UNDEFINED_CSV.into()),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct Denominators {
    precision: u64,
    actionable_rate: u64,
    duplicate_rate: u64,
    severity_agreement: u64,
    top5_usefulness: u64,
}

#[derive(Serialize)]
struct JsonRow {
    mode: ReviewMode,
    n_runs: u64,
    n_findings: u64,
    precision: Option<f64>,
    actionable_rate: Option<f64>,
    duplicate_rate: Option<f64>,
    severity_agreement: Option<f64>,
    top5_usefulness: Option<f64>,
    mean_runtime_s: Option<f64>,
    mean_cost_usd: Option<f64>,
    n_annotated: u64,
    n_unsure: u64,
    denominators: Denominators,
}

fn to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn render_metrics_json(table: &MetricsTable) -> String {
    let rows: Vec<JsonRow> = table
        .rows
        .iter()
        .map(|r| JsonRow {
            mode: r.mode,
            n_runs: r.n_runs,
            n_findings: r.n_findings,
            precision: r.precision.value().map(to_f64),
            actionable_rate: r.actionable_rate.value().map(to_f64),
            duplicate_rate: r.duplicate_rate.value().map(to_f64),
            severity_agreement: r.severity_agreement.value().map(to_f64),
            top5_usefulness: r.top5_usefulness.map(to_f64),
            mean_runtime_s: r.mean_runtime_s,
            mean_cost_usd: r.mean_cost_usd,
            n_annotated: r.n_annotated,
            n_unsure: r.n_unsure,
            denominators: Denominators {
                precision: r.precision.den,
                actionable_rate: r.actionable_rate.den,
                duplicate_rate: r.duplicate_rate.den,
                severity_agreement: r.severity_agreement.den,
                top5_usefulness: r.top5_runs,
            },
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&rows).expect("metrics serialize");
    s.push('\n');
    s
}

fn tex_escape(s: &str) -> String {
    s.replace('_', "\\_")
}

pub fn render_metrics_tex(table: &MetricsTable) -> String {
    let mut out = String::new();
    out.push_str("\\begin{tabular}{lrrrrrrrrr}\n\\toprule\n");
    out.push_str(
        "Mode & Runs & Findings & Precision & Actionable & Duplicate & Sev.\\ agreement & Top-5 usefulness & Runtime (s) & Cost (USD) \\\\\n",
    );
    out.push_str("\\midrule\n");
    for row in &table.rows {
        let c = cells(row);
        let u = |v: Option<String>| v.unwrap_or_else(|| UNDEFINED_TEX.into());
        out.push_str(&format!(
            "{} & {} & {} & {} & {} & {} & {} & {} & {} & {} \\\\\n",
            tex_escape(row.mode.as_str()),
            row.n_runs,
            row.n_findings,
            u(c.precision),
            u(c.actionable),
            u(c.duplicate),
            u(c.agreement),
            u(c.top5),
            u(c.runtime),
            u(c.cost),
        ));
    }
    out.push_str("\\bottomrule\n\\end{tabular}\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsPaths {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub tex: PathBuf,
}

pub fn export_metrics(table: &MetricsTable, out_dir: &Path) -> Result<MetricsPaths, EvalError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let write = |name: &str, body: String| -> Result<PathBuf, EvalError> {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(io_err(&path))?;
        Ok(path)
    };
    Ok(MetricsPaths {
        csv: write("metrics.csv", render_metrics_csv(table))?,
        json: write("metrics.json", render_metrics_json(table))?,
        tex: write("metrics.tex", render_metrics_tex(table))?,
    })
}
