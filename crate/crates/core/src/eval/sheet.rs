use std::path::{Path, PathBuf};

use super::{io_err, EvalError, RunRecord, RunStatus};

pub const ANNOTATIONS_NAME: &str = "annotations.csv";

pub const SHEET_HEADER: [&str; 12] = [
    "run_id",
    "finding_id",
    "file",
    "line",
    "system_severity",
    "issue",
    "suggestion",
    "valid",
    "actionable",
    "duplicate_of",
    "annotator_severity",
    "usefulness",
];

/// Replaces embedded line breaks with a literal `\n`.
pub fn escape_newlines(s: &str) -> String {
    s.replace("\r\n", "\\n").replace(['\n', '\r'], "\\n")
}

/// Renders the sheet: one row per finding of every ok run, in run order then
/// report order, with annotation columns blank.
pub fn render_annotation_sheet(records: &[RunRecord], runs_dir: &Path) -> Result<String, EvalError> {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.status == RunStatus::Ok).collect();
    if ok.is_empty() {
        return Err(EvalError::NoOkRuns);
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| EvalError::Io {
        path: runs_dir.to_path_buf(),
        source: std::io::Error::other(e),
    };
    w.write_record(SHEET_HEADER).map_err(csv_err)?;
    for rec in ok {
        let Some(report) = rec.load_report(runs_dir)? else { continue };
        for c in &report.findings {
            let line = c.line.to_string();
            w.write_record([
                rec.run_id.as_str(),
                c.id.as_str(),
                c.file.as_str(),
                line.as_str(),
                c.severity.as_str(),
                escape_newlines(&c.issue).as_str(),
                escape_newlines(&c.suggestion).as_str(),
                "",
                "",
                "",
                "",
                "",
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields is utf-8"))
}

pub fn export_annotation_sheet(records: &[RunRecord], runs_dir: &Path, dest: &Path) -> Result<PathBuf, EvalError> {
    let body = render_annotation_sheet(records, runs_dir)?;
    std::fs::write(dest, body).map_err(io_err(dest))?;
    Ok(dest.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newline_escape() {
        assert_eq!(escape_newlines("a\nb\r\nc\rd"), "a\\nb\\nc\\nd");
        assert_eq!(escape_newlines("plain"), "plain");
    }

    #[test]
    fn header_is_exact() {
        assert_eq!(
            SHEET_HEADER.join(","),
            "run_id,finding_id,file,line,system_severity,issue,suggestion,valid,actionable,duplicate_of,annotator_severity,usefulness"
        );
    }

    #[test]
    fn no_ok_runs() {
        assert!(matches!(
            render_annotation_sheet(&[], Path::new(".")),
            Err(EvalError::NoOkRuns)
        ));
    }
}
