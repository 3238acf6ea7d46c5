//! Run reports: a versioned machine-readable JSON file plus a static
//! human-readable rendering derived from it. Every number in the rendering
//! comes from the JSON structure.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AgreementMatrix, TutorialSummary, VersionComparison};
use crate::verdicts::SuiteResult;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report {path}: {message}")]
    File { path: String, message: String },
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut temp = path.as_os_str().to_owned();
    temp.push(format!(".tmp.{}", std::process::id()));
    let temp = std::path::PathBuf::from(temp);
    std::fs::write(&temp, bytes)?;
    std::fs::rename(&temp, path)
}

/// RFC 3339 UTC timestamp. `TUTEVAL_EPOCH` (seconds since the Unix epoch)
/// pins it for reproducible output.
pub fn timestamp() -> String {
    let now = std::env::var("TUTEVAL_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now);
    now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub created_at: String,
    pub config_hash: String,
    #[serde(default)]
    pub suites: Vec<SuiteResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<VersionComparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tutorial_summary: Option<TutorialSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<AgreementMatrix>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl Report {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: timestamp(),
            config_hash: config_hash.into(),
            suites: Vec::new(),
            comparisons: Vec::new(),
            tutorial_summary: None,
            agreement: None,
            diagnostics: Vec::new(),
        }
    }
}

pub fn save_report(path: &Path, report: &Report) -> Result<(), ReportError> {
    let json = serde_json::to_string_pretty(report).map_err(|e| ReportError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    write_atomic(path, json.as_bytes()).map_err(|e| ReportError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_report(path: &Path) -> Result<Report, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReportError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let report: Report = serde_json::from_str(&text).map_err(|e| ReportError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(ReportError::File {
            path: path.display().to_string(),
            message: format!("unsupported schema version {}", report.schema_version),
        });
    }
    Ok(report)
}

/// Renders the human-readable report. Purely a view over the machine
/// report: no value appears here that is absent from the JSON.
pub fn render_markdown(report: &Report) -> String {
    let mut out = String::new();
    let push = |out: &mut String, line: &str| {
        out.push_str(line);
        out.push('\n');
    };

    push(&mut out, "# Tutorial clarity report");
    push(&mut out, "");
    push(&mut out, &format!("- Generated: {}", report.created_at));
    push(
        &mut out,
        &format!(
            "- Tool: tuteval {} (report schema {})",
            report.tool_version, report.schema_version
        ),
    );
    push(&mut out, &format!("- Config hash: {}", report.config_hash));

    for suite in &report.suites {
        push(&mut out, "");
        push(
            &mut out,
            &format!(
                "## Suite: {}/{} version {} ({})",
                suite.provider, suite.model, suite.version, suite.mode
            ),
        );
        push(&mut out, "");
        push(&mut out, "| outcome | questions | frames |");
        push(&mut out, "|---|---:|---:|");
        push(
            &mut out,
            &format!(
                "| pass | {} | {} |",
                suite.question_counts.pass, suite.frame_counts.pass
            ),
        );
        push(
            &mut out,
            &format!(
                "| needs-revision | {} | {} |",
                suite.question_counts.needs_revision, suite.frame_counts.needs_revision
            ),
        );
        push(
            &mut out,
            &format!(
                "| fail | {} | {} |",
                suite.question_counts.fail, suite.frame_counts.fail
            ),
        );
        push(&mut out, "");
        push(&mut out, "| frame | tutorial | outcome |");
        push(&mut out, "|---|---:|---|");
        for frame in &suite.frames {
            push(
                &mut out,
                &format!("| {} | {} | {} |", frame.frame_id, frame.tutorial, frame.outcome),
            );
        }
        if !suite.flagged.is_empty() {
            push(&mut out, "");
            push(&mut out, "### Flagged samples");
            for sample in &suite.flagged {
                push(&mut out, "");
                push(
                    &mut out,
                    &format!("#### {} (tutorial {})", sample.frame_id, sample.tutorial),
                );
                push(&mut out, "");
                push(&mut out, &format!("- Image: {}", sample.image.display()));
                push(&mut out, &format!("- Question: {}", sample.question));
                push(&mut out, &format!("- Expectation: {}", sample.expectation));
                push(&mut out, &format!("- Answer: {}", sample.answer));
                push(
                    &mut out,
                    &format!(
                        "- Score: BS: {:.4}, R2: {:.4}",
                        sample.semantic_f1, sample.rouge2_f1
                    ),
                );
            }
        }
    }

    for comparison in &report.comparisons {
        push(&mut out, "");
        push(
            &mut out,
            &format!(
                "## Version comparison: {} to {} ({})",
                comparison.version_previous, comparison.version_latest, comparison.mode
            ),
        );
        if let Some(n) = comparison.common_question_count {
            push(&mut out, "");
            push(&mut out, &format!("Common questions: {n}"));
        }
        push(&mut out, "");
        push(&mut out, "| model | metric | previous | latest | delta | improvement |");
        push(&mut out, "|---|---|---:|---:|---:|---:|");
        for cell in &comparison.cells {
            push(
                &mut out,
                &format!(
                    "| {} | {} | {:.4} | {:.4} | {:+.4} | {:+.2}% |",
                    cell.model,
                    cell.metric,
                    cell.value_previous,
                    cell.value_latest,
                    cell.delta,
                    cell.improvement_pct
                ),
            );
        }
        push(&mut out, "");
        push(
            &mut out,
            &format!(
                "Improvement range: {:+.2}% ({} {}) to {:+.2}% ({} {})",
                comparison.min_improvement.improvement_pct,
                comparison.min_improvement.model,
                comparison.min_improvement.metric,
                comparison.max_improvement.improvement_pct,
                comparison.max_improvement.model,
                comparison.max_improvement.metric
            ),
        );
    }

    if let Some(summary) = &report.tutorial_summary {
        push(&mut out, "");
        push(&mut out, "## Tutorial clarity");
        push(&mut out, "");
        push(&mut out, "| tutorial | rouge1 | rouge2 | rouge_l | bert_score | ranks |");
        push(&mut out, "|---:|---:|---:|---:|---:|---|");
        for row in &summary.rows {
            push(
                &mut out,
                &format!(
                    "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {} |",
                    row.tutorial,
                    row.means[0],
                    row.means[1],
                    row.means[2],
                    row.means[3],
                    row.ranks.map(|r| format!("{r}")).join("/")
                ),
            );
        }
    }

    if let Some(agreement) = &report.agreement {
        push(&mut out, "");
        push(&mut out, "## Model agreement (mean Spearman across metrics)");
        push(&mut out, "");
        let header: Vec<&str> = agreement.models.iter().map(String::as_str).collect();
        push(&mut out, &format!("| model | {} |", header.join(" | ")));
        push(
            &mut out,
            &format!("|---|{}|", header.iter().map(|_| "---:").collect::<Vec<_>>().join("|")),
        );
        for (model, row) in agreement.models.iter().zip(&agreement.values) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            push(&mut out, &format!("| {} | {} |", model, cells.join(" | ")));
        }
    }

    if !report.diagnostics.is_empty() {
        push(&mut out, "");
        push(&mut out, "## Diagnostics");
        push(&mut out, "");
        for diag in &report.diagnostics {
            push(&mut out, &format!("- {diag}"));
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn atomic_write_creates_parents_and_replaces() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("nested/report.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
    }

    #[test]
    fn timestamp_honors_epoch_override() {
        // env vars are process-global; keep this the only test touching it
        std::env::set_var("TUTEVAL_EPOCH", "1700000000");
        let ts = timestamp();
        std::env::remove_var("TUTEVAL_EPOCH");
        assert_eq!(ts, "2023-11-14T22:13:20Z");
    }

    #[test]
    fn report_round_trips_and_renders() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("report.json");
        let report = Report::new("cafebabe");
        save_report(&path, &report).unwrap();
        let loaded = load_report(&path).unwrap();
        assert_eq!(loaded.config_hash, "cafebabe");
        let md = render_markdown(&loaded);
        assert!(md.contains("# Tutorial clarity report"));
        assert!(md.contains("cafebabe"));
    }
}
