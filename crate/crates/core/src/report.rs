//! Report files and comparison tables.
//!
//! Evaluation emits one JSON document per (model, setting, mode) cell; the
//! report command joins any number of them into a flat tab-separated table
//! for diffing. Formatting is fixed-precision so identical runs produce
//! byte-identical tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Averaging, MetricsReport};
use crate::model::PredictionMode;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub format_version: u32,
    /// "model/setting", e.g. "cvae/zero-shot/unseen".
    pub label: String,
    pub report: MetricsReport,
}

impl NamedReport {
    pub fn new(label: impl Into<String>, report: MetricsReport) -> Self {
        NamedReport {
            format_version: REPORT_FORMAT_VERSION,
            label: label.into(),
            report,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<NamedReport> {
        let text = std::fs::read_to_string(path)?;
        let report: NamedReport = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("{}: schema mismatch: {e}", path.display())))?;
        if report.format_version != REPORT_FORMAT_VERSION {
            return Err(Error::data(format!(
                "{}: report format {} unsupported",
                path.display(),
                report.format_version
            )));
        }
        Ok(report)
    }
}

fn mode_tag(mode: PredictionMode) -> &'static str {
    match mode {
        PredictionMode::Single => "S",
        PredictionMode::Multi => "M",
    }
}

/// Flat table: one row per report, metric columns per the averaging choice.
pub fn render_table(reports: &[NamedReport], averaging: Averaging) -> String {
    let metric_cols = ["ING", "VERB", "B1", "B4", "MET*"];
    let mut header = vec!["label".to_string(), "mode".to_string(), "k".to_string()];
    let variants: &[&str] = match averaging {
        Averaging::Micro => &["micro"],
        Averaging::Macro => &["macro"],
        Averaging::Both => &["micro", "macro"],
    };
    for variant in variants {
        for col in metric_cols {
            header.push(format!("{col}.{variant}"));
        }
    }
    header.push("TV".to_string());
    let mut lines = vec![header.join("\t")];
    for r in reports {
        let m = &r.report;
        let mut row = vec![
            r.label.clone(),
            mode_tag(m.mode).to_string(),
            m.k.to_string(),
        ];
        for variant in variants {
            for value in [m.ing_recall, m.verb_recall, m.b1, m.b4, m.meteor_like] {
                let v = match *variant {
                    "micro" => value.micro,
                    _ => value.macro_avg,
                };
                row.push(format!("{v:.6}"));
            }
        }
        row.push(
            m.diversity_tv
                .map(|tv| format!("{tv:.6}"))
                .unwrap_or_else(|| "-".to_string()),
        );
        lines.push(row.join("\t"));
    }
    lines.push(String::new());
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricValue;

    fn report(mode: PredictionMode, k: usize, base: f64) -> MetricsReport {
        let v = |x: f64| MetricValue {
            micro: x,
            macro_avg: x / 2.0,
        };
        MetricsReport {
            mode,
            k,
            pairs: 10,
            ing_recall: v(base),
            verb_recall: v(base + 0.1),
            b1: v(base + 0.2),
            b4: v(base / 2.0),
            meteor_like: v(base + 0.05),
            diversity_tv: None,
        }
    }

    #[test]
    fn identical_reports_render_identically() {
        let a = vec![
            NamedReport::new("cvae/seen", report(PredictionMode::Multi, 5, 0.4)),
            NamedReport::new("baseline/seen", report(PredictionMode::Single, 1, 0.3)),
        ];
        let t1 = render_table(&a, Averaging::Both);
        let t2 = render_table(&a, Averaging::Both);
        assert_eq!(t1, t2);
        assert!(t1.contains("ING.micro"));
        assert!(t1.contains("ING.macro"));
        let micro_only = render_table(&a, Averaging::Micro);
        assert!(!micro_only.contains("macro"), "{micro_only}");
    }

    #[test]
    fn report_files_round_trip_and_reject_schema_mismatch() {
        let named = NamedReport::new("x", report(PredictionMode::Multi, 5, 0.4));
        let path = std::env::temp_dir().join(format!("stepcast-report-{}.json", std::process::id()));
        named.save(&path).unwrap();
        let back = NamedReport::load(&path).unwrap();
        assert_eq!(named, back);
        std::fs::write(&path, "{\"oops\": 1}\n").unwrap();
        assert!(NamedReport::load(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
