use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::metrics::MetricName;
use super::report::EvalReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub value: Option<f64>,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub cells: Vec<ComparisonCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub prompt_set_digest: String,
    pub columns: Vec<MetricName>,
    pub rows: Vec<ComparisonRow>,
}

/// Tabulates labelled reports over the same prompt set. With two or more
/// rows the best available value of each column is marked; ties mark all.
pub fn compare(reports: &[(String, EvalReport)]) -> Result<ComparisonTable> {
    let Some((_, first)) = reports.first() else {
        return Err(Error::config("reports", "nothing to compare"));
    };
    for (label, r) in reports {
        if r.prompt_set_digest != first.prompt_set_digest {
            return Err(Error::Consistency(format!(
                "report `{label}` was computed on a different prompt set ({} vs {})",
                r.prompt_set_digest, first.prompt_set_digest
            )));
        }
    }
    let columns: Vec<MetricName> = reports
        .iter()
        .flat_map(|(_, r)| r.metrics.iter().map(|m| m.metric))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|(label, r)| ComparisonRow {
            label: label.clone(),
            cells: columns
                .iter()
                .map(|&c| ComparisonCell {
                    value: r.value(c),
                    best: false,
                })
                .collect(),
        })
        .collect();
    if rows.len() >= 2 {
        for (j, col) in columns.iter().enumerate() {
            let vals = rows.iter().filter_map(|r| r.cells[j].value);
            let best = if col.lower_is_better() {
                vals.fold(None, |b: Option<f64>, v| Some(b.map_or(v, |b| b.min(v))))
            } else {
                vals.fold(None, |b: Option<f64>, v| Some(b.map_or(v, |b| b.max(v))))
            };
            if let Some(best) = best {
                for row in &mut rows {
                    row.cells[j].best = row.cells[j].value == Some(best);
                }
            }
        }
    }
    Ok(ComparisonTable {
        prompt_set_digest: first.prompt_set_digest.clone(),
        columns,
        rows,
    })
}

impl ComparisonTable {
    /// Plain-text rendering; best cells carry a trailing `*`.
    pub fn render(&self) -> String {
        let label_w = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut out = format!("{:<label_w$}", "method");
        for c in &self.columns {
            let arrow = if c.lower_is_better() { "↓" } else { "↑" };
            out.push_str(&format!(" {:>13}", format!("{c}{arrow}")));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{:<label_w$}", row.label));
            for cell in &row.cells {
                let s = match cell.value {
                    Some(v) => format!("{v:.4}{}", if cell.best { "*" } else { " " }),
                    None => "n/a ".to_string(),
                };
                out.push_str(&format!(" {s:>13}"));
            }
            out.push('\n');
        }
        out
    }
}
