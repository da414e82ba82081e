use std::fmt::Write as _;

use serde::Serialize;

/// One CSV row: `metric,value,n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<MetricRow>,
}

impl Report {
    pub fn push(&mut self, metric: impl Into<String>, value: f64, n: usize) {
        self.rows.push(MetricRow {
            metric: metric.into(),
            value,
            n,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,n\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", csv_field(&r.metric), r.value, r.n);
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row of the per-split results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub system: String,
    pub split: String,
    pub wer: f64,
    pub avg_consistency: f64,
    pub consistent_ratio: f64,
}

/// WER (%) / average consistency / consistent ratio (%) per system and split.
pub fn markdown_table(rows: &[SplitSummary]) -> String {
    let mut out = String::from(
        "| System | Split | WER (%) | Avg. consistency | Consistent (%) |\n|---|---|---:|---:|---:|\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {:.1} | {:.3} | {:.1} |",
            r.system,
            r.split,
            100.0 * r.wer,
            r.avg_consistency,
            100.0 * r.consistent_ratio
        );
    }
    out
}
