//! CSV output: a fixed header, one row per trial, then `# summary` rows.
//!
//! A summary row is
//! `# summary,<group>,<metric>,<n>,<p5>,<p25>,<p50>,<p75>,<p95>,<mean>`
//! over the finite values of `metric` within `group`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use vo_core::synthlab::whisker;

pub const SUMMARY_MARKER: &str = "# summary";

pub fn real(v: f64) -> String {
    format!("{v}")
}

pub struct Table {
    header: &'static [&'static str],
    rows: Vec<Vec<String>>,
    /// (group, metric) → values, in insertion order of first appearance.
    samples: Vec<((String, &'static str), Vec<f64>)>,
    index: BTreeMap<(String, &'static str), usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub group: String,
    pub metric: String,
    pub n: usize,
    /// P5, P25, P50, P75, P95, mean.
    pub stats: [f64; 6],
}

impl Table {
    pub fn new(header: &'static [&'static str]) -> Self {
        Self { header, rows: Vec::new(), samples: Vec::new(), index: BTreeMap::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Adds a value to the `(group, metric)` summary.
    pub fn sample(&mut self, group: impl Into<String>, metric: &'static str, value: f64) {
        let key = (group.into(), metric);
        let i = *self.index.entry(key.clone()).or_insert_with(|| {
            self.samples.push((key, Vec::new()));
            self.samples.len() - 1
        });
        self.samples[i].1.push(value);
    }

    pub fn summaries(&self) -> Vec<SummaryRow> {
        self.samples
            .iter()
            .map(|((group, metric), values)| {
                let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
                let mean = if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 };
                let stats = match whisker(&finite) {
                    Some(w) => [w.p5, w.p25, w.p50, w.p75, w.p95, mean],
                    None => [f64::NAN; 6],
                };
                SummaryRow { group: group.clone(), metric: metric.to_string(), n: finite.len(), stats }
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .from_path(path)
            .with_context(|| format!("cannot create {}", path.display()))?;
        w.write_record(self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        for s in self.summaries() {
            let mut rec = vec![SUMMARY_MARKER.to_string(), s.group, s.metric, s.n.to_string()];
            rec.extend(s.stats.iter().map(|v| real(*v)));
            w.write_record(&rec)?;
        }
        w.flush().with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }

    /// Human-readable summary on stdout.
    pub fn print_summary(&self) {
        println!("{:<28} {:<16} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10}", "group", "metric", "n", "p5", "p25", "p50", "p75", "p95");
        for s in self.summaries() {
            let [p5, p25, p50, p75, p95, _] = s.stats;
            println!(
                "{:<28} {:<16} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                s.group, s.metric, s.n, p5, p25, p50, p75, p95
            );
        }
    }
}

/// Reads back the summary rows of a CSV written by [`Table::write`].
pub fn read_summaries(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.get(0) != Some(SUMMARY_MARKER) {
            continue;
        }
        let field = |i: usize| rec.get(i).with_context(|| format!("summary row too short: {rec:?}"));
        let mut stats = [0.0; 6];
        for (k, s) in stats.iter_mut().enumerate() {
            *s = field(4 + k)?.parse()?;
        }
        out.push(SummaryRow { group: field(1)?.to_string(), metric: field(2)?.to_string(), n: field(3)?.parse()?, stats });
    }
    Ok(out)
}
