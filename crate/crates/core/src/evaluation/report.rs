//! Long-format metric tables, method comparisons and the Markdown/CSV
//! reports built from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::stats::{median, paired_t_test};
use super::MetricRecord;
use crate::error::{Error, Result};
use crate::sample::StemName;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Sdr,
    Sir,
    Sar,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Sdr, Metric::Sir, Metric::Sar];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Sdr => "sdr",
            Metric::Sir => "sir",
            Metric::Sar => "sar",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidInput(format!("unknown metric {s:?}")))
    }
}

/// One line of a results CSV. `value` may be `inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub song_id: String,
    pub method: String,
    pub source: StemName,
    pub metric: Metric,
    pub value: f64,
}

pub fn records_to_rows(method: &str, records: &[MetricRecord]) -> Vec<MetricRow> {
    records
        .iter()
        .flat_map(|r| {
            Metric::ALL.into_iter().map(move |metric| MetricRow {
                song_id: r.song_id.clone(),
                method: method.to_string(),
                source: r.source,
                metric,
                value: r.value(metric),
            })
        })
        .collect()
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

pub fn write_metric_rows<W: Write>(writer: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

pub fn read_metric_rows<R: Read>(reader: R) -> Result<Vec<MetricRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(csv_error))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub method_a: String,
    pub method_b: String,
    pub source: StemName,
    pub metric: Metric,
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub mean_difference: f64,
    pub degenerate: bool,
}

type Key = (StemName, Metric);
/// method -> (source, metric) -> song -> value
type Grouped = BTreeMap<String, BTreeMap<Key, BTreeMap<String, f64>>>;

fn group(rows: &[MetricRow]) -> Result<Grouped> {
    let mut g = Grouped::new();
    for r in rows {
        let songs = g
            .entry(r.method.clone())
            .or_default()
            .entry((r.source, r.metric))
            .or_default();
        if songs.insert(r.song_id.clone(), r.value).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate row for {}/{}/{}/{}",
                r.method, r.song_id, r.source, r.metric
            )));
        }
    }
    Ok(g)
}

/// Paired values over the songs both methods have. Songs present on one
/// side only are reported in `warnings`.
fn pair_up(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
    label: (&str, &str, Key),
    warnings: &mut Vec<String>,
) -> (Vec<f64>, Vec<f64>) {
    let (ma, mb, (source, metric)) = label;
    for (have, lack, x, y) in [(ma, mb, a, b), (mb, ma, b, a)] {
        let missing: Vec<&str> = x.keys().filter(|s| !y.contains_key(*s)).map(String::as_str).collect();
        if !missing.is_empty() {
            warnings.push(format!(
                "{source}/{metric}: {lack} lacks songs present in {have}: {}",
                missing.join(", ")
            ));
        }
    }
    a.iter()
        .filter_map(|(s, &x)| b.get(s).map(|&y| (x, y)))
        .unzip()
}

/// Paired t-tests of every ordered method pair on every source and metric.
pub fn compare_methods(rows: &[MetricRow]) -> Result<(Vec<ComparisonResult>, Vec<String>)> {
    let g = group(rows)?;
    let methods: Vec<&String> = g.keys().collect();
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for (i, a) in methods.iter().enumerate() {
        for b in &methods[i + 1..] {
            let keys: BTreeSet<&Key> = g[*a].keys().chain(g[*b].keys()).collect();
            for key in keys {
                let empty = BTreeMap::new();
                let va = g[*a].get(key).unwrap_or(&empty);
                let vb = g[*b].get(key).unwrap_or(&empty);
                let (xa, xb) = pair_up(va, vb, (a, b, *key), &mut warnings);
                match paired_t_test(&xa, &xb) {
                    Ok(t) => out.push(ComparisonResult {
                        method_a: a.to_string(),
                        method_b: b.to_string(),
                        source: key.0,
                        metric: key.1,
                        t_statistic: t.t_statistic,
                        degrees_of_freedom: t.degrees_of_freedom,
                        p_value: t.p_value,
                        mean_difference: t.mean_difference,
                        degenerate: t.degenerate,
                    }),
                    Err(e) => warnings.push(format!("{a} vs {b} {}/{}: {e}", key.0, key.1)),
                }
            }
        }
    }
    Ok((out, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub method: String,
    pub source: StemName,
    pub metric: Metric,
    pub median: f64,
    /// p-value of the paired test against the baseline; `None` for the
    /// baseline itself or when too few pairs exist.
    pub p_value: Option<f64>,
    pub bold: bool,
}

/// Symmetric matrix of pairwise p-values for one source and metric, rows
/// and columns in `methods` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueMatrix {
    pub source: StemName,
    pub metric: Metric,
    pub methods: Vec<String>,
    pub p: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceTable {
    pub baseline: String,
    pub alpha: f64,
    pub methods: Vec<String>,
    pub cells: Vec<TableCell>,
    pub matrices: Vec<PValueMatrix>,
    pub warnings: Vec<String>,
}

/// Medians per method, source and metric, with a bold flag where a method
/// beats the baseline median and its paired test gives `p < alpha`.
pub fn significance_table(rows: &[MetricRow], baseline: &str, alpha: f64) -> Result<SignificanceTable> {
    let g = group(rows)?;
    if !g.contains_key(baseline) {
        return Err(Error::InvalidInput(format!("baseline method {baseline:?} has no rows")));
    }
    let methods: Vec<String> = g.keys().cloned().collect();
    let keys: BTreeSet<Key> = g.values().flat_map(|m| m.keys().copied()).collect();
    let empty = BTreeMap::new();
    let mut warnings = Vec::new();

    let mut pairwise: BTreeMap<(Key, usize, usize), Option<f64>> = BTreeMap::new();
    for &key in &keys {
        for i in 0..methods.len() {
            for j in i + 1..methods.len() {
                let va = g[&methods[i]].get(&key).unwrap_or(&empty);
                let vb = g[&methods[j]].get(&key).unwrap_or(&empty);
                let (xa, xb) = pair_up(va, vb, (&methods[i], &methods[j], key), &mut warnings);
                let p = match paired_t_test(&xa, &xb) {
                    Ok(t) => Some(t.p_value),
                    Err(e) => {
                        warnings.push(format!("{} vs {} {}/{}: {e}", methods[i], methods[j], key.0, key.1));
                        None
                    }
                };
                pairwise.insert((key, i, j), p);
            }
        }
    }
    let p_between = |key: Key, i: usize, j: usize| -> Option<f64> {
        if i == j {
            Some(1.0)
        } else {
            pairwise[&(key, i.min(j), i.max(j))]
        }
    };

    let b = methods.iter().position(|m| m == baseline).expect("checked");
    let mut cells = Vec::new();
    for &key in &keys {
        let med = |i: usize| -> Option<f64> {
            let v: Vec<f64> = g[&methods[i]].get(&key)?.values().copied().collect();
            median(&v)
        };
        let base = med(b);
        for (i, method) in methods.iter().enumerate() {
            let Some(m) = med(i) else { continue };
            let p_value = if i == b { None } else { p_between(key, i, b) };
            let improves = base.is_some_and(|base| m > base);
            cells.push(TableCell {
                method: method.clone(),
                source: key.0,
                metric: key.1,
                median: m,
                p_value,
                bold: improves && p_value.is_some_and(|p| p < alpha),
            });
        }
    }
    let matrices = keys
        .iter()
        .map(|&key| PValueMatrix {
            source: key.0,
            metric: key.1,
            methods: methods.clone(),
            p: (0..methods.len())
                .map(|i| (0..methods.len()).map(|j| p_between(key, i, j)).collect())
                .collect(),
        })
        .collect();
    warnings.dedup();
    Ok(SignificanceTable {
        baseline: baseline.to_string(),
        alpha,
        methods,
        cells,
        matrices,
        warnings,
    })
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.2}")
    }
}

fn fmt_p(p: Option<f64>) -> String {
    match p {
        Some(p) => format!("{p:.3e}"),
        None => "n/a".into(),
    }
}

impl SignificanceTable {
    fn cell(&self, method: &str, source: StemName, metric: Metric) -> Option<&TableCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.source == source && c.metric == metric)
    }

    /// One median table per source (methods by metrics, significant
    /// improvements in bold) followed by the p-value matrices.
    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let sources: BTreeSet<StemName> = self.cells.iter().map(|c| c.source).collect();
        let _ = writeln!(md, "# Separation results\n");
        let _ = writeln!(
            md,
            "Median over songs of per-song medians over frames, in dB. Bold: paired t-test against `{}` gives p < {} and the median improves.\n",
            self.baseline, self.alpha
        );
        for &source in &sources {
            let metrics: Vec<Metric> = Metric::ALL
                .into_iter()
                .filter(|&m| self.cells.iter().any(|c| c.source == source && c.metric == m))
                .collect();
            let _ = writeln!(md, "## {source}\n");
            let _ = write!(md, "| method |");
            for m in &metrics {
                let _ = write!(md, " {} |", m.as_str().to_uppercase());
            }
            let _ = write!(md, "\n|---|");
            for _ in &metrics {
                let _ = write!(md, "---:|");
            }
            md.push('\n');
            for method in &self.methods {
                let _ = write!(md, "| {method} |");
                for &m in &metrics {
                    match self.cell(method, source, m) {
                        Some(c) if c.bold => {
                            let _ = write!(md, " **{}** |", fmt_db(c.median));
                        }
                        Some(c) => {
                            let _ = write!(md, " {} |", fmt_db(c.median));
                        }
                        None => md.push_str(" - |"),
                    }
                }
                md.push('\n');
            }
            md.push('\n');
        }
        for matrix in &self.matrices {
            let _ = writeln!(md, "### p-values: {} {}\n", matrix.source, matrix.metric.as_str().to_uppercase());
            let _ = writeln!(md, "| | {} |", matrix.methods.join(" | "));
            let _ = writeln!(md, "|---|{}", "---:|".repeat(matrix.methods.len()));
            for (method, row) in matrix.methods.iter().zip(&matrix.p) {
                let cells: Vec<String> = row.iter().map(|&p| fmt_p(p)).collect();
                let _ = writeln!(md, "| {method} | {} |", cells.join(" | "));
            }
            md.push('\n');
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(md, "## Warnings\n");
            for w in &self.warnings {
                let _ = writeln!(md, "- {w}");
            }
        }
        md
    }
}

/// Long-format p-value matrices: `source,metric,method_a,method_b,p_value`,
/// with an empty value where the test could not be run.
pub fn write_pvalue_csv<W: Write>(writer: W, table: &SignificanceTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["source", "metric", "method_a", "method_b", "p_value"])
        .map_err(csv_error)?;
    for m in &table.matrices {
        for (a, row) in m.methods.iter().zip(&m.p) {
            for (b, p) in m.methods.iter().zip(row) {
                let p = p.map(|p| p.to_string()).unwrap_or_default();
                w.write_record([m.source.as_str(), m.metric.as_str(), a, b, &p])
                    .map_err(csv_error)?;
            }
        }
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}
