//! Per-stream observations for one time window.
//!
//! Rows are analysis units (one end-to-end trace, or one fixed-length time
//! window for operational metrics); columns are streams. A cell is `None`
//! (ABSENT) when the unit never traversed the stream, for example a claim
//! routed down the other branch.

use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DataflowGraph, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowLabel {
    Old,
    New,
}

impl fmt::Display for WindowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowLabel::Old => "old",
            WindowLabel::New => "new",
        })
    }
}

pub type Column = Vec<Option<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    window: WindowLabel,
    unit_ids: Vec<String>,
    columns: IndexMap<StreamId, Column>,
}

impl WindowedDataset {
    /// Columns must all have one entry per unit and there must be at least one unit.
    pub fn new(
        window: WindowLabel,
        unit_ids: Vec<String>,
        columns: IndexMap<StreamId, Column>,
    ) -> Result<Self> {
        if unit_ids.is_empty() {
            return Err(Error::Dataset("dataset has zero rows".into()));
        }
        for (s, col) in &columns {
            if col.len() != unit_ids.len() {
                return Err(Error::Dataset(format!(
                    "column {s} has {} entries, expected {}",
                    col.len(),
                    unit_ids.len()
                )));
            }
        }
        Ok(Self {
            window,
            unit_ids,
            columns,
        })
    }

    pub fn window(&self) -> WindowLabel {
        self.window
    }

    pub fn len(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_ids.is_empty()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn columns(&self) -> &IndexMap<StreamId, Column> {
        &self.columns
    }

    pub fn column(&self, s: &str) -> Option<&Column> {
        self.columns.get(s)
    }

    pub fn has_absent(&self) -> bool {
        self.columns.values().flatten().any(Option::is_none)
    }

    /// A fully present column as plain values.
    pub fn values(&self, s: &str) -> Result<Vec<f64>> {
        let col = self
            .column(s)
            .ok_or_else(|| Error::Dataset(format!("dataset has no column {s}")))?;
        col.iter()
            .map(|v| v.ok_or_else(|| Error::Dataset(format!("column {s} has ABSENT cells; impute first"))))
            .collect()
    }

    /// Serialise to the CSV exchange format (`unit_id` first, empty cell = ABSENT).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit_id");
        for s in self.columns.keys() {
            out.push(',');
            out.push_str(s.as_str());
        }
        out.push('\n');
        for (row, unit) in self.unit_ids.iter().enumerate() {
            out.push_str(unit);
            for col in self.columns.values() {
                out.push(',');
                if let Some(v) = col[row] {
                    out.push_str(&format_value(v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn with_window(mut self, window: WindowLabel) -> Self {
        self.window = window;
        self
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

fn parse_cell(cell: &str, stream: &str, row: usize) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| {
            Error::Dataset(format!(
                "row {row}, column {stream}: `{cell}` is not a finite decimal number"
            ))
        })
}

fn normalise_columns(
    graph: &DataflowGraph,
    mut columns: IndexMap<StreamId, Column>,
) -> IndexMap<StreamId, Column> {
    let mut ordered = IndexMap::with_capacity(columns.len());
    for s in graph.streams() {
        if let Some(col) = columns.shift_remove(s.as_str()) {
            ordered.insert(s.clone(), col);
        }
    }
    ordered
}

/// Load one window from CSV text whose header is `unit_id` followed by stream ids.
pub fn load_window(source: &str, graph: &DataflowGraph, window: WindowLabel) -> Result<WindowedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source.as_bytes());
    let header = reader.headers()?.clone();
    let mut fields = header.iter();
    match fields.next() {
        Some("unit_id") => {}
        Some(other) => {
            return Err(Error::Dataset(format!(
                "first column must be `unit_id`, found `{other}`"
            )))
        }
        None => return Err(Error::Dataset("missing header row".into())),
    }
    let mut streams = Vec::new();
    let mut seen = HashSet::new();
    for name in fields {
        if !graph.contains_stream(name) {
            return Err(Error::Dataset(format!("column {name} is not a stream of the graph")));
        }
        if !seen.insert(name.to_string()) {
            return Err(Error::Dataset(format!("column {name} appears twice")));
        }
        streams.push(graph.stream(name)?.clone());
    }

    let mut unit_ids = Vec::new();
    let mut cols: Vec<Column> = vec![Vec::new(); streams.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => {
                Error::Dataset(format!("ragged row {}: {e}", row + 1))
            }
            _ => Error::Csv(e),
        })?;
        unit_ids.push(record[0].to_string());
        for (j, s) in streams.iter().enumerate() {
            cols[j].push(parse_cell(&record[j + 1], s.as_str(), row + 1)?);
        }
    }
    let columns = streams.into_iter().zip(cols).collect();
    WindowedDataset::new(window, unit_ids, normalise_columns(graph, columns))
}

/// Load one window from JSON lines: one object per unit, keys are stream ids,
/// an optional `unit_id` key, and a missing key means ABSENT.
pub fn load_window_jsonl(source: &str, graph: &DataflowGraph, window: WindowLabel) -> Result<WindowedDataset> {
    let mut rows: Vec<serde_json::Map<String, serde_json::Value>> = Vec::new();
    for (i, line) in source.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let value: serde_json::Value = serde_json::from_str(line)?;
        match value {
            serde_json::Value::Object(map) => rows.push(map),
            _ => return Err(Error::Dataset(format!("line {} is not a JSON object", i + 1))),
        }
    }
    let mut present: HashSet<&str> = HashSet::new();
    for map in &rows {
        for key in map.keys().filter(|k| k.as_str() != "unit_id") {
            if !graph.contains_stream(key) {
                return Err(Error::Dataset(format!("key {key} is not a stream of the graph")));
            }
            present.insert(key.as_str());
        }
    }
    let mut columns = IndexMap::new();
    for s in graph.streams().iter().filter(|s| present.contains(s.as_str())) {
        let mut col = Vec::with_capacity(rows.len());
        for (i, map) in rows.iter().enumerate() {
            col.push(match map.get(s.as_str()) {
                None | Some(serde_json::Value::Null) => None,
                Some(serde_json::Value::Number(n)) => n.as_f64(),
                Some(other) => {
                    return Err(Error::Dataset(format!(
                        "line {}, key {s}: `{other}` is not a number",
                        i + 1
                    )))
                }
            });
        }
        columns.insert(s.clone(), col);
    }
    let unit_ids = rows
        .iter()
        .enumerate()
        .map(|(i, m)| match m.get("unit_id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
            None => i.to_string(),
        })
        .collect();
    WindowedDataset::new(window, unit_ids, columns)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputePolicy {
    /// ABSENT becomes 0.0.
    Zero,
    /// Rows containing any ABSENT cell are removed.
    DropUnit,
}

pub fn impute_absent(ds: &WindowedDataset, policy: ImputePolicy) -> Result<WindowedDataset> {
    match policy {
        ImputePolicy::Zero => {
            let columns = ds
                .columns
                .iter()
                .map(|(s, col)| (s.clone(), col.iter().map(|v| Some(v.unwrap_or(0.0))).collect()))
                .collect();
            WindowedDataset::new(ds.window, ds.unit_ids.clone(), columns)
        }
        ImputePolicy::DropUnit => {
            let keep: Vec<usize> = (0..ds.len())
                .filter(|&r| ds.columns.values().all(|c| c[r].is_some()))
                .collect();
            if keep.is_empty() {
                return Err(Error::Dataset("dropping units with ABSENT cells left zero rows".into()));
            }
            let columns = ds
                .columns
                .iter()
                .map(|(s, col)| (s.clone(), keep.iter().map(|&r| col[r]).collect()))
                .collect();
            let unit_ids = keep.iter().map(|&r| ds.unit_ids[r].clone()).collect();
            WindowedDataset::new(ds.window, unit_ids, columns)
        }
    }
}

/// Moments over the present cells of one column. Moment fields are `None` when
/// the column has no present cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample variance (n - 1 denominator); 0 for a single value.
    pub variance: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub absent_fraction: f64,
}

pub fn summary_stats(ds: &WindowedDataset) -> IndexMap<StreamId, StreamSummary> {
    ds.columns
        .iter()
        .map(|(s, col)| {
            let present: Vec<f64> = col.iter().flatten().copied().collect();
            let n = present.len();
            let absent_fraction = (col.len() - n) as f64 / col.len() as f64;
            let summary = if n == 0 {
                StreamSummary {
                    n,
                    mean: None,
                    variance: None,
                    min: None,
                    max: None,
                    absent_fraction,
                }
            } else {
                let mean = present.iter().sum::<f64>() / n as f64;
                let variance = if n == 1 {
                    0.0
                } else {
                    present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
                };
                StreamSummary {
                    n,
                    mean: Some(mean),
                    variance: Some(variance),
                    min: present.iter().copied().reduce(f64::min),
                    max: present.iter().copied().reduce(f64::max),
                    absent_fraction,
                }
            };
            (s.clone(), summary)
        })
        .collect()
}
