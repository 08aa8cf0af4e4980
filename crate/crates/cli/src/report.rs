//! Model-by-task accuracy tables aggregated from evaluation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;
use woundsev::model::{BackboneName, ModelFamily};
use woundsev::roi::ChannelSelection;
use woundsev::train::{format_percent, EvalReport};
use woundsev::{SeverityClass, ZoomChannel};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize, Deserialize)]
pub enum Format {
    #[default]
    Md,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub model: String,
    /// One accuracy in [0, 1] per column; `None` where no report exists.
    pub cells: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<ResultsRow>,
}

const BINARY_PAIRS: [(SeverityClass, SeverityClass); 3] = [
    (SeverityClass::Green, SeverityClass::Yellow),
    (SeverityClass::Green, SeverityClass::Red),
    (SeverityClass::Yellow, SeverityClass::Red),
];

fn channel_rank(c: ChannelSelection) -> usize {
    match c {
        ChannelSelection::Single(z) => z.index(),
        ChannelSelection::MultiZoom => ZoomChannel::ALL.len(),
    }
}

fn family_rank(f: ModelFamily) -> usize {
    match f {
        ModelFamily::Single => 0,
        ModelFamily::Stacked2 => 1,
        ModelFamily::Multizoom4 => 2,
    }
}

type RowKey = (usize, Vec<BackboneName>);

fn row_key(r: &EvalReport) -> RowKey {
    (family_rank(r.task.model.family), r.task.model.backbones.clone())
}

fn collect(
    reports: &[&EvalReport],
    column_of: impl Fn(&EvalReport) -> usize,
    columns: Vec<String>,
    title: &str,
) -> ResultsTable {
    let mut rows: BTreeMap<RowKey, ResultsRow> = BTreeMap::new();
    for r in reports {
        let row = rows.entry(row_key(r)).or_insert_with(|| ResultsRow {
            model: r.task.model.descriptor(),
            cells: vec![None; columns.len()],
        });
        let col = column_of(r);
        if row.cells[col].is_some() {
            log::warn!("several reports for {} / {}; keeping the last", row.model, columns[col]);
        }
        row.cells[col] = Some(r.accuracy);
    }
    ResultsTable { title: title.to_string(), columns, rows: rows.into_values().collect() }
}

/// Multi-class results with one column per channel present; binary results
/// with the three pair columns. Rows: single-backbone models, then stacked,
/// then multi-zoom, each in backbone order.
pub fn build_tables(reports: &[EvalReport]) -> Vec<ResultsTable> {
    let (binary, multi): (Vec<&EvalReport>, Vec<&EvalReport>) = reports.iter().partition(|r| r.task.classes.len() == 2);
    let mut tables = Vec::new();
    if !multi.is_empty() {
        let mut channels: Vec<ChannelSelection> = multi.iter().map(|r| r.task.channel).collect();
        channels.sort_by_key(|&c| channel_rank(c));
        channels.dedup();
        let names = channels.iter().map(|c| c.to_string()).collect();
        tables.push(collect(
            &multi,
            |r| channels.iter().position(|&c| c == r.task.channel).expect("collected above"),
            names,
            "Multi-class accuracy",
        ));
    }
    if !binary.is_empty() {
        let names = BINARY_PAIRS.iter().map(|(a, b)| format!("{} Vs. {}", a.title(), b.title())).collect();
        tables.push(collect(
            &binary,
            |r| {
                let pair = (r.task.classes[0], r.task.classes[1]);
                BINARY_PAIRS.iter().position(|&p| p == pair).expect("binary classes are a sorted pair")
            },
            names,
            "Binary accuracy",
        ));
    }
    tables
}

fn cell(v: Option<f64>) -> String {
    v.map(|a| format_percent(a, 2)).unwrap_or_else(|| "-".into())
}

impl ResultsTable {
    pub fn render(&self, format: Format) -> String {
        let mut out = String::new();
        match format {
            Format::Md => {
                let _ = writeln!(out, "### {}\n", self.title);
                let _ = writeln!(out, "| Model | {} |", self.columns.join(" | "));
                let _ = writeln!(out, "|{}", "---|".repeat(self.columns.len() + 1));
                for r in &self.rows {
                    let cells: Vec<String> = r.cells.iter().map(|&c| cell(c)).collect();
                    let _ = writeln!(out, "| {} | {} |", r.model, cells.join(" | "));
                }
            }
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                let header = std::iter::once("Model".to_string()).chain(self.columns.iter().cloned());
                w.write_record(header).expect("in-memory write");
                for r in &self.rows {
                    let rec = std::iter::once(r.model.clone()).chain(r.cells.iter().map(|&c| cell(c)));
                    w.write_record(rec).expect("in-memory write");
                }
                out = String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 input");
            }
        }
        out
    }
}

/// Every `eval_report.json` below `dir`, in path order.
pub fn find_reports(dir: &Path) -> Result<Vec<EvalReport>> {
    let mut paths: Vec<_> = WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.file_name() == "eval_report.json")
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(CliError::io(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        })
        .collect()
}

pub fn cmd_report(dir: &Path, format: Format) -> Result<String> {
    let reports = find_reports(dir)?;
    if reports.is_empty() {
        return Err(CliError::NoResults(dir.to_path_buf()));
    }
    let rendered: Vec<String> = build_tables(&reports).iter().map(|t| t.render(format)).collect();
    Ok(rendered.join("\n"))
}
