//! Crash deduplication, tree-level minimization, and crash parameter tables.

use std::collections::VecDeque;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::configfmt::{diff_params, get_param, parse_config, ConfigDocument, ParamPath, Scalar};
use crate::grammar::{tree_size, unparse, DerivationTree, Grammar};
use crate::target::{ExecOutcome, Feedback, OutcomeClass, Target, TargetError};

/// Safety net for the minimizer's fixpoint loop.
const MAX_MINIMIZE_PASSES: usize = 64;

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("outcome {0} is not a crash")]
    NotACrash(OutcomeClass),
    #[error("input no longer reproduces crash {0}")]
    NonReproducible(String),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error("invalid derivation tree")]
    InvalidTree,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed crash report {path}: {message}")]
    BadReport { path: PathBuf, message: String },
}

/// Stable 16-hex-digit key over (crash id, coverage digest).
pub fn dedup_key(outcome: &ExecOutcome, feedback: &Feedback) -> Result<String, TriageError> {
    let id = outcome.crash_id().ok_or(TriageError::NotACrash(outcome.class))?;
    let mut hasher = Sha256::new();
    hasher.update(b"crash");
    hasher.update(id.to_be_bytes());
    hasher.update(feedback.digest().to_be_bytes());
    let out = hasher.finalize();
    let key = u64::from_be_bytes(out[..8].try_into().expect("8 bytes"));
    Ok(format!("{key:016x}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamChange {
    pub path: ParamPath,
    pub initial: Scalar,
    pub crash: Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashReport {
    pub dedup_key: String,
    pub outcome: ExecOutcome,
    pub input_text: String,
    pub minimized_text: String,
    pub param_diff: Vec<ParamChange>,
    pub first_seen_exec: u64,
    /// Where the input came from, when it was not found by a campaign.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl CrashReport {
    pub fn crash_id(&self) -> Option<i32> {
        self.outcome.crash_id()
    }

    pub fn label(&self) -> &str {
        self.source.as_deref().unwrap_or(&self.dedup_key)
    }
}

/// Differences between `baseline` and the config in `text`; empty when the
/// text does not parse.
pub fn param_changes(baseline: &ConfigDocument, text: &str) -> Vec<ParamChange> {
    match parse_config(text) {
        Ok(doc) => diff_params(baseline, &doc)
            .into_iter()
            .map(|(path, initial, crash)| ParamChange { path, initial, crash })
            .collect(),
        Err(_) => Vec::new(),
    }
}

/// Replays a standalone crash input and wraps it as a report labelled
/// `source`. The input is stored unminimized.
pub fn report_from_input(
    text: &str,
    source: &str,
    baseline: &ConfigDocument,
    target: &dyn Target,
) -> Result<CrashReport, TriageError> {
    let (outcome, feedback) = target.execute(text)?;
    let dedup_key = dedup_key(&outcome, &feedback)?;
    Ok(CrashReport {
        dedup_key,
        outcome,
        input_text: text.to_string(),
        minimized_text: text.to_string(),
        param_diff: param_changes(baseline, text),
        first_seen_exec: 0,
        source: Some(source.to_string()),
    })
}

/// Deduplicated crash reports, keyed by dedup key in discovery order.
#[derive(Debug, Default)]
pub struct CrashStore {
    reports: IndexMap<String, CrashReport>,
    root: Option<PathBuf>,
}

impl CrashStore {
    pub fn in_memory() -> Self {
        CrashStore::default()
    }

    /// A store that also writes `<root>/<key>/{input.conf, minimized.conf, report.json}`.
    pub fn persistent(root: impl Into<PathBuf>) -> Result<Self, TriageError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| TriageError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(CrashStore {
            reports: IndexMap::new(),
            root: Some(root),
        })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.reports.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&CrashReport> {
        self.reports.get(key)
    }

    pub fn reports(&self) -> impl Iterator<Item = &CrashReport> {
        self.reports.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.reports.keys().map(String::as_str)
    }

    /// Stores `report` unless its key is already known. Returns whether it
    /// was new.
    pub fn insert(&mut self, report: CrashReport) -> Result<bool, TriageError> {
        if self.reports.contains_key(&report.dedup_key) {
            return Ok(false);
        }
        if let Some(root) = &self.root {
            write_report(root, &report)?;
        }
        self.reports.insert(report.dedup_key.clone(), report);
        Ok(true)
    }

    /// Loads every `*/report.json` below `root`, ordered by first sighting.
    pub fn load(root: &Path) -> Result<Vec<CrashReport>, TriageError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| TriageError::Io { path, source }
        };
        let mut out = Vec::new();
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(io_err(root))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let path = dir.join("report.json");
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let report: CrashReport =
                serde_json::from_str(&text).map_err(|e| TriageError::BadReport {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            out.push(report);
        }
        out.sort_by(|a, b| {
            a.first_seen_exec
                .cmp(&b.first_seen_exec)
                .then_with(|| a.dedup_key.cmp(&b.dedup_key))
        });
        Ok(out)
    }
}

fn write_report(root: &Path, report: &CrashReport) -> Result<(), TriageError> {
    let dir = root.join(&report.dedup_key);
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TriageError::Io { path, source }
    };
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let files = [
        ("input.conf", report.input_text.clone()),
        ("minimized.conf", report.minimized_text.clone()),
        (
            "report.json",
            serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ),
    ];
    for (name, contents) in files {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(io_err(&path))?;
    }
    Ok(())
}

fn reproduces(
    tree: &DerivationTree,
    g: &Grammar,
    target: &dyn Target,
    key: &str,
) -> Result<bool, TriageError> {
    let text = unparse(tree, g).map_err(|_| TriageError::InvalidTree)?;
    let (outcome, feedback) = target.execute(&text)?;
    Ok(dedup_key(&outcome, &feedback).is_ok_and(|k| k == key))
}

/// Greedy breadth-first minimization: each node is tried against its
/// token's smallest derivation and the swap is kept when the crash key is
/// unchanged. Passes repeat until nothing changes.
pub fn minimize(
    tree: &DerivationTree,
    g: &Grammar,
    target: &dyn Target,
    key: &str,
) -> Result<DerivationTree, TriageError> {
    if !reproduces(tree, g, target, key)? {
        return Err(TriageError::NonReproducible(key.to_string()));
    }
    let mut current = tree.clone();
    for _ in 0..MAX_MINIMIZE_PASSES {
        let mut changed = false;
        let mut queue: VecDeque<Vec<usize>> = VecDeque::from([Vec::new()]);
        while let Some(path) = queue.pop_front() {
            let Some(node) = current.node(&path) else { continue };
            if let Some(minimal) = g.minimal_tree(&node.token) {
                if &minimal != node && tree_size(&minimal) <= tree_size(node) {
                    let candidate = current.replaced(&path, minimal);
                    if reproduces(&candidate, g, target, key)? {
                        current = candidate;
                        changed = true;
                    }
                }
            }
            let node = current.node(&path).expect("path still valid");
            for i in 0..node.children.len() {
                let mut child = path.clone();
                child.push(i);
                queue.push_back(child);
            }
        }
        if !changed {
            break;
        }
    }
    Ok(current)
}

pub const MISSING_CELL: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableColumn {
    pub name: String,
    pub values: Vec<String>,
}

/// Rows are parameter paths; the first column is the baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamTable {
    pub paths: Vec<String>,
    pub columns: Vec<TableColumn>,
}

fn column(name: &str, doc: Option<&ConfigDocument>, watch: &[ParamPath]) -> TableColumn {
    let values = watch
        .iter()
        .map(|p| match doc.map(|d| get_param(d, p)) {
            Some(Ok(s)) => s.to_string(),
            _ => MISSING_CELL.to_string(),
        })
        .collect();
    TableColumn {
        name: name.to_string(),
        values,
    }
}

pub fn extract_param_table(
    baseline: &ConfigDocument,
    reports: &[CrashReport],
    watch: &[ParamPath],
) -> ParamTable {
    let mut columns = vec![column("initial", Some(baseline), watch)];
    for report in reports {
        let doc = parse_config(&report.input_text).ok();
        columns.push(column(report.label(), doc.as_ref(), watch));
    }
    ParamTable {
        paths: watch.iter().map(ToString::to_string).collect(),
        columns,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format {other:?} (text|json)")),
        }
    }
}

pub fn render_report(table: &ParamTable, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(table).expect("table serializes") + "\n",
        ReportFormat::Text => render_text(table),
    }
}

fn render_text(table: &ParamTable) -> String {
    let mut grid: Vec<Vec<&str>> = Vec::with_capacity(table.paths.len() + 1);
    let mut header = vec!["parameter"];
    header.extend(table.columns.iter().map(|c| c.name.as_str()));
    grid.push(header);
    for (row, path) in table.paths.iter().enumerate() {
        let mut line = vec![path.as_str()];
        line.extend(table.columns.iter().map(|c| c.values[row].as_str()));
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|col| grid.iter().map(|r| r[col].chars().count()).max().unwrap_or(0))
        .collect();

    let mut out = String::new();
    let push_row = |out: &mut String, cells: &[&str]| {
        out.push('|');
        for (cell, w) in cells.iter().zip(&widths) {
            out.push(' ');
            out.push_str(cell);
            out.push_str(&" ".repeat(w - cell.chars().count()));
            out.push_str(" |");
        }
        out.push('\n');
    };
    push_row(&mut out, &grid[0]);
    out.push('|');
    for w in &widths {
        out.push_str(&"-".repeat(w + 2));
        out.push('|');
    }
    out.push('\n');
    for row in &grid[1..] {
        push_row(&mut out, row);
    }
    out
}
