//! CSV and JSON emission.
//!
//! Every CSV starts with `# schema=1` and a `# generated=<unix seconds>`
//! line, then a header row. Only the `# generated` line varies between
//! runs with the same config and seed.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const GENERATED_PREFIX: &str = "# generated=";

pub const CORE_COLUMNS: &[&str] = &["step", "e_wm_mean", "e_wm_se", "e_ss_mean", "e_ss_se", "a_k", "capped"];
pub const ARCH_COLUMNS: &[&str] = &["step", "a_gru", "a_rssm", "capped_gru", "capped_rssm"];
pub const MITIGATION_COLUMNS: &[&str] = &["step", "a_before", "a_after", "reduction_pct"];
pub const SWEEP_COLUMNS: &[&str] = &["epsilon", "e1_before_mean", "e1_before_se", "e1_after_mean", "e1_after_se"];
pub const REWARD_COLUMNS: &[&str] = &[
    "horizon",
    "clean_mean",
    "clean_se",
    "pert_mean",
    "pert_se",
    "wm_gap_mean",
    "wm_gap_se",
    "ss_gap_mean",
    "ss_gap_se",
];
pub const RISK_SCORE_COLUMNS: &[&str] = &["region", "state_index", "disagreement", "log_density", "flagged"];
pub const HISTORY_COLUMNS: &[&str] = &["outer_step", "loss", "sensitivity", "preservation"];

/// An in-memory CSV table with optional trailing `# key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
    pub footer: Vec<(String, String)>,
}

impl CsvTable {
    pub fn new(columns: &'static [&'static str]) -> Self {
        Self { columns, rows: Vec::new(), footer: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn note(&mut self, key: &str, value: impl Display) {
        self.footer.push((key.to_string(), value.to_string()));
    }

    /// The body without the `# generated` line.
    pub fn render_body(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|c| quote(c)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        for (k, v) in &self.footer {
            s.push_str(&format!("# {k}={v}\n"));
        }
        s
    }

    pub fn render(&self, generated: u64) -> String {
        format!("# schema={SCHEMA_VERSION}\n{GENERATED_PREFIX}{generated}\n{}", self.render_body())
    }
}

fn quote(cell: &str) -> String {
    if cell.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// Shortest round-trip representation; `NaN` and infinities spelled out.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

pub fn flag(b: bool) -> String {
    (b as u8).to_string()
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_csv(dir: &Path, name: &str, table: &CsvTable) -> Result<PathBuf> {
    let path = dir.join(name);
    write_text(&path, &table.render(unix_now()))?;
    Ok(path)
}

/// Lines of a CSV file with the `# generated` line dropped.
pub fn comparable_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with(GENERATED_PREFIX)).collect()
}

/// Checks the schema line and header of a CSV file.
pub fn check_schema(text: &str, columns: &[&str]) -> Result<()> {
    let mut lines = text.lines().filter(|l| !l.starts_with(GENERATED_PREFIX));
    let first = lines.next().unwrap_or_default();
    if first != format!("# schema={SCHEMA_VERSION}") {
        return Err(Error::invalid(format!("bad schema line {first:?}")));
    }
    let header = lines.next().unwrap_or_default();
    if header != columns.join(",") {
        return Err(Error::invalid(format!("bad header {header:?}")));
    }
    for (i, line) in lines.filter(|l| !l.starts_with('#')).enumerate() {
        let n = line.split(',').count();
        if n != columns.len() {
            return Err(Error::invalid(format!("row {i} has {n} cells")));
        }
    }
    Ok(())
}
