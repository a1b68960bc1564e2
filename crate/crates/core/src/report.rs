//! Report assembly: atomic file output, the fixed 6-significant-digit float
//! format shared by every CSV the toolkit emits, and the row types of the
//! experiment report files.
//!
//! A run produces four CSV files plus one sequence file per discovery cell:
//! `report.csv` (per-step rows), `cells.csv` (one row per (method, seed)
//! cell), `summary.csv` (per-method mean and standard deviation, carrying
//! the config hash), and `timing.csv` (wall-clock sidecar; the only file
//! excluded from the byte-identical determinism guarantee).

use crate::error::Result;
use std::fmt::Write as _;
use std::path::Path;

/// Writes `contents` to `path` atomically: the bytes land in a sibling
/// temporary file first and are renamed into place, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Formats a float with 6 significant digits, trimming trailing zeros:
/// fixed notation for decimal exponents in [-4, 5], scientific with a
/// sign-and-two-digit exponent otherwise.
pub fn fmt_g6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{:.5e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("{:.5e} always contains 'e'");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, v);
        trim_zeros(&fixed)
    } else {
        let m = trim_zeros(mantissa);
        format!("{}e{}{:02}", m, if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

/// Quotes a CSV field when it contains a delimiter, quote, or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt_g6(v: Option<f64>) -> String {
    v.map(fmt_g6).unwrap_or_default()
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Which part of a cell a step row logs: a self-training step along the
/// domain walk, or one refinement epoch of one discovered domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Walk,
    Refine,
}

impl Phase {
    fn as_str(self) -> &'static str {
        match self {
            Phase::Walk => "walk",
            Phase::Refine => "refine",
        }
    }
}

/// One row of `report.csv`. Walk rows carry `target_accuracy`
/// (`domain_index` empty for the steps of methods that never touch the
/// pool); refine rows carry `cycle_loss` with `step` the refinement epoch.
#[derive(Debug, Clone)]
pub struct StepRow {
    pub method: String,
    pub seed: u64,
    pub phase: Phase,
    pub step: usize,
    pub domain_index: Option<usize>,
    pub target_accuracy: Option<f64>,
    pub cycle_loss: Option<f64>,
}

pub const REPORT_HEADER: &str = "method,seed,phase,step,domain_index,target_accuracy,cycle_loss";

pub fn render_step_rows(rows: &[StepRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&r.method),
            r.seed,
            r.phase.as_str(),
            r.step,
            opt_usize(r.domain_index),
            opt_g6(r.target_accuracy),
            opt_g6(r.cycle_loss),
        );
    }
    out
}

/// One row of `cells.csv`: the outcome of a single (method, seed) cell.
#[derive(Debug, Clone)]
pub struct CellRow {
    pub method: String,
    pub seed: u64,
    pub target_accuracy: Option<f64>,
    pub error: Option<String>,
}

pub const CELLS_HEADER: &str = "method,seed,status,target_accuracy,error";

pub fn render_cell_rows(rows: &[CellRow]) -> String {
    let mut out = String::from(CELLS_HEADER);
    out.push('\n');
    for r in rows {
        let status = if r.error.is_none() { "ok" } else { "error" };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&r.method),
            r.seed,
            status,
            opt_g6(r.target_accuracy),
            csv_field(r.error.as_deref().unwrap_or("")),
        );
    }
    out
}

/// One row of `summary.csv`: per-method aggregates over seeds, with the
/// config hash repeated so the file is self-describing.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub method: String,
    pub num_seeds: usize,
    pub num_errors: usize,
    pub mean_target_accuracy: Option<f64>,
    pub sd_target_accuracy: Option<f64>,
    pub config_sha256: String,
}

pub const SUMMARY_HEADER: &str =
    "method,num_seeds,num_errors,mean_target_accuracy,sd_target_accuracy,config_sha256";

pub fn render_summary_rows(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_field(&r.method),
            r.num_seeds,
            r.num_errors,
            opt_g6(r.mean_target_accuracy),
            opt_g6(r.sd_target_accuracy),
            r.config_sha256,
        );
    }
    out
}

/// One row of `timing.csv`. Kept out of the other files so that reruns of
/// the same config and seeds reproduce those byte for byte.
#[derive(Debug, Clone)]
pub struct TimingRow {
    pub method: String,
    pub seed: u64,
    pub wall_time_ms: u128,
}

pub const TIMING_HEADER: &str = "method,seed,wall_time_ms";

pub fn render_timing_rows(rows: &[TimingRow]) -> String {
    let mut out = String::from(TIMING_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{}", csv_field(&r.method), r.seed, r.wall_time_ms);
    }
    out
}

/// Mean and sample standard deviation (zero when fewer than two values).
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        (ss / (n - 1.0)).sqrt()
    };
    Some((mean, sd))
}
