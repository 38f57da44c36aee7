//! CSV and JSON records written by the command line tool.
//!
//! Every table is written twice, as CSV (header row, comma separated, LF line
//! endings) and as one JSON document holding the same records. Floats are
//! rounded to 9 significant digits in both, so the two stay consistent and
//! reruns with the same seed are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::vacuum::{Discontinuity, SweepResult};
use crate::Error;

pub const SIGNIFICANT_DIGITS: usize = 9;

/// `x` with 9 significant digits, fixed-point when that stays readable.
pub fn format_sig(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = SIGNIFICANT_DIGITS as i32 - 1 - exp;
    if (-4..=15).contains(&exp) && decimals >= 0 {
        let s = format!("{:.*}", decimals as usize, x);
        // Rounding can carry into a new leading digit (9.99… → 10.0…).
        let trimmed = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.') } else { &s };
        if trimmed == "-0" {
            "0".into()
        } else {
            trimmed.to_string()
        }
    } else {
        format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
    }
}

/// `x` rounded to 9 significant digits.
pub fn round_sig(x: f64) -> f64 {
    format_sig(x).parse().unwrap_or(x)
}

fn opt_sig(x: Option<f64>) -> String {
    x.map(format_sig).unwrap_or_default()
}

/// One labeled mass line at one λ-point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassRecord {
    pub lambda1: f64,
    /// Absent when the source algebra has a single factor.
    pub lambda2: Option<f64>,
    pub label: String,
    pub mass: f64,
    pub degeneracy: usize,
}

/// Minimum of the potential at one λ-point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VminRecord {
    pub lambda1: f64,
    pub lambda2: Option<f64>,
    pub v_min: f64,
    pub converged: bool,
}

/// One row of the discontinuity table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub case: String,
    pub n_ndof: usize,
    pub n_idof: usize,
    pub r_dof: f64,
    pub lambda_first: Option<f64>,
    pub lambda_second: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepPlot {
    pub masses: Vec<MassRecord>,
    pub vmin: Vec<VminRecord>,
    #[serde(default)]
    pub discontinuities: Vec<JumpRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub t: f64,
    pub lo: f64,
    pub hi: f64,
    pub jump: f64,
}

impl From<&Discontinuity> for JumpRecord {
    fn from(d: &Discontinuity) -> Self {
        JumpRecord { t: round_sig(d.t), lo: round_sig(d.lo), hi: round_sig(d.hi), jump: round_sig(d.jump) }
    }
}

fn lambdas(l: &[f64]) -> (f64, Option<f64>) {
    (round_sig(l[0]), l.get(1).copied().map(round_sig))
}

impl SweepPlot {
    /// Long-format records of a sweep, one mass row per `(λ, label)`.
    pub fn from_sweep(result: &SweepResult, jumps: &[Discontinuity]) -> Self {
        let mut out = SweepPlot::default();
        for p in &result.points {
            let (lambda1, lambda2) = lambdas(&p.lambda);
            for g in &p.spectrum.groups {
                out.masses.push(MassRecord {
                    lambda1,
                    lambda2,
                    label: g.label.clone(),
                    mass: round_sig(g.mass),
                    degeneracy: g.degeneracy,
                });
            }
            out.vmin.push(VminRecord { lambda1, lambda2, v_min: round_sig(p.v_min), converged: p.converged });
        }
        out.discontinuities = jumps.iter().map(JumpRecord::from).collect();
        out
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    fs::write(path, bytes)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Writes `masses.csv`, `vmin.csv`, `jumps.csv` and `sweep.json` into `dir`.
pub fn write_sweep(dir: &Path, plot: &SweepPlot) -> Result<Vec<PathBuf>, Error> {
    fs::create_dir_all(dir)?;
    let masses = dir.join("masses.csv");
    write_csv(
        &masses,
        &["lambda1", "lambda2", "label", "mass", "degeneracy"],
        plot.masses.iter().map(|m| {
            vec![
                format_sig(m.lambda1),
                opt_sig(m.lambda2),
                m.label.clone(),
                format_sig(m.mass),
                m.degeneracy.to_string(),
            ]
        }),
    )?;
    let vmin = dir.join("vmin.csv");
    write_csv(
        &vmin,
        &["lambda1", "lambda2", "v_min", "converged"],
        plot.vmin
            .iter()
            .map(|v| vec![format_sig(v.lambda1), opt_sig(v.lambda2), format_sig(v.v_min), v.converged.to_string()]),
    )?;
    let jumps = dir.join("jumps.csv");
    write_csv(
        &jumps,
        &["t", "lo", "hi", "jump"],
        plot.discontinuities
            .iter()
            .map(|d| vec![format_sig(d.t), format_sig(d.lo), format_sig(d.hi), format_sig(d.jump)]),
    )?;
    let json = dir.join("sweep.json");
    write_json(&json, plot)?;
    Ok(vec![masses, vmin, jumps, json])
}

/// Writes `discontinuities.csv` and `discontinuities.json` into `dir`.
pub fn write_table(dir: &Path, rows: &[TableRow]) -> Result<Vec<PathBuf>, Error> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("discontinuities.csv");
    write_csv(
        &csv_path,
        &["case", "n_ndof", "n_idof", "r_dof", "lambda_first", "lambda_second"],
        rows.iter().map(|r| {
            vec![
                r.case.clone(),
                r.n_ndof.to_string(),
                r.n_idof.to_string(),
                format_sig(r.r_dof),
                opt_sig(r.lambda_first),
                opt_sig(r.lambda_second),
            ]
        }),
    )?;
    let json_path = dir.join("discontinuities.json");
    let rounded: Vec<TableRow> = rows
        .iter()
        .map(|r| TableRow {
            r_dof: round_sig(r.r_dof),
            lambda_first: r.lambda_first.map(round_sig),
            lambda_second: r.lambda_second.map(round_sig),
            ..r.clone()
        })
        .collect();
    write_json(&json_path, &rounded)?;
    Ok(vec![csv_path, json_path])
}

/// Writes any serializable report as pretty JSON.
pub fn write_report<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    write_json(&path, value)?;
    Ok(path)
}
