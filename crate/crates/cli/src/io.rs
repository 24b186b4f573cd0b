//! On-disk formats. JSON numbers are written as shortest round-trip
//! decimals, so every value reads back bit-for-bit.

use std::fs;
use std::path::{Path, PathBuf};

use focuss::model::DatasetFile;
use focuss::GeneratedDataset;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub p: f64,
    pub measure: String,
    pub solution: Vec<f64>,
    pub cost: f64,
    pub residual: f64,
    pub support: usize,
    pub iterations: usize,
    pub stop_reason: String,
    /// Index of the winning random start.
    pub init: usize,
}

/// One row of a trace CSV. `step_norm` is the step that produced iterate `t`
/// and is empty at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub cost: f64,
    pub residual: f64,
    pub step_norm: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub t: usize,
    #[serde(rename = "R_t")]
    pub r_t: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub p: f64,
    pub limiting_rate: f64,
    pub classification: String,
    pub support: usize,
    pub theory_consistent: bool,
    /// Why the measured rate disagrees with theory, if it does.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFile {
    pub p: f64,
    pub best_cost: f64,
    pub best_solution: Vec<f64>,
    pub support: Vec<usize>,
    pub supports_examined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub p: f64,
    pub init: usize,
    pub iterations: usize,
    pub stop_reason: String,
    pub support: usize,
    pub cost: f64,
    pub residual: f64,
    pub millis: f64,
}

/// Compact file-name fragment for an exponent, e.g. `p0.8` or `p-1`.
pub fn p_tag(p: f64) -> String {
    format!("p{p}")
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| input_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| input_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| input_err(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| input_err(path, e))?;
    reader.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| input_err(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| input_err(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| input_err(path, e))?;
    }
    writer.flush().map_err(|e| input_err(path, e))
}

pub fn read_dataset(path: &Path) -> Result<GeneratedDataset, CliError> {
    let file: DatasetFile = read_json(path)?;
    GeneratedDataset::try_from(file).map_err(|e| input_err(path, e))
}

pub fn write_dataset(path: &Path, dataset: &GeneratedDataset) -> Result<(), CliError> {
    write_json(path, &DatasetFile::from(dataset))
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| input_err(dir, e))?;
    Ok(dir.to_path_buf())
}
