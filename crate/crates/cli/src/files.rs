//! Reading problem and point files, writing reports and CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::Value;

use airls::ProblemDocument;

use crate::failure::{CliResult, Failure};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::input)
}

pub fn read_problem(path: &Path) -> CliResult<ProblemDocument> {
    let text = read_text(path)?;
    ProblemDocument::from_json(&text).map_err(|e| {
        Failure::input(anyhow::Error::from(e).context(format!("in {}", path.display())))
    })
}

/// A point stored as a bare array, or under `x_hat`, `x_init` or `result.x_hat`.
pub fn read_point(path: &Path) -> CliResult<Vec<f64>> {
    let text = read_text(path)?;
    let value: Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))
        .map_err(Failure::input)?;
    let found = [
        value.clone(),
        value["x_hat"].clone(),
        value["x_init"].clone(),
        value["result"]["x_hat"].clone(),
    ]
    .into_iter()
    .find(Value::is_array)
    .ok_or_else(|| {
        Failure::input(anyhow!(
            "{}: expected an array or an object with `x_hat` or `x_init`",
            path.display()
        ))
    })?;
    serde_json::from_value(found)
        .with_context(|| format!("{}: point entries must be numbers", path.display()))
        .map_err(Failure::input)
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Failure::output)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::output)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .context("serializing report")
        .map_err(Failure::output)?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes a header and rows of floats.
pub fn write_csv<R, I>(path: &Path, header: &[String], rows: R) -> CliResult<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = f64>,
{
    let run = || -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.into_iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    };
    run()
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::output)
}

pub fn write_matrix_csv(path: &Path, header: &[String], m: &DMatrix<f64>) -> CliResult<()> {
    write_csv(
        path,
        header,
        m.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()),
    )
}

/// `problem.json` -> `problem.truth.json`.
pub fn truth_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "problem".into());
    out.with_file_name(format!("{stem}.truth.json"))
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}
