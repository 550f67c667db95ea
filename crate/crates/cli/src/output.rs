use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tscc::modelgen::Dataset;

use crate::error::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<PathBuf> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::io(path, e.into()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<PathBuf> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let wrap = |e: csv::Error| CliError::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row).map_err(wrap)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<PathBuf> {
    data.write_csv(create(path)?)?;
    Ok(path.to_path_buf())
}

/// Points with an explicit label column, in the dataset CSV layout.
pub fn write_labelled_points(path: &Path, points: &[Vec<f64>], labels: &[usize]) -> CliResult<PathBuf> {
    let dim = points.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (1..=dim).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    let rows: Vec<Vec<String>> = points
        .iter()
        .zip(labels)
        .map(|(p, l)| p.iter().map(|x| x.to_string()).chain([l.to_string()]).collect())
        .collect();
    write_csv(path, &header, &rows)
}

pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(Dataset::read_csv(BufReader::new(file), path.display().to_string())?)
}
