//! Report emission. Every file is written to a temporary file in the output
//! directory and renamed into place.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use tempfile::NamedTempFile;

use crate::config::ExperimentConfig;
use crate::experiments::{Outcome, Series, Status, Verdict};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Toolkit {
    name: &'static str,
    version: &'static str,
}

#[derive(Serialize)]
pub struct ExperimentReport<'a> {
    schema_version: u32,
    experiment: &'a str,
    toolkit: Toolkit,
    config: &'a ExperimentConfig,
    /// The only field that differs between identical runs.
    wall_clock_seconds: f64,
    status: Status,
    verdicts: &'a [Verdict],
    files: Vec<String>,
    payload: &'a Value,
}

/// Worst status: any failure fails, otherwise any indeterminate verdict wins.
pub fn overall(verdicts: &[Verdict]) -> Status {
    verdicts.iter().map(|v| v.status).max().unwrap_or(Status::Pass)
}

pub fn exit_code(status: Status) -> u8 {
    match status {
        Status::Pass => 0,
        Status::Fail => 1,
        Status::Indeterminate => 2,
    }
}

/// `BGKIT_OUTPUT_DIR` takes precedence over the configured directory.
pub fn output_dir(config: &ExperimentConfig) -> PathBuf {
    match std::env::var_os("BGKIT_OUTPUT_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from(&config.output_dir),
    }
}

pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> io::Result<()> {
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

fn csv_bytes(series: &Series) -> io::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(&series.header)?;
    for row in &series.rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| e.into_error())
}

fn write_matrix(dir: &Path, name: &str, m: &bgkit::sparse::SparseMatrix) -> io::Result<()> {
    let tmp = NamedTempFile::new_in(dir)?;
    bgkit::sparse::write_matrix_market(tmp.path(), m)?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

/// Writes CSV series, matrices and `report.json`; returns the overall status.
pub fn emit(dir: &Path, config: &ExperimentConfig, outcome: &Outcome, wall_clock_seconds: f64) -> io::Result<Status> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for series in &outcome.series {
        let name = format!("{}.csv", series.name);
        write_atomic(dir, &name, &csv_bytes(series)?)?;
        files.push(name);
    }
    for (name, matrix) in &outcome.matrices {
        let name = format!("{name}.mtx");
        write_matrix(dir, &name, matrix)?;
        files.push(name);
    }
    let status = overall(&outcome.verdicts);
    let report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        experiment: &config.experiment,
        toolkit: Toolkit { name: "bgkit", version: env!("CARGO_PKG_VERSION") },
        config,
        wall_clock_seconds,
        status,
        verdicts: &outcome.verdicts,
        files,
        payload: &outcome.payload,
    };
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write_atomic(dir, "report.json", &json)?;
    Ok(status)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(status: Status) -> Verdict {
        Verdict { rule: "r".into(), status, detail: String::new() }
    }

    #[test]
    fn failure_dominates_indeterminate() {
        assert_eq!(overall(&[]), Status::Pass);
        assert_eq!(overall(&[verdict(Status::Pass), verdict(Status::Indeterminate)]), Status::Indeterminate);
        assert_eq!(overall(&[verdict(Status::Indeterminate), verdict(Status::Fail)]), Status::Fail);
        assert_eq!(exit_code(Status::Indeterminate), 2);
    }

    #[test]
    fn csv_quotes_and_uses_crlf() {
        let s = Series { name: "t".into(), header: vec!["a".into(), "b".into()], rows: vec![vec!["1".into(), "x,\"y\"".into()]] };
        let text = String::from_utf8(csv_bytes(&s).unwrap()).unwrap();
        assert_eq!(text, "a,b\r\n1,\"x,\"\"y\"\"\"\r\n");
    }

    #[test]
    fn atomic_write_replaces_existing_file() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "f.txt", b"one").unwrap();
        write_atomic(dir.path(), "f.txt", b"two").unwrap();
        assert_eq!(std::fs::read(dir.path().join("f.txt")).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
