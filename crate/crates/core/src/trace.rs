//! Versioned CSV output for traces and sweep summaries.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// First line of every CSV this crate writes.
pub const SCHEMA_HEADER: &str = "# cgvamp-trace v1";

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Serializes `rows` to CSV text, schema comment first.
pub fn to_csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

pub fn write_csv<W: Write, T: Serialize>(mut out: W, rows: &[T]) -> Result<()> {
    writeln!(out, "{SCHEMA_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `rows` to `path`. A trailing `# error:` comment records why a run
/// ended early.
pub fn write_csv_file<T: Serialize>(path: &Path, rows: &[T], error: Option<&str>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_csv(&mut out, rows)?;
    if let Some(e) = error {
        writeln!(out, "# error: {}", e.replace('\n', " "))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv_file`], rejecting unknown schema versions.
pub fn read_csv_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    if first.trim_end() != SCHEMA_HEADER {
        return Err(Error::Io(format!("{}: missing or unknown schema header {:?}", path.display(), first.trim_end())));
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}
