//! File plumbing shared by the subcommands.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;
use tta_core::data_io::{read_csv, read_stream, read_weights, FeatureRecord, StreamHeader};
use tta_core::numerics::Mat64;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub type RecordIter = Box<dyn Iterator<Item = tta_core::Result<FeatureRecord>>>;

/// Opens an FTS1 stream, or a CSV fixture when the extension is `csv`.
pub fn open_records(path: &Path) -> Result<(StreamHeader, RecordIter)> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let (header, records) = read_csv(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
        Ok((header, Box::new(records.into_iter().map(Ok))))
    } else {
        let reader = read_stream(path).with_context(|| format!("reading {}", path.display()))?;
        Ok((*reader.header(), Box::new(reader)))
    }
}

pub fn load_weights(path: &Path) -> Result<Mat64> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_weights(BufReader::new(file)).with_context(|| format!("reading weights {}", path.display()))
}

/// Fails unless the stream was produced for a classifier of this shape.
pub fn check_dims(header: &StreamHeader, weights: &Mat64) -> Result<()> {
    if header.d as usize != weights.cols() || header.c as usize != weights.rows() {
        bail!(
            "configuration error: stream has d = {}, c = {} but weights are {} x {}",
            header.d,
            header.c,
            weights.rows(),
            weights.cols()
        );
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_lines<I: IntoIterator<Item = String>>(path: &Path, lines: I) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for line in lines {
        writeln!(out, "{line}")?;
    }
    out.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))
}

/// `foo.fts` -> `foo.fts.manifest.json`
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// The manifest that produced `path`, if any: its sidecar, or the synth
/// manifest of the directory it sits in.
pub fn provenance(path: &Path) -> Value {
    let read = |p: PathBuf| -> Option<Value> { serde_json::from_str(&fs::read_to_string(p).ok()?).ok() };
    read(sidecar(path))
        .or_else(|| {
            path.parent()
                .and_then(|dir| read(dir.join("manifest.json")))
                .filter(|m| m.get("command").and_then(Value::as_str) == Some("synth"))
        })
        .unwrap_or(Value::Null)
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}
