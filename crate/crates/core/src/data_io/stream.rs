//! `FTS1` binary feature streams, the CSV variant and `FTW1` weight files.
//!
//! Stream layout (little endian): magic `FTS1`, `u32` version, `u32` d,
//! `u32` c, `u32` positive class, `u64` record count, then per record `d`
//! feature `f32`s, `c` logit `f32`s and one `i8` label (`-1` = unknown).

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::numerics::Mat64;

pub const STREAM_MAGIC: [u8; 4] = *b"FTS1";
pub const WEIGHTS_MAGIC: [u8; 4] = *b"FTW1";
pub const STREAM_VERSION: u32 = 1;

/// What the engine sees of a test sample: no label.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub feature: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub feature: Vec<f64>,
    pub logits: Vec<f64>,
    /// `0`, `1`, or `-1` when unknown.
    pub label: i8,
}

impl FeatureRecord {
    pub fn observation(&self) -> Observation {
        Observation { feature: self.feature.clone(), logits: self.logits.clone() }
    }

    pub fn into_parts(self) -> (Observation, i8) {
        (Observation { feature: self.feature, logits: self.logits }, self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub version: u32,
    pub d: u32,
    pub c: u32,
    pub positive_class: u32,
    pub record_count: u64,
}

impl StreamHeader {
    pub fn new(d: usize, c: usize, positive_class: usize, record_count: usize) -> Result<Self> {
        let header = Self {
            version: STREAM_VERSION,
            d: d as u32,
            c: c as u32,
            positive_class: positive_class as u32,
            record_count: record_count as u64,
        };
        header.validate()?;
        Ok(header)
    }

    fn validate(&self) -> Result<()> {
        if self.version != STREAM_VERSION {
            return Err(Error::Format(format!("unsupported version {}", self.version)));
        }
        if self.d == 0 || self.c == 0 {
            return Err(Error::Format(format!("dimensions must be positive (d = {}, c = {})", self.d, self.c)));
        }
        if self.positive_class >= self.c {
            return Err(Error::Format(format!(
                "positive class {} out of range for {} classes",
                self.positive_class, self.c
            )));
        }
        Ok(())
    }

    fn check_record(&self, i: usize, r: &FeatureRecord) -> Result<()> {
        if r.feature.len() != self.d as usize || r.logits.len() != self.c as usize {
            return Err(invalid_arg(format!(
                "record {i}: expected {} features and {} logits, got {} and {}",
                self.d,
                self.c,
                r.feature.len(),
                r.logits.len()
            )));
        }
        if !(-1..=1).contains(&r.label) {
            return Err(invalid_arg(format!("record {i}: label {} not in {{-1, 0, 1}}", r.label)));
        }
        Ok(())
    }
}

pub fn write_stream<W: Write>(mut out: W, header: &StreamHeader, records: &[FeatureRecord]) -> Result<()> {
    header.validate()?;
    if header.record_count != records.len() as u64 {
        return Err(invalid_arg(format!(
            "header announces {} records, got {}",
            header.record_count,
            records.len()
        )));
    }
    out.write_all(&STREAM_MAGIC)?;
    for v in [header.version, header.d, header.c, header.positive_class] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&header.record_count.to_le_bytes())?;
    for (i, r) in records.iter().enumerate() {
        header.check_record(i, r)?;
        for v in r.feature.iter().chain(&r.logits) {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
        out.write_all(&r.label.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_stream_file(path: &Path, header: &StreamHeader, records: &[FeatureRecord]) -> Result<()> {
    write_stream(BufWriter::new(File::create(path)?), header, records)
}

fn read_array<const N: usize, R: Read>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

/// Sequential, single-pass reader over an `FTS1` stream.
pub struct StreamReader<R> {
    header: StreamHeader,
    inner: R,
    next: u64,
}

impl<R: Read> StreamReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let magic: [u8; 4] = read_array(&mut inner, "header")?;
        if magic != STREAM_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:02x?}, expected \"FTS1\"")));
        }
        let mut u32s = [0u32; 4];
        for v in &mut u32s {
            *v = u32::from_le_bytes(read_array(&mut inner, "header")?);
        }
        let record_count = u64::from_le_bytes(read_array(&mut inner, "header")?);
        let [version, d, c, positive_class] = u32s;
        let header = StreamHeader { version, d, c, positive_class, record_count };
        header.validate()?;
        Ok(Self { header, inner, next: 0 })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn read_record(&mut self) -> Result<FeatureRecord> {
        let i = self.next;
        let (d, c) = (self.header.d as usize, self.header.c as usize);
        let mut buf = vec![0u8; 4 * (d + c) + 1];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::Format(format!("truncated stream at record {i}")),
            _ => Error::Io(e),
        })?;
        let mut values = buf[..4 * (d + c)]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))));
        let feature: Vec<f64> = values.by_ref().take(d).collect();
        let logits: Vec<f64> = values.collect();
        let label = buf[4 * (d + c)] as i8;
        if !(-1..=1).contains(&label) {
            return Err(Error::Format(format!("record {i}: label {label} not in {{-1, 0, 1}}")));
        }
        if feature.iter().chain(&logits).any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("record {i}: non-finite value")));
        }
        Ok(FeatureRecord { feature, logits, label })
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<FeatureRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.header.record_count {
            return None;
        }
        let rec = self.read_record();
        self.next += 1;
        if rec.is_err() {
            // stop after the first failure
            self.next = self.header.record_count;
        }
        Some(rec)
    }
}

pub fn read_stream(path: &Path) -> Result<StreamReader<BufReader<File>>> {
    StreamReader::new(BufReader::new(File::open(path)?))
}

/// Plain-text variant: header line `d,c,positive_class`, then one row per
/// record `f_0..f_{d-1}, l_0..l_{c-1}, label`.
pub fn read_csv<R: Read>(input: R) -> Result<(StreamHeader, Vec<FeatureRecord>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut rows = reader.records();
    let parse_err = |row: usize, e: &dyn std::fmt::Display| Error::Format(format!("csv row {row}: {e}"));
    let head = rows
        .next()
        .ok_or_else(|| Error::Format("empty csv".into()))?
        .map_err(|e| parse_err(0, &e))?;
    let nums: Vec<u32> = head
        .iter()
        .map(|f| f.parse::<u32>().map_err(|e| parse_err(0, &e)))
        .collect::<Result<_>>()?;
    let [d, c, positive_class] = nums[..] else {
        return Err(Error::Format(format!("csv header needs d,c,positive_class, got {} fields", nums.len())));
    };
    let mut header = StreamHeader { version: STREAM_VERSION, d, c, positive_class, record_count: 0 };
    header.validate()?;
    let width = (d + c) as usize + 1;
    let mut records = Vec::new();
    for (i, row) in rows.enumerate() {
        let row = row.map_err(|e| parse_err(i + 1, &e))?;
        if row.len() != width {
            return Err(Error::Format(format!("csv record {i}: expected {width} fields, got {}", row.len())));
        }
        let vals: Vec<f64> = row
            .iter()
            .take(width - 1)
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(i + 1, &e)))
            .collect::<Result<_>>()?;
        let label: i8 = row[width - 1].parse().map_err(|e| parse_err(i + 1, &e))?;
        let rec = FeatureRecord {
            feature: vals[..d as usize].to_vec(),
            logits: vals[d as usize..].to_vec(),
            label,
        };
        header.check_record(i, &rec).map_err(|e| Error::Format(e.to_string()))?;
        records.push(rec);
    }
    header.record_count = records.len() as u64;
    Ok((header, records))
}

pub fn write_csv<W: Write>(out: W, header: &StreamHeader, records: &[FeatureRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([header.d.to_string(), header.c.to_string(), header.positive_class.to_string()])
        .map_err(csv_err)?;
    for (i, r) in records.iter().enumerate() {
        header.check_record(i, r)?;
        let fields = r.feature.iter().chain(&r.logits).map(f64::to_string).chain([r.label.to_string()]);
        w.write_record(fields).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `FTW1` weight file: magic, `u32` version, `u32` d, `u32` c, then the
/// row-major `c x d` matrix as `f32`.
pub fn write_weights<W: Write>(mut out: W, weights: &Mat64) -> Result<()> {
    out.write_all(&WEIGHTS_MAGIC)?;
    for v in [STREAM_VERSION, weights.cols() as u32, weights.rows() as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in weights.values() {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_weights<R: Read>(mut input: R) -> Result<Mat64> {
    let magic: [u8; 4] = read_array(&mut input, "weights header")?;
    if magic != WEIGHTS_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:02x?}, expected \"FTW1\"")));
    }
    let version = u32::from_le_bytes(read_array(&mut input, "weights header")?);
    if version != STREAM_VERSION {
        return Err(Error::Format(format!("unsupported weights version {version}")));
    }
    let d = u32::from_le_bytes(read_array(&mut input, "weights header")?) as usize;
    let c = u32::from_le_bytes(read_array(&mut input, "weights header")?) as usize;
    let mut values = Vec::with_capacity(c * d);
    for i in 0..c * d {
        let b: [u8; 4] = read_array(&mut input, &format!("weights value {i}"))?;
        values.push(f64::from(f32::from_le_bytes(b)));
    }
    Mat64::new(c, d, values).map_err(|e| Error::Format(e.to_string()))
}
