//! Dataset loading and matrix file output.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Result, SparlowError};
use crate::graphs::LabelSet;

pub const RAW_MAGIC: &[u8; 8] = b"SPLWDATA";
const NORM_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Raw,
}

impl FromStr for DataFormat {
    type Err = SparlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "raw" | "raw-f64" => Ok(DataFormat::Raw),
            other => Err(SparlowError::Validation(format!("unknown data format '{other}'"))),
        }
    }
}

/// Samples as unit-norm columns, with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub labels: Option<LabelSet>,
}

impl Dataset {
    /// Normalizes the columns of `x`; zero columns are rejected.
    pub fn new(x: DMatrix<f64>, labels: Option<LabelSet>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != x.ncols() {
                return Err(SparlowError::Validation(format!(
                    "{} labels for {} samples",
                    l.len(),
                    x.ncols()
                )));
            }
        }
        Ok(Dataset {
            x: normalize_columns(x)?,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }
}

pub fn normalize_columns(mut x: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SparlowError::Validation("data contains non-finite values".into()));
    }
    for (index, mut col) in x.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm <= NORM_FLOOR {
            return Err(SparlowError::ZeroNorm { index });
        }
        col /= norm;
    }
    Ok(x)
}

/// Parses one sample per row; returns the `m×n` column-per-sample matrix.
pub fn parse_csv<R: Read>(reader: R, source: &str) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| SparlowError::Parse {
            location: format!("{source}:{}", e.position().map_or(0, |p| p.line())),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(rows as u64 + 1, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(SparlowError::Parse {
                    location: format!("{source}:{line}"),
                    message: format!("expected {w} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| SparlowError::Parse {
                location: format!("{source}:{line}:{}", col + 1),
                message: format!("'{field}' is not a number"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let m = width.unwrap_or(0);
    if rows == 0 || m == 0 {
        return Err(SparlowError::Parse {
            location: source.to_string(),
            message: "no samples".into(),
        });
    }
    // row-major samples are exactly the column-major m×n matrix
    Ok(DMatrix::from_vec(m, rows, values))
}

/// Parses the raw little-endian column-major format.
pub fn parse_raw(bytes: &[u8], source: &str) -> Result<DMatrix<f64>> {
    let err = |offset: usize, message: String| SparlowError::Parse {
        location: format!("{source}@{offset}"),
        message,
    };
    if bytes.len() < 16 || &bytes[..8] != RAW_MAGIC {
        return Err(err(0, "missing SPLWDATA header".into()));
    }
    let m = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if m == 0 || n == 0 {
        return Err(err(8, format!("empty matrix {m}×{n}")));
    }
    let expected = m
        .checked_mul(n)
        .and_then(|k| k.checked_mul(8))
        .and_then(|k| k.checked_add(16))
        .ok_or_else(|| err(8, "dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(err(
            bytes.len().min(expected),
            format!("expected {expected} bytes for {m}×{n}, found {}", bytes.len()),
        ));
    }
    let values = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_vec(m, n, values))
}

/// One integer per line; `-1` marks an unlabeled sample.
pub fn parse_labels(text: &str, source: &str) -> Result<LabelSet> {
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: i64 = line.parse().map_err(|_| SparlowError::Parse {
            location: format!("{source}:{}", i + 1),
            message: format!("'{line}' is not an integer label"),
        })?;
        labels.push(v);
    }
    LabelSet::new(labels)
}

pub fn load_labels(path: &Path) -> Result<LabelSet> {
    parse_labels(&fs::read_to_string(path)?, &path.display().to_string())
}

/// `<path>.labels`, or the path with its extension replaced by `.labels`.
pub fn sibling_labels(path: &Path) -> Option<PathBuf> {
    let mut appended = path.as_os_str().to_owned();
    appended.push(".labels");
    let appended = PathBuf::from(appended);
    if appended.is_file() {
        return Some(appended);
    }
    let replaced = path.with_extension("labels");
    (replaced != path && replaced.is_file()).then_some(replaced)
}

/// Reads data (and labels, from `labels` or a sibling file) and normalizes
/// every sample to unit norm.
pub fn load_dataset(path: &Path, format: DataFormat, labels: Option<&Path>) -> Result<Dataset> {
    let source = path.display().to_string();
    let x = match format {
        DataFormat::Csv => parse_csv(fs::File::open(path)?, &source)?,
        DataFormat::Raw => parse_raw(&fs::read(path)?, &source)?,
    };
    let labels = match labels {
        Some(p) => Some(load_labels(p)?),
        None => sibling_labels(path).map(|p| load_labels(&p)).transpose()?,
    };
    Dataset::new(x, labels)
}

/// Writes `m` rows of comma-separated values.
pub fn write_csv_rows(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes samples (columns of `x`) one per row.
pub fn write_csv_samples(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    write_csv_rows(path, &x.transpose())
}

pub fn write_raw(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + 8 * x.len());
    bytes.extend_from_slice(RAW_MAGIC);
    bytes.extend_from_slice(&(x.nrows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(x.ncols() as u32).to_le_bytes());
    for v in x.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_labels(path: &Path, labels: &LabelSet) -> Result<()> {
    let text: String = labels.raw().iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, text)?;
    Ok(())
}
