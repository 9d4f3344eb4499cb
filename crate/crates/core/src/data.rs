//! Dataset readers.
//!
//! Two formats are accepted:
//!
//! - delimited text (comma separated, optionally gzip-compressed with a
//!   `.gz` suffix), one point per row, with an optional header row;
//! - a raw little-endian `f32` matrix: the 8-byte magic `KCRVMAT1`, the row
//!   and column counts as `u32` LE, then the entries in row-major order.
//!
//! In both formats one column may be flagged as the label column.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use flate2::read::GzDecoder;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::write_atomic;

pub const MATRIX_MAGIC: &[u8; 8] = b"KCRVMAT1";

/// Which column of a data file holds the labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelColumn {
    None,
    First,
    Last,
    Index(usize),
}

impl FromStr for LabelColumn {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(LabelColumn::None),
            "first" => Ok(LabelColumn::First),
            "last" => Ok(LabelColumn::Last),
            _ => s
                .parse::<usize>()
                .map(LabelColumn::Index)
                .map_err(|_| format!("label column must be none, first, last or an index, got {s:?}")),
        }
    }
}

impl LabelColumn {
    fn resolve(self, cols: usize) -> Option<usize> {
        match self {
            LabelColumn::None => None,
            LabelColumn::First => Some(0),
            LabelColumn::Last => cols.checked_sub(1),
            LabelColumn::Index(i) => Some(i),
        }
    }
}

/// Preprocessing applied to the feature rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// Each point scaled to unit Euclidean norm.
    UnitNorm,
    /// All entries divided by the largest absolute entry.
    MaxAbs,
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(Normalization::None),
            "unit_norm" => Ok(Normalization::UnitNorm),
            "max_abs" => Ok(Normalization::MaxAbs),
            _ => Err(format!("normalization must be none, unit_norm or max_abs, got {s:?}")),
        }
    }
}

/// Points (one per row) with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: DMatrix<f64>,
    pub labels: Option<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn normalize(&mut self, how: Normalization) -> Result<()> {
        match how {
            Normalization::None => {}
            Normalization::UnitNorm => {
                for mut row in self.points.row_iter_mut() {
                    let n = row.norm();
                    if n == 0.0 {
                        return Err(Error::Degenerate("cannot scale a zero point to unit norm".into()));
                    }
                    row /= n;
                }
            }
            Normalization::MaxAbs => {
                let m = self.points.amax();
                if m > 0.0 {
                    self.points /= m;
                }
            }
        }
        Ok(())
    }

    /// Labels as a one-hot matrix (one column per distinct label value,
    /// ascending) together with the class values.
    pub fn one_hot(&self) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Invalid("dataset has no label column".into()))?;
        let mut classes = labels.clone();
        classes.sort_by(f64::total_cmp);
        classes.dedup();
        let y = DMatrix::from_fn(labels.len(), classes.len(), |i, c| {
            if labels[i] == classes[c] { 1.0 } else { 0.0 }
        });
        Ok((y, classes))
    }
}

fn split_labels(rows: Vec<Vec<f64>>, cols: usize, label: LabelColumn, path: &Path) -> Result<Dataset> {
    let label_idx = label.resolve(cols);
    if let Some(i) = label_idx {
        if i >= cols {
            return Err(Error::parse(path, format!("label column {i} out of range for {cols} columns")));
        }
    }
    let feat_cols = cols - usize::from(label_idx.is_some());
    let mut labels = label_idx.map(|_| Vec::with_capacity(rows.len()));
    let mut data = Vec::with_capacity(rows.len() * feat_cols);
    for row in &rows {
        for (j, v) in row.iter().enumerate() {
            if Some(j) == label_idx {
                labels.as_mut().unwrap().push(*v);
            } else {
                data.push(*v);
            }
        }
    }
    Ok(Dataset {
        points: DMatrix::from_row_slice(rows.len(), feat_cols, &data),
        labels,
    })
}

fn open(path: &Path) -> Result<Box<dyn Read>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(BufReader::new(f))))
    } else {
        Ok(Box::new(BufReader::new(f)))
    }
}

/// Reads a comma-separated file (gzip-compressed when the name ends in
/// `.gz`). A first row that does not parse as numbers is taken as a header.
pub fn read_delimited(path: &Path, label: LabelColumn) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut cols = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::parse(path, format!("row {}: {e}", line + 1))),
        };
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::parse(path, format!("row {} has {} columns, expected {c}", line + 1, row.len())))
            }
            _ => {}
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, format!("row {} has a non-finite value", line + 1)));
        }
        rows.push(row);
    }
    let cols = cols.ok_or_else(|| Error::parse(path, "no data rows"))?;
    split_labels(rows, cols, label, path)
}

/// Reads a `KCRVMAT1` binary matrix.
pub fn read_f32_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = open(path)?;
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[..8] != MATRIX_MAGIC {
        return Err(Error::parse(path, "missing KCRVMAT1 magic"));
    }
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::parse(
            path,
            format!("expected {} bytes of data for {rows}x{cols}, found {}", rows * cols * 4, bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Writes a `KCRVMAT1` binary matrix (entries rounded to `f32`).
pub fn write_f32_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| Error::Invalid("too many rows".into()))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| Error::Invalid("too many columns".into()))?;
    write_atomic(path, |w: &mut BufWriter<File>| {
        w.write_all(MATRIX_MAGIC)?;
        w.write_all(&rows.to_le_bytes())?;
        w.write_all(&cols.to_le_bytes())?;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                w.write_all(&(m[(i, j)] as f32).to_le_bytes())?;
            }
        }
        Ok(())
    })
}

/// Reads either format, choosing by the file's leading bytes.
pub fn read_dataset(path: &Path, label: LabelColumn) -> Result<Dataset> {
    let mut head = [0u8; 8];
    let is_binary = open(path)?.read_exact(&mut head).is_ok() && &head == MATRIX_MAGIC;
    if !is_binary {
        return read_delimited(path, label);
    }
    let m = read_f32_matrix(path)?;
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    split_labels(rows, m.ncols(), label, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;

    #[test]
    fn delimited_with_header_and_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "a,b,y\n1,2,0\n3, 4,1\n").unwrap();
        let d = read_delimited(&path, LabelColumn::Last).unwrap();
        assert_eq!(d.points, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(d.labels, Some(vec![0.0, 1.0]));
        let d = read_delimited(&path, LabelColumn::First).unwrap();
        assert_eq!(d.labels, Some(vec![1.0, 3.0]));
        assert_eq!(read_delimited(&path, LabelColumn::None).unwrap().dim(), 3);
    }

    #[test]
    fn gzip_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv.gz");
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(b"1,2\n3,4\n").unwrap();
        std::fs::write(&path, enc.finish().unwrap()).unwrap();
        let d = read_dataset(&path, LabelColumn::Index(1)).unwrap();
        assert_eq!(d.labels, Some(vec![2.0, 4.0]));
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "1,2\n3\n").unwrap();
        assert!(read_delimited(&path, LabelColumn::None).is_err());
        assert!(matches!(
            read_delimited(&dir.path().join("missing.csv"), LabelColumn::None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 2.0, 3.25, 0.0, 7.0]);
        write_f32_matrix(&path, &m).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], MATRIX_MAGIC);
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(read_f32_matrix(&path).unwrap(), m);
        let d = read_dataset(&path, LabelColumn::Last).unwrap();
        assert_eq!(d.labels, Some(vec![2.0, 7.0]));
    }

    #[test]
    fn normalization_and_one_hot() {
        let mut d = Dataset {
            points: DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 2.0]),
            labels: Some(vec![7.0, 3.0]),
        };
        d.normalize(Normalization::UnitNorm).unwrap();
        assert!((d.points[(0, 0)] - 0.6).abs() < 1e-15);
        let (y, classes) = d.one_hot().unwrap();
        assert_eq!(classes, vec![3.0, 7.0]);
        assert_eq!(y, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }
}
