//! Loading and saving of embeddings, labels, and logits.
//!
//! Two on-disk encodings are supported for real-valued matrices:
//!
//! * **Binary** (`POTF`): 4-byte magic `POTF`, a `u8` version (currently 1),
//!   `u32` little-endian row count, `u32` little-endian column count, then
//!   `rows * cols` little-endian `f32` values in row-major order. The header
//!   is 13 bytes.
//! * **CSV**: one sample per line, comma separated, optionally preceded by a
//!   single header line.
//!
//! Values are stored as `f32` on disk and widened to `f64` in memory.

use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

/// Magic bytes opening every binary matrix file.
pub const MAGIC: &[u8; 4] = b"POTF";
/// Current binary format version.
pub const FORMAT_VERSION: u8 = 1;
/// Size of the binary header in bytes.
pub const HEADER_LEN: usize = 13;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value at row {row}, column {col}{}", .offset.map(|o| format!(" (byte {o})")).unwrap_or_default())]
    NonFiniteValue {
        row: usize,
        col: usize,
        offset: Option<usize>,
    },
    #[error("unparseable value {value:?} at row {row}, column {col}")]
    MalformedValue { row: usize, col: usize, value: String },
    #[error("empty matrix: rows and cols must both be at least 1")]
    EmptyMatrix,
    #[error("negative label {label} at line {line}")]
    NegativeLabel { line: usize, label: i64 },
    #[error("label {label} at line {line} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        line: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::IoFailure {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            IngestError::MalformedHeader { .. } => "MalformedHeader",
            IngestError::DimensionMismatch(_) => "DimensionMismatch",
            IngestError::NonFiniteValue { .. } => "NonFiniteValue",
            IngestError::MalformedValue { .. } => "MalformedValue",
            IngestError::EmptyMatrix => "EmptyMatrix",
            IngestError::NegativeLabel { .. } => "NegativeLabel",
            IngestError::LabelOutOfRange { .. } => "LabelOutOfRange",
            IngestError::IoFailure { .. } => "IoFailure",
        }
    }
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// On-disk encoding of a matrix file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Csv { skip_header: bool },
}

impl Format {
    /// `.csv` files are CSV without a header; everything else is binary.
    pub fn from_path(path: &Path, skip_header: bool) -> Self {
        let is_csv = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            Format::Csv { skip_header }
        } else {
            Format::Binary
        }
    }
}

/// Dense row-major matrix of finite reals, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(IngestError::EmptyMatrix);
        }
        if data.len() != rows * cols {
            return Err(IngestError::DimensionMismatch(format!(
                "expected {rows}x{cols} = {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::NonFiniteValue {
                row: idx / cols,
                col: idx % cols,
                offset: None,
            });
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(IngestError::DimensionMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        FeatureMatrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn transpose(&self) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            data.extend((0..self.rows).map(|r| self.data[r * self.cols + c]));
        }
        FeatureMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<FeatureMatrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix::new(indices.len(), self.cols, data)
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.cols != other.cols {
            return Err(IngestError::DimensionMismatch(format!(
                "cannot stack {} columns onto {}",
                other.cols, self.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        FeatureMatrix::new(self.rows + other.rows, self.cols, data)
    }

    /// Scales every row to unit Euclidean norm. All-zero rows are left untouched.
    pub fn l2_normalized(&self) -> FeatureMatrix {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.cols) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        FeatureMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

/// Training embeddings with integer class labels in `[0, num_classes)`.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: FeatureMatrix,
    labels: Vec<usize>,
    num_classes: usize,
    present: Vec<bool>,
}

impl LabeledDataset {
    /// When `num_classes` is `None` it is inferred as `max label + 1`.
    pub fn new(
        features: FeatureMatrix,
        labels: Vec<usize>,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(IngestError::DimensionMismatch(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        let inferred = labels.iter().max().map_or(0, |m| m + 1);
        let num_classes = num_classes.unwrap_or(inferred);
        let mut present = vec![false; num_classes];
        for (line, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(IngestError::LabelOutOfRange {
                    line,
                    label,
                    num_classes,
                });
            }
            present[label] = true;
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
            present,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Whether class `c` has at least one sample.
    pub fn is_present(&self, c: usize) -> bool {
        self.present.get(c).copied().unwrap_or(false)
    }
}

/// Per-sample classifier logits, one column per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix(FeatureMatrix);

impl LogitMatrix {
    pub fn new(matrix: FeatureMatrix) -> Self {
        LogitMatrix(matrix)
    }

    pub fn num_classes(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &FeatureMatrix {
        &self.0
    }
}

pub fn load_features(path: &Path, format: Format) -> Result<FeatureMatrix> {
    match format {
        Format::Binary => {
            let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
            decode_binary(&bytes)
        }
        Format::Csv { skip_header } => {
            let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
            parse_csv(&text, skip_header)
        }
    }
}

pub fn save_features(matrix: &FeatureMatrix, path: &Path) -> Result<()> {
    let bytes = encode_binary(matrix)?;
    fs::write(path, bytes).map_err(|e| IngestError::io(path, e))
}

/// Serializes to the `POTF` binary layout. Fails if a value overflows `f32`.
pub fn encode_binary(matrix: &FeatureMatrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(matrix.rows())
        .map_err(|_| IngestError::DimensionMismatch("row count exceeds u32".into()))?;
    let cols = u32::try_from(matrix.cols())
        .map_err(|_| IngestError::DimensionMismatch("column count exceeds u32".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * matrix.data().len());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for (idx, &v) in matrix.data().iter().enumerate() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(IngestError::NonFiniteValue {
                row: idx / matrix.cols(),
                col: idx % matrix.cols(),
                offset: Some(out.len()),
            });
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_binary(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(IngestError::MalformedHeader {
            offset: bytes.len(),
            reason: format!("file is {} bytes, header needs {HEADER_LEN}", bytes.len()),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(IngestError::MalformedHeader {
            offset: 0,
            reason: format!("bad magic {:?}", &bytes[0..4]),
        });
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(IngestError::MalformedHeader {
            offset: 4,
            reason: format!("unsupported version {}", bytes[4]),
        });
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(IngestError::MalformedHeader {
            offset: if rows == 0 { 5 } else { 9 },
            reason: format!("zero-sized matrix {rows}x{cols}"),
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| IngestError::MalformedHeader {
            offset: 5,
            reason: format!("{rows}x{cols} overflows"),
        })?;
    if payload.len() != expected {
        return Err(IngestError::DimensionMismatch(format!(
            "header declares {rows}x{cols} ({expected} payload bytes) but payload is {} bytes",
            payload.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (idx, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(IngestError::NonFiniteValue {
                row: idx / cols,
                col: idx % cols,
                offset: Some(HEADER_LEN + 4 * idx),
            });
        }
        data.push(f64::from(v));
    }
    FeatureMatrix::new(rows, cols, data)
}

pub fn parse_csv(text: &str, skip_header: bool) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(skip_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut cols = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IngestError::MalformedValue {
            row,
            col: 0,
            value: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(IngestError::DimensionMismatch(format!(
                    "row {row} has {} columns, expected {c}",
                    record.len()
                )))
            }
            _ => {}
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| IngestError::MalformedValue {
                row,
                col,
                value: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(IngestError::NonFiniteValue {
                    row,
                    col,
                    offset: None,
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    FeatureMatrix::new(rows, cols.unwrap_or(0), data)
}

/// Reads one integer class id per line. Blank lines are skipped.
pub fn load_labels(path: &Path, num_classes: Option<usize>) -> Result<Vec<usize>> {
    let file = fs::File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut labels = Vec::new();
    for (line, text) in BufReader::new(file).lines().enumerate() {
        let text = text.map_err(|e| IngestError::io(path, e))?;
        let field = text.trim().trim_end_matches(',').trim();
        if field.is_empty() {
            continue;
        }
        labels.push(parse_label(field, line, num_classes)?);
    }
    Ok(labels)
}

pub fn parse_labels(text: &str, num_classes: Option<usize>) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .map(|(line, t)| (line, t.trim().trim_end_matches(',').trim()))
        .filter(|(_, t)| !t.is_empty())
        .map(|(line, t)| parse_label(t, line, num_classes))
        .collect()
}

fn parse_label(field: &str, line: usize, num_classes: Option<usize>) -> Result<usize> {
    let value: i64 = field.parse().map_err(|_| IngestError::MalformedValue {
        row: line,
        col: 0,
        value: field.to_string(),
    })?;
    if value < 0 {
        return Err(IngestError::NegativeLabel { line, label: value });
    }
    let label = value as usize;
    if let Some(c) = num_classes {
        if label >= c {
            return Err(IngestError::LabelOutOfRange {
                line,
                label,
                num_classes: c,
            });
        }
    }
    Ok(label)
}

pub fn save_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| IngestError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(rows: u32, cols: u32) -> Vec<u8> {
        let mut b = b"POTF".to_vec();
        b.push(1);
        b.extend_from_slice(&rows.to_le_bytes());
        b.extend_from_slice(&cols.to_le_bytes());
        b
    }

    #[test]
    fn decodes_two_by_two() {
        let mut bytes = header(2, 2);
        for v in [0.0f32, 0.0, 1.0, 1.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let m = decode_binary(&bytes).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 2));
        assert_eq!(m.row(0), &[0.0, 0.0]);
        assert_eq!(m.row(1), &[1.0, 1.0]);
    }

    #[test]
    fn csv_parses_rows() {
        let m = parse_csv("0.5,0.5\n1.0,2.0", false).unwrap();
        assert_eq!(m.data(), &[0.5, 0.5, 1.0, 2.0]);
        let m = parse_csv("a,b\n0.5,0.5\n", true).unwrap();
        assert_eq!(m.rows(), 1);
    }

    #[test]
    fn csv_rejects_nan() {
        match parse_csv("nan,1\n2,3", false) {
            Err(IngestError::NonFiniteValue { row: 0, col: 0, .. }) => {}
            other => panic!("expected NonFiniteValue at row 0, got {other:?}"),
        }
    }

    #[test]
    fn csv_ragged_rows() {
        assert!(matches!(
            parse_csv("1,2\n3", false),
            Err(IngestError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn one_by_one_file_is_17_bytes() {
        let m = FeatureMatrix::new(1, 1, vec![42.0]).unwrap();
        let bytes = encode_binary(&m).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert_eq!(bytes.len(), 17);
        assert_eq!(&bytes[13..], &42.0f32.to_le_bytes());
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(matches!(
            FeatureMatrix::new(0, 3, vec![]),
            Err(IngestError::EmptyMatrix)
        ));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            decode_binary(b"POT"),
            Err(IngestError::MalformedHeader { .. })
        ));
        let mut bad = header(1, 1);
        bad[0] = b'X';
        bad.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(matches!(
            decode_binary(&bad),
            Err(IngestError::MalformedHeader { offset: 0, .. })
        ));
        let mut v2 = header(1, 1);
        v2[4] = 2;
        v2.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(matches!(
            decode_binary(&v2),
            Err(IngestError::MalformedHeader { offset: 4, .. })
        ));
        let short = header(2, 2);
        assert!(matches!(
            decode_binary(&short),
            Err(IngestError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn binary_non_finite_names_offset() {
        let mut bytes = header(1, 2);
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        match decode_binary(&bytes) {
            Err(IngestError::NonFiniteValue {
                row: 0,
                col: 1,
                offset: Some(17),
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn encode_rejects_f32_overflow() {
        let m = FeatureMatrix::new(1, 1, vec![1e300]).unwrap();
        assert!(matches!(
            encode_binary(&m),
            Err(IngestError::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn labels() {
        assert_eq!(parse_labels("0\n1\n0", None).unwrap(), vec![0, 1, 0]);
        assert!(matches!(
            parse_labels("2", Some(2)),
            Err(IngestError::LabelOutOfRange { label: 2, .. })
        ));
        assert!(matches!(
            parse_labels("-1", None),
            Err(IngestError::NegativeLabel { label: -1, .. })
        ));
        assert!(matches!(
            parse_labels("x", None),
            Err(IngestError::MalformedValue { .. })
        ));
    }

    #[test]
    fn dataset_records_present_classes() {
        let f = FeatureMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let ds = LabeledDataset::new(f.clone(), vec![0, 2], Some(4)).unwrap();
        assert!(ds.is_present(0) && !ds.is_present(1) && ds.is_present(2));
        assert!(LabeledDataset::new(f.clone(), vec![0], None).is_err());
        assert!(LabeledDataset::new(f, vec![0, 5], Some(3)).is_err());
    }

    #[test]
    fn transpose_roundtrip() {
        let m = FeatureMatrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let t = m.transpose();
        assert_eq!((t.rows(), t.cols()), (3, 2));
        assert_eq!(t.row(2), &[3.0, 6.0]);
        assert_eq!(t.transpose(), m);
    }

    #[test]
    fn format_detection() {
        assert_eq!(
            Format::from_path(Path::new("a/b.CSV"), false),
            Format::Csv { skip_header: false }
        );
        assert_eq!(Format::from_path(Path::new("x.potf"), true), Format::Binary);
    }
}
