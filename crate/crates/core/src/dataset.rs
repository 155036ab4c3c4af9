//! Incomplete datasets and their on-disk format.
//!
//! A dataset file starts with one ASCII header line
//!
//! ```text
//! MISGAN-DATASET v1 kind=<incomplete|complete|ground_truth> n=<dim> count=<rows> dtype=f64le
//! ```
//!
//! followed by `count × n` little-endian `f64` values in row-major order and,
//! unless `kind=complete`, `count × n` mask bytes (`0` or `1`). Unobserved
//! values are stored as `0.0` in `incomplete` files. A `ground_truth` file
//! holds the full values next to the same masks and is written separately so
//! training never sees it.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::masking::{Mask, MaskError, MaskMechanism};
use crate::rng::Rng;
use crate::tensor::Tensor;

const MAGIC: &str = "MISGAN-DATASET";
const VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad dataset header: {0}")]
    Header(String),
    #[error("expected a {expected} file, found {found}")]
    WrongKind {
        expected: &'static str,
        found: String,
    },
    #[error("file body has {got} bytes, header implies {expected}")]
    Truncated { expected: usize, got: usize },
    #[error("row {row} has length {got}, expected {expected}")]
    RowLength {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("value at row {row}, column {col} is not finite")]
    NonFinite { row: usize, col: usize },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Incomplete,
    Complete,
    GroundTruth,
}

impl FileKind {
    fn name(self) -> &'static str {
        match self {
            FileKind::Incomplete => "incomplete",
            FileKind::Complete => "complete",
            FileKind::GroundTruth => "ground_truth",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "incomplete" => Some(FileKind::Incomplete),
            "complete" => Some(FileKind::Complete),
            "ground_truth" => Some(FileKind::GroundTruth),
            _ => None,
        }
    }
}

/// Rows of `(x, m)` with unobserved entries of `x` zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct IncompleteDataset {
    n: usize,
    values: Vec<f64>,
    masks: Vec<u8>,
}

impl IncompleteDataset {
    /// Builds from full rows and masks, zeroing unobserved values.
    pub fn new(rows: &[Vec<f64>], masks: &[Mask]) -> Result<Self, DatasetError> {
        let n = rows.first().ok_or(DatasetError::Empty)?.len();
        if masks.len() != rows.len() {
            return Err(DatasetError::RowLength {
                row: masks.len().min(rows.len()),
                expected: rows.len(),
                got: masks.len(),
            });
        }
        let mut values = Vec::with_capacity(n * rows.len());
        let mut bits = Vec::with_capacity(n * rows.len());
        for (i, (x, m)) in rows.iter().zip(masks).enumerate() {
            if x.len() != n || m.len() != n {
                return Err(DatasetError::RowLength {
                    row: i,
                    expected: n,
                    got: if x.len() != n { x.len() } else { m.len() },
                });
            }
            for (d, (&v, &b)) in x.iter().zip(m.bits()).enumerate() {
                if b == 1 && !v.is_finite() {
                    return Err(DatasetError::NonFinite { row: i, col: d });
                }
                values.push(if b == 1 { v } else { 0.0 });
                bits.push(b);
            }
        }
        Ok(Self {
            n,
            values,
            masks: bits,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn mask(&self, i: usize) -> Mask {
        Mask::new(self.masks[i * self.n..(i + 1) * self.n].to_vec()).expect("validated")
    }

    pub fn masks(&self) -> Vec<Mask> {
        (0..self.len()).map(|i| self.mask(i)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.x(i).to_vec()).collect()
    }

    pub fn missing_rate(&self) -> f64 {
        self.masks.iter().filter(|&&b| b == 0).count() as f64 / self.masks.len() as f64
    }

    /// `[batch, n]` tensors of values and masks for the given row indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let n = self.n;
        let mut x = Vec::with_capacity(indices.len() * n);
        let mut m = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            x.extend_from_slice(self.x(i));
            m.extend(self.masks[i * n..(i + 1) * n].iter().map(|&b| f64::from(b)));
        }
        let shape = vec![indices.len(), n];
        (
            Tensor::new(shape.clone(), x).expect("sized"),
            Tensor::new(shape, m).expect("sized"),
        )
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        write_file(
            path,
            FileKind::Incomplete,
            self.n,
            &self.values,
            Some(&self.masks),
        )
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let (kind, n, values, masks) = read_file(path)?;
        if kind != FileKind::Incomplete {
            return Err(DatasetError::WrongKind {
                expected: "incomplete",
                found: kind.name().into(),
            });
        }
        let masks = masks.expect("incomplete files carry masks");
        for (i, (&v, &b)) in values.iter().zip(&masks).enumerate() {
            if b == 0 && v != 0.0 {
                return Err(DatasetError::Header(format!(
                    "unobserved entry at row {}, column {} is not zero",
                    i / n,
                    i % n
                )));
            }
        }
        Ok(Self { n, values, masks })
    }
}

/// Full values aligned with the masks of an [`IncompleteDataset`], used only
/// for scoring imputations.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub n: usize,
    pub rows: Vec<Vec<f64>>,
    pub masks: Vec<Mask>,
}

impl GroundTruth {
    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let values: Vec<f64> = self.rows.iter().flatten().copied().collect();
        let masks: Vec<u8> = self.masks.iter().flat_map(|m| m.bits().to_vec()).collect();
        write_file(path, FileKind::GroundTruth, self.n, &values, Some(&masks))
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let (kind, n, values, masks) = read_file(path)?;
        if kind != FileKind::GroundTruth {
            return Err(DatasetError::WrongKind {
                expected: "ground_truth",
                found: kind.name().into(),
            });
        }
        let masks = masks.expect("ground-truth files carry masks");
        Ok(Self {
            n,
            rows: values.chunks(n).map(<[f64]>::to_vec).collect(),
            masks: masks
                .chunks(n)
                .map(|c| Mask::new(c.to_vec()))
                .collect::<Result<_, _>>()?,
        })
    }
}

/// Reads a `complete` file as rows.
pub fn read_complete(path: &Path) -> Result<Vec<Vec<f64>>, DatasetError> {
    let (kind, n, values, _) = read_file(path)?;
    if kind != FileKind::Complete {
        return Err(DatasetError::WrongKind {
            expected: "complete",
            found: kind.name().into(),
        });
    }
    Ok(values.chunks(n).map(<[f64]>::to_vec).collect())
}

pub fn write_complete(path: &Path, rows: &[Vec<f64>]) -> Result<(), DatasetError> {
    let n = rows.first().ok_or(DatasetError::Empty)?.len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(DatasetError::RowLength {
            row: i,
            expected: n,
            got: r.len(),
        });
    }
    let values: Vec<f64> = rows.iter().flatten().copied().collect();
    write_file(path, FileKind::Complete, n, &values, None)
}

/// Masks every row with a fresh draw from `mechanism`.
pub fn make_incomplete_dataset(
    rows: &[Vec<f64>],
    mechanism: &MaskMechanism,
    rng: &mut Rng,
) -> Result<(IncompleteDataset, GroundTruth), DatasetError> {
    let n = rows.first().ok_or(DatasetError::Empty)?.len();
    mechanism.validate(n)?;
    let masks: Vec<Mask> = rows
        .iter()
        .map(|_| mechanism.sample(rng, n))
        .collect::<Result<_, _>>()?;
    let data = IncompleteDataset::new(rows, &masks)?;
    let truth = GroundTruth {
        n,
        rows: rows.to_vec(),
        masks,
    };
    Ok((data, truth))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(
    path: &Path,
    kind: FileKind,
    n: usize,
    values: &[f64],
    masks: Option<&[u8]>,
) -> Result<(), DatasetError> {
    let count = values.len() / n.max(1);
    let mut buf = format!(
        "{MAGIC} {VERSION} kind={} n={n} count={count} dtype=f64le\n",
        kind.name()
    )
    .into_bytes();
    buf.reserve(values.len() * 8 + masks.map_or(0, <[u8]>::len));
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(m) = masks {
        buf.extend_from_slice(m);
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

type Parsed = (FileKind, usize, Vec<f64>, Option<Vec<u8>>);

fn read_file(path: &Path) -> Result<Parsed, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| DatasetError::Header("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| DatasetError::Header("header is not ASCII".into()))?;
    let mut parts = header.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(DatasetError::Header("not a dataset file".into()));
    }
    match parts.next() {
        Some(VERSION) => {}
        other => {
            return Err(DatasetError::Header(format!(
                "unsupported version {other:?}"
            )))
        }
    }
    let (mut kind, mut n, mut count, mut dtype) = (None, None, None, None);
    for field in parts {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| DatasetError::Header(format!("malformed field {field:?}")))?;
        let num = || {
            value
                .parse::<usize>()
                .map_err(|_| DatasetError::Header(format!("bad {key}={value}")))
        };
        match key {
            "kind" => {
                kind = Some(
                    FileKind::parse(value)
                        .ok_or_else(|| DatasetError::Header(format!("unknown kind {value}")))?,
                )
            }
            "n" => n = Some(num()?),
            "count" => count = Some(num()?),
            "dtype" => dtype = Some(value),
            _ => return Err(DatasetError::Header(format!("unknown field {key}"))),
        }
    }
    let missing = |k: &str| DatasetError::Header(format!("missing field {k}"));
    let kind = kind.ok_or_else(|| missing("kind"))?;
    let n = n.ok_or_else(|| missing("n"))?;
    let count = count.ok_or_else(|| missing("count"))?;
    if dtype.ok_or_else(|| missing("dtype"))? != "f64le" {
        return Err(DatasetError::Header("only dtype=f64le is supported".into()));
    }
    if n == 0 || count == 0 {
        return Err(DatasetError::Empty);
    }
    let cells = n * count;
    let body = &bytes[newline + 1..];
    let expected = cells * 8 + if kind == FileKind::Complete { 0 } else { cells };
    if body.len() != expected {
        return Err(DatasetError::Truncated {
            expected,
            got: body.len(),
        });
    }
    let values: Vec<f64> = body[..cells * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(DatasetError::NonFinite {
            row: i / n,
            col: i % n,
        });
    }
    let masks = if kind == FileKind::Complete {
        None
    } else {
        let m = body[cells * 8..].to_vec();
        if let Some(&b) = m.iter().find(|&&b| b > 1) {
            return Err(MaskError::NotBinary(b).into());
        }
        Some(m)
    };
    Ok((kind, n, values, masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn sample() -> IncompleteDataset {
        let rows = vec![vec![0.5, -1.0, 2.0], vec![3.0, 4.0, 5.0]];
        let masks = vec![Mask::new(vec![1, 0, 1]).unwrap(), Mask::ones(3)];
        IncompleteDataset::new(&rows, &masks).unwrap()
    }

    #[test]
    fn unobserved_values_are_zeroed() {
        let d = sample();
        assert_eq!(d.x(0), &[0.5, 0.0, 2.0]);
        assert_eq!(d.len(), 2);
        let (x, m) = d.batch(&[1, 0]);
        assert_eq!(x.row(1), &[0.5, 0.0, 2.0]);
        assert_eq!(m.row(0), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let d = sample();
        d.write(&path).unwrap();
        assert_eq!(IncompleteDataset::read(&path).unwrap(), d);
        let header = fs::read(&path).unwrap();
        assert!(header.starts_with(b"MISGAN-DATASET v1 kind=incomplete n=3 count=2 dtype=f64le\n"));
        assert!(matches!(
            GroundTruth::read(&path),
            Err(DatasetError::WrongKind { .. })
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        sample().write(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            IncompleteDataset::read(&path),
            Err(DatasetError::Truncated { .. })
        ));
    }

    #[test]
    fn make_dataset_with_zero_dropout() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![f64::from(i), 1.0]).collect();
        let mut rng = stream(1, Stream::Mask);
        let (d, truth) =
            make_incomplete_dataset(&rows, &MaskMechanism::Dropout { rate: 0.0 }, &mut rng)
                .unwrap();
        assert!(d.masks().iter().all(|m| *m == Mask::ones(2)));
        assert_eq!(truth.rows, rows);
    }

    #[test]
    fn dropout_dataset_missing_rate() {
        let rows = vec![vec![0.0; 10]; 10_000];
        let mut rng = stream(2, Stream::Mask);
        let (d, _) =
            make_incomplete_dataset(&rows, &MaskMechanism::Dropout { rate: 0.9 }, &mut rng)
                .unwrap();
        assert!((d.missing_rate() - 0.9).abs() < 0.01);
    }

    #[test]
    fn complete_and_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![vec![1.5, 2.5], vec![-0.25, 8.0]];
        let p = dir.path().join("c.bin");
        write_complete(&p, &rows).unwrap();
        assert_eq!(read_complete(&p).unwrap(), rows);
        let truth = GroundTruth {
            n: 2,
            rows: rows.clone(),
            masks: vec![Mask::ones(2), Mask::zeros(2)],
        };
        let t = dir.path().join("t.bin");
        truth.write(&t).unwrap();
        assert_eq!(GroundTruth::read(&t).unwrap(), truth);
    }
}
