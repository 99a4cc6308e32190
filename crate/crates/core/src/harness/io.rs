//! Dataset files.
//!
//! CSV: a header row, then one row per sample; the first column is the class
//! (empty for unlabeled), the rest are features.
//!
//! KDF1 (all little-endian):
//!
//! | bytes      | content                                   |
//! |------------|-------------------------------------------|
//! | 4          | magic `KDF1`                              |
//! | 4          | `u32` N (rows)                            |
//! | 4          | `u32` d (features per row)                |
//! | 4          | `u32` K (classes)                         |
//! | 4·N·d      | `f32` features, row-major                 |
//! | 2·N        | `u16` labels, 65535 = unlabeled           |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

use super::data::{Dataset, UNLABELED};

pub const KDF1_MAGIC: &[u8; 4] = b"KDF1";
const HEADER_LEN: usize = 16;

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

pub fn load_kdf1<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let mut ds = parse_kdf1(&fs::read(path)?)?;
    ds.provenance = format!("kdf1:{}", path.display());
    Ok(ds)
}

pub fn parse_kdf1<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "truncated magic"));
    }
    if &bytes[..4] != KDF1_MAGIC {
        return Err(format_err(0, format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (n, d, k) = (word(4), word(8), word(12));
    let feat_len = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| format_err(4, "header sizes overflow"))?;
    let labels_at = HEADER_LEN + feat_len;
    if bytes.len() < labels_at {
        return Err(format_err(
            bytes.len(),
            format!("truncated features: expected {feat_len} bytes"),
        ));
    }
    let end = labels_at + 2 * n;
    if bytes.len() < end {
        return Err(format_err(
            bytes.len(),
            format!("truncated labels: expected {} bytes", 2 * n),
        ));
    }
    if bytes.len() > end {
        return Err(format_err(end, "trailing bytes after labels"));
    }
    let features: Vec<T> = bytes[HEADER_LEN..labels_at]
        .chunks_exact(4)
        .map(|c| T::of(f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))))
        .collect();
    let mut labels = Vec::with_capacity(n);
    for (i, c) in bytes[labels_at..end].chunks_exact(2).enumerate() {
        let y = u16::from_le_bytes(c.try_into().expect("2 bytes"));
        if y != UNLABELED && usize::from(y) >= k {
            return Err(format_err(
                labels_at + 2 * i,
                format!("label {y} out of range for {k} classes"),
            ));
        }
        labels.push(y);
    }
    if n == 0 {
        return Err(format_err(4, "dataset has no rows"));
    }
    Dataset::new(Matrix::new(n, d, features)?, labels, k, "kdf1")
}

pub fn encode_kdf1<T: Scalar>(ds: &Dataset<T>) -> Result<Vec<u8>> {
    let to_u32 = |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::Data(format!("{what} {v} exceeds u32")));
    let (n, d) = ds.features.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * d + 2 * n);
    out.extend_from_slice(KDF1_MAGIC);
    out.extend_from_slice(&to_u32(n, "row count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(d, "dimension")?.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.num_classes, "class count")?.to_le_bytes());
    for &v in ds.features.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    for &y in &ds.labels {
        out.extend_from_slice(&y.to_le_bytes());
    }
    Ok(out)
}

pub fn write_kdf1<T: Scalar>(ds: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_kdf1(ds)?)?;
    Ok(())
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let mut ds = parse_csv(&fs::read_to_string(path)?)?;
    ds.provenance = format!("csv:{}", path.display());
    Ok(ds)
}

/// Parses CSV text. The class count is one more than the largest label.
pub fn parse_csv<T: Scalar>(text: &str) -> Result<Dataset<T>> {
    let mut offset = 0;
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().ok_or_else(|| format_err(0, "missing header row"))?;
    let width = header.trim_end().split(',').count();
    if width < 2 {
        return Err(format_err(0, "header needs a label column and at least one feature"));
    }
    offset += header.len();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut max_label: Option<u16> = None;
    for line in lines {
        let start = offset;
        offset += line.len();
        let row = line.trim_end_matches(['\n', '\r']);
        if row.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() != width {
            return Err(format_err(
                start,
                format!("expected {width} columns, found {}", cells.len()),
            ));
        }
        let label = cells[0].trim();
        if label.is_empty() {
            labels.push(UNLABELED);
        } else {
            let y: u16 = label
                .parse()
                .ok()
                .filter(|&y| y != UNLABELED)
                .ok_or_else(|| format_err(start, format!("invalid label {label:?}")))?;
            max_label = Some(max_label.map_or(y, |m| m.max(y)));
            labels.push(y);
        }
        for cell in &cells[1..] {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| format_err(start, format!("invalid feature {cell:?}")))?;
            features.push(T::of(v));
        }
    }
    if labels.is_empty() {
        return Err(format_err(offset, "no data rows"));
    }
    let k = max_label.map_or(1, |m| usize::from(m) + 1);
    let n = labels.len();
    Dataset::new(Matrix::new(n, width - 1, features)?, labels, k, "csv")
}

pub fn write_csv<T: Scalar, W: Write>(ds: &Dataset<T>, mut out: W) -> Result<()> {
    write!(out, "label")?;
    for j in 0..ds.dim() {
        write!(out, ",x{j}")?;
    }
    writeln!(out)?;
    for (row, &y) in ds.features.row_iter().zip(&ds.labels) {
        if y != UNLABELED {
            write!(out, "{y}")?;
        }
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
