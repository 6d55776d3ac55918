//! Unit-norm embedding tables and their on-disk format.
//!
//! File layout:
//!
//! ```text
//! OPEMB1\n
//! {"count":<int>,"dim":<int>,"dtype":"f32le"}\n
//! <count * dim little-endian f32, row-major>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"OPEMB1\n";

/// Tolerance on row norms after any public operation.
pub const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    count: usize,
    dim: usize,
    dtype: String,
}

/// A `count x dim` matrix whose rows are kept at unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingTable {
    /// Build a table from raw rows, normalizing each one.
    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            let unit = normalized(row)?;
            data.extend(unit.iter().map(|&x| x as f32));
        }
        Ok(EmbeddingTable { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| x as f64).collect()
    }

    /// Cosine similarity of two rows from (possibly) different tables.
    pub fn dot(&self, i: usize, other: &EmbeddingTable, j: usize) -> f64 {
        dot_f32(self.row(i), other.row(j))
    }

    /// Overwrite row `i` with the normalized version of `values`.
    pub fn set_row(&mut self, i: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: values.len(),
            });
        }
        let unit = normalized(values)?;
        for (dst, v) in self.data[i * self.dim..(i + 1) * self.dim]
            .iter_mut()
            .zip(unit)
        {
            *dst = v as f32;
        }
        Ok(())
    }

    pub fn max_norm_error(&self) -> f64 {
        (0..self.len())
            .map(|i| (dot_f32(self.row(i), self.row(i)).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        let header = Header {
            count: self.len(),
            dim: self.dim,
            dtype: "f32le".to_string(),
        };
        let line = serde_json::to_string(&header).expect("header serializes");
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };

        let mut magic = [0u8; 7];
        reader
            .read_exact(&mut magic)
            .map_err(|e| Error::io(path, e))?;
        if &magic != MAGIC {
            return Err(bad("bad magic bytes".into()));
        }
        let mut line = String::new();
        reader
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        let header: Header =
            serde_json::from_str(line.trim_end()).map_err(|e| bad(format!("header: {e}")))?;
        if header.dtype != "f32le" {
            return Err(bad(format!("unsupported dtype `{}`", header.dtype)));
        }
        if header.dim == 0 {
            return Err(bad("dim must be positive".into()));
        }
        let mut raw = Vec::new();
        reader
            .read_to_end(&mut raw)
            .map_err(|e| Error::io(path, e))?;
        let expected = header.count * header.dim * 4;
        if raw.len() != expected {
            return Err(bad(format!(
                "expected {expected} payload bytes, found {}",
                raw.len()
            )));
        }
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let table = EmbeddingTable {
            dim: header.dim,
            data,
        };
        let err = table.max_norm_error();
        if err > NORM_TOLERANCE {
            return Err(bad(format!(
                "rows are not unit-normalized (max error {err:e})"
            )));
        }
        Ok(table)
    }
}

pub fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !n.is_finite() || n == 0.0 {
        return Err(Error::Degenerate(format!(
            "cannot normalize a vector with norm {n}"
        )));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_normalized() {
        let t = EmbeddingTable::from_rows(2, &[vec![3.0, 4.0], vec![0.0, -2.0]]).unwrap();
        assert_eq!(t.len(), 2);
        assert!((t.row(0)[0] - 0.6).abs() < 1e-7);
        assert!(t.max_norm_error() < 1e-7);
    }

    #[test]
    fn zero_row_rejected() {
        assert!(EmbeddingTable::from_rows(2, &[vec![0.0, 0.0]]).is_err());
        assert!(EmbeddingTable::from_rows(3, &[vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let t =
            EmbeddingTable::from_rows(3, &[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.25]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        t.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"OPEMB1\n{\"count\":2,\"dim\":3,\"dtype\":\"f32le\"}\n"));
        assert_eq!(bytes.len(), 7 + 36 + 24);
        let back = EmbeddingTable::load(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn truncated_file_rejected() {
        let t = EmbeddingTable::from_rows(2, &[vec![1.0, 0.0]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        t.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            EmbeddingTable::load(&path),
            Err(Error::Format { .. })
        ));
    }
}
