//! Id-keyed embedding tables and the `EFEMB1` binary format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic  "EFEMB1\0"   7 bytes
//! V      u32
//! D      u32
//! V x { id u64, D x f32 }
//! ```
//!
//! Values are held as `f64` in memory and rounded to `f32` on save.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::linalg::Matrix;
use crate::{Error, Result};

pub const EFEMB_MAGIC: &[u8; 7] = b"EFEMB1\0";

/// Rows of equal dimension keyed by a 64-bit id (product, trip or customer).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
    data: Matrix,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<u64>, data: Matrix) -> Result<Self> {
        if ids.len() != data.rows() {
            return Err(Error::InvalidArgument(format!(
                "{} ids for {} rows",
                ids.len(),
                data.rows()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            if index.insert(id, row).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate id {id}")));
            }
        }
        Ok(EmbeddingTable { ids, index, data })
    }

    /// Builds a table from `(id, vector)` rows, which must share one dimension.
    pub fn from_rows(rows: impl IntoIterator<Item = (u64, Vec<f64>)>) -> Result<Self> {
        let mut ids = Vec::new();
        let mut flat = Vec::new();
        let mut dim = None;
        for (id, v) in rows {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: v.len(),
                    })
                }
                _ => {}
            }
            ids.push(id);
            flat.extend_from_slice(&v);
        }
        let dim = dim.unwrap_or(0);
        let n = ids.len();
        Self::new(ids, Matrix::from_vec(n, dim, flat))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn get(&self, id: u64) -> Option<&[f64]> {
        self.row_of(id).map(|r| self.data.row(r))
    }

    pub fn row(&self, row: usize) -> &[f64] {
        self.data.row(row)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f64])> {
        self.ids.iter().copied().zip(self.data.iter_rows())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(&mut BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(EFEMB_MAGIC)?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        for (id, row) in self.iter() {
            w.write_all(&id.to_le_bytes())?;
            for &x in row {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file), path)
    }

    pub fn read_from(r: &mut impl Read, origin: &Path) -> Result<Self> {
        let bad = |m: &str| Error::Format {
            path: origin.to_path_buf(),
            message: m.to_string(),
        };
        let io = |e: std::io::Error| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                bad("truncated file")
            } else {
                Error::io(origin, e)
            }
        };
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != EFEMB_MAGIC {
            return Err(bad("missing EFEMB1 magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let n = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(io)?;
        let dim = u32::from_le_bytes(b4) as usize;
        let mut ids = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * dim);
        let mut b8 = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b8).map_err(io)?;
            ids.push(u64::from_le_bytes(b8));
            for _ in 0..dim {
                r.read_exact(&mut b4).map_err(io)?;
                data.push(f32::from_le_bytes(b4) as f64);
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(bad("trailing bytes after last record"));
        }
        Self::new(ids, Matrix::from_vec(n, dim, data))
            .map_err(|e| bad(&e.to_string()))
    }

    /// Writes `id\tv1\t...\tvD` lines, values rounded to `f32` like the binary format.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            for (id, row) in self.iter() {
                write!(w, "{id}")?;
                for &x in row {
                    write!(w, "\t{}", x as f32)?;
                }
                w.write_all(b"\n")?;
            }
            w.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }

    /// Copy with every value rounded through `f32`, matching a save/load cycle.
    pub fn rounded_to_f32(&self) -> Self {
        let data: Vec<f64> = self
            .data
            .as_slice()
            .iter()
            .map(|&x| x as f32 as f64)
            .collect();
        EmbeddingTable {
            ids: self.ids.clone(),
            index: self.index.clone(),
            data: Matrix::from_vec(self.len(), self.dim(), data),
        }
    }
}
