use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"ULD1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DissimKind {
    Gospa,
    GGospa,
    Wass,
    Fusi,
    Time,
}

impl DissimKind {
    pub fn tag(self) -> u32 {
        match self {
            DissimKind::Gospa => 0,
            DissimKind::GGospa => 1,
            DissimKind::Wass => 2,
            DissimKind::Fusi => 3,
            DissimKind::Time => 4,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            0 => DissimKind::Gospa,
            1 => DissimKind::GGospa,
            2 => DissimKind::Wass,
            3 => DissimKind::Fusi,
            4 => DissimKind::Time,
            t => return Err(Error::Format(format!("unknown dissimilarity kind tag {t}"))),
        })
    }
}

/// Symmetric `n x n` dissimilarity values, stored densely row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    pub kind: DissimKind,
    pub n: usize,
    pub values: Vec<f64>,
    pub params: Vec<(String, f64)>,
}

impl DissimilarityMatrix {
    pub fn new(kind: DissimKind, n: usize, values: Vec<f64>, params: Vec<(String, f64)>) -> Self {
        assert_eq!(values.len(), n * n);
        DissimilarityMatrix { kind, n, values, params }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Square submatrix for the given indices.
    pub fn submatrix(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * idx.len());
        for &i in idx {
            for &j in idx {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Strict upper triangle, row by row.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.n.saturating_sub(1) / 2);
        for i in 0..self.n {
            out.extend_from_slice(&self.row(i)[i + 1..]);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 2 * self.n * self.n);
        out.extend_from_slice(MATRIX_MAGIC);
        out.extend_from_slice(&self.kind.tag().to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        for v in self.upper_triangle() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 12 || &buf[..4] != MATRIX_MAGIC {
            return Err(Error::Format("not a dissimilarity matrix file".into()));
        }
        let word = |k: usize| u32::from_le_bytes(buf[k..k + 4].try_into().unwrap());
        let kind = DissimKind::from_tag(word(4))?;
        let n = word(8) as usize;
        let count = n * n.saturating_sub(1) / 2;
        if buf.len() != 12 + 4 * count {
            return Err(Error::Format(format!("matrix body has {} bytes, expected {}", buf.len() - 12, 4 * count)));
        }
        let mut values = vec![0.0; n * n];
        let mut k = 12;
        for i in 0..n {
            for j in i + 1..n {
                let v = f32::from_le_bytes(buf[k..k + 4].try_into().unwrap()) as f64;
                values[i * n + j] = v;
                values[j * n + i] = v;
                k += 4;
            }
        }
        Ok(DissimilarityMatrix { kind, n, values, params: Vec::new() })
    }
}

/// Evaluates `f(i, j)` for `i < j` in parallel and mirrors the result into a
/// dense symmetric matrix with zero diagonal.
pub(crate) fn pairwise<F>(n: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    let rows: Vec<Vec<f64>> =
        (0..n).into_par_iter().map(|i| (i + 1..n).map(|j| f(i, j)).collect::<Result<Vec<f64>>>()).collect::<Result<_>>()?;
    let mut values = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            let j = i + 1 + k;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(values)
}
