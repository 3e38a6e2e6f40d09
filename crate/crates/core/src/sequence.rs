//! Row-major per-sentence vector sequences.
//!
//! The same container carries frozen-LM hidden states (one row per sentence,
//! `d` columns) and encoder latents (one row per sentence, `n` columns). Row
//! order is sentence order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A document as a `T x dim` matrix, one row per sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    doc_id: String,
    dim: usize,
    data: Vec<f64>,
}

/// Encoder output: the trajectory every bridge score consumes.
pub type LatentSequence = Sequence;

/// Raw frozen-LM states fed to the encoder.
pub type HiddenStateSequence = Sequence;

impl Sequence {
    /// Builds a sequence from nested rows, checking shape and finiteness.
    pub fn from_rows(doc_id: impl Into<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let doc_id = doc_id.into();
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::too_short(&doc_id, rows.len(), 1));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::RaggedRow {
                    doc_id,
                    row: r,
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(doc_id, dim, data)
    }

    /// Builds a sequence from a flat row-major buffer.
    pub fn from_flat(doc_id: impl Into<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        let doc_id = doc_id.into();
        if dim == 0 || data.is_empty() {
            return Err(Error::too_short(&doc_id, 0, 1));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::RaggedRow {
                doc_id,
                row: data.len() / dim,
                expected: dim,
                found: data.len() % dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                doc_id,
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { doc_id, dim, data })
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows (sentences), `T`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + DoubleEndedIterator + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn with_doc_id(mut self, doc_id: impl Into<String>) -> Self {
        self.doc_id = doc_id.into();
        self
    }

    /// Row order reversed.
    pub fn reversed(&self) -> Self {
        let data = self.rows().rev().flatten().copied().collect();
        Self {
            doc_id: self.doc_id.clone(),
            dim: self.dim,
            data,
        }
    }

    /// Every entry multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            doc_id: self.doc_id.clone(),
            dim: self.dim,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// `offset` added to every row.
    pub fn translated(&self, offset: &[f64]) -> Result<Self> {
        if offset.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: offset.len(),
            });
        }
        let data = self
            .rows()
            .flat_map(|r| r.iter().zip(offset).map(|(a, b)| a + b))
            .collect();
        Ok(Self {
            doc_id: self.doc_id.clone(),
            dim: self.dim,
            data,
        })
    }

    /// Rows reordered so that output row `j` is input row `order[j]`.
    ///
    /// `order` holds zero-based row indices and must be a permutation of
    /// `0..len()`; callers go through [`crate::harness::Permutation`] which
    /// guarantees that.
    pub(crate) fn gather_rows(&self, order: &[usize]) -> Self {
        debug_assert_eq!(order.len(), self.len());
        let mut data = Vec::with_capacity(self.data.len());
        for &src in order {
            data.extend_from_slice(self.row(src));
        }
        Self {
            doc_id: self.doc_id.clone(),
            dim: self.dim,
            data,
        }
    }
}

/// Ensures every document in a corpus has the same row width.
pub fn common_dim(corpus: &[Sequence]) -> Result<usize> {
    let first = corpus.first().ok_or(Error::EmptyCorpus)?;
    for doc in corpus {
        if doc.dim() != first.dim() {
            return Err(Error::DimMismatch {
                expected: first.dim(),
                found: doc.dim(),
            });
        }
    }
    Ok(first.dim())
}
