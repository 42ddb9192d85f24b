//! Sparse coordinate-format count tensors.
//!
//! Indices are stored 0-based in memory. The FROSTT `.tns` text format on
//! disk is 1-based: each non-comment line holds `N` indices followed by the
//! value, separated by whitespace. Lines starting with `#` are comments.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// An N-way tensor holding only its nonzero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    dims: Vec<usize>,
    /// Row-major `nnz x N` block of 0-based coordinates.
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseTensor {
    /// Builds a tensor from 0-based coordinates, validating every invariant.
    pub fn new(dims: Vec<usize>, indices: Vec<Vec<usize>>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidTensor("tensor must have at least one mode".into()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidTensor(format!("zero extent in dims {dims:?}")));
        }
        if indices.len() != values.len() {
            return Err(Error::InvalidTensor(format!(
                "{} index vectors but {} values",
                indices.len(),
                values.len()
            )));
        }
        let order = dims.len();
        let mut flat = Vec::with_capacity(indices.len() * order);
        let mut seen: HashMap<&[usize], usize> = HashMap::with_capacity(indices.len());
        for (e, (idx, &v)) in indices.iter().zip(&values).enumerate() {
            if idx.len() != order || idx.iter().zip(&dims).any(|(&i, &d)| i >= d) {
                return Err(Error::IndexOutOfRange { index: idx.clone(), dims });
            }
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidTensor(format!("entry {e} has non-positive or non-finite value {v}")));
            }
            if let Some(first) = seen.insert(idx.as_slice(), e) {
                return Err(Error::DuplicateIndex {
                    index: idx.iter().map(|i| i + 1).collect(),
                    first: first + 1,
                    second: e + 1,
                });
            }
            flat.extend_from_slice(idx);
        }
        Ok(Self { dims, indices: flat, values })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// 0-based coordinates of entry `e`.
    pub fn index(&self, e: usize) -> &[usize] {
        let n = self.order();
        &self.indices[e * n..(e + 1) * n]
    }

    pub fn value(&self, e: usize) -> f64 {
        self.values[e]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        self.indices
            .chunks_exact(self.order())
            .zip(self.values.iter().copied())
    }

    /// Ratio of stored entries to the total number of cells.
    pub fn density(&self) -> f64 {
        density_of(self.nnz() as f64, &self.dims)
    }

    /// Replaces `dims` with a larger declaration, e.g. to account for empty
    /// trailing slices that a `.tns` file cannot express.
    pub fn with_dims(mut self, dims: Vec<usize>) -> Result<Self> {
        if dims.len() != self.order() {
            return Err(Error::ShapeMismatch(format!(
                "declared {} modes but the tensor has {}",
                dims.len(),
                self.order()
            )));
        }
        for (idx, _) in self.entries() {
            if idx.iter().zip(&dims).any(|(&i, &d)| i >= d) {
                return Err(Error::IndexOutOfRange {
                    index: idx.iter().map(|i| i + 1).collect(),
                    dims,
                });
            }
        }
        self.dims = dims;
        Ok(self)
    }
}

/// `nnz / prod(dims)`; falls back to log space when the product overflows.
pub fn density_of(nnz: f64, dims: &[usize]) -> f64 {
    let cells: f64 = dims.iter().map(|&d| d as f64).product();
    if cells.is_finite() {
        nnz / cells
    } else {
        let log_cells: f64 = dims.iter().map(|&d| (d as f64).ln()).sum();
        (nnz.ln() - log_cells).exp()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Sum values of repeated coordinates instead of rejecting the file.
    pub sum_duplicates: bool,
    /// Explicit extents overriding the observed maxima.
    pub dims: Option<Vec<usize>>,
}

/// Parses FROSTT `.tns` text.
pub fn parse_frostt<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<SparseTensor> {
    let mut order: Option<usize> = None;
    let mut dims: Vec<usize> = Vec::new();
    let mut indices: Vec<Vec<usize>> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut lines_of: Vec<usize> = Vec::new();
    let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                msg: "expected at least one index and a value".into(),
            });
        }
        let n = tokens.len() - 1;
        match order {
            None => {
                order = Some(n);
                dims = vec![0; n];
            }
            Some(o) if o != n => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {o} indices, found {n}"),
                });
            }
            _ => {}
        }
        let mut idx = Vec::with_capacity(n);
        for tok in &tokens[..n] {
            let i: usize = tok.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid index `{tok}`"),
            })?;
            if i == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "indices are 1-based".into(),
                });
            }
            idx.push(i - 1);
        }
        let vtok = tokens[n];
        let v: f64 = vtok.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("invalid value `{vtok}`"),
        })?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("value must be positive and finite, got {vtok}"),
            });
        }
        for (d, &i) in dims.iter_mut().zip(&idx) {
            *d = (*d).max(i + 1);
        }
        match seen.get(&idx) {
            Some(&pos) if opts.sum_duplicates => values[pos] += v,
            Some(&pos) => {
                return Err(Error::DuplicateIndex {
                    index: idx.iter().map(|i| i + 1).collect(),
                    first: lines_of[pos],
                    second: lineno,
                });
            }
            None => {
                seen.insert(idx.clone(), values.len());
                indices.push(idx);
                values.push(v);
                lines_of.push(lineno);
            }
        }
    }

    if values.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let tensor = SparseTensor::new(dims, indices, values)?;
    match &opts.dims {
        Some(d) => tensor.with_dims(d.clone()),
        None => Ok(tensor),
    }
}

pub fn parse_frostt_str(text: &str) -> Result<SparseTensor> {
    parse_frostt(text.as_bytes(), &ParseOptions::default())
}

/// Writes one LF-terminated line per entry: 1-based indices, then the value.
///
/// Dimensions are not recorded, so re-parsing yields the observed maxima.
pub fn write_frostt<W: Write>(t: &SparseTensor, mut out: W) -> std::io::Result<()> {
    for (idx, v) in t.entries() {
        for i in idx {
            write!(out, "{} ", i + 1)?;
        }
        writeln!(out, "{v}")?;
    }
    Ok(())
}

pub fn write_frostt_string(t: &SparseTensor) -> String {
    let mut buf = Vec::new();
    write_frostt(t, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("output is ASCII")
}

/// Entry positions grouped by their coordinate in one mode (CSR layout).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeIndex {
    mode: usize,
    offsets: Vec<usize>,
    positions: Vec<usize>,
}

impl ModeIndex {
    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn num_slices(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Entry positions whose coordinate in this mode equals `slice`, in
    /// storage order.
    pub fn group(&self, slice: usize) -> &[usize] {
        &self.positions[self.offsets[slice]..self.offsets[slice + 1]]
    }

    pub fn groups(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.num_slices()).map(move |i| self.group(i))
    }
}

/// Groups entries by their 0-based coordinate in `mode`.
pub fn build_mode_index(t: &SparseTensor, mode: usize) -> Result<ModeIndex> {
    if mode >= t.order() {
        return Err(Error::ModeOutOfRange { mode, order: t.order() });
    }
    let slices = t.dims()[mode];
    let mut offsets = vec![0usize; slices + 1];
    for (idx, _) in t.entries() {
        offsets[idx[mode] + 1] += 1;
    }
    for i in 0..slices {
        offsets[i + 1] += offsets[i];
    }
    let mut cursor = offsets.clone();
    let mut positions = vec![0usize; t.nnz()];
    for (e, (idx, _)) in t.entries().enumerate() {
        let slot = &mut cursor[idx[mode]];
        positions[*slot] = e;
        *slot += 1;
    }
    Ok(ModeIndex { mode, offsets, positions })
}
