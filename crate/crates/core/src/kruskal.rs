//! Kruskal (weighted sum of rank-one outer products) tensor model.
//!
//! A model holds weights `lambda` (length `R`) and one nonnegative
//! `I_n x R` factor matrix per mode. Its value at a multi-index `i` is
//! `sum_r lambda_r * prod_n A_n[i_n, r]`.
//!
//! All randomness goes through [`Rng`], a ChaCha8 stream seeded with
//! `seed_from_u64`, so a seed reproduces the same model on every platform.

use nalgebra::DMatrix;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sptensor::SparseTensor;

/// Largest dense grid [`sample_poisson`] will enumerate by default.
pub const DENSE_SAMPLE_CAP: usize = 10_000_000;

/// Seeded, platform-independent pseudorandom source (ChaCha8).
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KruskalTensor {
    lambda: Vec<f64>,
    factors: Vec<DMatrix<f64>>,
}

impl KruskalTensor {
    pub fn new(lambda: Vec<f64>, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let rank = lambda.len();
        if rank == 0 {
            return Err(Error::ZeroRank);
        }
        if factors.is_empty() {
            return Err(Error::ShapeMismatch("model needs at least one factor".into()));
        }
        for (n, a) in factors.iter().enumerate() {
            if a.ncols() != rank {
                return Err(Error::ShapeMismatch(format!(
                    "factor {n} has {} columns, expected rank {rank}",
                    a.ncols()
                )));
            }
            if a.nrows() == 0 {
                return Err(Error::ShapeMismatch(format!("factor {n} has no rows")));
            }
            if a.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
                return Err(Error::ShapeMismatch(format!("factor {n} has a negative or non-finite entry")));
            }
        }
        if lambda.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::ShapeMismatch("lambda has a negative or non-finite entry".into()));
        }
        Ok(Self { lambda, factors })
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|a| a.nrows()).collect()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &DMatrix<f64> {
        &self.factors[mode]
    }

    pub(crate) fn set_mode(&mut self, mode: usize, factor: DMatrix<f64>, lambda: Vec<f64>) {
        debug_assert_eq!(factor.shape(), self.factors[mode].shape());
        self.factors[mode] = factor;
        self.lambda = lambda;
    }

    /// Multiplies every weight by `c`.
    pub fn scale(&mut self, c: f64) {
        self.lambda.iter_mut().for_each(|l| *l *= c);
    }

    /// Model value at a 0-based index.
    pub fn value_at(&self, index: &[usize]) -> Result<f64> {
        let dims = self.dims();
        if index.len() != dims.len() || index.iter().zip(&dims).any(|(&i, &d)| i >= d) {
            return Err(Error::IndexOutOfRange { index: index.to_vec(), dims });
        }
        Ok(self.value_at_unchecked(index))
    }

    pub(crate) fn value_at_unchecked(&self, index: &[usize]) -> f64 {
        (0..self.rank())
            .map(|r| {
                self.factors
                    .iter()
                    .zip(index)
                    .fold(self.lambda[r], |acc, (a, &i)| acc * a[(i, r)])
            })
            .sum()
    }

    /// Sum of the model over every cell, from the factor column sums.
    pub fn full_sum(&self) -> f64 {
        (0..self.rank())
            .map(|r| {
                self.factors
                    .iter()
                    .fold(self.lambda[r], |acc, a| acc * a.column(r).sum())
            })
            .sum()
    }

    /// Rescales every factor column to sum to one, moving the scale into
    /// `lambda`.
    pub fn normalize(&self) -> Result<Self> {
        let mut out = self.clone();
        for (n, a) in out.factors.iter_mut().enumerate() {
            for r in 0..a.ncols() {
                let s = a.column(r).sum();
                if s <= 0.0 {
                    return Err(Error::ZeroColumn { mode: n, column: r });
                }
                a.column_mut(r).unscale_mut(s);
                out.lambda[r] *= s;
            }
        }
        Ok(out)
    }
}

/// Uniform `[0, 1)` factors with unit weights.
///
/// Entries are drawn mode by mode, row-major within each factor.
pub fn random_init(dims: &[usize], rank: usize, seed: u64) -> Result<KruskalTensor> {
    if rank == 0 {
        return Err(Error::ZeroRank);
    }
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::ShapeMismatch(format!("invalid dims {dims:?}")));
    }
    let mut rng = Rng::new(seed);
    let factors = dims
        .iter()
        .map(|&rows| {
            let data: Vec<f64> = (0..rows * rank).map(|_| rng.uniform()).collect();
            DMatrix::from_row_slice(rows, rank, &data)
        })
        .collect();
    KruskalTensor::new(vec![1.0; rank], factors)
}

pub fn normalize(k: &KruskalTensor) -> Result<KruskalTensor> {
    k.normalize()
}

pub fn model_value_at(k: &KruskalTensor, index: &[usize]) -> Result<f64> {
    k.value_at(index)
}

pub fn full_model_sum(k: &KruskalTensor) -> f64 {
    k.full_sum()
}

/// Poisson negative log-likelihood of `x` under `k`:
/// `sum(m) - sum_nonzeros x * log(m + eps_log)`.
///
/// The nonzero sum is accumulated sequentially in storage order.
pub fn loss(x: &SparseTensor, k: &KruskalTensor, eps_log: f64) -> Result<f64> {
    if x.dims() != k.dims().as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "tensor dims {:?} vs model dims {:?}",
            x.dims(),
            k.dims()
        )));
    }
    let mut data_term = 0.0;
    for (idx, v) in x.entries() {
        data_term += v * (k.value_at_unchecked(idx) + eps_log).ln();
    }
    Ok(k.full_sum() - data_term)
}

fn dense_size(dims: &[usize]) -> f64 {
    dims.iter().map(|&d| d as f64).product()
}

/// Draws an independent Poisson count for every cell of the dense grid,
/// keeping the nonzero draws. Cells are visited in lexicographic order with
/// the last mode varying fastest.
pub fn sample_poisson(k: &KruskalTensor, seed: u64, cap: usize) -> Result<SparseTensor> {
    let dims = k.dims();
    let size = dense_size(&dims);
    if size > cap as f64 {
        return Err(Error::DenseTooLarge { size, cap });
    }
    let mut rng = Rng::new(seed);
    let mut idx = vec![0usize; dims.len()];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for _ in 0..size as usize {
        let mean = k.value_at_unchecked(&idx);
        if mean > 0.0 {
            let draw: f64 = Poisson::new(mean)
                .map_err(|e| Error::InvalidTensor(format!("poisson mean {mean}: {e}")))?
                .sample(rng.inner());
            if draw > 0.0 {
                indices.push(idx.clone());
                values.push(draw);
            }
        }
        for m in (0..dims.len()).rev() {
            idx[m] += 1;
            if idx[m] < dims[m] {
                break;
            }
            idx[m] = 0;
        }
    }
    SparseTensor::new(dims, indices, values)
}

/// Random normalized model whose mean cell value is `mean`, plus a Poisson
/// sample of it. The sample uses a seed derived from `seed`.
pub fn synthetic(dims: &[usize], rank: usize, seed: u64, mean: f64) -> Result<(KruskalTensor, SparseTensor)> {
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(Error::InvalidTensor(format!("target mean must be nonnegative, got {mean}")));
    }
    let size = dense_size(dims);
    if size > DENSE_SAMPLE_CAP as f64 {
        return Err(Error::DenseTooLarge { size, cap: DENSE_SAMPLE_CAP });
    }
    let mut truth = random_init(dims, rank, seed)?.normalize()?;
    let total = truth.full_sum();
    truth.scale(mean * size / total);
    let sample = sample_poisson(&truth, seed ^ 0x9E37_79B9_7F4A_7C15, DENSE_SAMPLE_CAP)?;
    Ok((truth, sample))
}

/// On-disk JSON form: `{dims, R, lambda, factors}` with each factor stored
/// as a list of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KruskalJson {
    pub dims: Vec<usize>,
    #[serde(rename = "R")]
    pub rank: usize,
    pub lambda: Vec<f64>,
    pub factors: Vec<Vec<Vec<f64>>>,
}

impl From<&KruskalTensor> for KruskalJson {
    fn from(k: &KruskalTensor) -> Self {
        Self {
            dims: k.dims(),
            rank: k.rank(),
            lambda: k.lambda.clone(),
            factors: k
                .factors
                .iter()
                .map(|a| a.row_iter().map(|row| row.iter().copied().collect()).collect())
                .collect(),
        }
    }
}

impl TryFrom<KruskalJson> for KruskalTensor {
    type Error = Error;

    fn try_from(j: KruskalJson) -> Result<Self> {
        if j.lambda.len() != j.rank || j.factors.len() != j.dims.len() {
            return Err(Error::ShapeMismatch("model JSON header disagrees with its arrays".into()));
        }
        let mut factors = Vec::with_capacity(j.factors.len());
        for (n, (rows, &d)) in j.factors.iter().zip(&j.dims).enumerate() {
            if rows.len() != d || rows.iter().any(|r| r.len() != j.rank) {
                return Err(Error::ShapeMismatch(format!("factor {n} is not {d} x {}", j.rank)));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            factors.push(DMatrix::from_row_slice(d, j.rank, &flat));
        }
        KruskalTensor::new(j.lambda, factors)
    }
}

impl KruskalTensor {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&KruskalJson::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: KruskalJson = serde_json::from_str(text)?;
        j.try_into()
    }
}
