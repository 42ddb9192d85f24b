#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_cpapr::kruskal::KruskalTensor;
use sparse_cpapr::rowprob::RowSubproblem;
use sparse_cpapr::SparseTensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random row problem with `pi` entries in (0.05, 1) and counts in 1..=20.
pub fn random_subproblem(rng: &mut ChaCha8Rng, rank: usize, nnz: usize) -> RowSubproblem {
    let pi = (0..rank * nnz).map(|_| rng.random_range(0.05..1.0)).collect();
    let counts = (0..nnz).map(|_| rng.random_range(1..=20) as f64).collect();
    RowSubproblem::new(rank, pi, counts)
}

/// Random sparse tensor with up to `nnz` distinct nonzeros and dims kept as
/// given.
pub fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize], nnz: usize) -> SparseTensor {
    let size: usize = dims.iter().product();
    let mut cells: Vec<usize> = (0..size).collect();
    for i in 0..nnz.min(size) {
        let j = rng.random_range(i..size);
        cells.swap(i, j);
    }
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for &c in &cells[..nnz.min(size)] {
        indices.push(unravel(c, dims));
        values.push(rng.random_range(1..=9) as f64);
    }
    SparseTensor::new(dims.to_vec(), indices, values).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng, dims: &[usize], rank: usize) -> KruskalTensor {
    let lambda = (0..rank).map(|_| rng.random_range(0.5..5.0)).collect();
    let factors = dims
        .iter()
        .map(|&d| DMatrix::from_fn(d, rank, |_, _| rng.random_range(0.01..1.0)))
        .collect();
    KruskalTensor::new(lambda, factors).unwrap()
}

/// Row-major coordinates of flat cell `c`, last mode fastest.
pub fn unravel(mut c: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for m in (0..dims.len()).rev() {
        idx[m] = c % dims[m];
        c /= dims[m];
    }
    idx
}

/// Model value by the defining sum over components.
pub fn dense_value(k: &KruskalTensor, idx: &[usize]) -> f64 {
    (0..k.rank())
        .map(|r| k.lambda()[r] * idx.iter().enumerate().map(|(m, &i)| k.factor(m)[(i, r)]).product::<f64>())
        .sum()
}

/// `sum over every cell of m - x ln(m + eps)` by full enumeration.
pub fn dense_loss(x: &SparseTensor, k: &KruskalTensor, eps: f64) -> f64 {
    let dims = x.dims();
    let size: usize = dims.iter().product();
    let mut dense = vec![0.0; size];
    for (idx, v) in x.entries() {
        let mut c = 0;
        for (m, &i) in idx.iter().enumerate() {
            c = c * dims[m] + i;
        }
        dense[c] = v;
    }
    (0..size)
        .map(|c| {
            let m = dense_value(k, &unravel(c, dims));
            m - dense[c] * (m + eps).ln()
        })
        .sum()
}

pub fn dense_sum(k: &KruskalTensor) -> f64 {
    let dims = k.dims();
    let size: usize = dims.iter().product();
    (0..size).map(|c| dense_value(k, &unravel(c, &dims))).sum()
}

/// KKT violation of `k` recomputed from scratch: for every mode, the
/// gradient of the loss with respect to `A_n diag(lambda)` with the other
/// factors normalized, compared against the scaled factor.
pub fn independent_kkt(x: &SparseTensor, k: &KruskalTensor, eps_div: f64) -> f64 {
    let rank = k.rank();
    let order = k.order();
    let col_sums: Vec<Vec<f64>> = (0..order)
        .map(|m| (0..rank).map(|r| k.factor(m).column(r).sum()).collect())
        .collect();
    let mut worst: f64 = 0.0;
    for n in 0..order {
        let rows = k.dims()[n];
        // weight of component r carried by mode n once the rest are stochastic
        let w: Vec<f64> = (0..rank)
            .map(|r| k.lambda()[r] * (0..order).filter(|&m| m != n).map(|m| col_sums[m][r]).product::<f64>())
            .collect();
        let b = DMatrix::from_fn(rows, rank, |i, r| k.factor(n)[(i, r)] * w[r]);
        let mut g = DMatrix::from_element(rows, rank, 1.0);
        for (idx, v) in x.entries() {
            let pi: Vec<f64> = (0..rank)
                .map(|r| {
                    (0..order)
                        .filter(|&m| m != n)
                        .map(|m| k.factor(m)[(idx[m], r)] / col_sums[m][r])
                        .product()
                })
                .collect();
            let i = idx[n];
            let m: f64 = (0..rank).map(|r| pi[r] * b[(i, r)]).sum();
            for r in 0..rank {
                g[(i, r)] -= v * pi[r] / (m + eps_div);
            }
        }
        for i in 0..rows {
            for r in 0..rank {
                worst = worst.max(b[(i, r)].min(g[(i, r)]).abs());
            }
        }
    }
    worst
}

/// Minimizes a row problem by projected gradient descent with backtracking,
/// for `steps` iterations. Returns the final objective.
pub fn projected_gradient_oracle(p: &RowSubproblem, b0: &[f64], steps: usize) -> f64 {
    let eps = 1e-16;
    let f = |b: &[f64]| -> f64 {
        let mut v: f64 = b.iter().sum();
        for j in 0..p.nnz() {
            let m: f64 = p.pi_row(j).iter().zip(b).map(|(a, c)| a * c).sum();
            v -= p.counts()[j] * (m + eps).ln();
        }
        v
    };
    let grad = |b: &[f64]| -> Vec<f64> {
        let mut g = vec![1.0; b.len()];
        for j in 0..p.nnz() {
            let pi = p.pi_row(j);
            let m: f64 = pi.iter().zip(b).map(|(a, c)| a * c).sum();
            for r in 0..b.len() {
                g[r] -= p.counts()[j] * pi[r] / m;
            }
        }
        g
    };
    let mut b = b0.to_vec();
    let mut fb = f(&b);
    let mut eta = 1.0;
    for _ in 0..steps {
        let g = grad(&b);
        eta *= 2.0;
        loop {
            let c: Vec<f64> = b.iter().zip(&g).map(|(bi, gi)| (bi - eta * gi).max(0.0)).collect();
            let fc = f(&c);
            let decrease: f64 = g.iter().zip(c.iter().zip(&b)).map(|(gi, (ci, bi))| gi * (ci - bi)).sum();
            if fc.is_finite() && fc <= fb + 0.5 * decrease {
                b = c;
                fb = fc;
                break;
            }
            eta *= 0.5;
            if eta < 1e-300 {
                return fb;
            }
        }
    }
    fb
}

/// Student-t density with integer degrees of freedom.
fn t_pdf(t: f64, nu: u32) -> f64 {
    // gamma at half-integers by recursion from gamma(1/2) and gamma(1)
    fn gamma_half(m: u32) -> f64 {
        let (mut g, mut x) = if m % 2 == 0 { (1.0, 1.0) } else { (std::f64::consts::PI.sqrt(), 0.5) };
        while x < m as f64 / 2.0 {
            g *= x;
            x += 1.0;
        }
        g
    }
    let nu_f = nu as f64;
    gamma_half(nu + 1) / (gamma_half(nu) * (nu_f * std::f64::consts::PI).sqrt())
        * (1.0 + t * t / nu_f).powf(-(nu_f + 1.0) / 2.0)
}

/// CDF by composite Simpson from 0, plus one half.
fn t_cdf(t: f64, nu: u32) -> f64 {
    let n = 4000;
    let h = t / n as f64;
    let mut s = t_pdf(0.0, nu) + t_pdf(t, nu);
    for i in 1..n {
        s += t_pdf(i as f64 * h, nu) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 + s * h / 3.0
}

pub fn t_quantile_oracle(p: f64, nu: u32) -> f64 {
    let (mut lo, mut hi) = (0.0, 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, nu) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
