//! Per-row Poisson regression subproblems.
//!
//! With every factor except mode `n` normalized, row `i` of the scaled
//! factor `B = A_n * diag(lambda)` minimizes
//!
//! ```text
//! f(b) = sum_r b_r - sum_j x_j * log(pi_j . b + log_zero_safeguard)
//! ```
//!
//! over `b >= 0`, where `j` runs over the nonzeros of slice `i` and `pi_j`
//! is the elementwise product of the matching rows of the other factors.
//! The linear term is `sum_r b_r` only because those factors are normalized.

mod damped;
mod lbfgs;
mod linesearch;

pub use damped::{damping_update, pdnr_row_solve, MAX_DAMPING_RETRIES};
pub use lbfgs::{lbfgs_direction, pqnr_row_solve, LbfgsMemory, CURVATURE_FLOOR};
pub use linesearch::{projected_line_search, LineSearchOutcome, LineSearchStatus};

pub use crate::config::{LineSearchConfig, NumericalConfig, PdnrConfig, PqnrConfig};

use nalgebra::DMatrix;

/// Data of one row subproblem: the `pi_j` rows and their counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSubproblem {
    rank: usize,
    /// Row-major `nnz x rank`.
    pi: Vec<f64>,
    counts: Vec<f64>,
}

impl RowSubproblem {
    /// `pi` is row-major with one length-`rank` row per count.
    pub fn new(rank: usize, pi: Vec<f64>, counts: Vec<f64>) -> Self {
        assert!(rank > 0, "rank must be positive");
        assert_eq!(pi.len(), rank * counts.len(), "pi must hold one row per count");
        debug_assert!(pi.iter().all(|&v| v >= 0.0));
        Self { rank, pi, counts }
    }

    pub fn empty(rank: usize) -> Self {
        Self::new(rank, Vec::new(), Vec::new())
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn nnz(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn pi_row(&self, j: usize) -> &[f64] {
        &self.pi[j * self.rank..(j + 1) * self.rank]
    }

    fn terms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.pi.chunks_exact(self.rank).zip(self.counts.iter().copied())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row negative log-likelihood. One call is one function evaluation.
pub fn row_objective(p: &RowSubproblem, b: &[f64], num: &NumericalConfig) -> f64 {
    let linear: f64 = b.iter().sum();
    let data: f64 = p
        .terms()
        .map(|(pi, x)| x * (dot(pi, b) + num.log_zero_safeguard).ln())
        .sum();
    linear - data
}

/// `g_r = 1 - sum_j pi_jr * x_j / (pi_j . b + eps_div_zero_grad)`.
pub fn row_gradient(p: &RowSubproblem, b: &[f64], num: &NumericalConfig) -> Vec<f64> {
    let mut g = vec![1.0; p.rank()];
    for (pi, x) in p.terms() {
        let w = x / (dot(pi, b) + num.eps_div_zero_grad);
        for (gr, &pr) in g.iter_mut().zip(pi) {
            *gr -= w * pr;
        }
    }
    g
}

/// `H = sum_j x_j / (pi_j . b + eps_div_zero_grad)^2 * pi_j pi_j^T`.
pub fn row_hessian(p: &RowSubproblem, b: &[f64], num: &NumericalConfig) -> DMatrix<f64> {
    let r = p.rank();
    let mut h = DMatrix::zeros(r, r);
    for (pi, x) in p.terms() {
        let m = dot(pi, b) + num.eps_div_zero_grad;
        let w = x / (m * m);
        for c in 0..r {
            let wc = w * pi[c];
            if wc == 0.0 {
                continue;
            }
            for rr in c..r {
                h[(rr, c)] += wc * pi[rr];
            }
        }
    }
    h.fill_upper_triangle_with_lower_triangle();
    h
}

/// Free-variable mask: `false` (fixed) where `b_r <= eps_active_set` and
/// `g_r > 0`.
pub fn free_set(b: &[f64], g: &[f64], eps_active_set: f64) -> Vec<bool> {
    assert_eq!(b.len(), g.len());
    b.iter()
        .zip(g)
        .map(|(&br, &gr)| !(br <= eps_active_set && gr > 0.0))
        .collect()
}

/// `max_r |min(b_r, g_r)|`.
pub fn row_kkt_violation(b: &[f64], g: &[f64]) -> f64 {
    b.iter()
        .zip(g)
        .map(|(&br, &gr)| br.min(gr).abs())
        .fold(0.0, f64::max)
}

/// Outcome of one row solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSolution {
    pub b: Vec<f64>,
    /// KKT violation at the starting point.
    pub initial_kkt: f64,
    /// KKT violation at the returned point.
    pub final_kkt: f64,
    pub inner_iterations: u32,
    /// Calls to [`row_objective`].
    pub function_evaluations: u64,
    pub line_search_failures: u32,
    /// Damped systems that stayed indefinite after every retry.
    pub factorization_failures: u32,
}

/// Settings shared by both row solvers for one call.
#[derive(Debug, Clone, Copy)]
pub struct RowSolveSettings<'a> {
    /// Stop once the row KKT violation is at most this.
    pub tau: f64,
    pub max_inner_iterations: u32,
    pub line_search: &'a LineSearchConfig,
    pub numerical: &'a NumericalConfig,
}
