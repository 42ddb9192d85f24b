//! Alternating Poisson regression driver.
//!
//! Each outer iteration sweeps modes `0..N`. For mode `n` the weights are
//! absorbed into `A_n`, every row of the resulting `B` is re-fitted by the
//! configured row solver against the normalized remaining factors, and `B`
//! is split back into `lambda` and a column-stochastic `A_n`.
//!
//! The KKT violation of a pass is the largest row violation seen at the
//! start of each row solve. A pass with violation below `tau` changed no
//! row, so the returned model satisfies the same bound.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{Method, SolverConfig};
use crate::error::{Error, Result};
use crate::kruskal::{loss, KruskalTensor};
use crate::rowprob::{
    pdnr_row_solve, pqnr_row_solve, row_gradient, RowSolution, RowSolveSettings, RowSubproblem,
};
use crate::sptensor::{build_mode_index, ModeIndex, SparseTensor};

/// Rows solved between wall-clock checks.
pub const ROW_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Canceled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub objective: f64,
    pub kkt_violation: f64,
    /// Cumulative row objective evaluations.
    pub function_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub outer_iterations: u64,
    pub total_inner_iterations: u64,
    /// Row objective evaluations, summed over every row solve.
    pub function_evaluations: u64,
    /// Full-model loss evaluations made by the driver (one per completed
    /// outer iteration, plus one at exit if canceled).
    pub model_evaluations: u64,
    pub line_search_failures: u64,
    pub factorization_failures: u64,
    pub final_objective: f64,
    pub final_kkt_violation: f64,
    /// Seconds.
    pub elapsed: f64,
    pub log: Vec<IterationLog>,
}

/// Source of elapsed time for the wall-clock budget.
pub trait Clock {
    fn elapsed_secs(&self) -> f64;
}

pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn elapsed_secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Receives every row solve in deterministic (mode, slice) order.
pub trait RowObserver {
    fn row_solved(&mut self, mode: usize, row: usize, solution: &RowSolution);
}

impl RowObserver for () {
    fn row_solved(&mut self, _: usize, _: usize, _: &RowSolution) {}
}

/// `max |min(B, G)|` over matching entries.
pub fn kkt_violation(b: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    if b.shape() != g.shape() {
        return Err(Error::ShapeMismatch(format!(
            "variables {:?} vs gradient {:?}",
            b.shape(),
            g.shape()
        )));
    }
    Ok(b.iter()
        .zip(g.iter())
        .map(|(&bv, &gv)| bv.min(gv).abs())
        .fold(0.0, f64::max))
}

/// Row subproblem for slice `row` of `mode`. Factors other than `mode` must
/// be column-stochastic.
pub fn build_row_subproblem(
    x: &SparseTensor,
    k: &KruskalTensor,
    index: &ModeIndex,
    row: usize,
) -> RowSubproblem {
    let mode = index.mode();
    let rank = k.rank();
    let group = index.group(row);
    let mut pi = vec![1.0; group.len() * rank];
    let mut counts = Vec::with_capacity(group.len());
    for (j, &e) in group.iter().enumerate() {
        let idx = x.index(e);
        let out = &mut pi[j * rank..(j + 1) * rank];
        for (m, a) in k.factors().iter().enumerate() {
            if m == mode {
                continue;
            }
            for (r, v) in out.iter_mut().enumerate() {
                *v *= a[(idx[m], r)];
            }
        }
        counts.push(x.value(e));
    }
    RowSubproblem::new(rank, pi, counts)
}

/// `B = A_mode * diag(lambda)`.
fn absorb_weights(k: &KruskalTensor, mode: usize) -> DMatrix<f64> {
    let mut b = k.factor(mode).clone();
    for (r, &l) in k.lambda().iter().enumerate() {
        b.column_mut(r).scale_mut(l);
    }
    b
}

/// Splits `B` into weights and a column-stochastic factor. An all-zero
/// column gets weight zero and a uniform column.
fn split_weights(b: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut a = b;
    let rows = a.nrows() as f64;
    let mut lambda = Vec::with_capacity(a.ncols());
    for r in 0..a.ncols() {
        let s = a.column(r).sum();
        if s > 0.0 {
            a.column_mut(r).unscale_mut(s);
            lambda.push(s);
        } else {
            a.column_mut(r).fill(1.0 / rows);
            lambda.push(0.0);
        }
    }
    (a, lambda)
}

/// Normalizes, mapping any zero column to weight zero.
fn normalize_lenient(k: &KruskalTensor) -> KruskalTensor {
    let mut out = k.clone();
    for n in 0..out.order() {
        let b = absorb_weights(&out, n);
        let (a, lambda) = split_weights(b);
        out.set_mode(n, a, lambda);
    }
    out
}

/// KKT violation of a normalized model, from the full gradient of every
/// mode's row problems.
pub fn model_kkt_violation(x: &SparseTensor, k: &KruskalTensor, cfg: &SolverConfig) -> Result<f64> {
    check_shapes(x, k, cfg.rank)?;
    let mut worst: f64 = 0.0;
    for mode in 0..x.order() {
        let index = build_mode_index(x, mode)?;
        let b = absorb_weights(k, mode);
        let mut g = DMatrix::zeros(b.nrows(), b.ncols());
        for row in 0..b.nrows() {
            let p = build_row_subproblem(x, k, &index, row);
            let brow: Vec<f64> = b.row(row).iter().copied().collect();
            let grow = row_gradient(&p, &brow, &cfg.numerical);
            for (r, v) in grow.into_iter().enumerate() {
                g[(row, r)] = v;
            }
        }
        worst = worst.max(kkt_violation(&b, &g)?);
    }
    Ok(worst)
}

fn check_shapes(x: &SparseTensor, k: &KruskalTensor, rank: usize) -> Result<()> {
    if k.rank() != rank {
        return Err(Error::ShapeMismatch(format!(
            "model rank {} but configured rank {rank}",
            k.rank()
        )));
    }
    if x.dims() != k.dims().as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "tensor dims {:?} vs model dims {:?}",
            x.dims(),
            k.dims()
        )));
    }
    Ok(())
}

fn solve_row(cfg: &SolverConfig, p: &RowSubproblem, b0: &[f64]) -> RowSolution {
    let settings = RowSolveSettings {
        tau: cfg.tau,
        max_inner_iterations: cfg.max_inner_iterations,
        line_search: &cfg.line_search,
        numerical: &cfg.numerical,
    };
    match cfg.method {
        Method::Pdnr => pdnr_row_solve(p, b0, &cfg.pdnr, &settings),
        Method::Pqnr => pqnr_row_solve(p, b0, &cfg.pqnr, &settings),
    }
}

/// Fits `x` starting from `k0`.
pub fn decompose(
    x: &SparseTensor,
    k0: &KruskalTensor,
    cfg: &SolverConfig,
    clock: &dyn Clock,
) -> Result<(KruskalTensor, SolveResult)> {
    decompose_observed(x, k0, cfg, clock, &mut ())
}

/// [`decompose`], reporting every row solve to `observer`.
pub fn decompose_observed(
    x: &SparseTensor,
    k0: &KruskalTensor,
    cfg: &SolverConfig,
    clock: &dyn Clock,
    observer: &mut dyn RowObserver,
) -> Result<(KruskalTensor, SolveResult)> {
    cfg.validate()?;
    check_shapes(x, k0, cfg.rank)?;
    let indexes = (0..x.order())
        .map(|m| build_mode_index(x, m))
        .collect::<Result<Vec<_>>>()?;
    let pool = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?,
        )
    } else {
        None
    };
    let limit = cfg.time_limit.unwrap_or(f64::INFINITY);
    let out_of_time = || clock.elapsed_secs() >= limit;

    let mut k = normalize_lenient(k0);
    let mut result = SolveResult {
        status: SolveStatus::MaxIterations,
        outer_iterations: 0,
        total_inner_iterations: 0,
        function_evaluations: 0,
        model_evaluations: 0,
        line_search_failures: 0,
        factorization_failures: 0,
        final_objective: f64::NAN,
        final_kkt_violation: f64::NAN,
        elapsed: 0.0,
        log: Vec::new(),
    };
    let mut canceled = false;

    'outer: for outer in 1..=cfg.max_outer_iterations {
        let mut pass_kkt: f64 = 0.0;
        for (mode, index) in indexes.iter().enumerate() {
            let mut b = absorb_weights(&k, mode);
            let rows = b.nrows();
            let mut start = 0;
            while start < rows {
                if out_of_time() {
                    canceled = true;
                    let (a, lambda) = split_weights(b);
                    k.set_mode(mode, a, lambda);
                    break 'outer;
                }
                let end = (start + ROW_BATCH).min(rows);
                let solve = |row: usize| -> RowSolution {
                    let b0: Vec<f64> = b.row(row).iter().copied().collect();
                    if index.group(row).is_empty() {
                        let kkt = b0.iter().map(|v| v.min(1.0).abs()).fold(0.0, f64::max);
                        return RowSolution {
                            b: vec![0.0; b0.len()],
                            initial_kkt: kkt,
                            final_kkt: 0.0,
                            inner_iterations: 0,
                            function_evaluations: 0,
                            line_search_failures: 0,
                            factorization_failures: 0,
                        };
                    }
                    let p = build_row_subproblem(x, &k, index, row);
                    solve_row(cfg, &p, &b0)
                };
                let solutions: Vec<RowSolution> = match &pool {
                    Some(pool) => pool.install(|| {
                        use rayon::prelude::*;
                        (start..end).into_par_iter().map(solve).collect()
                    }),
                    None => (start..end).map(solve).collect(),
                };
                for (row, sol) in (start..end).zip(&solutions) {
                    observer.row_solved(mode, row, sol);
                    pass_kkt = pass_kkt.max(sol.initial_kkt);
                    result.total_inner_iterations += u64::from(sol.inner_iterations);
                    result.function_evaluations += sol.function_evaluations;
                    result.line_search_failures += u64::from(sol.line_search_failures);
                    result.factorization_failures += u64::from(sol.factorization_failures);
                    for (r, &v) in sol.b.iter().enumerate() {
                        b[(row, r)] = v;
                    }
                }
                start = end;
            }
            let (a, lambda) = split_weights(b);
            k.set_mode(mode, a, lambda);
        }
        result.outer_iterations = outer;
        let objective = loss(x, &k, cfg.numerical.log_zero_safeguard)?;
        result.model_evaluations += 1;
        result.log.push(IterationLog {
            objective,
            kkt_violation: pass_kkt,
            function_evaluations: result.function_evaluations,
        });
        result.final_objective = objective;
        result.final_kkt_violation = pass_kkt;
        if pass_kkt < cfg.tau {
            result.status = SolveStatus::Converged;
            break;
        }
    }

    if canceled {
        result.status = SolveStatus::Canceled;
        result.final_objective = loss(x, &k, cfg.numerical.log_zero_safeguard)?;
        result.model_evaluations += 1;
        result.final_kkt_violation = model_kkt_violation(x, &k, cfg)?;
    }
    result.elapsed = clock.elapsed_secs();
    Ok((k, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kruskal::random_init;

    #[test]
    fn kkt_measure_cases() {
        let b = DMatrix::from_row_slice(1, 2, &[2.0, 0.0]);
        let g = DMatrix::from_row_slice(1, 2, &[0.0, 5.0]);
        assert_eq!(kkt_violation(&b, &g).unwrap(), 0.0);
        let g = DMatrix::from_row_slice(1, 2, &[0.0, -2.0]);
        assert_eq!(kkt_violation(&b, &g).unwrap(), 2.0);
        assert!(kkt_violation(&b, &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn split_weights_handles_dead_column() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 3.0, 0.0]);
        let (a, lambda) = split_weights(b);
        assert_eq!(lambda, vec![4.0, 0.0]);
        assert_eq!(a.column(0).as_slice(), &[0.25, 0.75]);
        assert_eq!(a.column(1).as_slice(), &[0.5, 0.5]);
    }

    struct Frozen(f64);
    impl Clock for Frozen {
        fn elapsed_secs(&self) -> f64 {
            self.0
        }
    }

    #[test]
    fn zero_time_limit_cancels_before_any_row() {
        let x = crate::sptensor::parse_frostt_str("1 1 3\n2 2 5\n").unwrap();
        let k0 = random_init(&[2, 2], 1, 1).unwrap();
        let mut cfg = SolverConfig::new(Method::Pdnr);
        cfg.rank = 1;
        cfg.time_limit = Some(0.0);
        let (_, res) = decompose(&x, &k0, &cfg, &Frozen(0.0)).unwrap();
        assert_eq!(res.status, SolveStatus::Canceled);
        assert_eq!(res.function_evaluations, 0);
        assert_eq!(res.outer_iterations, 0);
        assert!(res.final_kkt_violation.is_finite());
    }

    #[test]
    fn rank_and_shape_mismatch() {
        let x = crate::sptensor::parse_frostt_str("1 1 3\n2 2 5\n").unwrap();
        let cfg = SolverConfig::new(Method::Pdnr);
        let k0 = random_init(&[2, 2], 2, 1).unwrap();
        assert!(matches!(decompose(&x, &k0, &cfg, &WallClock::start()), Err(Error::ShapeMismatch(_))));
        let k0 = random_init(&[2, 3], 5, 1).unwrap();
        assert!(matches!(decompose(&x, &k0, &cfg, &WallClock::start()), Err(Error::ShapeMismatch(_))));
    }
}
