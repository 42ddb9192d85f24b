use std::collections::VecDeque;

use super::{
    dot, free_set, projected_line_search, row_gradient, row_kkt_violation, row_objective, LineSearchStatus,
    RowSolution, RowSolveSettings, RowSubproblem,
};
use crate::config::PqnrConfig;

/// Pairs are kept only if `y . s > CURVATURE_FLOOR * |y| |s|`.
pub const CURVATURE_FLOOR: f64 = 1e-12;

/// The most recent `(s, y)` curvature pairs, newest last.
#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsMemory {
    capacity: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl LbfgsMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "L-BFGS memory needs room for one pair");
        Self {
            capacity,
            pairs: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Stores the pair if it passes the curvature floor, evicting the oldest
    /// pair when full. Returns whether it was stored.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        let norms = dot(&s, &s).sqrt() * dot(&y, &y).sqrt();
        if !(sy > CURVATURE_FLOOR * norms) || !sy.is_finite() {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
        true
    }

    pub fn pairs(&self) -> impl DoubleEndedIterator<Item = (&[f64], &[f64])> {
        self.pairs.iter().map(|(s, y)| (s.as_slice(), y.as_slice()))
    }
}

fn masked_dot(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(free)
        .filter(|(_, &f)| f)
        .map(|((x, y), _)| x * y)
        .sum()
}

/// Two-loop recursion on the free coordinates: returns `-H g` where `H`
/// approximates the inverse Hessian. Fixed coordinates are zero in the
/// result and are ignored in every stored pair.
pub fn lbfgs_direction(mem: &LbfgsMemory, g: &[f64], free: &[bool]) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().zip(free).map(|(&v, &f)| if f { v } else { 0.0 }).collect();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y) in mem.pairs().rev() {
        let sy = masked_dot(s, y, free);
        if sy <= 0.0 {
            alphas.push(None);
            continue;
        }
        let alpha = masked_dot(s, &q, free) / sy;
        for r in 0..q.len() {
            if free[r] {
                q[r] -= alpha * y[r];
            }
        }
        alphas.push(Some((alpha, sy)));
    }
    let gamma = match mem.pairs().next_back() {
        Some((s, y)) => {
            let sy = masked_dot(s, y, free);
            let yy = masked_dot(y, y, free);
            if sy > 0.0 && yy > 0.0 { sy / yy } else { 1.0 }
        }
        None => 1.0,
    };
    q.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y), coef) in mem.pairs().zip(alphas.into_iter().rev()) {
        let Some((alpha, sy)) = coef else { continue };
        let beta = masked_dot(y, &q, free) / sy;
        for r in 0..q.len() {
            if free[r] {
                q[r] += (alpha - beta) * s[r];
            }
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Quasi-Newton solve of one row, starting from `b0`, with a fresh L-BFGS
/// memory.
///
/// Fixed coordinates step along `-g`. A failed line search keeps the
/// iterate and clears the memory.
pub fn pqnr_row_solve(
    p: &RowSubproblem,
    b0: &[f64],
    cfg: &PqnrConfig,
    settings: &RowSolveSettings<'_>,
) -> RowSolution {
    let num = settings.numerical;
    let mut mem = LbfgsMemory::new(cfg.size_lbfgs);
    let mut b = b0.to_vec();
    let mut f = row_objective(p, &b, num);
    let mut evals = 1;
    let mut g = row_gradient(p, &b, num);
    let initial_kkt = row_kkt_violation(&b, &g);
    let mut kkt = initial_kkt;
    let mut iters = 0;
    let mut ls_failures = 0;

    while iters < settings.max_inner_iterations && kkt > settings.tau {
        iters += 1;
        let free = free_set(&b, &g, num.eps_active_set);
        let mut d = lbfgs_direction(&mem, &g, &free);
        for r in 0..d.len() {
            if !free[r] {
                d[r] = -g[r];
            }
        }
        if !(dot(&g, &d) < 0.0) {
            mem.clear();
            d = g.iter().map(|v| -v).collect();
        }
        let ls = projected_line_search(p, &b, f, &d, &g, settings.line_search, num);
        evals += ls.evals;
        if ls.status == LineSearchStatus::Failed {
            ls_failures += 1;
            mem.clear();
            continue;
        }
        let g_new = row_gradient(p, &ls.b, num);
        let s = (0..b.len()).map(|r| if free[r] { ls.b[r] - b[r] } else { 0.0 }).collect();
        let y = (0..b.len()).map(|r| if free[r] { g_new[r] - g[r] } else { 0.0 }).collect();
        mem.push(s, y);
        b = ls.b;
        f = ls.f;
        g = g_new;
        kkt = row_kkt_violation(&b, &g);
    }

    RowSolution {
        b,
        initial_kkt,
        final_kkt: kkt,
        inner_iterations: iters,
        function_evaluations: evals,
        line_search_failures: ls_failures,
        factorization_failures: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{LineSearchConfig, NumericalConfig};

    #[test]
    fn empty_memory_is_steepest_descent() {
        let mem = LbfgsMemory::new(3);
        let d = lbfgs_direction(&mem, &[1.0, -2.0, 0.5], &[true; 3]);
        assert_eq!(d, vec![-1.0, 2.0, -0.5]);
        let d = lbfgs_direction(&mem, &[1.0, -2.0, 0.5], &[true, false, true]);
        assert_eq!(d, vec![-1.0, 0.0, -0.5]);
    }

    #[test]
    fn identical_pair_is_identity() {
        let mut mem = LbfgsMemory::new(3);
        let v = vec![0.3, -1.2, 2.0];
        assert!(mem.push(v.clone(), v));
        let g = [0.7, 0.1, -0.4];
        let d = lbfgs_direction(&mem, &g, &[true; 3]);
        for (di, gi) in d.iter().zip(g) {
            assert!((di + gi).abs() < 1e-15);
        }
    }

    #[test]
    fn curvature_floor_and_eviction() {
        let mut mem = LbfgsMemory::new(2);
        assert!(!mem.push(vec![1.0, 0.0], vec![0.0, 1.0]));
        assert!(!mem.push(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert!(mem.push(vec![1.0, 0.0], vec![1.0, 0.0]));
        assert!(mem.push(vec![0.0, 1.0], vec![0.0, 2.0]));
        assert!(mem.push(vec![1.0, 1.0], vec![1.0, 1.0]));
        assert_eq!(mem.len(), 2);
        let newest: Vec<_> = mem.pairs().map(|(s, _)| s.to_vec()).collect();
        assert_eq!(newest, vec![vec![0.0, 1.0], vec![1.0, 1.0]]);
    }

    #[test]
    fn analytic_single_nonzero() {
        let p = RowSubproblem::new(1, vec![1.0], vec![3.0]);
        let ls = LineSearchConfig::default();
        let num = NumericalConfig::for_method(crate::config::Method::Pqnr);
        for m in [1, 3] {
            let settings = RowSolveSettings {
                tau: 1e-4,
                max_inner_iterations: 20,
                line_search: &ls,
                numerical: &num,
            };
            let out = pqnr_row_solve(&p, &[1.0], &PqnrConfig { size_lbfgs: m }, &settings);
            assert!((out.b[0] - 3.0).abs() < 1e-3, "{out:?}");
            assert!(out.final_kkt <= 1e-4);
        }
    }
}
