use nalgebra::{DMatrix, DVector};

use super::{
    dot, free_set, projected_line_search, row_gradient, row_hessian, row_kkt_violation, row_objective,
    LineSearchStatus, RowSolution, RowSolveSettings, RowSubproblem,
};
use crate::config::PdnrConfig;

/// Damping increases tried before a row is given up as ill-conditioned.
pub const MAX_DAMPING_RETRIES: u32 = 20;

/// Adapts the damping parameter from the ratio `rho` of actual to predicted
/// reduction.
pub fn damping_update(mu: f64, rho: f64, step_decreased_f: bool, cfg: &PdnrConfig) -> f64 {
    if !rho.is_finite() || (!step_decreased_f && rho < cfg.damping_increase_tolerance) {
        mu * cfg.damping_increase_factor
    } else if step_decreased_f && rho > cfg.damping_decrease_tolerance {
        mu * cfg.damping_decrease_factor
    } else {
        mu
    }
}

/// Solves `(H_FF + mu I) d_F = -g_F` on the free coordinates; fixed
/// coordinates take `d = -g`. Returns the direction and the damping that
/// produced a successful factorization.
fn damped_newton_direction(
    h: &DMatrix<f64>,
    g: &[f64],
    free: &[bool],
    mut mu: f64,
    cfg: &PdnrConfig,
) -> Option<(Vec<f64>, f64)> {
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let free_idx: Vec<usize> = (0..g.len()).filter(|&r| free[r]).collect();
    if free_idx.is_empty() {
        return Some((d, mu));
    }
    let k = free_idx.len();
    let h_ff = DMatrix::from_fn(k, k, |i, j| h[(free_idx[i], free_idx[j])]);
    let rhs = DVector::from_iterator(k, free_idx.iter().map(|&r| -g[r]));
    for _ in 0..=MAX_DAMPING_RETRIES {
        let mut m = h_ff.clone();
        for i in 0..k {
            m[(i, i)] += mu;
        }
        if let Some(chol) = m.cholesky() {
            let sol = chol.solve(&rhs);
            if sol.iter().all(|v| v.is_finite()) {
                for (i, &r) in free_idx.iter().enumerate() {
                    d[r] = sol[i];
                }
                return Some((d, mu));
            }
        }
        mu *= cfg.damping_increase_factor;
    }
    None
}

/// Damped-Newton solve of one row, starting from `b0`.
///
/// Each iteration masks the active set, takes a damped Newton step on the
/// free coordinates, runs the projected line search and then adapts `mu`.
/// A failed line search keeps the iterate, raises `mu` and moves on.
pub fn pdnr_row_solve(
    p: &RowSubproblem,
    b0: &[f64],
    cfg: &PdnrConfig,
    settings: &RowSolveSettings<'_>,
) -> RowSolution {
    let num = settings.numerical;
    let mut b = b0.to_vec();
    let mut f = row_objective(p, &b, num);
    let mut evals = 1;
    let mut mu = cfg.mu_initial;
    let mut g = row_gradient(p, &b, num);
    let initial_kkt = row_kkt_violation(&b, &g);
    let mut kkt = initial_kkt;
    let mut iters = 0;
    let mut ls_failures = 0;
    let mut fact_failures = 0;

    while iters < settings.max_inner_iterations && kkt > settings.tau {
        iters += 1;
        let free = free_set(&b, &g, num.eps_active_set);
        let h = row_hessian(p, &b, num);
        let Some((d, mu_used)) = damped_newton_direction(&h, &g, &free, mu, cfg) else {
            fact_failures += 1;
            break;
        };
        mu = mu_used;
        let ls = projected_line_search(p, &b, f, &d, &g, settings.line_search, num);
        evals += ls.evals;
        if ls.status == LineSearchStatus::Failed {
            ls_failures += 1;
            mu *= cfg.damping_increase_factor;
            continue;
        }
        let s: Vec<f64> = ls.b.iter().zip(&b).map(|(n, o)| n - o).collect();
        let hs = &h * DVector::from_column_slice(&s);
        let predicted = -(dot(&g, &s) + 0.5 * dot(&s, hs.as_slice()));
        let rho = (f - ls.f) / predicted;
        mu = damping_update(mu, rho, ls.f < f, cfg);
        b = ls.b;
        f = ls.f;
        g = row_gradient(p, &b, num);
        kkt = row_kkt_violation(&b, &g);
    }

    RowSolution {
        b,
        initial_kkt,
        final_kkt: kkt,
        inner_iterations: iters,
        function_evaluations: evals,
        line_search_failures: ls_failures,
        factorization_failures: fact_failures,
    }
}
