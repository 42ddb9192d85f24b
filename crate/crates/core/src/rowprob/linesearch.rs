use super::{dot, row_objective, NumericalConfig, RowSubproblem};
use crate::config::LineSearchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearchStatus {
    /// Accepted the candidate at backtracking index `t`.
    Accepted { t: u32 },
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    pub b: Vec<f64>,
    pub f: f64,
    pub evals: u64,
    pub status: LineSearchStatus,
}

/// Projected Armijo backtracking along `d` from `b`, where `f_b` is the
/// objective at `b` and `g` the gradient there.
///
/// Candidates are `max(b + beta^t d, 0)` for `t = 0, 1, ...` with
/// `beta = step_reduction_factor`. The first candidate satisfying
/// `f(c) <= f_b + sigma * g . (c - b)` is accepted. The ladder stops once
/// `t > max_backtrack_steps` or `beta^t < min_variable_nonzero_tolerance`;
/// on failure `b` is returned unchanged.
pub fn projected_line_search(
    p: &RowSubproblem,
    b: &[f64],
    f_b: f64,
    d: &[f64],
    g: &[f64],
    ls: &LineSearchConfig,
    num: &NumericalConfig,
) -> LineSearchOutcome {
    let mut evals = 0;
    let mut step = 1.0;
    let mut candidate = vec![0.0; b.len()];
    let mut diff = vec![0.0; b.len()];
    for t in 0..=ls.max_backtrack_steps {
        if step < ls.min_variable_nonzero_tolerance {
            break;
        }
        for r in 0..b.len() {
            candidate[r] = (b[r] + step * d[r]).max(0.0);
            diff[r] = candidate[r] - b[r];
        }
        let f_c = row_objective(p, &candidate, num);
        evals += 1;
        if f_c <= f_b + ls.suff_decrease_tolerance * dot(g, &diff) {
            return LineSearchOutcome {
                b: candidate,
                f: f_c,
                evals,
                status: LineSearchStatus::Accepted { t },
            };
        }
        step *= ls.step_reduction_factor;
    }
    LineSearchOutcome {
        b: b.to_vec(),
        f: f_b,
        evals,
        status: LineSearchStatus::Failed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rowprob::row_gradient;

    fn num0() -> NumericalConfig {
        NumericalConfig {
            eps_div_zero_grad: 0.0,
            log_zero_safeguard: 0.0,
            eps_active_set: 1e-3,
        }
    }

    #[test]
    fn zero_direction_accepts_immediately() {
        let p = RowSubproblem::new(2, vec![0.5, 0.5], vec![4.0]);
        let b = [1.0, 2.0];
        let num = num0();
        let f = row_objective(&p, &b, &num);
        let g = row_gradient(&p, &b, &num);
        let out = projected_line_search(&p, &b, f, &[0.0, 0.0], &g, &LineSearchConfig::default(), &num);
        assert_eq!(out.status, LineSearchStatus::Accepted { t: 0 });
        assert_eq!(out.b, b.to_vec());
        assert_eq!(out.evals, 1);
    }

    // f(b) = b - 3 log b, b = 1, d = +4. Ladder values by hand:
    //   t=0: c=5,    f=5-3ln5    = 0.171686..., bound f(1)+1e-4*(-2)(4)   = 0.9992   -> accept
    // so try a steeper overshoot, d = +40:
    //   t=0: c=41,   f=41-3ln41  = 29.859..   > 1 - 1e-4*2*40  -> reject
    //   t=1: c=21,   f=21-3ln21  = 11.866..   -> reject
    //   t=2: c=11,   f=11-3ln11  = 3.8063..   -> reject
    //   t=3: c=6,    f=6-3ln6    = 0.6247..   <= 1 - 1e-4*2*5 = 0.999 -> accept
    #[test]
    fn overshoot_ladder() {
        let p = RowSubproblem::new(1, vec![1.0], vec![3.0]);
        let num = num0();
        let ls = LineSearchConfig::default();
        let g = row_gradient(&p, &[1.0], &num);
        assert_eq!(g, vec![-2.0]);
        let out = projected_line_search(&p, &[1.0], 1.0, &[4.0], &g, &ls, &num);
        assert_eq!(out.status, LineSearchStatus::Accepted { t: 0 });
        assert_eq!(out.b, vec![5.0]);
        let out = projected_line_search(&p, &[1.0], 1.0, &[40.0], &g, &ls, &num);
        assert_eq!(out.status, LineSearchStatus::Accepted { t: 3 });
        assert_eq!(out.b, vec![6.0]);
        assert_eq!(out.evals, 4);
        assert!((out.f - (6.0 - 3.0 * 6f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn zero_backtracks_fails_without_moving() {
        let p = RowSubproblem::new(1, vec![1.0], vec![3.0]);
        let num = num0();
        let ls = LineSearchConfig { max_backtrack_steps: 0, ..Default::default() };
        let g = row_gradient(&p, &[1.0], &num);
        let out = projected_line_search(&p, &[1.0], 1.0, &[40.0], &g, &ls, &num);
        assert_eq!(out.status, LineSearchStatus::Failed);
        assert_eq!(out.b, vec![1.0]);
        assert_eq!(out.f, 1.0);
        assert_eq!(out.evals, 1);
    }

    #[test]
    fn step_floor_stops_ladder() {
        let p = RowSubproblem::new(1, vec![1.0], vec![3.0]);
        let num = num0();
        // beta^t: 1, 0.1, 0.01 < 0.05 -> only two candidates
        let ls = LineSearchConfig {
            max_backtrack_steps: 10,
            min_variable_nonzero_tolerance: 0.05,
            step_reduction_factor: 0.1,
            suff_decrease_tolerance: 1e-4,
        };
        let g = row_gradient(&p, &[1.0], &num);
        let out = projected_line_search(&p, &[1.0], 1.0, &[1e4], &g, &ls, &num);
        assert_eq!(out.status, LineSearchStatus::Failed);
        assert_eq!(out.evals, 2);
    }

    #[test]
    fn projection_clamps_at_zero() {
        // no data: f(b) = sum b, minimized at the bound
        let p = RowSubproblem::empty(2);
        let num = num0();
        let b = [1.0, 0.5];
        let g = row_gradient(&p, &b, &num);
        let out = projected_line_search(&p, &b, 1.5, &[-10.0, -10.0], &g, &LineSearchConfig::default(), &num);
        assert_eq!(out.status, LineSearchStatus::Accepted { t: 0 });
        assert_eq!(out.b, vec![0.0, 0.0]);
    }
}
