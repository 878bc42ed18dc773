//! Sequential linear programming on the linearized moment constraints.

use super::lp::{minimize, Constraints};
use super::{constraint_violation, dot, test_statistic, BandProblem, Direction, SolverOptions, FEASIBILITY_TOLERANCE};
use crate::calib::VARIANCE_FLOOR;

/// Pivot budget of one linear program.
const LP_STEPS: usize = 500;
/// Lower bound on the phase-one slack.
const SLACK_FLOOR: f64 = -1.0;

/// Linear rows of the inner approximation at `theta_k`, over `theta` and,
/// with `slack`, one extra variable subtracted from every non-box row.
///
/// The square-root term is replaced by its supporting hyperplane
/// `(V theta_k)^T theta / sqrt(theta_k^T V theta_k)`, a lower bound everywhere
/// that is exact at `theta_k`.
fn linearize(problem: &BandProblem<'_>, theta_k: &[f64], critical: f64, slack: bool) -> Constraints {
    let kappa = critical / (problem.tables.n as f64).sqrt();
    let dim = problem.dim();
    let width = dim + usize::from(slack);
    let tail = |row: Vec<f64>| -> Vec<f64> {
        let mut row = row;
        if slack {
            row.push(-1.0);
        }
        row
    };
    let mut cons = Constraints::new(width);
    let mut scratch = vec![0.0; dim];
    for (m, v, delta) in problem.moment_blocks() {
        v.mul_vec_into(theta_k, &mut scratch);
        let var = dot(&scratch, theta_k);
        let (scale, constant) = if var > VARIANCE_FLOOR {
            (kappa / var.sqrt(), 0.0)
        } else {
            (0.0, kappa * VARIANCE_FLOOR.sqrt())
        };
        for sign in [1.0, -1.0] {
            let row = m.iter().zip(&scratch).map(|(a, w)| sign * a - scale * w).collect();
            cons.push(tail(row), delta + constant);
        }
    }
    let eta = problem.eta();
    for row in problem.floor_rows() {
        cons.push(tail(row.iter().map(|x| -x).collect()), eta);
    }
    let tol = problem.normalization_tolerance();
    let norm = problem.norm_row();
    cons.push(tail(norm.to_vec()), 1.0 + tol);
    cons.push(tail(norm.iter().map(|x| -x).collect()), tol - 1.0);
    let bound = problem.calib.box_bound;
    for j in 0..dim {
        for sign in [1.0, -1.0] {
            cons.push((0..width).map(|k| if k == j { sign } else { 0.0 }), bound);
        }
    }
    if slack {
        cons.push((0..width).map(|k| if k == dim { -1.0 } else { 0.0 }), -SLACK_FLOOR);
    }
    cons
}

fn feasible(problem: &BandProblem<'_>, theta: &[f64]) -> bool {
    constraint_violation(theta, problem) <= FEASIBILITY_TOLERANCE
}

/// Largest step from feasible `from` toward `to` that stays feasible.
pub(super) fn backtrack(problem: &BandProblem<'_>, from: &[f64], to: &[f64]) -> Vec<f64> {
    let point = |t: f64| -> Vec<f64> { from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect() };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if feasible(problem, &point(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    point(lo)
}

/// Critical value for the linearization at `theta`, raised if needed so that
/// `theta` itself satisfies the linearized rows.
fn linearization_critical(problem: &BandProblem<'_>, theta: &[f64]) -> f64 {
    let search = problem.critical.search_value(theta);
    search.max(test_statistic(theta, problem.tables, problem.calib))
}

/// Local optimum of `objective^T theta` from a feasible start. Every iterate is
/// feasible and the objective is monotone.
pub(super) fn optimize(
    problem: &BandProblem<'_>,
    objective: &[f64],
    direction: Direction,
    start: &[f64],
    options: &SolverOptions,
) -> Option<Vec<f64>> {
    if !feasible(problem, start) {
        return None;
    }
    let sign = direction.sign();
    let signed: Vec<f64> = objective.iter().map(|c| sign * c).collect();
    let mut theta = start.to_vec();
    for _ in 0..options.max_iterations {
        let critical = linearization_critical(problem, &theta);
        let cons = linearize(problem, &theta, critical, false);
        let Ok(candidate) = minimize(&signed, &cons, &theta, LP_STEPS) else { break };
        let next = if feasible(problem, &candidate) {
            candidate
        } else {
            backtrack(problem, &theta, &candidate)
        };
        let gain = dot(&signed, &theta) - dot(&signed, &next);
        if gain <= 0.0 {
            break;
        }
        theta = next;
        if gain < options.tolerance {
            break;
        }
    }
    Some(theta)
}

/// Minimizes the largest linearized violation over all rows. Returns the
/// first feasible iterate.
pub(super) fn phase_one(problem: &BandProblem<'_>, start: &[f64], options: &SolverOptions) -> Option<Vec<f64>> {
    let dim = problem.dim();
    let bound = problem.calib.box_bound;
    let mut theta: Vec<f64> = start.iter().map(|t| t.clamp(-bound, bound)).collect();
    let mut objective = vec![0.0; dim + 1];
    objective[dim] = 1.0;
    let mut previous = f64::INFINITY;
    for _ in 0..options.max_iterations {
        let critical = problem.critical.search_value(&theta);
        let mut cons = linearize(problem, &theta, critical, true);
        // Start at the smallest slack that makes every row hold.
        let mut x0 = theta.clone();
        x0.push(0.0);
        let worst = (0..cons.len()).map(|i| cons.residual(i, &x0)).fold(f64::NEG_INFINITY, f64::max);
        x0[dim] = worst.max(SLACK_FLOOR);
        cons.push((0..=dim).map(|k| if k == dim { 1.0 } else { 0.0 }), x0[dim].max(0.0) + 1.0);
        let solution = minimize(&objective, &cons, &x0, LP_STEPS).ok()?;
        let s = solution[dim];
        let candidate = solution[..dim].to_vec();
        if feasible(problem, &candidate) {
            return Some(candidate);
        }
        if s >= previous - 1e-12 {
            return None;
        }
        previous = s;
        theta = candidate;
    }
    None
}
