//! Penalized compass search over the coefficient box.

use super::{constraint_violation, dot, restore_feasibility, slp, BandProblem, Direction, SolverOptions, ThetaVector, FEASIBILITY_TOLERANCE};

const PENALTIES: [f64; 5] = [1e1, 1e2, 1e3, 1e4, 1e5];
const MIN_STEP: f64 = 1e-7;
const MAX_EVALUATIONS: usize = 20_000;

fn violation(problem: &BandProblem<'_>, theta: &[f64]) -> f64 {
    let critical = problem.critical.search_value(theta);
    problem.linear_violation(theta).max(problem.moment_excess(theta, critical).max(0.0))
}

/// Compass search on `objective + mu * violation^2` with `mu` escalated over
/// rounds. Without an objective this minimizes the violation alone.
pub(super) fn penalized_descent(
    problem: &BandProblem<'_>,
    objective: Option<(&[f64], Direction)>,
    start: &[f64],
    _options: &SolverOptions,
) -> Vec<f64> {
    let bound = problem.calib.box_bound;
    let linear = |theta: &[f64]| objective.map_or(0.0, |(c, d)| d.sign() * dot(c, theta));
    let mut theta: Vec<f64> = start.iter().map(|t| t.clamp(-bound, bound)).collect();
    let mut evaluations = 0;
    for mu in PENALTIES {
        let score = |theta: &[f64]| {
            let v = violation(problem, theta);
            linear(theta) + mu * v * v
        };
        let mut current = score(&theta);
        let mut step = 0.25 * bound;
        while step > MIN_STEP && evaluations < MAX_EVALUATIONS {
            let mut improved = false;
            for j in 0..theta.len() {
                for dir in [1.0, -1.0] {
                    let old = theta[j];
                    theta[j] = (old + dir * step).clamp(-bound, bound);
                    let trial = score(&theta);
                    evaluations += 1;
                    if trial < current {
                        current = trial;
                        improved = true;
                    } else {
                        theta[j] = old;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if objective.is_none() && violation(problem, &theta) == 0.0 {
            break;
        }
    }
    theta
}

/// Penalized descent followed by a feasibility-restoring pass. From a
/// feasible start, an unrestorable candidate falls back to the furthest
/// feasible point on the segment toward it.
pub fn pattern_search(
    problem: &BandProblem<'_>,
    objective: &[f64],
    direction: Direction,
    start: &ThetaVector,
    options: &SolverOptions,
) -> Option<ThetaVector> {
    let candidate = penalized_descent(problem, Some((objective, direction)), start.as_slice(), options);
    restore_feasibility(problem, &ThetaVector(candidate.clone()), options).or_else(|| {
        (constraint_violation(start.as_slice(), problem) <= FEASIBILITY_TOLERANCE)
            .then(|| ThetaVector(slp::backtrack(problem, start.as_slice(), &candidate)))
    })
}
