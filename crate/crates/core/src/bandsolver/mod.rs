//! Test inversion over the sieve box.
//!
//! The band at `x` is `[min psi(x)^T theta - eta, max psi(x)^T theta + eta]`
//! over coefficient vectors `theta` that satisfy
//!
//! * the box `|theta_j| <= 1.086435 pi^{-1/4}`,
//! * the density floor `psi(x')^T theta >= -eta` on a grid over `I`,
//! * the characteristic-function normalization at zero,
//! * the studentized moment inequalities `T(theta) <= c`.
//!
//! The last constraint is reverse-convex: `|m^T theta| <= delta + kappa
//! sqrt(theta^T V theta)`. Each local solve therefore linearizes the
//! square-root term from below at the current iterate, which yields an inner
//! approximation of the feasible set, and solves the resulting linear program.
//! Iterates stay feasible and the objective is monotone.

mod pattern;
mod lp;
mod slp;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::calib::{Calibration, CriticalMode, MultiplierBootstrap, VARIANCE_FLOOR};
use crate::hermite::{i_pow, HermiteBasis};
use crate::restriction::{MomentTables, SymMatrix};

pub use pattern::pattern_search;

/// Feasibility threshold used for every accepted point.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("no feasible coefficient vector found from any start")]
    Infeasible,
    #[error("band problem is malformed: {0}")]
    Malformed(String),
}

/// Point in the coefficient box.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector(pub Vec<f64>);

impl ThetaVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Copy with every entry clamped to `[-bound, bound]`, padded or truncated to `dim`.
    pub fn clamped(&self, dim: usize, bound: f64) -> ThetaVector {
        ThetaVector(
            (0..dim)
                .map(|j| self.0.get(j).copied().unwrap_or(0.0).clamp(-bound, bound))
                .collect(),
        )
    }
}

impl From<Vec<f64>> for ThetaVector {
    fn from(v: Vec<f64>) -> Self {
        ThetaVector(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Min => 1.0,
            Direction::Max => -1.0,
        }
    }
}

/// Tolerance on `|sqrt(2 pi) psi(0)^T diag(1, 0, -1, 0, ...) theta - 1|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationTolerance {
    /// `sqrt(2 pi) eta`, the characteristic-function bias bound.
    #[default]
    FourierScaled,
    /// `eta`.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LocalMethod {
    /// Sequential linear programming on the linearized moment constraints.
    #[default]
    SequentialLp,
    /// Penalized compass search followed by a feasibility-restoring pass.
    PatternSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub local: LocalMethod,
    /// Extra starts drawn uniformly from the box.
    pub random_starts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Stop once an iteration improves the objective by less than this.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            local: LocalMethod::SequentialLp,
            random_starts: 2,
            seed: 0x5eed,
            max_iterations: 60,
            tolerance: 1e-9,
        }
    }
}

/// Critical value entering `T(theta) <= c`.
#[derive(Debug, Clone)]
pub enum CriticalValue {
    Conservative(f64),
    /// `c(alpha, theta)`; `search` drives the optimizer, `check` decides
    /// final feasibility.
    Bootstrap {
        alpha: f64,
        search: Arc<MultiplierBootstrap>,
        check: Arc<MultiplierBootstrap>,
    },
}

impl CriticalValue {
    pub fn mode(&self) -> CriticalMode {
        match self {
            CriticalValue::Conservative(_) => CriticalMode::Conservative,
            CriticalValue::Bootstrap { .. } => CriticalMode::Bootstrap,
        }
    }

    fn search_value(&self, theta: &[f64]) -> f64 {
        match self {
            CriticalValue::Conservative(c) => *c,
            CriticalValue::Bootstrap { alpha, search, .. } => search.critical_value(theta, *alpha),
        }
    }

    fn check_value(&self, theta: &[f64]) -> f64 {
        match self {
            CriticalValue::Conservative(c) => *c,
            CriticalValue::Bootstrap { alpha, check, .. } => check.critical_value(theta, *alpha),
        }
    }
}

/// Everything needed to evaluate the constraint system of one band.
#[derive(Debug, Clone)]
pub struct BandProblem<'a> {
    pub tables: &'a MomentTables,
    pub calib: &'a Calibration,
    pub x_grid: Vec<f64>,
    pub density_floor_grid: Vec<f64>,
    pub critical: CriticalValue,
    pub normalization: NormalizationTolerance,
    x_rows: Vec<Vec<f64>>,
    floor_rows: Vec<Vec<f64>>,
    norm_row: Vec<f64>,
}

/// Grid with three extra points between every pair of neighbours of `x_grid`.
pub fn refine_grid(x_grid: &[f64], factor: usize) -> Vec<f64> {
    let factor = factor.max(1);
    let mut out = Vec::with_capacity(x_grid.len() * factor);
    for w in x_grid.windows(2) {
        for k in 0..factor {
            out.push(w[0] + (w[1] - w[0]) * k as f64 / factor as f64);
        }
    }
    if let Some(&last) = x_grid.last() {
        out.push(last);
    }
    out
}

/// `n` equally spaced points covering `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
            .collect(),
    }
}

impl<'a> BandProblem<'a> {
    /// Uses a density-floor grid at four times the resolution of `x_grid`.
    pub fn new(
        tables: &'a MomentTables,
        calib: &'a Calibration,
        x_grid: Vec<f64>,
        critical: CriticalValue,
    ) -> Result<Self, SolveError> {
        let floor = refine_grid(&x_grid, 4);
        Self::with_floor_grid(tables, calib, x_grid, floor, critical)
    }

    pub fn with_floor_grid(
        tables: &'a MomentTables,
        calib: &'a Calibration,
        x_grid: Vec<f64>,
        density_floor_grid: Vec<f64>,
        critical: CriticalValue,
    ) -> Result<Self, SolveError> {
        if x_grid.is_empty() {
            return Err(SolveError::Malformed("empty evaluation grid".into()));
        }
        if tables.q != calib.q {
            return Err(SolveError::Malformed(format!(
                "tables built for q = {} but calibration uses q = {}",
                tables.q, calib.q
            )));
        }
        if tables.len() != calib.delta.len() {
            return Err(SolveError::Malformed(format!(
                "{} frequencies in tables but {} tolerances",
                tables.len(),
                calib.delta.len()
            )));
        }
        let basis = HermiteBasis::new(calib.q).map_err(|e| SolveError::Malformed(e.to_string()))?;
        let x_rows = x_grid.iter().map(|&x| basis.values(x)).collect();
        let floor_rows = density_floor_grid.iter().map(|&x| basis.values(x)).collect();
        let psi0 = basis.values(0.0);
        let norm_row = psi0
            .iter()
            .enumerate()
            .map(|(j, p)| (2.0 * PI).sqrt() * i_pow(j).re * p)
            .collect();
        Ok(Self {
            tables,
            calib,
            x_grid,
            density_floor_grid,
            critical,
            normalization: NormalizationTolerance::default(),
            x_rows,
            floor_rows,
            norm_row,
        })
    }

    pub fn with_normalization(mut self, normalization: NormalizationTolerance) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn dim(&self) -> usize {
        self.calib.q + 1
    }

    pub fn eta(&self) -> f64 {
        self.calib.eta
    }

    pub fn normalization_tolerance(&self) -> f64 {
        match self.normalization {
            NormalizationTolerance::FourierScaled => (2.0 * PI).sqrt() * self.calib.eta,
            NormalizationTolerance::Plain => self.calib.eta,
        }
    }

    /// `sqrt(2 pi) psi(0)^T diag(1, 0, -1, 0, ...) theta`.
    pub fn normalization_value(&self, theta: &[f64]) -> f64 {
        dot(&self.norm_row, theta)
    }

    /// Sieve density `psi(x)^T theta`.
    pub fn sieve_value(&self, x: f64, theta: &[f64]) -> f64 {
        let basis = HermiteBasis::new(self.calib.q).expect("validated at construction");
        basis.combine(theta, x)
    }

    /// Coefficient vector whose sieve density is `psi_0` rescaled to satisfy
    /// the normalization exactly.
    pub fn axis_point(&self) -> ThetaVector {
        let mut theta = vec![0.0; self.dim()];
        theta[0] = 1.0 / self.norm_row[0];
        ThetaVector(theta)
    }

    pub(crate) fn moment_blocks(&self) -> impl Iterator<Item = (&[f64], &SymMatrix, f64)> + '_ {
        (0..self.tables.len()).flat_map(move |l| {
            let d = self.calib.delta[l];
            [
                (self.tables.mean_r[l].as_slice(), &self.tables.cov_r[l], d),
                (self.tables.mean_i[l].as_slice(), &self.tables.cov_i[l], d),
            ]
        })
    }

    /// Largest `|m^T theta| - delta - kappa sd(theta)` over all moment rows, in
    /// moment units, using the search critical value.
    pub(crate) fn moment_excess(&self, theta: &[f64], critical: f64) -> f64 {
        let kappa = critical / (self.tables.n as f64).sqrt();
        self.moment_blocks()
            .map(|(m, v, d)| dot(m, theta).abs() - d - kappa * v.quad_form(theta).max(VARIANCE_FLOOR).sqrt())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Box, density floor and normalization violations (no moment part).
    pub(crate) fn linear_violation(&self, theta: &[f64]) -> f64 {
        let bound = self.calib.box_bound;
        let boxv = theta.iter().map(|t| t.abs() - bound).fold(0.0, f64::max);
        let floor = self
            .floor_rows
            .iter()
            .map(|row| -self.calib.eta - dot(row, theta))
            .fold(0.0, f64::max);
        let norm = (self.normalization_value(theta) - 1.0).abs() - self.normalization_tolerance();
        boxv.max(floor).max(norm.max(0.0))
    }

    pub(crate) fn floor_rows(&self) -> &[Vec<f64>] {
        &self.floor_rows
    }

    pub(crate) fn norm_row(&self) -> &[f64] {
        &self.norm_row
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `T(theta) = sqrt(n) max_l max{(|E_n R^T theta| - delta) / sd, (|E_n I^T theta| - delta) / sd}`
/// with `sd = sqrt(max(theta^T V theta, 1e-12))`.
pub fn test_statistic(theta: &[f64], tables: &MomentTables, calib: &Calibration) -> f64 {
    let root_n = (tables.n as f64).sqrt();
    let mut best = f64::NEG_INFINITY;
    for l in 0..tables.len() {
        let d = calib.delta[l];
        for (m, v) in [(&tables.mean_r[l], &tables.cov_r[l]), (&tables.mean_i[l], &tables.cov_i[l])] {
            let sd = v.quad_form(theta).max(VARIANCE_FLOOR).sqrt();
            best = best.max((dot(m, theta).abs() - d) / sd);
        }
    }
    root_n * best
}

/// Largest violation over the box, the density floor, the normalization, and
/// `T(theta) <= c` (the last measured in statistic units). Zero iff feasible.
pub fn constraint_violation(theta: &[f64], problem: &BandProblem<'_>) -> f64 {
    let linear = problem.linear_violation(theta);
    let stat = test_statistic(theta, problem.tables, problem.calib) - problem.critical.check_value(theta);
    linear.max(stat.max(0.0))
}

/// Optimum of one envelope program.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub value: f64,
    pub theta: ThetaVector,
}

/// Pointwise band over `x`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConfidenceBand {
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eta: f64,
    pub feasible: bool,
}

impl ConfidenceBand {
    pub fn infeasible(x: Vec<f64>, eta: f64) -> Self {
        Self { x, lower: Vec::new(), upper: Vec::new(), eta, feasible: false }
    }

    /// Mean of `upper - lower` over the grid; `None` for an empty band.
    pub fn average_length(&self) -> Option<f64> {
        if !self.feasible || self.lower.is_empty() {
            return None;
        }
        let total: f64 = self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).sum();
        Some(total / self.lower.len() as f64)
    }

    /// Whether `f(x)` lies in `[lower, upper]` at every grid point.
    pub fn contains<F: Fn(f64) -> f64>(&self, f: F) -> bool {
        self.feasible
            && self
                .x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&x, (&lo, &hi))| {
                    let v = f(x);
                    lo <= v && v <= hi
                })
    }
}

/// Moves a start into the feasible set. Returns `None` when no feasible point
/// is reachable from it.
pub fn restore_feasibility(problem: &BandProblem<'_>, start: &ThetaVector, options: &SolverOptions) -> Option<ThetaVector> {
    let start = start.clamped(problem.dim(), problem.calib.box_bound);
    if constraint_violation(start.as_slice(), problem) <= FEASIBILITY_TOLERANCE
        && problem.moment_excess(start.as_slice(), problem.critical.search_value(start.as_slice())) < 0.0
    {
        return Some(start);
    }
    let restored = slp::phase_one(problem, start.as_slice(), options).or_else(|| {
        let polished = pattern::penalized_descent(problem, None, start.as_slice(), options);
        slp::phase_one(problem, &polished, options)
    })?;
    (constraint_violation(&restored, problem) <= FEASIBILITY_TOLERANCE).then_some(ThetaVector(restored))
}

fn local_solve(
    problem: &BandProblem<'_>,
    objective: &[f64],
    direction: Direction,
    start: &ThetaVector,
    options: &SolverOptions,
) -> Option<Envelope> {
    let theta = match options.local {
        LocalMethod::SequentialLp => slp::optimize(problem, objective, direction, start.as_slice(), options),
        LocalMethod::PatternSearch => {
            let restored = pattern_search(problem, objective, direction, start, options)?;
            slp::optimize(problem, objective, direction, restored.as_slice(), options)
        }
    }?;
    if constraint_violation(&theta, problem) > FEASIBILITY_TOLERANCE {
        return None;
    }
    Some(Envelope { value: dot(objective, &theta), theta: ThetaVector(theta) })
}

fn better(direction: Direction, a: f64, b: f64) -> bool {
    match direction {
        Direction::Min => a < b,
        Direction::Max => a > b,
    }
}

fn random_starts(problem: &BandProblem<'_>, options: &SolverOptions) -> Vec<ThetaVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let bound = problem.calib.box_bound;
    (0..options.random_starts)
        .map(|_| ThetaVector((0..problem.dim()).map(|_| rng.random_range(-bound..=bound)).collect()))
        .collect()
}

/// Feasible anchors reachable from the seeds, the normalization axis point,
/// and the random box starts, deduplicated.
pub fn feasible_anchors(problem: &BandProblem<'_>, seeds: &[ThetaVector], options: &SolverOptions) -> Vec<ThetaVector> {
    let mut starts: Vec<ThetaVector> = seeds.to_vec();
    starts.push(problem.axis_point());
    starts.extend(random_starts(problem, options));
    let mut anchors: Vec<ThetaVector> = Vec::new();
    for s in &starts {
        if let Some(p) = restore_feasibility(problem, s, options) {
            let duplicate = anchors.iter().any(|a| {
                a.0.iter().zip(&p.0).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max) < 1e-7
            });
            if !duplicate {
                anchors.push(p);
            }
        }
    }
    anchors
}

/// Best feasible `psi(x)^T theta` in the requested direction, searched from
/// every seed.
pub fn solve_envelope(
    problem: &BandProblem<'_>,
    x: f64,
    direction: Direction,
    seeds: &[ThetaVector],
    options: &SolverOptions,
) -> Result<Envelope, SolveError> {
    if seeds.is_empty() {
        return Err(SolveError::Malformed("at least one seed is required".into()));
    }
    let basis = HermiteBasis::new(problem.calib.q).map_err(|e| SolveError::Malformed(e.to_string()))?;
    let objective = basis.values(x);
    let mut best: Option<Envelope> = None;
    for seed in seeds {
        let Some(start) = restore_feasibility(problem, seed, options) else { continue };
        if let Some(env) = local_solve(problem, &objective, direction, &start, options) {
            if best.as_ref().is_none_or(|b| better(direction, env.value, b.value)) {
                best = Some(env);
            }
        }
    }
    best.ok_or(SolveError::Infeasible)
}

/// Runs both envelope programs at every grid point and widens by `eta`.
///
/// Each point starts from the previous point's optima and from every feasible
/// anchor. Any feasible point met along the way also bounds the opposite
/// envelope, so `lower + eta <= upper - eta` holds by construction.
pub fn build_band(problem: &BandProblem<'_>, seeds: &[ThetaVector], options: &SolverOptions) -> ConfidenceBand {
    let eta = problem.eta();
    let anchors = feasible_anchors(problem, seeds, options);
    if anchors.is_empty() {
        return ConfidenceBand::infeasible(problem.x_grid.clone(), eta);
    }
    let k = problem.x_grid.len();
    let mut lows = vec![f64::INFINITY; k];
    let mut highs = vec![f64::NEG_INFINITY; k];
    let mut found: Vec<ThetaVector> = anchors.clone();
    for direction in [Direction::Min, Direction::Max] {
        let mut previous: Option<ThetaVector> = None;
        for row in &problem.x_rows {
            let mut best: Option<Envelope> = None;
            let starts = previous.iter().chain(anchors.iter());
            for start in starts {
                if let Some(env) = local_solve(problem, row, direction, start, options) {
                    if best.as_ref().is_none_or(|b| better(direction, env.value, b.value)) {
                        best = Some(env);
                    }
                }
            }
            if let Some(env) = best {
                previous = Some(env.theta.clone());
                found.push(env.theta);
            }
        }
    }
    for (idx, row) in problem.x_rows.iter().enumerate() {
        for theta in &found {
            let v = dot(row, theta.as_slice());
            lows[idx] = lows[idx].min(v);
            highs[idx] = highs[idx].max(v);
        }
    }
    ConfidenceBand {
        x: problem.x_grid.clone(),
        lower: lows.iter().map(|v| v - eta).collect(),
        upper: highs.iter().map(|v| v + eta).collect(),
        eta,
        feasible: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{compute_eta, tail_sum_d};
    use crate::hermite::box_bound;
    use crate::restriction::{build_tables, Dataset, FrequencyGrid, Retention};

    fn hand_tables(mean_r: Vec<f64>, n: usize) -> (MomentTables, Calibration) {
        let grid = FrequencyGrid::from_points(1.0, vec![0.0]).unwrap();
        let tables = MomentTables {
            q: 1,
            n,
            frequencies: vec![0.0],
            mean_r: vec![mean_r],
            mean_i: vec![vec![0.0, 0.0]],
            cov_r: vec![SymMatrix::identity(2)],
            cov_i: vec![SymMatrix::identity(2)],
            observations: None,
        };
        let calib = Calibration {
            q: 1,
            m_bound: 15.0,
            alpha: 0.05,
            grid,
            eta: compute_eta(1, 15.0),
            delta: vec![0.0],
            box_bound: box_bound(),
            tail_sum: tail_sum_d(1),
            critical_value: 3.0,
        };
        (tables, calib)
    }

    #[test]
    fn statistic_hand_arithmetic() {
        let (tables, calib) = hand_tables(vec![1.0, 0.0], 4);
        assert!((test_statistic(&[1.0, 0.0], &tables, &calib) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn statistic_at_zero_uses_variance_floor() {
        let (tables, mut calib) = hand_tables(vec![1.0, 0.0], 4);
        calib.delta = vec![0.05];
        let t = test_statistic(&[0.0, 0.0], &tables, &calib);
        assert!((t - (-2.0 * 0.05 / 1e-6)).abs() < 1e-6);
    }

    #[test]
    fn normalization_axis_point() {
        let (tables, calib) = hand_tables(vec![0.0, 0.0], 4);
        let problem = BandProblem::new(&tables, &calib, vec![0.0], CriticalValue::Conservative(3.0)).unwrap();
        let axis = problem.axis_point();
        assert!((axis.0[0] - 0.531_126).abs() < 1e-6);
        assert!((problem.normalization_value(axis.as_slice()) - 1.0).abs() < 1e-15);
        let expected = 1.0 - (2.0 * PI).sqrt() * calib.eta;
        assert!((constraint_violation(&[0.0, 0.0], &problem) - expected).abs() < 1e-12);
        let plain = problem.clone().with_normalization(NormalizationTolerance::Plain);
        assert!((constraint_violation(&[0.0, 0.0], &plain) - (1.0 - calib.eta)).abs() < 1e-12);
    }

    #[test]
    fn box_violation_reported() {
        let (tables, calib) = hand_tables(vec![0.0, 0.0], 4);
        let problem = BandProblem::new(&tables, &calib, vec![0.0], CriticalValue::Conservative(3.0)).unwrap();
        let mut theta = problem.axis_point().0;
        theta[1] = calib.box_bound + 0.25;
        assert!(constraint_violation(&theta, &problem) >= 0.25 - 1e-12);
    }

    #[test]
    fn refine_and_linspace() {
        assert_eq!(refine_grid(&[0.0, 1.0], 4), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(linspace(-2.0, 2.0, 5), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(linspace(1.0, 3.0, 1), vec![2.0]);
    }

    fn small_problem_data() -> (MomentTables, Calibration) {
        // Deterministic pseudo-sample: latent on a lattice plus fixed offsets.
        let n = 400;
        let y1: Vec<f64> = (0..n).map(|k| ((k * 37 % 101) as f64 / 101.0 - 0.5) * 3.0 + 0.3 * ((k * 13 % 7) as f64 / 7.0 - 0.5)).collect();
        let y2: Vec<f64> = (0..n).map(|k| ((k * 37 % 101) as f64 / 101.0 - 0.5) * 3.0 - 0.3 * ((k * 29 % 11) as f64 / 11.0 - 0.5)).collect();
        let data = Dataset::new(y1, y2).unwrap();
        let basis = HermiteBasis::new(3).unwrap();
        let grid = FrequencyGrid::uniform(3.0, 8).unwrap();
        let tables = build_tables(&data, &basis, &grid, 3, Retention::SummaryOnly).unwrap();
        let calib = Calibration::new(3, 15.0, 0.05, grid, data.mean_abs_y1(), n).unwrap();
        (tables, calib)
    }

    #[test]
    fn envelopes_are_ordered_and_feasible() {
        let (tables, calib) = small_problem_data();
        let c = calib.critical_value;
        let problem = BandProblem::new(&tables, &calib, linspace(-1.5, 1.5, 7), CriticalValue::Conservative(c)).unwrap();
        let options = SolverOptions::default();
        let seeds = [problem.axis_point()];
        for &x in &[-1.0, 0.0, 0.7] {
            let lo = solve_envelope(&problem, x, Direction::Min, &seeds, &options).unwrap();
            let hi = solve_envelope(&problem, x, Direction::Max, &seeds, &options).unwrap();
            assert!(lo.value <= hi.value);
            assert!(constraint_violation(lo.theta.as_slice(), &problem) < 1e-9);
            assert!(constraint_violation(hi.theta.as_slice(), &problem) < 1e-9);
        }
        let band = build_band(&problem, &seeds, &options);
        assert!(band.feasible);
        for (l, u) in band.lower.iter().zip(&band.upper) {
            assert!(l + band.eta <= u - band.eta + 1e-9);
        }
        assert_eq!(build_band(&problem, &seeds, &options), band);
    }

    #[test]
    fn larger_tolerances_widen_envelopes() {
        let (tables, calib) = small_problem_data();
        let mut wide = calib.clone();
        wide.delta.iter_mut().for_each(|d| *d *= 10.0);
        let c = calib.critical_value;
        let narrow_p = BandProblem::new(&tables, &calib, vec![0.0], CriticalValue::Conservative(c)).unwrap();
        let wide_p = BandProblem::new(&tables, &wide, vec![0.0], CriticalValue::Conservative(c)).unwrap();
        let options = SolverOptions::default();
        for &x in &[-0.8, 0.0, 0.9] {
            // Narrow optima are feasible for the wide problem, so seed with them.
            let n_lo = solve_envelope(&narrow_p, x, Direction::Min, &[narrow_p.axis_point()], &options).unwrap();
            let n_hi = solve_envelope(&narrow_p, x, Direction::Max, &[narrow_p.axis_point()], &options).unwrap();
            let seeds = [n_lo.theta.clone(), n_hi.theta.clone()];
            let w_lo = solve_envelope(&wide_p, x, Direction::Min, &seeds, &options).unwrap();
            let w_hi = solve_envelope(&wide_p, x, Direction::Max, &seeds, &options).unwrap();
            assert!(w_lo.value <= n_lo.value + 1e-12);
            assert!(w_hi.value >= n_hi.value - 1e-12);
        }
    }

    #[test]
    fn contradictory_constraints_are_infeasible() {
        // delta = 0 and c = 0 force theta_0 = 0; the normalization needs ~0.53.
        let (tables, calib) = hand_tables(vec![1.0, 0.0], 4);
        let problem = BandProblem::new(&tables, &calib, vec![0.0, 1.0], CriticalValue::Conservative(0.0)).unwrap();
        let options = SolverOptions::default();
        let seeds = [problem.axis_point(), ThetaVector(vec![0.0, 0.0])];
        assert_eq!(
            solve_envelope(&problem, 0.0, Direction::Min, &seeds, &options),
            Err(SolveError::Infeasible)
        );
        let band = build_band(&problem, &seeds, &options);
        assert!(!band.feasible && band.lower.is_empty() && band.upper.is_empty());
        assert_eq!(band.average_length(), None);
        assert!(matches!(
            solve_envelope(&problem, 0.0, Direction::Min, &[], &options),
            Err(SolveError::Malformed(_))
        ));
    }

    #[test]
    fn pattern_search_route_is_feasible() {
        let (tables, calib) = small_problem_data();
        let c = calib.critical_value;
        let problem = BandProblem::new(&tables, &calib, vec![0.0], CriticalValue::Conservative(c)).unwrap();
        let options = SolverOptions { local: LocalMethod::PatternSearch, random_starts: 0, ..SolverOptions::default() };
        let slp = solve_envelope(&problem, 0.3, Direction::Max, &[problem.axis_point()], &SolverOptions::default()).unwrap();
        let pat = solve_envelope(&problem, 0.3, Direction::Max, &[problem.axis_point()], &options).unwrap();
        assert!(constraint_violation(pat.theta.as_slice(), &problem) < 1e-9);
        assert!(pat.value > problem.sieve_value(0.3, problem.axis_point().as_slice()) - 1e-12);
        assert!(slp.value.is_finite());
    }
}
