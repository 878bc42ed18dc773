//! Moment functions built from Kotlarski's identity and their empirical
//! summaries over a frequency grid.
//!
//! For a sieve element `psi_j` with Fourier image `phi_j = i^j sqrt(2 pi) psi_j`,
//! the complex restriction `E[(i Y1 phi_j(t) - phi_j'(t)) exp(i t Y2)] = 0` is
//! split into its real part `R` and imaginary part `I`. Both are closed-form in
//! `psi_j(t)` and `psi_j'(t)`, so no numerical integration is needed.

use std::f64::consts::PI;

use rayon::prelude::*;
use thiserror::Error;

use crate::hermite::{i_pow, HermiteBasis};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RestrictionError {
    #[error("dataset needs at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("observation {index} is not finite: ({y1}, {y2})")]
    NonFinite { index: usize, y1: f64, y2: f64 },
    #[error("column lengths differ: y1 has {0}, y2 has {1}")]
    LengthMismatch(usize, usize),
    #[error("sieve degree {q} exceeds basis maximum {q_max}")]
    DegreeMismatch { q: usize, q_max: usize },
    #[error("coefficient vector has length {got}, expected {expected}")]
    ThetaLength { got: usize, expected: usize },
    #[error("invalid frequency grid: {0}")]
    Grid(String),
}

/// `n` paired measurements `(y1, y2)` of the same latent variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y1: Vec<f64>,
    y2: Vec<f64>,
}

impl Dataset {
    /// Accepts any non-empty set of finite pairs. Routines that need a
    /// variance (moment tables, ingestion) additionally require `n >= 2`.
    pub fn new(y1: Vec<f64>, y2: Vec<f64>) -> Result<Self, RestrictionError> {
        if y1.len() != y2.len() {
            return Err(RestrictionError::LengthMismatch(y1.len(), y2.len()));
        }
        if y1.is_empty() {
            return Err(RestrictionError::TooFewObservations { needed: 1, got: 0 });
        }
        if let Some(index) = (0..y1.len()).find(|&i| !y1[i].is_finite() || !y2[i].is_finite()) {
            return Err(RestrictionError::NonFinite { index, y1: y1[index], y2: y2[index] });
        }
        Ok(Self { y1, y2 })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, RestrictionError> {
        Self::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    pub fn len(&self) -> usize {
        self.y1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y1.is_empty()
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn y2(&self) -> &[f64] {
        &self.y2
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.y1.iter().copied().zip(self.y2.iter().copied())
    }

    /// `E_n |Y1|`.
    pub fn mean_abs_y1(&self) -> f64 {
        self.y1.iter().map(|v| v.abs()).sum::<f64>() / self.len() as f64
    }

    pub(crate) fn require(&self, needed: usize) -> Result<(), RestrictionError> {
        if self.len() < needed {
            Err(RestrictionError::TooFewObservations { needed, got: self.len() })
        } else {
            Ok(())
        }
    }
}

/// Frequencies `t_1 < ... < t_L` inside `[-T, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    bound: f64,
    points: Vec<f64>,
}

impl FrequencyGrid {
    /// `L` equally spaced frequencies from `-T` to `T` inclusive. Symmetric
    /// about zero; zero is a grid point only when `L` is odd. `L = 1` gives `{0}`.
    pub fn uniform(bound: f64, count: usize) -> Result<Self, RestrictionError> {
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(RestrictionError::Grid(format!("frequency bound must be positive, got {bound}")));
        }
        if count == 0 {
            return Err(RestrictionError::Grid("need at least one frequency".into()));
        }
        let points = if count == 1 {
            vec![0.0]
        } else {
            let step = 2.0 * bound / (count - 1) as f64;
            (0..count)
                .map(|l| {
                    // Mirror the upper half so the grid is exactly symmetric.
                    let k = count - 1 - l;
                    if l < k {
                        -bound + step * l as f64
                    } else {
                        bound - step * k as f64
                    }
                })
                .collect()
        };
        Ok(Self { bound, points })
    }

    pub fn from_points(bound: f64, points: Vec<f64>) -> Result<Self, RestrictionError> {
        if points.is_empty() {
            return Err(RestrictionError::Grid("need at least one frequency".into()));
        }
        if points.iter().any(|t| !t.is_finite() || t.abs() > bound) {
            return Err(RestrictionError::Grid(format!("all frequencies must lie in [-{bound}, {bound}]")));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RestrictionError::Grid("frequencies must be strictly increasing".into()));
        }
        Ok(Self { bound, points })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-degree constants at a fixed frequency: `a_j = i^j psi_j(t)` and
/// `b_j = i^j psi_j'(t)`, already scaled by `sqrt(2 pi)`.
#[derive(Debug, Clone)]
struct FrequencyTerms {
    t: f64,
    a_re: Vec<f64>,
    a_im: Vec<f64>,
    b_re: Vec<f64>,
    b_im: Vec<f64>,
}

impl FrequencyTerms {
    fn new(basis: &HermiteBasis, q: usize, t: f64) -> Self {
        let (psi, dpsi) = basis.values_and_derivatives(t);
        let scale = (2.0 * PI).sqrt();
        let mut terms = Self {
            t,
            a_re: Vec::with_capacity(q + 1),
            a_im: Vec::with_capacity(q + 1),
            b_re: Vec::with_capacity(q + 1),
            b_im: Vec::with_capacity(q + 1),
        };
        for j in 0..=q {
            let ij = i_pow(j);
            terms.a_re.push(scale * ij.re * psi[j]);
            terms.a_im.push(scale * ij.im * psi[j]);
            terms.b_re.push(scale * ij.re * dpsi[j]);
            terms.b_im.push(scale * ij.im * dpsi[j]);
        }
        terms
    }

    /// Writes `R_{psi_j,t}(y1, y2)` and `I_{psi_j,t}(y1, y2)` for all `j`.
    #[inline]
    fn eval(&self, y1: f64, y2: f64, r: &mut [f64], i: &mut [f64]) {
        let (s, c) = (self.t * y2).sin_cos();
        for j in 0..r.len() {
            let u = y1 * self.a_im[j] + self.b_re[j];
            let v = y1 * self.a_re[j] - self.b_im[j];
            r[j] = -c * u - s * v;
            i[j] = c * v - s * u;
        }
    }
}

/// Real part of `(i y1 phi_j(t) - phi_j'(t)) exp(i t y2)`.
pub fn moment_r(j: usize, t: f64, y1: f64, y2: f64) -> f64 {
    let (r, _) = moment_pair(j, t, y1, y2);
    r
}

/// Imaginary part of `(i y1 phi_j(t) - phi_j'(t)) exp(i t y2)`.
pub fn moment_i(j: usize, t: f64, y1: f64, y2: f64) -> f64 {
    let (_, i) = moment_pair(j, t, y1, y2);
    i
}

fn moment_pair(j: usize, t: f64, y1: f64, y2: f64) -> (f64, f64) {
    let basis = HermiteBasis::new(j).expect("degree within supported range");
    let terms = FrequencyTerms::new(&basis, j, t);
    let mut r = vec![0.0; j + 1];
    let mut i = vec![0.0; j + 1];
    terms.eval(y1, y2, &mut r, &mut i);
    (r[j], i[j])
}

/// Symmetric `(q+1) x (q+1)` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn from_rows(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim);
        Self { dim, data }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m.data[k * dim + k] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dim + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `out = M v`.
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.dim) {
            let row = &self.data[r * self.dim..(r + 1) * self.dim];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// `v^T M v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.dim {
            let row = &self.data[r * self.dim..(r + 1) * self.dim];
            acc += v[r] * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }
}

/// Per-observation `R` and `I` vectors kept for the multiplier bootstrap.
/// `r[l]` is an `n x (q+1)` row-major block for frequency `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedObservations {
    pub r: Vec<Vec<f64>>,
    pub i: Vec<Vec<f64>>,
}

/// Empirical means and covariances (1/n divisor) of the stacked moment
/// vectors at every grid frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTables {
    pub q: usize,
    pub n: usize,
    pub frequencies: Vec<f64>,
    pub mean_r: Vec<Vec<f64>>,
    pub mean_i: Vec<Vec<f64>>,
    pub cov_r: Vec<SymMatrix>,
    pub cov_i: Vec<SymMatrix>,
    pub observations: Option<RetainedObservations>,
}

impl MomentTables {
    pub fn dim(&self) -> usize {
        self.q + 1
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }
}

/// Whether [`build_tables`] keeps per-observation vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Retention {
    #[default]
    SummaryOnly,
    RetainObservations,
}

struct FrequencySummary {
    mean_r: Vec<f64>,
    mean_i: Vec<f64>,
    cov_r: SymMatrix,
    cov_i: SymMatrix,
    obs_r: Option<Vec<f64>>,
    obs_i: Option<Vec<f64>>,
}

// Welford co-moment update on the upper triangle.
#[inline]
fn welford_update(mean: &mut [f64], m2: &mut [f64], x: &[f64], count: f64, delta: &mut [f64]) {
    let dim = x.len();
    for k in 0..dim {
        delta[k] = x[k] - mean[k];
        mean[k] += delta[k] / count;
    }
    for r in 0..dim {
        let dr = x[r] - mean[r];
        let row = &mut m2[r * dim..(r + 1) * dim];
        for c in r..dim {
            row[c] += delta[c] * dr;
        }
    }
}

fn finish_covariance(m2: Vec<f64>, dim: usize, n: f64) -> SymMatrix {
    let mut data = m2;
    for r in 0..dim {
        for c in r..dim {
            let v = data[r * dim + c] / n;
            data[r * dim + c] = v;
            data[c * dim + r] = v;
        }
    }
    SymMatrix::from_rows(dim, data)
}

fn summarize_frequency(
    data: &Dataset,
    terms: &FrequencyTerms,
    dim: usize,
    retention: Retention,
) -> FrequencySummary {
    let n = data.len();
    let keep = retention == Retention::RetainObservations;
    let mut obs_r = keep.then(|| Vec::with_capacity(n * dim));
    let mut obs_i = keep.then(|| Vec::with_capacity(n * dim));
    let mut mean_r = vec![0.0; dim];
    let mut mean_i = vec![0.0; dim];
    let mut m2_r = vec![0.0; dim * dim];
    let mut m2_i = vec![0.0; dim * dim];
    let mut r = vec![0.0; dim];
    let mut i = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];
    for (k, (y1, y2)) in data.pairs().enumerate() {
        terms.eval(y1, y2, &mut r, &mut i);
        let count = (k + 1) as f64;
        welford_update(&mut mean_r, &mut m2_r, &r, count, &mut scratch);
        welford_update(&mut mean_i, &mut m2_i, &i, count, &mut scratch);
        if let (Some(or), Some(oi)) = (obs_r.as_mut(), obs_i.as_mut()) {
            or.extend_from_slice(&r);
            oi.extend_from_slice(&i);
        }
    }
    FrequencySummary {
        mean_r,
        mean_i,
        cov_r: finish_covariance(m2_r, dim, n as f64),
        cov_i: finish_covariance(m2_i, dim, n as f64),
        obs_r,
        obs_i,
    }
}

/// Reduces a dataset to per-frequency means and covariances of the stacked
/// `R` and `I` vectors over `psi_0..psi_q`.
pub fn build_tables(
    data: &Dataset,
    basis: &HermiteBasis,
    grid: &FrequencyGrid,
    q: usize,
    retention: Retention,
) -> Result<MomentTables, RestrictionError> {
    if q > basis.q_max() {
        return Err(RestrictionError::DegreeMismatch { q, q_max: basis.q_max() });
    }
    data.require(2)?;
    let dim = q + 1;
    let summaries: Vec<FrequencySummary> = grid
        .points()
        .par_iter()
        .map(|&t| {
            let terms = FrequencyTerms::new(basis, q, t);
            summarize_frequency(data, &terms, dim, retention)
        })
        .collect();

    let mut tables = MomentTables {
        q,
        n: data.len(),
        frequencies: grid.points().to_vec(),
        mean_r: Vec::with_capacity(grid.len()),
        mean_i: Vec::with_capacity(grid.len()),
        cov_r: Vec::with_capacity(grid.len()),
        cov_i: Vec::with_capacity(grid.len()),
        observations: None,
    };
    let mut retained = RetainedObservations { r: Vec::new(), i: Vec::new() };
    for s in summaries {
        tables.mean_r.push(s.mean_r);
        tables.mean_i.push(s.mean_i);
        tables.cov_r.push(s.cov_r);
        tables.cov_i.push(s.cov_i);
        if let (Some(r), Some(i)) = (s.obs_r, s.obs_i) {
            retained.r.push(r);
            retained.i.push(i);
        }
    }
    if retention == Retention::RetainObservations {
        tables.observations = Some(retained);
    }
    Ok(tables)
}

/// Means and variances of the scalar projections `R_t^T theta` and
/// `I_t^T theta`, one entry per frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedMoments {
    pub n: usize,
    pub mean_r: Vec<f64>,
    pub var_r: Vec<f64>,
    pub mean_i: Vec<f64>,
    pub var_i: Vec<f64>,
}

impl ProjectedMoments {
    /// `max_l max{ sqrt(n) |mean| / sd }` over both parts.
    pub fn max_studentized(&self) -> f64 {
        let root_n = (self.n as f64).sqrt();
        let part = |m: &[f64], v: &[f64]| {
            m.iter()
                .zip(v)
                .map(|(m, v)| root_n * m.abs() / v.max(1e-300).sqrt())
                .fold(0.0, f64::max)
        };
        part(&self.mean_r, &self.var_r).max(part(&self.mean_i, &self.var_i))
    }
}

/// Streams the dataset once per frequency, keeping only scalar projections.
/// Equivalent to `mean^T theta` and `theta^T cov theta` from [`build_tables`]
/// at `O(q)` rather than `O(q^2)` cost per observation.
pub fn project_moments(
    data: &Dataset,
    grid: &FrequencyGrid,
    theta: &[f64],
) -> Result<ProjectedMoments, RestrictionError> {
    if theta.is_empty() {
        return Err(RestrictionError::ThetaLength { got: 0, expected: 1 });
    }
    data.require(2)?;
    let q = theta.len() - 1;
    let basis = HermiteBasis::new(q).map_err(|_| RestrictionError::DegreeMismatch {
        q,
        q_max: crate::hermite::MAX_DEGREE - 1,
    })?;
    let per_freq: Vec<(f64, f64, f64, f64)> = grid
        .points()
        .par_iter()
        .map(|&t| {
            let terms = FrequencyTerms::new(&basis, q, t);
            // Collapse the per-degree constants against theta first.
            let dot = |v: &[f64]| v.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
            let (a_re, a_im, b_re, b_im) =
                (dot(&terms.a_re), dot(&terms.a_im), dot(&terms.b_re), dot(&terms.b_im));
            let (mut mr, mut m2r, mut mi, mut m2i) = (0.0, 0.0, 0.0, 0.0);
            for (k, (y1, y2)) in data.pairs().enumerate() {
                let (s, c) = (t * y2).sin_cos();
                let u = y1 * a_im + b_re;
                let v = y1 * a_re - b_im;
                let r = -c * u - s * v;
                let i = c * v - s * u;
                let count = (k + 1) as f64;
                let dr = r - mr;
                mr += dr / count;
                m2r += dr * (r - mr);
                let di = i - mi;
                mi += di / count;
                m2i += di * (i - mi);
            }
            let n = data.len() as f64;
            (mr, m2r / n, mi, m2i / n)
        })
        .collect();
    Ok(ProjectedMoments {
        n: data.len(),
        mean_r: per_freq.iter().map(|p| p.0).collect(),
        var_r: per_freq.iter().map(|p| p.1).collect(),
        mean_i: per_freq.iter().map(|p| p.2).collect(),
        var_i: per_freq.iter().map(|p| p.3).collect(),
    })
}
