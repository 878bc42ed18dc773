//! Tolerances, the sieve box, and critical values.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::hermite::box_bound;
use crate::restriction::{FrequencyGrid, MomentTables};

/// Floor applied to `theta^T V theta` before the square root.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("level alpha must lie in (0, 1/2), got {0}")]
    Alpha(f64),
    #[error("smoothness bound M must be positive, got {0}")]
    Smoothness(f64),
    #[error(
        "conservative critical value undefined: z^2 = {z_squared:.4} is not below n = {n}; \
         increase n, alpha, or reduce the number of frequencies"
    )]
    SampleTooSmall { z_squared: f64, n: usize },
    #[error("multiplier bootstrap needs per-observation moment vectors; rebuild tables with retention")]
    MissingObservations,
    #[error("bootstrap needs at least 100 replications, got {0}")]
    TooFewReplications(usize),
}

/// `Phi^{-1}(p)` for the standard normal.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `Phi(x)` for the standard normal.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// `D(q) = sum_{j > q} (2j+1)^{-3}`.
///
/// Sums until the next term drops below `1e-15`, then adds the integral
/// estimate `1 / (4 (2J+2)^2)` of the remaining odd-index tail.
pub fn tail_sum_d(q: usize) -> f64 {
    let mut sum = 0.0;
    let mut j = q + 1;
    loop {
        let odd = (2 * j + 1) as f64;
        let term = odd.powi(-3);
        if term < 1e-15 {
            break;
        }
        sum += term;
        j += 1;
    }
    // Terms from index j onward; (2j+1)^{-3} ~ (1/2) int_{2j}^{inf} x^{-3} dx.
    let edge = (2 * j) as f64;
    sum + 0.25 / (edge * edge)
}

/// Sup-norm sieve bias bound `eta`.
pub fn compute_eta(q: usize, m_bound: f64) -> f64 {
    box_bound() / ((2 * q + 3) as f64).sqrt() * (m_bound * tail_sum_d(q)).sqrt()
}

/// Moment tolerance `delta`, identical at every frequency.
pub fn compute_delta(q: usize, m_bound: f64, mean_abs_y1: f64) -> f64 {
    (m_bound * tail_sum_d(q)).sqrt() / (2.0 * PI).sqrt()
        * (mean_abs_y1 / ((2 * q + 3) as f64).sqrt() + 1.0)
}

/// `c(alpha) = z / (1 - z^2 / n)` with `z = Phi^{-1}(1 - alpha / (4L))`.
pub fn conservative_critical_value(alpha: f64, frequencies: usize, n: usize) -> Result<f64, CalibError> {
    check_alpha(alpha)?;
    let z = normal_quantile(1.0 - alpha / (4.0 * frequencies as f64));
    let denom = 1.0 - z * z / n as f64;
    if denom <= 0.0 {
        return Err(CalibError::SampleTooSmall { z_squared: z * z, n });
    }
    Ok(z / denom)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<(), CalibError> {
    if alpha > 0.0 && alpha < 0.5 {
        Ok(())
    } else {
        Err(CalibError::Alpha(alpha))
    }
}

/// Which critical value enters the constraint `T(theta) <= c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalMode {
    #[default]
    Conservative,
    Bootstrap,
}

impl std::fmt::Display for CriticalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CriticalMode::Conservative => "conservative",
            CriticalMode::Bootstrap => "bootstrap",
        })
    }
}

/// Tuning parameters of one band.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub q: usize,
    pub m_bound: f64,
    pub alpha: f64,
    pub grid: FrequencyGrid,
    pub eta: f64,
    pub delta: Vec<f64>,
    pub box_bound: f64,
    pub tail_sum: f64,
    /// `c(alpha)`; also the fallback when bootstrap values are unavailable.
    pub critical_value: f64,
}

impl Calibration {
    pub fn new(
        q: usize,
        m_bound: f64,
        alpha: f64,
        grid: FrequencyGrid,
        mean_abs_y1: f64,
        n: usize,
    ) -> Result<Self, CalibError> {
        check_alpha(alpha)?;
        if !(m_bound > 0.0) || !m_bound.is_finite() {
            return Err(CalibError::Smoothness(m_bound));
        }
        let critical_value = conservative_critical_value(alpha, grid.len(), n)?;
        let delta = vec![compute_delta(q, m_bound, mean_abs_y1); grid.len()];
        Ok(Self {
            q,
            m_bound,
            alpha,
            eta: compute_eta(q, m_bound),
            delta,
            box_bound: box_bound(),
            tail_sum: tail_sum_d(q),
            critical_value,
            grid,
        })
    }

    /// Total width contributed by the bias enlargement, `2 eta`.
    pub fn bias_width(&self) -> f64 {
        2.0 * self.eta
    }
}

/// Pre-drawn multiplier projections `E_n[eps (R - E_n R)]` for every
/// replication and frequency, so that `c(alpha, theta)` costs `O(B L q)`.
#[derive(Debug, Clone)]
pub struct MultiplierBootstrap {
    n: usize,
    dim: usize,
    frequencies: usize,
    reps: usize,
    // Layout: [rep][freq][dim] for R, then the same for I.
    proj_r: Vec<f64>,
    proj_i: Vec<f64>,
    cov_r: Vec<crate::restriction::SymMatrix>,
    cov_i: Vec<crate::restriction::SymMatrix>,
}

impl MultiplierBootstrap {
    /// Replication `b` draws its multipliers from ChaCha stream `b` of `seed`.
    pub fn new(tables: &MomentTables, reps: usize, seed: u64) -> Result<Self, CalibError> {
        if reps < 100 {
            return Err(CalibError::TooFewReplications(reps));
        }
        let obs = tables.observations.as_ref().ok_or(CalibError::MissingObservations)?;
        let (n, dim, freqs) = (tables.n, tables.dim(), tables.len());
        let per_rep: Vec<(Vec<f64>, Vec<f64>)> = (0..reps)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let eps_mean = eps.iter().sum::<f64>() / n as f64;
                let mut pr = vec![0.0; freqs * dim];
                let mut pi = vec![0.0; freqs * dim];
                for l in 0..freqs {
                    for (block, mean, out) in [
                        (&obs.r[l], &tables.mean_r[l], &mut pr[l * dim..(l + 1) * dim]),
                        (&obs.i[l], &tables.mean_i[l], &mut pi[l * dim..(l + 1) * dim]),
                    ] {
                        for (k, e) in eps.iter().enumerate() {
                            let row = &block[k * dim..(k + 1) * dim];
                            for j in 0..dim {
                                out[j] += e * row[j];
                            }
                        }
                        // sum_k eps_k (r_k - mean) = sum_k eps_k r_k - mean * sum_k eps_k
                        for j in 0..dim {
                            out[j] = out[j] / n as f64 - mean[j] * eps_mean;
                        }
                    }
                }
                (pr, pi)
            })
            .collect();
        let mut proj_r = Vec::with_capacity(reps * freqs * dim);
        let mut proj_i = Vec::with_capacity(reps * freqs * dim);
        for (r, i) in per_rep {
            proj_r.extend(r);
            proj_i.extend(i);
        }
        Ok(Self {
            n,
            dim,
            frequencies: freqs,
            reps,
            proj_r,
            proj_i,
            cov_r: tables.cov_r.clone(),
            cov_i: tables.cov_i.clone(),
        })
    }

    pub fn reps(&self) -> usize {
        self.reps
    }

    /// Multiplier statistic for every replication at `theta`.
    pub fn statistics(&self, theta: &[f64]) -> Vec<f64> {
        let root_n = (self.n as f64).sqrt();
        let inv_sd = |cov: &crate::restriction::SymMatrix| 1.0 / cov.quad_form(theta).max(VARIANCE_FLOOR).sqrt();
        let sd_r: Vec<f64> = self.cov_r.iter().map(inv_sd).collect();
        let sd_i: Vec<f64> = self.cov_i.iter().map(inv_sd).collect();
        let dot = |v: &[f64]| v.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
        (0..self.reps)
            .map(|b| {
                let mut best = 0.0f64;
                for l in 0..self.frequencies {
                    let off = (b * self.frequencies + l) * self.dim;
                    let r = dot(&self.proj_r[off..off + self.dim]).abs() * sd_r[l];
                    let i = dot(&self.proj_i[off..off + self.dim]).abs() * sd_i[l];
                    best = best.max(r).max(i);
                }
                root_n * best
            })
            .collect()
    }

    /// Conditional `(1 - alpha)` quantile, `c(alpha, theta)`.
    pub fn critical_value(&self, theta: &[f64], alpha: f64) -> f64 {
        empirical_quantile(self.statistics(theta), 1.0 - alpha)
    }
}

/// Order statistic `ceil(p B)` (1-based) of the sample.
pub fn empirical_quantile(mut sample: Vec<f64>, p: f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let rank = ((p * sample.len() as f64).ceil() as usize).clamp(1, sample.len());
    sample[rank - 1]
}

/// One-shot `c(alpha, theta)` from freshly drawn multipliers.
pub fn bootstrap_critical_value(
    theta: &[f64],
    tables: &MomentTables,
    reps: usize,
    alpha: f64,
    seed: u64,
) -> Result<f64, CalibError> {
    // The median (alpha = 1/2) is allowed here for diagnostics.
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(CalibError::Alpha(alpha));
    }
    Ok(MultiplierBootstrap::new(tables, reps, seed)?.critical_value(theta, alpha))
}
