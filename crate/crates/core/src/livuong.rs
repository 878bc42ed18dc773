//! Li–Vuong deconvolution estimator with an AMISE bandwidth.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::hermite::{project_density, HermiteError, Trapezoid};
use crate::restriction::Dataset;

/// `|E_n exp(i tau Y2)|` below this ends the usable frequency range.
pub const DENOMINATOR_FLOOR: f64 = 1e-3;
/// `int u^2 K(u) du` for the kernel with transform `(1 - t^2)^3`.
pub const KERNEL_SECOND_MOMENT: f64 = 6.0;

const AMISE_NODES: usize = 401;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiVuongError {
    #[error("frequency grid needs an odd number of points >= 3 and a positive radius, got {steps} points on [-{tau_max}, {tau_max}]")]
    Grid { tau_max: f64, steps: usize },
    #[error("no bandwidth candidate is usable; the estimated characteristic functions vanish before 1/h (usable range |t| <= {usable}); try larger h")]
    NoBandwidth { usable: f64 },
    #[error("bandwidth must be positive and finite, got {0}")]
    Bandwidth(f64),
    #[error("Cov(y1, y2) = {0} is not positive, so the latent scale cannot be estimated")]
    LatentVariance(f64),
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Projection(#[from] HermiteError),
}

/// Fourier transform of the kernel, `(1 - t^2)^3` on `[-1, 1]`.
pub fn kernel_transform(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        let u = 1.0 - t * t;
        u * u * u
    }
}

/// Estimated characteristic functions on a symmetric grid.
///
/// The grid is cut at the first `|tau|` where the denominator drops below
/// [`DENOMINATOR_FLOOR`]; `truncated_at` records that frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct CharFnEstimate {
    pub tau_grid: Vec<f64>,
    pub phi_x: Vec<Complex64>,
    pub phi_u1: Vec<Complex64>,
    pub step: f64,
    pub truncated_at: Option<f64>,
}

fn half_grid(tau_max: f64, steps: usize) -> Result<(usize, f64), LiVuongError> {
    if steps < 3 || steps.is_multiple_of(2) || !(tau_max > 0.0) || !tau_max.is_finite() {
        return Err(LiVuongError::Grid { tau_max, steps });
    }
    let half = (steps - 1) / 2;
    Ok((half, tau_max / half as f64))
}

impl CharFnEstimate {
    /// Mirrors nonnegative-frequency values by conjugation.
    fn from_half(step: f64, phi_x: Vec<Complex64>, phi_u1: Vec<Complex64>, truncated_at: Option<f64>) -> Self {
        let k = phi_x.len();
        let mut tau = Vec::with_capacity(2 * k - 1);
        let mut px = Vec::with_capacity(2 * k - 1);
        let mut pu = Vec::with_capacity(2 * k - 1);
        for i in (1..k).rev() {
            tau.push(-(i as f64) * step);
            px.push(phi_x[i].conj());
            pu.push(phi_u1[i].conj());
        }
        for i in 0..k {
            tau.push(i as f64 * step);
            px.push(phi_x[i]);
            pu.push(phi_u1[i]);
        }
        Self { tau_grid: tau, phi_x: px, phi_u1: pu, step, truncated_at }
    }

    /// Builds an estimate from known characteristic functions.
    pub fn from_functions<F, G>(tau_max: f64, steps: usize, phi_x: F, phi_u1: G) -> Result<Self, LiVuongError>
    where
        F: Fn(f64) -> Complex64,
        G: Fn(f64) -> Complex64,
    {
        let (half, step) = half_grid(tau_max, steps)?;
        let taus: Vec<f64> = (0..=half).map(|k| k as f64 * step).collect();
        let mut px: Vec<Complex64> = taus.iter().map(|&t| phi_x(t)).collect();
        px[0] = Complex64::new(1.0, 0.0);
        let pu = taus.iter().map(|&t| phi_u1(t)).collect();
        Ok(Self::from_half(step, px, pu, None))
    }

    /// Largest `|t|` covered by the estimate.
    pub fn usable_range(&self) -> f64 {
        self.tau_grid.last().copied().unwrap_or(0.0)
    }

    fn interpolate(&self, values: &[Complex64], t: f64) -> Option<Complex64> {
        let r = self.usable_range();
        if t.abs() > r + 1e-12 {
            return None;
        }
        let pos = ((t + r) / self.step).clamp(0.0, (values.len() - 1) as f64);
        let lo = (pos.floor() as usize).min(values.len() - 1);
        let hi = (lo + 1).min(values.len() - 1);
        let w = pos - lo as f64;
        Some(values[lo] * (1.0 - w) + values[hi] * w)
    }

    /// `phi_X(t)` by linear interpolation; `None` outside the usable range.
    pub fn phi_x_at(&self, t: f64) -> Option<Complex64> {
        self.interpolate(&self.phi_x, t)
    }

    pub fn phi_u1_at(&self, t: f64) -> Option<Complex64> {
        self.interpolate(&self.phi_u1, t)
    }
}

/// Empirical `E_n e^{i tau Y2}`, `E_n Y1 e^{i tau Y2}`, `E_n e^{i tau Y1}`.
fn empirical_transforms(data: &Dataset, tau: f64) -> (Complex64, Complex64, Complex64) {
    let mut a = Complex64::new(0.0, 0.0);
    let mut b = Complex64::new(0.0, 0.0);
    let mut c = Complex64::new(0.0, 0.0);
    for (y1, y2) in data.pairs() {
        let (s2, c2) = (tau * y2).sin_cos();
        let (s1, c1) = (tau * y1).sin_cos();
        a += Complex64::new(c2, s2);
        b += Complex64::new(y1 * c2, y1 * s2);
        c += Complex64::new(c1, s1);
    }
    let n = data.len() as f64;
    (a / n, b / n, c / n)
}

/// `phi_X(t) = exp(int_0^t i E_n[Y1 e^{i tau Y2}] / E_n[e^{i tau Y2}] d tau)` by
/// cumulative trapezoid, and `phi_U1 = E_n e^{i t Y1} / phi_X`.
pub fn estimate_charfn(data: &Dataset, tau_max: f64, steps: usize) -> Result<CharFnEstimate, LiVuongError> {
    if data.is_empty() {
        return Err(LiVuongError::Empty);
    }
    let (half, step) = half_grid(tau_max, steps)?;
    let transforms: Vec<_> = (0..=half)
        .into_par_iter()
        .map(|k| empirical_transforms(data, k as f64 * step))
        .collect();
    let i = Complex64::new(0.0, 1.0);
    let mut phi_x = Vec::with_capacity(half + 1);
    let mut phi_u1 = Vec::with_capacity(half + 1);
    let mut log_phi = Complex64::new(0.0, 0.0);
    let mut previous: Option<Complex64> = None;
    let mut truncated_at = None;
    for (k, &(a, b, c)) in transforms.iter().enumerate() {
        if a.norm() < DENOMINATOR_FLOOR {
            truncated_at = Some(k as f64 * step);
            break;
        }
        let integrand = i * b / a;
        if let Some(prev) = previous {
            log_phi += 0.5 * step * (prev + integrand);
        }
        previous = Some(integrand);
        let px = if k == 0 { Complex64::new(1.0, 0.0) } else { log_phi.exp() };
        phi_x.push(px);
        phi_u1.push(c / px);
    }
    Ok(CharFnEstimate::from_half(step, phi_x, phi_u1, truncated_at))
}

/// Trapezoid nodes and weights on `[-1, 1]`.
fn unit_nodes() -> Vec<(f64, f64)> {
    Trapezoid { radius: 1.0, nodes: AMISE_NODES }.points().expect("fixed valid rule")
}

/// Normal-reference `int f''(x)^2 dx = 3 / (8 sqrt(pi) sigma^5)` with
/// `sigma^2 = Cov(Y1, Y2)`, the latent variance under independent errors.
pub fn normal_reference_roughness(data: &Dataset) -> Result<f64, LiVuongError> {
    if data.is_empty() {
        return Err(LiVuongError::Empty);
    }
    let n = data.len() as f64;
    let m1 = data.y1().iter().sum::<f64>() / n;
    let m2 = data.y2().iter().sum::<f64>() / n;
    let cov = data.pairs().map(|(a, b)| (a - m1) * (b - m2)).sum::<f64>() / n;
    if !(cov > 0.0) {
        return Err(LiVuongError::LatentVariance(cov));
    }
    Ok(3.0 / (8.0 * PI.sqrt() * cov.powf(2.5)))
}

/// Plug-in AMISE at bandwidth `h` given an estimate of `int f''^2`;
/// `None` when `1/h` exceeds the usable range or the noise transform falls
/// below the floor on `[-1/h, 1/h]`.
pub fn amise(estimate: &CharFnEstimate, n: usize, h: f64, roughness: f64) -> Option<f64> {
    if !(h > 0.0) || 1.0 / h > estimate.usable_range() + 1e-12 {
        return None;
    }
    let mut variance = 0.0;
    for (t, w) in unit_nodes() {
        let u = estimate.phi_u1_at(t / h)?.norm_sqr();
        if u < DENOMINATOR_FLOOR * DENOMINATOR_FLOOR {
            return None;
        }
        variance += w * kernel_transform(t).powi(2) / u;
    }
    Some(variance / (2.0 * PI * n as f64 * h) + h.powi(4) / 4.0 * KERNEL_SECOND_MOMENT * roughness)
}

/// `count` log-spaced candidates on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp()).collect()
}

/// Default candidates: 40 log-spaced points in `[0.05, 2]`.
pub fn default_h_grid() -> Vec<f64> {
    log_grid(0.05, 2.0, 40)
}

/// Candidate with the smallest plug-in AMISE.
pub fn amise_bandwidth(estimate: &CharFnEstimate, n: usize, roughness: f64, h_grid: &[f64]) -> Result<f64, LiVuongError> {
    h_grid
        .iter()
        .filter_map(|&h| amise(estimate, n, h, roughness).map(|v| (h, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(h, _)| h)
        .ok_or(LiVuongError::NoBandwidth { usable: estimate.usable_range() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub x_grid: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub h: f64,
    /// Largest discarded imaginary part.
    pub imag_residue: f64,
}

/// `f(x) = (1/2pi) int e^{-itx} phi_K(th) phi_X(t) dt` over `|t| <= 1/h`, real part.
pub fn estimate_density(estimate: &CharFnEstimate, h: f64, x_grid: &[f64]) -> Result<DensityEstimate, LiVuongError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(LiVuongError::Bandwidth(h));
    }
    let cutoff = 1.0 / h;
    let terms: Vec<(f64, Complex64)> = estimate
        .tau_grid
        .iter()
        .zip(&estimate.phi_x)
        .filter(|(t, _)| t.abs() <= cutoff)
        .map(|(&t, &p)| (t, p * kernel_transform(t * h)))
        .collect();
    let last = terms.len().saturating_sub(1);
    let values: Vec<Complex64> = x_grid
        .par_iter()
        .map(|&x| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &(t, v)) in terms.iter().enumerate() {
                let w = if k == 0 || k == last { 0.5 } else { 1.0 };
                acc += w * v * Complex64::from_polar(1.0, -t * x);
            }
            acc * estimate.step / (2.0 * PI)
        })
        .collect();
    let imag_residue = values.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    Ok(DensityEstimate {
        x_grid: x_grid.to_vec(),
        f_hat: values.iter().map(|v| v.re).collect(),
        h,
        imag_residue,
    })
}

/// Full pipeline with default grids: 2001 frequencies on `[-10, 10]` and the
/// default bandwidth candidates.
pub fn li_vuong(data: &Dataset, x_grid: &[f64]) -> Result<DensityEstimate, LiVuongError> {
    let estimate = estimate_charfn(data, 10.0, 2001)?;
    let h = amise_bandwidth(&estimate, data.len(), normal_reference_roughness(data)?, &default_h_grid())?;
    estimate_density(&estimate, h, x_grid)
}

/// Sieve coefficients of the Li–Vuong estimate, used to seed the band solver.
pub fn projected_estimate(data: &Dataset, q: usize) -> Result<Vec<f64>, LiVuongError> {
    let quadrature = Trapezoid::default();
    let nodes: Vec<f64> = quadrature.points()?.into_iter().map(|(x, _)| x).collect();
    let density = li_vuong(data, &nodes)?;
    let lookup = |x: f64| {
        let k = ((x + quadrature.radius) / (2.0 * quadrature.radius) * (quadrature.nodes - 1) as f64).round() as usize;
        density.f_hat[k.min(density.f_hat.len() - 1)]
    };
    Ok(project_density(lookup, q, quadrature)?.theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_second_moment_is_minus_second_derivative_at_zero() {
        let h = 1e-4;
        let second = (kernel_transform(h) - 2.0 * kernel_transform(0.0) + kernel_transform(-h)) / (h * h);
        assert!((-second - KERNEL_SECOND_MOMENT).abs() < 1e-6);
    }

    #[test]
    fn single_observation_gives_pure_phase() {
        let data = Dataset::new(vec![0.7], vec![-1.3]).unwrap();
        let est = estimate_charfn(&data, 10.0, 2001).unwrap();
        assert_eq!(est.truncated_at, None);
        for (&t, p) in est.tau_grid.iter().zip(&est.phi_x) {
            let expected = Complex64::from_polar(1.0, 0.7 * t);
            assert!((p - expected).norm() < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn value_at_zero_is_exactly_one_and_conjugate_symmetric() {
        let data = Dataset::new(vec![0.1, -0.4, 1.2, 0.3], vec![0.2, -0.6, 0.9, 0.5]).unwrap();
        let est = estimate_charfn(&data, 5.0, 101).unwrap();
        let mid = est.tau_grid.len() / 2;
        assert_eq!(est.tau_grid[mid], 0.0);
        assert_eq!(est.phi_x[mid], Complex64::new(1.0, 0.0));
        for k in 1..=mid {
            assert!((est.phi_x[mid + k] - est.phi_x[mid - k].conj()).norm() < 1e-10);
        }
    }

    #[test]
    fn truncates_where_the_denominator_vanishes() {
        // Two atoms at +-1 give E e^{i tau Y2} = cos(tau), zero at pi/2.
        let data = Dataset::new(vec![0.0, 0.0], vec![1.0, -1.0]).unwrap();
        let est = estimate_charfn(&data, 4.0, 4001).unwrap();
        let cut = est.truncated_at.unwrap();
        assert!((cut - std::f64::consts::FRAC_PI_2).abs() < 2e-3, "{cut}");
        assert!(est.usable_range() < cut);
    }

    #[test]
    fn rejects_bad_grids() {
        let data = Dataset::new(vec![0.0], vec![0.0]).unwrap();
        assert!(estimate_charfn(&data, 1.0, 100).is_err());
        assert!(estimate_charfn(&data, 0.0, 101).is_err());
    }

    #[test]
    fn analytic_gaussian_inverts_to_normal_pdf() {
        let est = CharFnEstimate::from_functions(
            10.0,
            2001,
            |t| Complex64::new((-0.5 * t * t).exp(), 0.0),
            |_| Complex64::new(1.0, 0.0),
        )
        .unwrap();
        let xs: Vec<f64> = (0..=60).map(|k| -3.0 + 0.1 * k as f64).collect();
        let d = estimate_density(&est, 0.01, &xs).unwrap();
        for (x, f) in xs.iter().zip(&d.f_hat) {
            let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
            assert!((f - pdf).abs() < 5e-3, "x = {x}");
        }
        assert!(d.imag_residue < 1e-8);
    }

    #[test]
    fn symmetric_data_gives_symmetric_density() {
        let base = [(0.3, 0.5), (-1.1, -0.7), (0.8, 1.4), (1.7, 0.9)];
        let mut pairs: Vec<(f64, f64)> = base.to_vec();
        pairs.extend(base.iter().map(|&(a, b)| (-a, -b)));
        let data = Dataset::from_pairs(&pairs).unwrap();
        let est = estimate_charfn(&data, 3.0, 601).unwrap();
        let xs = [0.25, 0.9, 1.6, 2.4];
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        let a = estimate_density(&est, 0.5, &xs).unwrap();
        let b = estimate_density(&est, 0.5, &neg).unwrap();
        for (u, v) in a.f_hat.iter().zip(&b.f_hat) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn bandwidth_needs_usable_range() {
        let data = Dataset::new(vec![0.0, 0.0], vec![1.0, -1.0]).unwrap();
        let est = estimate_charfn(&data, 4.0, 401).unwrap();
        assert!(matches!(
            amise_bandwidth(&est, 2, 1.0, &[0.05, 0.1]),
            Err(LiVuongError::NoBandwidth { .. })
        ));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = default_h_grid();
        assert_eq!(g.len(), 40);
        assert!((g[0] - 0.05).abs() < 1e-15 && (g[39] - 2.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
