//! Hermite functions: the orthonormal sieve used for both densities and
//! characteristic functions.
//!
//! `psi_j(x) = (2^j j! sqrt(pi))^{-1/2} exp(-x^2/2) H_j(x)`, evaluated through the
//! normalized three-term recurrence so that no factorial ever appears.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

/// Highest degree any routine in this module will evaluate.
pub const MAX_DEGREE: usize = 200;

/// Uniform bound on `|psi_j(x)|`, `1.086435 * pi^{-1/4}`; also the half-width of
/// the sieve coefficient box.
pub fn box_bound() -> f64 {
    1.086435 * PI.powf(-0.25)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HermiteError {
    #[error("Hermite degree {0} exceeds the supported maximum of {MAX_DEGREE}")]
    DegreeTooLarge(usize),
    #[error("coefficient {index} = {value} lies outside the sieve box [-{bound}, {bound}]")]
    OutsideBox { index: usize, value: f64, bound: f64 },
    #[error("invalid quadrature: {0}")]
    Quadrature(String),
}

fn check_degree(j: usize) -> Result<(), HermiteError> {
    if j > MAX_DEGREE {
        Err(HermiteError::DegreeTooLarge(j))
    } else {
        Ok(())
    }
}

/// Fills `out[k] = psi_k(x)` for `k < out.len()`.
fn fill_psi(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = PI.powf(-0.25) * (-0.5 * x * x).exp();
    if out.len() > 1 {
        out[1] = std::f64::consts::SQRT_2 * x * out[0];
    }
    for j in 1..out.len().saturating_sub(1) {
        let jf = j as f64;
        out[j + 1] = x * (2.0 / (jf + 1.0)).sqrt() * out[j] - (jf / (jf + 1.0)).sqrt() * out[j - 1];
    }
}

/// `psi_j(x)`.
pub fn eval_psi(j: usize, x: f64) -> Result<f64, HermiteError> {
    check_degree(j)?;
    let mut buf = vec![0.0; j + 1];
    fill_psi(x, &mut buf);
    Ok(buf[j])
}

/// `psi_j'(x) = sqrt(j/2) psi_{j-1}(x) - sqrt((j+1)/2) psi_{j+1}(x)`.
pub fn eval_psi_derivative(j: usize, x: f64) -> Result<f64, HermiteError> {
    check_degree(j)?;
    let mut buf = vec![0.0; j + 2];
    fill_psi(x, &mut buf);
    Ok(derivative_from(&buf, j))
}

#[inline]
fn derivative_from(psi: &[f64], j: usize) -> f64 {
    let jf = j as f64;
    let lower = if j == 0 { 0.0 } else { (jf / 2.0).sqrt() * psi[j - 1] };
    lower - ((jf + 1.0) / 2.0).sqrt() * psi[j + 1]
}

/// `i^j`, exactly.
#[inline]
pub fn i_pow(j: usize) -> Complex64 {
    match j % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// Fourier image `phi_j(t) = [F psi_j](t) = i^j sqrt(2 pi) psi_j(t)`.
pub fn eval_phi(j: usize, t: f64) -> Result<Complex64, HermiteError> {
    Ok(i_pow(j) * ((2.0 * PI).sqrt() * eval_psi(j, t)?))
}

/// Stateless evaluator for degrees `0..=q_max` (plus the one extra degree the
/// derivative recurrence needs).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermiteBasis {
    q_max: usize,
}

impl HermiteBasis {
    pub fn new(q_max: usize) -> Result<Self, HermiteError> {
        check_degree(q_max + 1)?;
        Ok(Self { q_max })
    }

    pub fn q_max(&self) -> usize {
        self.q_max
    }

    /// `(psi_0(x), ..., psi_{q_max}(x))`.
    pub fn values(&self, x: f64) -> Vec<f64> {
        let mut buf = vec![0.0; self.q_max + 2];
        fill_psi(x, &mut buf);
        buf.truncate(self.q_max + 1);
        buf
    }

    /// Values and first derivatives for degrees `0..=q_max`.
    pub fn values_and_derivatives(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let mut buf = vec![0.0; self.q_max + 2];
        fill_psi(x, &mut buf);
        let deriv = (0..=self.q_max).map(|j| derivative_from(&buf, j)).collect();
        buf.truncate(self.q_max + 1);
        (buf, deriv)
    }

    /// Sieve function `sum_j theta_j psi_j(x)`.
    pub fn combine(&self, theta: &[f64], x: f64) -> f64 {
        let mut buf = vec![0.0; theta.len()];
        fill_psi(x, &mut buf);
        buf.iter().zip(theta).map(|(p, t)| p * t).sum()
    }
}

/// Node/weight rule used by [`project_density`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trapezoid {
    pub radius: f64,
    pub nodes: usize,
}

impl Default for Trapezoid {
    fn default() -> Self {
        Self { radius: 10.0, nodes: 4001 }
    }
}

impl Trapezoid {
    pub fn points(&self) -> Result<Vec<(f64, f64)>, HermiteError> {
        if self.nodes < 2 || !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(HermiteError::Quadrature(format!(
                "need radius > 0 and at least two nodes, got radius {} with {} nodes",
                self.radius, self.nodes
            )));
        }
        let step = 2.0 * self.radius / (self.nodes - 1) as f64;
        Ok((0..self.nodes)
            .map(|k| {
                let w = if k == 0 || k + 1 == self.nodes { 0.5 * step } else { step };
                (-self.radius + step * k as f64, w)
            })
            .collect())
    }
}

/// Sieve coefficients `<f, psi_j>`, `j = 0..=q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionCoefficients {
    pub theta: Vec<f64>,
}

/// Projects `f` onto `psi_0..psi_q` by quadrature.
///
/// Fails when a coefficient leaves the sieve box by more than `1e-6`, which
/// means `f` is not a density or the quadrature range is too short.
pub fn project_density<F>(
    f: F,
    q: usize,
    quadrature: Trapezoid,
) -> Result<ProjectionCoefficients, HermiteError>
where
    F: Fn(f64) -> f64,
{
    check_degree(q)?;
    let mut theta = vec![0.0; q + 1];
    let mut buf = vec![0.0; q + 1];
    for (x, w) in quadrature.points()? {
        let fx = f(x);
        if fx == 0.0 {
            continue;
        }
        fill_psi(x, &mut buf);
        for (acc, p) in theta.iter_mut().zip(&buf) {
            *acc += w * fx * p;
        }
    }
    let bound = box_bound();
    if let Some((index, &value)) = theta
        .iter()
        .enumerate()
        .find(|(_, v)| v.abs() > bound + 1e-6)
    {
        return Err(HermiteError::OutsideBox { index, value, bound });
    }
    Ok(ProjectionCoefficients { theta })
}
