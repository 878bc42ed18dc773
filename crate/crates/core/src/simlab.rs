//! Monte Carlo harness: data generation, coverage and length tables.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, StudentsT};

use crate::bandsolver::ThetaVector;
use crate::calib::{normal_cdf, CriticalMode};
use crate::hermite::{project_density, Trapezoid};
use crate::pipeline::{run_band, BandSettings};
use crate::restriction::Dataset;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum LatentLaw {
    Normal { mean: f64, sd: f64 },
    SkewNormal { location: f64, scale: f64, shape: f64 },
    StudentT { location: f64, df: f64 },
}

impl fmt::Display for LatentLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LatentLaw::Normal { mean, sd } => write!(f, "normal({mean},{sd})"),
            LatentLaw::SkewNormal { location, scale, shape } => write!(f, "skew-normal({location},{scale},{shape})"),
            LatentLaw::StudentT { location, df } => write!(f, "student-t({location},{df})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationModel {
    pub latent: LatentLaw,
    pub sigma_u1: f64,
    pub sigma_u2: f64,
}

fn skew_delta(shape: f64) -> f64 {
    shape / (1.0 + shape * shape).sqrt()
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

impl SimulationModel {
    /// Standard normal latent.
    pub fn model1() -> Self {
        Self::with_noise(LatentLaw::Normal { mean: 0.0, sd: 1.0 })
    }

    /// Skew normal latent with location 0, scale 1, shape 1.
    pub fn model2() -> Self {
        Self::with_noise(LatentLaw::SkewNormal { location: 0.0, scale: 1.0, shape: 1.0 })
    }

    /// Student t latent with 5 degrees of freedom.
    pub fn model3() -> Self {
        Self::with_noise(LatentLaw::StudentT { location: 0.0, df: 5.0 })
    }

    /// Models 1 to 3 by number.
    pub fn numbered(k: u8) -> Option<Self> {
        match k {
            1 => Some(Self::model1()),
            2 => Some(Self::model2()),
            3 => Some(Self::model3()),
            _ => None,
        }
    }

    fn with_noise(latent: LatentLaw) -> Self {
        Self { latent, sigma_u1: 0.5, sigma_u2: 0.5 }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let ok = match self.latent {
            LatentLaw::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            LatentLaw::SkewNormal { location, scale, shape } => {
                location.is_finite() && scale > 0.0 && scale.is_finite() && shape.is_finite()
            }
            LatentLaw::StudentT { location, df } => location.is_finite() && df > 2.0 && df.is_finite(),
        };
        let noise = self.sigma_u1 > 0.0 && self.sigma_u2 > 0.0 && self.sigma_u1.is_finite() && self.sigma_u2.is_finite();
        if ok && noise {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid simulation model {self:?}")))
        }
    }

    /// Copy with the latent law shifted by `shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        let latent = match self.latent {
            LatentLaw::Normal { mean, sd } => LatentLaw::Normal { mean: mean + shift, sd },
            LatentLaw::SkewNormal { location, scale, shape } => {
                LatentLaw::SkewNormal { location: location + shift, scale, shape }
            }
            LatentLaw::StudentT { location, df } => LatentLaw::StudentT { location: location + shift, df },
        };
        Self { latent, ..*self }
    }

    pub fn mean(&self) -> f64 {
        match self.latent {
            LatentLaw::Normal { mean, .. } => mean,
            LatentLaw::SkewNormal { location, scale, shape } => location + scale * skew_delta(shape) * (2.0 / PI).sqrt(),
            LatentLaw::StudentT { location, .. } => location,
        }
    }

    pub fn variance(&self) -> f64 {
        match self.latent {
            LatentLaw::Normal { sd, .. } => sd * sd,
            LatentLaw::SkewNormal { scale, shape, .. } => {
                let d = skew_delta(shape);
                scale * scale * (1.0 - 2.0 * d * d / PI)
            }
            LatentLaw::StudentT { df, .. } => df / (df - 2.0),
        }
    }

    /// `[E X - 2 sd(X), E X + 2 sd(X)]`.
    pub fn interval(&self) -> (f64, f64) {
        let (m, s) = (self.mean(), self.variance().sqrt());
        (m - 2.0 * s, m + 2.0 * s)
    }

    fn draw_latent<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.latent {
            LatentLaw::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            LatentLaw::SkewNormal { location, scale, shape } => {
                let d = skew_delta(shape);
                let z0: f64 = StandardNormal.sample(rng);
                let z1: f64 = StandardNormal.sample(rng);
                location + scale * (d * z0.abs() + (1.0 - d * d).sqrt() * z1)
            }
            LatentLaw::StudentT { location, df } => {
                let z: f64 = StandardNormal.sample(rng);
                let chi2 = if df.fract() == 0.0 && df <= 100.0 {
                    (0..df as usize)
                        .map(|_| {
                            let g: f64 = StandardNormal.sample(rng);
                            g * g
                        })
                        .sum::<f64>()
                } else {
                    ChiSquared::new(df).expect("df validated").sample(rng)
                };
                location + z / (chi2 / df).sqrt()
            }
        }
    }
}

/// `n` draws of `(X + U1, X + U2)`, deterministic in `seed`.
pub fn draw_sample(model: &SimulationModel, n: usize, seed: u64) -> Result<Dataset, Error> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y1 = Vec::with_capacity(n);
    let mut y2 = Vec::with_capacity(n);
    for _ in 0..n {
        let x = model.draw_latent(&mut rng);
        let u1: f64 = StandardNormal.sample(&mut rng);
        let u2: f64 = StandardNormal.sample(&mut rng);
        y1.push(x + model.sigma_u1 * u1);
        y2.push(x + model.sigma_u2 * u2);
    }
    Ok(Dataset::new(y1, y2)?)
}

/// Latent density at `x`.
pub fn true_density(model: &SimulationModel, x: f64) -> f64 {
    match model.latent {
        LatentLaw::Normal { mean, sd } => normal_pdf((x - mean) / sd) / sd,
        LatentLaw::SkewNormal { location, scale, shape } => {
            let z = (x - location) / scale;
            2.0 / scale * normal_pdf(z) * normal_cdf(shape * z)
        }
        LatentLaw::StudentT { location, df } => {
            StudentsT::new(0.0, 1.0, df).expect("df validated").pdf(x - location)
        }
    }
}

/// Sieve coefficients of the latent density.
pub fn true_projection(model: &SimulationModel, q: usize) -> Result<ThetaVector, Error> {
    let coeffs = project_density(|x| true_density(model, x), q, Trapezoid { radius: 12.0, nodes: 6001 })?;
    Ok(ThetaVector(coeffs.theta))
}

/// Seed of replication `rep`, drawn from ChaCha stream `rep` of `base`.
pub fn replication_seed(base: u64, rep: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(rep as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: SimulationModel,
    pub n: usize,
    pub q: usize,
    pub m_bound: f64,
    pub t_bound: f64,
    pub frequencies: usize,
    pub alpha: f64,
    pub reps: usize,
    pub rng_seed: u64,
    pub x_points: usize,
    pub critical: CriticalMode,
}

impl ExperimentConfig {
    /// Simulation-study defaults for model 1, 2 or 3: `M = 15, 25, 35`,
    /// `T = 5`, `L = 50`, `alpha = 0.05`, 101 evaluation points.
    pub fn study(model: u8, q: usize, n: usize, reps: usize, rng_seed: u64) -> Result<Self, Error> {
        let m_bound = match model {
            1 => 15.0,
            2 => 25.0,
            3 => 35.0,
            _ => return Err(Error::Config(format!("model must be 1, 2 or 3, got {model}"))),
        };
        Ok(Self {
            model: SimulationModel::numbered(model).expect("checked above"),
            n,
            q,
            m_bound,
            t_bound: 5.0,
            frequencies: 50,
            alpha: 0.05,
            reps,
            rng_seed,
            x_points: 101,
            critical: CriticalMode::Conservative,
        })
    }

    pub fn band_settings(&self) -> BandSettings {
        BandSettings {
            q: self.q,
            m_bound: self.m_bound,
            t_bound: self.t_bound,
            frequencies: self.frequencies,
            alpha: self.alpha,
            interval: self.model.interval(),
            x_points: self.x_points,
            critical: self.critical,
            ..BandSettings::default()
        }
    }

    fn validate(&self) -> Result<(), Error> {
        self.model.validate()?;
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(Error::Config(format!("n must be at least 2, got {}", self.n)));
        }
        Ok(())
    }
}

/// Density whose containment is recorded.
#[derive(Debug, Clone, PartialEq)]
pub enum CoverageTarget {
    Truth,
    Alternative(SimulationModel),
}

impl CoverageTarget {
    fn label(&self, config: &ExperimentConfig) -> String {
        match self {
            CoverageTarget::Truth => config.model.latent.to_string(),
            CoverageTarget::Alternative(m) => m.latent.to_string(),
        }
    }

    fn model<'a>(&'a self, config: &'a ExperimentConfig) -> &'a SimulationModel {
        match self {
            CoverageTarget::Truth => &config.model,
            CoverageTarget::Alternative(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub model: String,
    pub target: String,
    pub n: usize,
    pub q: usize,
    pub m_bound: f64,
    pub critical: CriticalMode,
    pub reps: usize,
    pub seed: u64,
    pub coverage: f64,
    /// Mean band length over feasible replications.
    pub average_length: f64,
    /// `2 eta`.
    pub bias: f64,
    /// `average_length - bias`.
    pub stochastic_length: f64,
    pub infeasible: usize,
}

struct Replication {
    covered: Vec<bool>,
    length: Option<f64>,
}

/// Simulates under `config.model` and records containment of every target.
pub fn run_coverage_multi(config: &ExperimentConfig, targets: &[CoverageTarget]) -> Result<Vec<CoverageReport>, Error> {
    config.validate()?;
    for t in targets {
        t.model(config).validate()?;
    }
    let settings = config.band_settings();
    let truth = true_projection(&config.model, config.q)?;
    let runs: Vec<Result<Replication, Error>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = replication_seed(config.rng_seed, rep);
            let data = draw_sample(&config.model, config.n, seed)?;
            let run = run_band(&data, &BandSettings { seed, ..settings.clone() }, std::slice::from_ref(&truth))?;
            let covered = targets
                .iter()
                .map(|t| {
                    let m = t.model(config);
                    run.band.contains(|x| true_density(m, x))
                })
                .collect();
            Ok(Replication { covered, length: run.band.average_length() })
        })
        .collect();
    let runs: Vec<Replication> = runs.into_iter().collect::<Result<_, _>>()?;
    let bias = 2.0 * crate::calib::compute_eta(config.q, config.m_bound);
    let lengths: Vec<f64> = runs.iter().filter_map(|r| r.length).collect();
    let infeasible = runs.len() - lengths.len();
    let average_length = if lengths.is_empty() {
        f64::NAN
    } else {
        lengths.iter().sum::<f64>() / lengths.len() as f64
    };
    Ok(targets
        .iter()
        .enumerate()
        .map(|(k, t)| CoverageReport {
            model: config.model.latent.to_string(),
            target: t.label(config),
            n: config.n,
            q: config.q,
            m_bound: config.m_bound,
            critical: config.critical,
            reps: config.reps,
            seed: config.rng_seed,
            coverage: runs.iter().filter(|r| r.covered[k]).count() as f64 / runs.len() as f64,
            average_length,
            bias,
            stochastic_length: average_length - bias,
            infeasible,
        })
        .collect())
}

/// Coverage of the truth, or of `alternative` when given.
pub fn run_coverage(config: &ExperimentConfig, alternative: Option<&SimulationModel>) -> Result<CoverageReport, Error> {
    let target = alternative.map_or(CoverageTarget::Truth, |m| CoverageTarget::Alternative(*m));
    let mut reports = run_coverage_multi(config, &[target])?;
    Ok(reports.remove(0))
}

/// One truth-coverage row per configuration.
pub fn run_length_table(configs: &[ExperimentConfig]) -> Result<Vec<CoverageReport>, Error> {
    configs.iter().map(|c| run_coverage(c, None)).collect()
}

pub fn write_reports_csv<W: Write>(reports: &[CoverageReport], writer: W) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
    }

    #[test]
    fn analytic_moments() {
        let m2 = SimulationModel::model2();
        assert!((m2.mean() - 0.5642).abs() < 1e-4);
        assert!((m2.variance().sqrt() - 0.8256).abs() < 1e-4);
        assert!((SimulationModel::model3().variance() - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(SimulationModel::model1().interval(), (-2.0, 2.0));
    }

    #[test]
    fn densities_at_zero() {
        let phi0 = 1.0 / (2.0 * PI).sqrt();
        assert!((true_density(&SimulationModel::model1(), 0.0) - phi0).abs() < 1e-15);
        assert!((true_density(&SimulationModel::model2(), 0.0) - phi0).abs() < 1e-15);
    }

    #[test]
    fn densities_integrate_to_one() {
        for model in [SimulationModel::model1(), SimulationModel::model2(), SimulationModel::model3().shifted(0.3)] {
            // t(5) tails decay like |x|^-6; integrate on a wide range.
            let rule = Trapezoid { radius: 400.0, nodes: 800_001 };
            let total: f64 = rule.points().unwrap().iter().map(|(x, w)| w * true_density(&model, *x)).sum();
            assert!((total - 1.0).abs() < 1e-8, "{model:?}: {total}");
        }
    }

    #[test]
    fn samples_are_deterministic_and_noise_adds_variance() {
        let model = SimulationModel::model1();
        let a = draw_sample(&model, 500, 9).unwrap();
        let b = draw_sample(&model, 500, 9).unwrap();
        assert_eq!(a, b);
        let c = draw_sample(&model, 500, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_moments_match_analytic_values() {
        let n = 200_000;
        for model in [SimulationModel::model1(), SimulationModel::model2(), SimulationModel::model3()] {
            let data = draw_sample(&model, n, 42).unwrap();
            let (m, v) = mean_var(data.y1());
            let var_y = model.variance() + 0.25;
            let se_mean = (var_y / n as f64).sqrt();
            assert!((m - model.mean()).abs() < 4.0 * se_mean, "{model:?}: mean {m}");
            assert!((v - var_y).abs() / var_y < 0.05, "{model:?}: var {v}");
        }
    }

    #[test]
    fn replication_seeds_differ() {
        let s: Vec<u64> = (0..5).map(|r| replication_seed(3, r)).collect();
        for i in 0..5 {
            for j in 0..i {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(replication_seed(3, 2), s[2]);
    }

    #[test]
    fn invalid_models_rejected() {
        let bad = SimulationModel { latent: LatentLaw::StudentT { location: 0.0, df: 2.0 }, sigma_u1: 0.5, sigma_u2: 0.5 };
        assert!(draw_sample(&bad, 10, 0).is_err());
        assert!(ExperimentConfig::study(4, 7, 100, 1, 0).is_err());
    }
}
