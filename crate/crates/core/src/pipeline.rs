//! End-to-end band construction from a dataset.

use std::sync::Arc;

use crate::bandsolver::{build_band, linspace, BandProblem, ConfidenceBand, CriticalValue, NormalizationTolerance, SolverOptions, ThetaVector};
use crate::calib::{Calibration, CriticalMode, MultiplierBootstrap};
use crate::hermite::HermiteBasis;
use crate::livuong::projected_estimate;
use crate::restriction::{build_tables, Dataset, FrequencyGrid, Retention};
use crate::Error;

/// Multiplier replications used while searching and for the final check.
pub const BOOTSTRAP_SEARCH_REPS: usize = 500;
pub const BOOTSTRAP_CHECK_REPS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct BandSettings {
    pub q: usize,
    pub m_bound: f64,
    pub t_bound: f64,
    pub frequencies: usize,
    pub alpha: f64,
    pub interval: (f64, f64),
    pub x_points: usize,
    pub critical: CriticalMode,
    pub bootstrap_reps: usize,
    pub normalization: NormalizationTolerance,
    pub seed: u64,
    pub solver: SolverOptions,
    /// Seed the solver with the projected Li–Vuong estimate.
    pub li_vuong_seed: bool,
}

impl Default for BandSettings {
    fn default() -> Self {
        Self {
            q: 7,
            m_bound: 15.0,
            t_bound: 5.0,
            frequencies: 50,
            alpha: 0.05,
            interval: (-2.0, 2.0),
            x_points: 101,
            critical: CriticalMode::Conservative,
            bootstrap_reps: BOOTSTRAP_CHECK_REPS,
            normalization: NormalizationTolerance::FourierScaled,
            seed: 0,
            solver: SolverOptions::default(),
            li_vuong_seed: true,
        }
    }
}

impl BandSettings {
    pub fn x_grid(&self) -> Vec<f64> {
        linspace(self.interval.0, self.interval.1, self.x_points)
    }
}

#[derive(Debug, Clone)]
pub struct BandRun {
    pub band: ConfidenceBand,
    pub calibration: Calibration,
    /// Critical value at the first seed (conservative mode: the constant).
    pub critical_value: f64,
}

/// Builds the band for `data`, adding `extra_seeds` to the solver starts.
pub fn run_band(data: &Dataset, settings: &BandSettings, extra_seeds: &[ThetaVector]) -> Result<BandRun, Error> {
    let (lo, hi) = settings.interval;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("interval [{lo}, {hi}] is empty or not finite")));
    }
    if settings.x_points == 0 {
        return Err(Error::Config("x grid needs at least one point".into()));
    }
    let basis = HermiteBasis::new(settings.q)?;
    let grid = FrequencyGrid::uniform(settings.t_bound, settings.frequencies)?;
    let retention = match settings.critical {
        CriticalMode::Conservative => Retention::SummaryOnly,
        CriticalMode::Bootstrap => Retention::RetainObservations,
    };
    let tables = build_tables(data, &basis, &grid, settings.q, retention)?;
    let calibration = Calibration::new(settings.q, settings.m_bound, settings.alpha, grid, data.mean_abs_y1(), data.len())?;
    let critical = match settings.critical {
        CriticalMode::Conservative => CriticalValue::Conservative(calibration.critical_value),
        CriticalMode::Bootstrap => {
            let search = MultiplierBootstrap::new(&tables, BOOTSTRAP_SEARCH_REPS.min(settings.bootstrap_reps), settings.seed)?;
            let check = MultiplierBootstrap::new(&tables, settings.bootstrap_reps, settings.seed)?;
            CriticalValue::Bootstrap { alpha: settings.alpha, search: Arc::new(search), check: Arc::new(check) }
        }
    };
    let problem = BandProblem::new(&tables, &calibration, settings.x_grid(), critical)
        .map_err(Error::Solve)?
        .with_normalization(settings.normalization);

    let mut seeds: Vec<ThetaVector> = Vec::new();
    if settings.li_vuong_seed {
        if let Ok(theta) = projected_estimate(data, settings.q) {
            seeds.push(ThetaVector(theta));
        }
    }
    seeds.extend(extra_seeds.iter().map(|s| s.clamped(settings.q + 1, calibration.box_bound)));
    let options = SolverOptions { seed: settings.seed, ..settings.solver.clone() };
    let band = build_band(&problem, &seeds, &options);
    let critical_value = match &problem.critical {
        CriticalValue::Conservative(c) => *c,
        CriticalValue::Bootstrap { alpha, check, .. } => {
            let at = seeds.first().cloned().unwrap_or_else(|| problem.axis_point());
            check.critical_value(at.as_slice(), *alpha)
        }
    };
    Ok(BandRun { band, calibration, critical_value })
}
