//! Oracles shared by the integration tests. Everything here is computed
//! without the crate's own Hermite recurrence or solver.
#![allow(dead_code)]

use std::f64::consts::PI;

use kband::bandsolver::{linspace, BandProblem};
use kband::restriction::{build_tables, Dataset, FrequencyGrid, MomentTables, Retention};
use kband::simlab::{draw_sample, SimulationModel};
use kband::{calib::Calibration, hermite::HermiteBasis};
use num_complex::Complex64;

/// Physicists' Hermite polynomial `H_j(x)`.
pub fn hermite_poly(j: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 2.0 * x);
    if j == 0 {
        return prev;
    }
    for k in 1..j {
        let next = 2.0 * x * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

fn ln_factorial(j: usize) -> f64 {
    (1..=j).map(|k| (k as f64).ln()).sum()
}

/// `(2^j j! sqrt(pi))^{-1/2} e^{-x^2/2} H_j(x)`, normalised in log space.
pub fn psi_direct(j: usize, x: f64) -> f64 {
    let log_norm = -0.5 * (j as f64 * 2f64.ln() + ln_factorial(j) + 0.5 * PI.ln());
    hermite_poly(j, x) * (log_norm - 0.5 * x * x).exp()
}

/// `psi_j'(x) = sqrt(2j) psi_{j-1}(x) - x psi_j(x)`.
pub fn psi_direct_derivative(j: usize, x: f64) -> f64 {
    let lower = if j == 0 { 0.0 } else { (2.0 * j as f64).sqrt() * psi_direct(j - 1, x) };
    lower - x * psi_direct(j, x)
}

fn i_power(j: usize) -> Complex64 {
    [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-1.0, 0.0), Complex64::new(0.0, -1.0)][j % 4]
}

/// `(i y1 phi_j(t) - phi_j'(t)) e^{i t y2}` with `phi_j = i^j sqrt(2 pi) psi_j`.
pub fn complex_integrand(j: usize, t: f64, y1: f64, y2: f64) -> Complex64 {
    let scale = i_power(j) * (2.0 * PI).sqrt();
    let phi = scale * psi_direct(j, t);
    let dphi = scale * psi_direct_derivative(j, t);
    (Complex64::new(0.0, y1) * phi - dphi) * Complex64::from_polar(1.0, t * y2)
}

/// Data, tables and calibration of the `q = 1` toy family.
pub struct Toy {
    pub data: Dataset,
    pub tables: MomentTables,
    pub calib: Calibration,
}

pub fn toy(seed: u64) -> Toy {
    let data = draw_sample(&SimulationModel::model1(), 500, seed).unwrap();
    let basis = HermiteBasis::new(1).unwrap();
    let grid = FrequencyGrid::uniform(5.0, 10).unwrap();
    let tables = build_tables(&data, &basis, &grid, 1, Retention::SummaryOnly).unwrap();
    let calib = Calibration::new(1, 15.0, 0.05, grid, data.mean_abs_y1(), data.len()).unwrap();
    Toy { data, tables, calib }
}

/// Feasibility of `theta` evaluated from the raw tables.
pub fn oracle_feasible(theta: [f64; 2], problem: &BandProblem<'_>, floor_psi: &[[f64; 2]]) -> bool {
    let calib = problem.calib;
    let tables = problem.tables;
    let b = calib.box_bound;
    if theta[0].abs() > b || theta[1].abs() > b {
        return false;
    }
    if floor_psi.iter().any(|p| p[0] * theta[0] + p[1] * theta[1] < -calib.eta) {
        return false;
    }
    let norm = (2.0 * PI).sqrt() * psi_direct(0, 0.0) * theta[0];
    if (norm - 1.0).abs() > (2.0 * PI).sqrt() * calib.eta {
        return false;
    }
    let root_n = (tables.n as f64).sqrt();
    for l in 0..tables.len() {
        for (m, v) in [(&tables.mean_r[l], &tables.cov_r[l]), (&tables.mean_i[l], &tables.cov_i[l])] {
            let mean = m[0] * theta[0] + m[1] * theta[1];
            let var = v.get(0, 0) * theta[0] * theta[0] + 2.0 * v.get(0, 1) * theta[0] * theta[1] + v.get(1, 1) * theta[1] * theta[1];
            let stat = root_n * (mean.abs() - calib.delta[l]) / var.max(1e-12).sqrt();
            if stat > calib.critical_value {
                return false;
            }
        }
    }
    true
}

/// Min and max of `psi(x)^T theta` over feasible points of a `step` lattice on the box.
pub fn grid_envelopes(problem: &BandProblem<'_>, xs: &[f64], step: f64) -> Vec<Option<(f64, f64)>> {
    let b = problem.calib.box_bound;
    let floor_psi: Vec<[f64; 2]> = problem
        .density_floor_grid
        .iter()
        .map(|&x| [psi_direct(0, x), psi_direct(1, x)])
        .collect();
    let obj: Vec<[f64; 2]> = xs.iter().map(|&x| [psi_direct(0, x), psi_direct(1, x)]).collect();
    let count = (2.0 * b / step).floor() as usize + 1;
    let axis = linspace(-b, -b + step * (count - 1) as f64, count);
    let mut out: Vec<Option<(f64, f64)>> = vec![None; xs.len()];
    for &t0 in &axis {
        // The normalization pins theta_0 to a strip; skip the rest cheaply.
        if ((2.0 * PI).sqrt() * psi_direct(0, 0.0) * t0 - 1.0).abs() > (2.0 * PI).sqrt() * problem.calib.eta {
            continue;
        }
        for &t1 in &axis {
            let theta = [t0, t1];
            if !oracle_feasible(theta, problem, &floor_psi) {
                continue;
            }
            for (slot, p) in out.iter_mut().zip(&obj) {
                let v = p[0] * t0 + p[1] * t1;
                *slot = Some(match *slot {
                    None => (v, v),
                    Some((lo, hi)) => (lo.min(v), hi.max(v)),
                });
            }
        }
    }
    out
}

pub const TOY_POINTS: [f64; 5] = [-1.5, -0.5, 0.0, 0.7, 1.6];

/// Runs the built binary with `args`.
pub fn kband(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_kband"))
        .args(args)
        .env_remove("KBAND_THREADS")
        .output()
        .expect("binary runs")
}

pub fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Prints one verdict line and fails the test when `ok` is false.
pub fn verdict(criterion: u8, title: &str, ok: bool, detail: &str) {
    println!("criterion {criterion:>2} {}: {title} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {criterion} failed: {title} ({detail})");
}
