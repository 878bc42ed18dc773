mod common;

use common::complex_integrand;
use kband::hermite::HermiteBasis;
use kband::restriction::{build_tables, moment_i, moment_r, project_moments, Dataset, FrequencyGrid, Retention};
use kband::simlab::{draw_sample, SimulationModel};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

proptest! {
    #[test]
    fn closed_forms_match_complex_integrand(j in 0usize..=9, t in -5.0f64..5.0, y1 in -10.0f64..10.0, y2 in -10.0f64..10.0) {
        let z = complex_integrand(j, t, y1, y2);
        prop_assert!((moment_r(j, t, y1, y2) - z.re).abs() < 1e-12);
        prop_assert!((moment_i(j, t, y1, y2) - z.im).abs() < 1e-12);
    }

    #[test]
    fn projection_matches_tables(seed in 0u64..1000, theta in proptest::collection::vec(-0.8f64..0.8, 4)) {
        let data = draw_sample(&SimulationModel::model2(), 200, seed).unwrap();
        let grid = FrequencyGrid::uniform(4.0, 6).unwrap();
        let tables = build_tables(&data, &HermiteBasis::new(3).unwrap(), &grid, 3, Retention::SummaryOnly).unwrap();
        let projected = project_moments(&data, &grid, &theta).unwrap();
        for l in 0..grid.len() {
            let mean: f64 = tables.mean_r[l].iter().zip(&theta).map(|(a, b)| a * b).sum();
            prop_assert!((projected.mean_r[l] - mean).abs() < 1e-10);
            prop_assert!((projected.var_r[l] - tables.cov_r[l].quad_form(&theta)).abs() < 1e-9);
            prop_assert!((projected.var_i[l] - tables.cov_i[l].quad_form(&theta)).abs() < 1e-9);
        }
    }
}

fn naive(data: &Dataset, q: usize, t: f64, part: fn(usize, f64, f64, f64) -> f64) -> (Vec<f64>, DMatrix<f64>) {
    let n = data.len() as f64;
    let rows: Vec<Vec<f64>> = data.pairs().map(|(a, b)| (0..=q).map(|j| part(j, t, a, b)).collect()).collect();
    let mean: Vec<f64> = (0..=q).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let cov = DMatrix::from_fn(q + 1, q + 1, |r, c| rows.iter().map(|x| (x[r] - mean[r]) * (x[c] - mean[c])).sum::<f64>() / n);
    (mean, cov)
}

#[test]
fn tables_match_two_pass_estimates() {
    let data = draw_sample(&SimulationModel::model3(), 500, 12).unwrap();
    let q = 5;
    let grid = FrequencyGrid::uniform(5.0, 8).unwrap();
    let tables = build_tables(&data, &HermiteBasis::new(q).unwrap(), &grid, q, Retention::RetainObservations).unwrap();
    for (l, &t) in grid.points().iter().enumerate() {
        for (part, mean, cov) in [(moment_r as fn(_, _, _, _) -> _, &tables.mean_r[l], &tables.cov_r[l]), (moment_i, &tables.mean_i[l], &tables.cov_i[l])] {
            let (m, c) = naive(&data, q, t, part);
            for r in 0..=q {
                assert!((mean[r] - m[r]).abs() < 1e-12);
                for s in 0..=q {
                    assert!((cov.get(r, s) - c[(r, s)]).abs() < 1e-11);
                }
            }
        }
    }
    let kept = tables.observations.as_ref().unwrap();
    assert_eq!(kept.r.len(), grid.len());
    assert_eq!(kept.r[0].len(), data.len() * (q + 1));
}

#[test]
fn covariances_are_positive_semidefinite() {
    let data = draw_sample(&SimulationModel::model1(), 300, 4).unwrap();
    let q = 9;
    let grid = FrequencyGrid::uniform(5.0, 20).unwrap();
    let tables = build_tables(&data, &HermiteBasis::new(q).unwrap(), &grid, q, Retention::SummaryOnly).unwrap();
    for cov in tables.cov_r.iter().chain(&tables.cov_i) {
        let m = DMatrix::from_row_slice(q + 1, q + 1, cov.as_slice());
        assert_eq!(m, m.transpose());
        let scale = m.diagonal().max().max(1e-300);
        let smallest = SymmetricEigen::new(m).eigenvalues.min();
        assert!(smallest >= -1e-10 * scale, "eigenvalue {smallest}");
    }
}

#[test]
fn too_few_observations_are_rejected() {
    let data = Dataset::new(vec![0.1], vec![0.2]).unwrap();
    let grid = FrequencyGrid::uniform(5.0, 4).unwrap();
    assert!(build_tables(&data, &HermiteBasis::new(2).unwrap(), &grid, 2, Retention::SummaryOnly).is_err());
    assert!(Dataset::new(vec![0.1, 0.2], vec![0.3]).is_err());
}
