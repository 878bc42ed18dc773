use kband::hermite::box_bound;
use num_complex::Complex64;
use kband::livuong::{amise, CharFnEstimate, amise_bandwidth, default_h_grid, estimate_charfn, estimate_density, li_vuong, normal_reference_roughness, projected_estimate};
use kband::simlab::{draw_sample, replication_seed, SimulationModel};

fn trapezoid(xs: &[f64], fs: &[f64]) -> f64 {
    xs.windows(2).zip(fs.windows(2)).map(|(x, f)| 0.5 * (x[1] - x[0]) * (f[0] + f[1])).sum()
}

/// Standard normal density smoothed by the kernel at bandwidth `h`, by
/// composite Simpson on `[0, 1/h]`.
fn smoothed_normal(x: f64, h: f64) -> f64 {
    let m = 4000;
    let step = 1.0 / (h * m as f64);
    let g = |t: f64| (t * x).cos() * (1.0 - (t * h).powi(2)).powi(3) * (-0.5 * t * t).exp();
    let mut acc = g(0.0) + g(1.0 / h);
    for k in 1..m {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * g(k as f64 * step);
    }
    acc * step / 3.0 / std::f64::consts::PI
}

#[test]
fn density_tracks_the_smoothed_truth_and_integrates_to_one() {
    let data = draw_sample(&SimulationModel::model1(), 10_000, 31).unwrap();
    let xs: Vec<f64> = (0..=400).map(|k| -8.0 + 0.04 * k as f64).collect();
    let est = li_vuong(&data, &xs).unwrap();
    let mass = trapezoid(&xs, &est.f_hat);
    assert!((mass - 1.0).abs() <= 0.02, "mass {mass}");
    assert!(est.imag_residue < 1e-8);
    for k in (100..=300).step_by(10) {
        let oracle = smoothed_normal(xs[k], est.h);
        assert!((est.f_hat[k] - oracle).abs() < 0.02, "x={} {} vs {oracle}", xs[k], est.f_hat[k]);
    }
}

#[test]
fn refining_the_frequency_grid_changes_little() {
    let data = draw_sample(&SimulationModel::model1(), 2_000, 5).unwrap();
    let coarse = estimate_charfn(&data, 10.0, 2001).unwrap();
    let fine = estimate_charfn(&data, 10.0, 4001).unwrap();
    let xs: Vec<f64> = (-20..=20).map(|k| k as f64 * 0.1).collect();
    let a = estimate_density(&coarse, 0.4, &xs).unwrap();
    let b = estimate_density(&fine, 0.4, &xs).unwrap();
    let gap = a.f_hat.iter().zip(&b.f_hat).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-4, "gap {gap}");
}

#[test]
fn selected_bandwidth_is_interior() {
    for seed in 0..5 {
        let data = draw_sample(&SimulationModel::model1(), 1_000, seed).unwrap();
        let est = estimate_charfn(&data, 10.0, 2001).unwrap();
        let grid = default_h_grid();
        let roughness = normal_reference_roughness(&data).unwrap();
        let h = amise_bandwidth(&est, data.len(), roughness, &grid).unwrap();
        assert!(h > grid[0] && h < grid[grid.len() - 1], "h = {h}");
        let best = amise(&est, data.len(), h, roughness).unwrap();
        assert!(grid.iter().filter_map(|&g| amise(&est, data.len(), g, roughness)).all(|v| v >= best));
    }
}

#[test]
fn variance_term_blows_up_as_h_shrinks() {
    // Known transforms: X ~ N(0, 1), U1 ~ N(0, 0.5^2).
    let est = CharFnEstimate::from_functions(
        10.0,
        2001,
        |t| Complex64::new((-0.5 * t * t).exp(), 0.0),
        |t| Complex64::new((-0.125 * t * t).exp(), 0.0),
    )
    .unwrap();
    let roughness = 3.0 / (8.0 * std::f64::consts::PI.sqrt());
    let values: Vec<(f64, f64)> = default_h_grid().into_iter().filter_map(|h| amise(&est, 1_000, h, roughness).map(|v| (h, v))).collect();
    let best = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    assert!(values[0].1 > 4.0 * best, "{values:?}");
    assert!(values[..5].windows(2).all(|w| w[0].1 > w[1].1));
}

#[test]
fn bandwidth_shrinks_with_n_on_average() {
    let model = SimulationModel::model1();
    let mean_log_h = |n: usize| {
        (0..10u64)
            .map(|seed| {
                let data = draw_sample(&model, n, seed).unwrap();
                let est = estimate_charfn(&data, 10.0, 2001).unwrap();
                amise_bandwidth(&est, n, normal_reference_roughness(&data).unwrap(), &default_h_grid()).unwrap().ln()
            })
            .sum::<f64>()
            / 10.0
    };
    let (small, large) = (mean_log_h(1_000), mean_log_h(2_000));
    assert!(large <= small, "{small} -> {large}");
}

#[test]
fn seeds_fall_inside_the_box() {
    let bound = box_bound();
    let mut inside = 0;
    let mut total = 0;
    for model in [SimulationModel::model1(), SimulationModel::model2(), SimulationModel::model3()] {
        for rep in 0..40 {
            let data = draw_sample(&model, 250, replication_seed(17, rep)).unwrap();
            let theta = projected_estimate(&data, 7).unwrap();
            total += 1;
            if theta.iter().all(|t| t.abs() <= bound) {
                inside += 1;
            }
        }
    }
    assert!(inside as f64 >= 0.99 * total as f64, "{inside} of {total}");
}
