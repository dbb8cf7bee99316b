//! Estimator behaviour on synthetic panels with known coefficients.

use evnet_core::modelspec::columns::{BURDEN, LOG_EV_STOCK, LOG_OIL, LOG_STATIONS, REBATE, SATURATION};
use evnet_core::{estimate_demand, estimate_supply, generate_panel, Estimator, ModelOptions, SynthConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

#[test]
fn gmm_recovers_demand_and_supply_truth() {
    let synth = generate_panel(&SynthConfig { seed: 11, ..SynthConfig::default() }).unwrap();
    let opts = ModelOptions::default();
    let demand = estimate_demand(&synth.panel, Estimator::Gmm, &opts).unwrap();
    let supply = estimate_supply(&synth.panel, Estimator::Gmm, &opts).unwrap();
    for name in [LOG_STATIONS, LOG_OIL, BURDEN] {
        let (b, se) = (demand.coefficients[name], demand.std_errors[name]);
        let truth = synth.true_demand[name];
        assert!((b - truth).abs() <= 3.0 * se, "{name}: {b} vs {truth} (se {se})");
    }
    for name in [LOG_EV_STOCK, SATURATION, REBATE] {
        let (b, se) = (supply.coefficients[name], supply.std_errors[name]);
        let truth = synth.true_supply[name];
        assert!((b - truth).abs() <= 3.0 * se, "{name}: {b} vs {truth} (se {se})");
    }
    assert_eq!(demand.coefficients.len(), 6);
    assert_eq!(supply.coefficients.len(), 5);
    assert_eq!(demand.n_obs, 250);
}

/// Median absolute TSLS error of each coefficient over `seeds` panels.
fn median_errors(n_zips: usize, seeds: u64) -> Vec<(String, f64)> {
    let opts = ModelOptions::default();
    let mut errors: Vec<(String, Vec<f64>)> = Vec::new();
    for seed in 0..seeds {
        let config = SynthConfig { seed: 10_000 + seed, n_zips, ..SynthConfig::default() };
        let synth = generate_panel(&config).unwrap();
        let demand = estimate_demand(&synth.panel, Estimator::Tsls, &opts).unwrap();
        let supply = estimate_supply(&synth.panel, Estimator::Tsls, &opts).unwrap();
        let all = synth
            .true_demand
            .iter()
            .map(|(n, t)| (format!("demand {n}"), demand.coefficients[n] - t))
            .chain(synth.true_supply.iter().map(|(n, t)| (format!("supply {n}"), supply.coefficients[n] - t)));
        for (i, (name, e)) in all.enumerate() {
            if errors.len() <= i {
                errors.push((name, Vec::new()));
            }
            errors[i].1.push(e.abs());
        }
    }
    errors.into_iter().map(|(n, e)| (n, median(e))).collect()
}

const SMALL_ZIPS: usize = 200;
const LARGE_ZIPS: usize = 800;

#[test]
fn tsls_error_shrinks_with_sample_size() {
    // 200 and 800 zips over 6 years give 1,000 and 4,000 lagged observations.
    let small = median_errors(SMALL_ZIPS, 100);
    let large = median_errors(LARGE_ZIPS, 100);
    for ((name, s), (_, l)) in small.iter().zip(&large) {
        println!("{name}: median |error| {s:.5} at n=1000, {l:.5} at n=4000, ratio {:.3}", l / s);
        assert!(l < s, "{name}: error grew from {s} to {l}");
    }
}

/// The root-n rate puts the expected ratio at exactly one half, so with 100
/// seeds this threshold is crossed about half the time. Run on demand.
#[test]
#[ignore]
fn tsls_station_error_halves_at_four_times_n() {
    let small = median_errors(SMALL_ZIPS, 100);
    let large = median_errors(LARGE_ZIPS, 100);
    let (s, l) = (small[0].1, large[0].1);
    println!("station elasticity: {s:.5} -> {l:.5}, ratio {:.3}", l / s);
    assert!(l < 0.5 * s, "ratio {:.3} is not below 0.5", l / s);
}
