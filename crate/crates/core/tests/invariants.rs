use evnet_core::dynamics::{LinearEquation, SaturationInput};
use evnet_core::panel::{compute_instrument, compute_saturation};
use evnet_core::policy::ChargerCostPath;
use evnet_core::{
    apply_scenario, generate_panel, simulate_horizon, CoupledModel, ExogenousValues, MarketState,
    PanelRecord, Scenario, SynthConfig, SATURATION_EPSILON,
};
use indexmap::IndexMap;
use proptest::prelude::*;

fn record(zip: usize, year: i32, ev_stock: f64, station_stock: f64, parking: f64) -> PanelRecord {
    PanelRecord {
        zip: format!("{zip:05}"),
        year,
        ev_sales: ev_stock * 0.2,
        ev_stock,
        station_stock,
        avg_ev_price: 50_000.0,
        median_income: 80_000.0,
        white_pop: 1_000.0,
        asian_pop: 1_000.0,
        oil_price: 4.0,
        parking_lots: parking,
        rebate_pct: 0.5,
    }
}

fn records_strategy() -> impl Strategy<Value = Vec<PanelRecord>> {
    (2usize..6, 2usize..5).prop_flat_map(|(zips, years)| {
        prop::collection::vec((0.0f64..1e5, 0.0f64..500.0, 1.0f64..1e3), zips * years).prop_map(
            move |vals| {
                vals.into_iter()
                    .enumerate()
                    .map(|(i, (q, e, p))| record(i % zips, 2015 + (i / zips) as i32, q, e, p))
                    .collect()
            },
        )
    })
}

fn equation(intercept: f64, slopes: &[(&str, f64)]) -> LinearEquation {
    LinearEquation {
        intercept,
        slopes: slopes.iter().map(|(n, v)| (n.to_string(), *v)).collect::<IndexMap<_, _>>(),
    }
}

fn model(beta: f64, alpha: f64, d0: f64, s0: f64) -> CoupledModel {
    let mut m = CoupledModel::new(&placeholder_result(true), &placeholder_result(false)).unwrap();
    m.demand = equation(
        d0,
        &[
            ("ln(Charging station)", beta),
            ("ln(oil_price)", 0.85),
            ("ln(White Population)", 0.126),
            ("ln(Asian Population)", 0.259),
            ("EV_Burden", -3.2),
        ],
    );
    m.supply = equation(
        s0,
        &[
            ("ln(EV Stock)", alpha),
            ("ln(parking lot)", 0.2),
            ("Saturation", 0.5),
            ("Rebate Percentage", 0.3),
        ],
    );
    m
}

fn placeholder_result(demand: bool) -> evnet_core::EstimationResult {
    let names: &[&str] = if demand {
        &["ln(Charging station)", "ln(oil_price)", "ln(White Population)", "ln(Asian Population)", "EV_Burden", "const"]
    } else {
        &["ln(EV Stock)", "ln(parking lot)", "Saturation", "Rebate Percentage", "const"]
    };
    let json = serde_json::json!({
        "estimator": "OLS",
        "coefficients": names.iter().map(|n| (n.to_string(), serde_json::Value::from(0.1))).collect::<serde_json::Map<_, _>>(),
        "std_errors": {},
        "r_squared": 0.0,
        "n_obs": 0,
        "weight_matrix_kind": "not-applicable",
    });
    serde_json::from_value(json).unwrap()
}

fn exog(rebate: f64) -> ExogenousValues {
    ExogenousValues {
        oil_price: 4.0,
        white_pop: 5e4,
        asian_pop: 2e4,
        avg_ev_price: 50_000.0,
        median_income: 90_000.0,
        parking_lots: 300.0,
        rebate_pct: rebate,
        saturation: SaturationInput::Fixed(0.3),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn saturation_is_normalized_with_attained_bounds(records in records_strategy()) {
        let out = compute_saturation(&records, SATURATION_EPSILON).unwrap();
        let vals: Vec<f64> = out.values.iter().flatten().copied().collect();
        prop_assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
        if out.bounds.is_degenerate() {
            prop_assert!(vals.iter().all(|v| *v == 0.0));
        } else {
            prop_assert!(vals.contains(&0.0));
            prop_assert!(vals.contains(&1.0));
        }
    }

    #[test]
    fn own_lagged_stations_never_move_own_instrument(
        records in records_strategy(),
        pick in any::<prop::sample::Index>(),
        bump in 0.0f64..1e4,
    ) {
        let before = compute_instrument(&records).unwrap();
        let i = pick.index(records.len());
        let target = &records[i];
        let mut changed = records.clone();
        changed[i].station_stock += bump;
        let after = compute_instrument(&changed).unwrap();
        for (j, r) in records.iter().enumerate() {
            if r.zip == target.zip && r.year == target.year + 1 {
                prop_assert_eq!(after[j], before[j]);
            }
        }
    }

    #[test]
    fn install_base_is_conserved_exactly(
        beta in 0.0f64..0.9,
        alpha in 0.0f64..0.9,
        d0 in -2.0f64..2.0,
        s0 in -2.0f64..2.0,
        delta in 0.5f64..=1.0,
        q0 in 0.0f64..1e6,
    ) {
        let m = model(beta, alpha, d0, s0);
        let start = MarketState { year: 2023, sales: 0.0, ev_stock: q0, station_stock: 10.0 };
        let path = simulate_horizon(&start, 20, &m, &vec![exog(0.4); 20], delta).unwrap();
        for w in path.windows(2) {
            prop_assert_eq!(w[1].ev_stock - delta * w[0].ev_stock, w[1].sales);
            prop_assert!(w[1].station_stock >= w[0].station_stock);
        }
    }

    #[test]
    fn identity_and_reversion(
        demand in 1.0f64..2.5,
        supply in 1.0f64..3.0,
        year in 2000i32..2060,
        rebate in 0.0f64..=1.0,
    ) {
        let base = exog(rebate);
        let identity = Scenario::new("id", 1.0, 1.0, [2024, 2035]).unwrap();
        prop_assert_eq!(apply_scenario(&identity, year, &base).unwrap().values, base);
        let s = Scenario::new("s", demand, supply, [2024, 2035]).unwrap();
        let adj = apply_scenario(&s, year, &base).unwrap();
        if !(2024..=2035).contains(&year) {
            prop_assert_eq!(adj.values, base);
        } else {
            prop_assert!(adj.values.avg_ev_price <= base.avg_ev_price);
            prop_assert!(adj.values.rebate_pct >= base.rebate_pct);
            prop_assert!(adj.values.rebate_pct <= 1.0);
        }
    }

    #[test]
    fn charger_cost_is_floored_and_non_increasing(a in 2000i32..2060, b in 2000i32..2060) {
        let path = ChargerCostPath::default();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(path.cost(hi) <= path.cost(lo));
        prop_assert!(path.cost(hi) >= path.floor);
    }

    #[test]
    fn synthetic_panels_are_reproducible(seed in any::<u64>()) {
        let config = SynthConfig { seed, n_zips: 12, n_years: 6, ..SynthConfig::default() };
        let a = generate_panel(&config).unwrap();
        let b = generate_panel(&config).unwrap();
        prop_assert_eq!(a.panel, b.panel);
    }
}
