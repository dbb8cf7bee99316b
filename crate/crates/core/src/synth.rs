//! Synthetic panels with known structural coefficients.
//!
//! Each zip starts from a random state and the demand and station equations
//! are solved jointly every year:
//!
//! ```text
//! ln(1 + E) = a0 + a1 ln(1 + Q) + a2 ln(1 + parking) + a3 S + a4 rebate + u
//! ln(1 + s) = b0 + b1 ln(1 + E) + b_oil ln(oil) + ... + b_burden B + e
//! Q = s + delta * Q_prev
//! ```
//!
//! A latent market shock `eta` drives both errors: `e = -sd * eta` and
//! `u = sd * (rho * eta + sqrt(1 - rho^2) * v)`, so `rho < 0` makes station
//! stock rise with the demand error and biases OLS upwards.
//!
//! The saturation coefficient acts on a fixed reference normalization
//! `(raw - lo) / (hi - lo)`. The panel re-normalizes with its own min-max
//! bounds, so [`SynthPanel`] reports the intercept and saturation slope
//! rescaled to the panel scale.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::required_columns;
use crate::estimator::INTERCEPT;
use crate::modelspec::columns::{LOG_EV_STOCK, LOG_STATIONS, SATURATION};
use crate::modelspec::{BurdenForm, DemandInputs, SupplyInputs};
use crate::panel::{saturation_ratio, Panel, PanelError, PanelRecord, SATURATION_EPSILON};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("true cross elasticity product {k} is not below 1")]
    NonContractive { k: f64 },
    #[error("simultaneous solve did not converge for zip {zip} in {year}")]
    NonConvergence { zip: String, year: i32 },
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_zips: usize,
    pub n_years: usize,
    pub start_year: i32,
    /// Demand coefficients keyed by column name, intercept under `const`.
    pub true_demand_coeffs: IndexMap<String, f64>,
    /// Supply coefficients keyed by column name. The saturation slope applies
    /// on the reference normalization.
    pub true_supply_coeffs: IndexMap<String, f64>,
    pub endogeneity_rho: f64,
    pub noise_sd: f64,
    pub seed: u64,
    pub delta: f64,
    /// Raw-ratio interval mapped onto `[0, 1]` inside the generator.
    pub saturation_reference: [f64; 2],
    pub parking_range: [f64; 2],
    pub initial_stock_range: [f64; 2],
    pub initial_station_range: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        let (demand, supply) = required_columns(BurdenForm::Linear);
        Self {
            n_zips: 50,
            n_years: 6,
            start_year: 2015,
            true_demand_coeffs: demand
                .into_iter()
                .map(String::from)
                .zip([0.36, 0.85, 0.126, 0.259, -3.2, 2.0])
                .collect(),
            true_supply_coeffs: supply
                .into_iter()
                .map(String::from)
                .zip([0.5, 0.5, 3.6, 1.77, -1.0])
                .collect(),
            endogeneity_rho: -0.5,
            noise_sd: 0.5,
            seed: 0,
            delta: 0.95,
            saturation_reference: [1.0, 3.0],
            parking_range: [100.0, 300.0],
            initial_stock_range: [300.0, 600.0],
            initial_station_range: [10.0, 20.0],
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_zips == 0 || self.n_years < 2 {
            return bad(format!(
                "need at least one zip and two years, got {} x {}",
                self.n_zips, self.n_years
            ));
        }
        if self.n_zips * (self.n_years - 1) < 50 {
            return bad(format!(
                "{} zips x {} lagged years gives fewer than 50 observations",
                self.n_zips,
                self.n_years - 1
            ));
        }
        if !(self.endogeneity_rho.abs() <= 1.0) {
            return bad(format!("rho must lie in [-1, 1], got {}", self.endogeneity_rho));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return bad(format!("noise_sd must be >= 0, got {}", self.noise_sd));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1], got {}", self.delta));
        }
        let [lo, hi] = self.saturation_reference;
        if !(hi > lo) {
            return bad(format!("saturation reference [{lo}, {hi}] is empty"));
        }
        for (name, [a, b]) in [
            ("parking_range", self.parking_range),
            ("initial_stock_range", self.initial_stock_range),
            ("initial_station_range", self.initial_station_range),
        ] {
            if !(a > 0.0 && b >= a) {
                return bad(format!("{name} must be positive and ordered, got [{a}, {b}]"));
            }
        }
        let (demand, supply) = required_columns(BurdenForm::Linear);
        for (label, names, coeffs) in [
            ("demand", demand, &self.true_demand_coeffs),
            ("supply", supply, &self.true_supply_coeffs),
        ] {
            let missing: Vec<&str> = names.into_iter().filter(|n| !coeffs.contains_key(*n)).collect();
            if !missing.is_empty() {
                return bad(format!("{label} coefficients missing: {missing:?}"));
            }
        }
        let k = self.true_demand_coeffs[LOG_STATIONS] * self.true_supply_coeffs[LOG_EV_STOCK];
        if !(k < 1.0) {
            return Err(SynthError::NonContractive { k });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPanel {
    pub panel: Panel,
    /// Demand truth; identical to the configured coefficients.
    pub true_demand: IndexMap<String, f64>,
    /// Supply truth on the panel's own saturation scale.
    pub true_supply: IndexMap<String, f64>,
}

struct ZipFixed {
    zip: String,
    parking: f64,
    white: f64,
    asian: f64,
    income: f64,
}

fn log_uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi == lo {
        lo
    } else {
        rng.random_range(lo.ln()..hi.ln()).exp()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn dot(coeffs: &IndexMap<String, f64>, values: &[(&str, f64)], skip: &str) -> f64 {
    coeffs[INTERCEPT]
        + values
            .iter()
            .filter(|(n, _)| *n != skip)
            .map(|(n, v)| coeffs[*n] * v)
            .sum::<f64>()
}

/// Generates a panel; identical configs give identical panels.
pub fn generate_panel(config: &SynthConfig) -> Result<SynthPanel, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = &config.true_demand_coeffs;
    let s = &config.true_supply_coeffs;
    let [ref_lo, ref_hi] = config.saturation_reference;
    let rho = config.endogeneity_rho;
    let sd = config.noise_sd;
    let width = config.n_zips.to_string().len().max(3);

    let zips: Vec<ZipFixed> = (0..config.n_zips)
        .map(|i| ZipFixed {
            zip: format!("z{:0width$}", i + 1),
            parking: log_uniform(&mut rng, config.parking_range),
            white: log_uniform(&mut rng, [2e3, 5e4]),
            asian: log_uniform(&mut rng, [5e2, 3e4]),
            income: rng.random_range(40e3..150e3),
        })
        .collect();

    let mut records = Vec::with_capacity(config.n_zips * config.n_years);
    let mut stock: Vec<f64> = Vec::with_capacity(config.n_zips);
    let mut stations: Vec<f64> = Vec::with_capacity(config.n_zips);
    let first_oil = rng.random_range(3.0..5.0);
    let first_rebate = rng.random_range(0.1..0.6);
    for z in &zips {
        let q = log_uniform(&mut rng, config.initial_stock_range);
        let e = log_uniform(&mut rng, config.initial_station_range);
        let price = rng.random_range(35e3..70e3);
        records.push(PanelRecord {
            zip: z.zip.clone(),
            year: config.start_year,
            ev_sales: 0.2 * q,
            ev_stock: q,
            station_stock: e,
            avg_ev_price: price,
            median_income: z.income,
            white_pop: z.white,
            asian_pop: z.asian,
            oil_price: first_oil,
            parking_lots: z.parking,
            rebate_pct: first_rebate,
        });
        stock.push(q);
        stations.push(e);
    }

    for t in 1..config.n_years {
        let year = config.start_year + t as i32;
        let oil_level = rng.random_range(3.0..5.0);
        let rebate = rng.random_range(0.1..0.6);
        let mut next_stock = Vec::with_capacity(config.n_zips);
        let mut next_stations = Vec::with_capacity(config.n_zips);
        for (i, z) in zips.iter().enumerate() {
            let oil = (oil_level + 0.5 * normal(&mut rng)).max(1.0);
            let rebate = (rebate + rng.random_range(-0.1f64..0.1)).clamp(0.0, 1.0);
            let price = rng.random_range(35e3..70e3);
            let eta = normal(&mut rng);
            let v = normal(&mut rng);
            let u = sd * (rho * eta + (1.0 - rho * rho).max(0.0).sqrt() * v);
            let e_demand = -sd * eta;

            let raw = saturation_ratio(stock[i], stations[i], SATURATION_EPSILON);
            let sat_ref = (raw - ref_lo) / (ref_hi - ref_lo);
            let demand_values = DemandInputs {
                stations: 0.0,
                oil_price: oil,
                white_pop: z.white,
                asian_pop: z.asian,
                burden: price / z.income,
            }
            .regressors(BurdenForm::Linear);
            let supply_values = SupplyInputs {
                ev_stock: 0.0,
                parking_lots: z.parking,
                saturation: sat_ref,
                rebate_pct: rebate,
            }
            .regressors();
            let demand_part = dot(d, &demand_values, LOG_STATIONS) + e_demand;
            let supply_part = dot(s, &supply_values, LOG_EV_STOCK) + u;

            let carried = config.delta * stock[i];
            let stations_for = |q: f64| (supply_part + s[LOG_EV_STOCK] * q.ln_1p()).max(0.0).exp_m1();
            let sales_for = |e: f64| (demand_part + d[LOG_STATIONS] * e.ln_1p()).max(0.0).exp_m1();
            let mut q = stock[i];
            let mut converged = false;
            for _ in 0..1000 {
                let next = sales_for(stations_for(q)) + carried;
                let done = (next - q).abs() <= 1e-13 * next.max(1.0);
                q = next;
                if done {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(SynthError::NonConvergence {
                    zip: z.zip.clone(),
                    year,
                });
            }
            let e = stations_for(q);
            let sales = sales_for(e);
            records.push(PanelRecord {
                zip: z.zip.clone(),
                year,
                ev_sales: sales,
                ev_stock: sales + carried,
                station_stock: e,
                avg_ev_price: price,
                median_income: z.income,
                white_pop: z.white,
                asian_pop: z.asian,
                oil_price: oil,
                parking_lots: z.parking,
                rebate_pct: rebate,
            });
            next_stock.push(sales + carried);
            next_stations.push(e);
        }
        stock = next_stock;
        stations = next_stations;
    }

    let panel = Panel::from_records(records)?;
    let mut true_supply = s.clone();
    if let Some(bounds) = panel.saturation_bounds() {
        let a3 = s[SATURATION];
        let scale = if bounds.is_degenerate() {
            0.0
        } else {
            (bounds.max - bounds.min) / (ref_hi - ref_lo)
        };
        true_supply[SATURATION] = a3 * scale;
        true_supply[INTERCEPT] = s[INTERCEPT] + a3 * (bounds.min - ref_lo) / (ref_hi - ref_lo);
    }
    Ok(SynthPanel {
        panel,
        true_demand: d.clone(),
        true_supply,
    })
}
