//! Binding of panel columns to the demand and supply equations.
//!
//! Demand: `ln(1+sales)` on `ln(1+stations)` (endogenous), `ln(oil price)`,
//! `ln(1+white pop)`, `ln(1+asian pop)` and burden (linear by default).
//!
//! Supply: `ln(1+stations)` on `ln(1+EV stock)` (endogenous),
//! `ln(1+parking lots)`, saturation and rebate percentage.
//!
//! Both equations use the excluded instrument `ln(1 + P)`, with `P` the
//! parking-lot count times lagged stations outside the zip, plus every
//! exogenous regressor of the equation. Each equation is therefore exactly
//! identified.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{self, DesignMatrix, EstimationError, EstimationResult, Estimator, FitOptions, INTERCEPT};
use crate::panel::{DerivedRecord, Panel, PanelRecord};

/// Column names, matching the row labels of the regression tables.
pub mod columns {
    pub const LOG_SALES: &str = "ln(EV sales)";
    pub const LOG_STATIONS: &str = "ln(Charging station)";
    pub const LOG_OIL: &str = "ln(oil_price)";
    pub const LOG_WHITE: &str = "ln(White Population)";
    pub const LOG_ASIAN: &str = "ln(Asian Population)";
    pub const BURDEN: &str = "EV_Burden";
    pub const LOG_BURDEN: &str = "ln(EV_Burden)";
    pub const LOG_EV_STOCK: &str = "ln(EV Stock)";
    pub const LOG_PARKING: &str = "ln(parking lot)";
    pub const SATURATION: &str = "Saturation";
    pub const REBATE: &str = "Rebate Percentage";
    pub const INSTRUMENT: &str = "ln(parking x lagged external stations)";
}

use columns::*;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("panel has no records with derived fields; derive lags before building a design")]
    MissingDerived,
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

/// How burden enters the demand equation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BurdenForm {
    #[default]
    Linear,
    Log,
}

impl BurdenForm {
    pub fn column(self) -> &'static str {
        match self {
            BurdenForm::Linear => BURDEN,
            BurdenForm::Log => LOG_BURDEN,
        }
    }

    pub fn transform(self, burden: f64) -> f64 {
        match self {
            BurdenForm::Linear => burden,
            BurdenForm::Log => burden.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub burden_form: BurdenForm,
    pub fit: FitOptions,
    pub gmm_steps: u8,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            burden_form: BurdenForm::Linear,
            fit: FitOptions::default(),
            gmm_steps: 2,
        }
    }
}

/// Level values feeding the demand equation for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandInputs {
    pub stations: f64,
    pub oil_price: f64,
    pub white_pop: f64,
    pub asian_pop: f64,
    pub burden: f64,
}

impl DemandInputs {
    pub fn from_record(record: &PanelRecord, derived: &DerivedRecord) -> Self {
        Self {
            stations: record.station_stock,
            oil_price: record.oil_price,
            white_pop: record.white_pop,
            asian_pop: record.asian_pop,
            burden: derived.burden,
        }
    }

    /// Transformed regressor values in design order (endogenous first).
    pub fn regressors(&self, form: BurdenForm) -> [(&'static str, f64); 5] {
        [
            (LOG_STATIONS, self.stations.ln_1p()),
            (LOG_OIL, self.oil_price.ln()),
            (LOG_WHITE, self.white_pop.ln_1p()),
            (LOG_ASIAN, self.asian_pop.ln_1p()),
            (form.column(), form.transform(self.burden)),
        ]
    }
}

/// Level values feeding the supply equation for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupplyInputs {
    pub ev_stock: f64,
    pub parking_lots: f64,
    pub saturation: f64,
    pub rebate_pct: f64,
}

impl SupplyInputs {
    pub fn from_record(record: &PanelRecord, derived: &DerivedRecord) -> Self {
        Self {
            ev_stock: record.ev_stock,
            parking_lots: record.parking_lots,
            saturation: derived.saturation,
            rebate_pct: record.rebate_pct,
        }
    }

    pub fn regressors(&self) -> [(&'static str, f64); 4] {
        [
            (LOG_EV_STOCK, self.ev_stock.ln_1p()),
            (LOG_PARKING, self.parking_lots.ln_1p()),
            (SATURATION, self.saturation),
            (REBATE, self.rebate_pct),
        ]
    }
}

pub fn demand_response(sales: f64) -> f64 {
    sales.ln_1p()
}

pub fn supply_response(stations: f64) -> f64 {
    stations.ln_1p()
}

pub fn instrument_value(derived: &DerivedRecord) -> f64 {
    derived.instrument.ln_1p()
}

/// Columns of `n` rows, one per name, filled row by row.
fn gather<const K: usize>(rows: &[[(&'static str, f64); K]]) -> Vec<(String, Vec<f64>)> {
    (0..K)
        .map(|j| {
            let name = rows.first().map_or("", |r| r[j].0).to_string();
            (name, rows.iter().map(|r| r[j].1).collect())
        })
        .collect()
}

fn design_from<const K: usize>(
    response_name: &str,
    response: Vec<f64>,
    rows: Vec<[(&'static str, f64); K]>,
    instrument: Vec<f64>,
) -> Result<DesignMatrix, ModelError> {
    let regressors = gather(&rows);
    let mut instruments = vec![(INSTRUMENT.to_string(), instrument)];
    instruments.extend(regressors.iter().skip(1).cloned());
    Ok(DesignMatrix::new(
        response_name,
        response,
        regressors,
        instruments,
        true,
    )?)
}

pub fn build_demand_design(panel: &Panel, options: &ModelOptions) -> Result<DesignMatrix, ModelError> {
    let rows: Vec<_> = panel.derived_rows().collect();
    if rows.is_empty() {
        return Err(ModelError::MissingDerived);
    }
    design_from(
        LOG_SALES,
        rows.iter().map(|(r, _)| demand_response(r.ev_sales)).collect(),
        rows.iter()
            .map(|(r, d)| DemandInputs::from_record(r, d).regressors(options.burden_form))
            .collect(),
        rows.iter().map(|(_, d)| instrument_value(d)).collect(),
    )
}

pub fn build_supply_design(panel: &Panel, _options: &ModelOptions) -> Result<DesignMatrix, ModelError> {
    let rows: Vec<_> = panel.derived_rows().collect();
    if rows.is_empty() {
        return Err(ModelError::MissingDerived);
    }
    design_from(
        LOG_STATIONS,
        rows.iter().map(|(r, _)| supply_response(r.station_stock)).collect(),
        rows.iter()
            .map(|(r, d)| SupplyInputs::from_record(r, d).regressors())
            .collect(),
        rows.iter().map(|(_, d)| instrument_value(d)).collect(),
    )
}

/// Fits the demand equation; the station-stock coefficient is the demand
/// elasticity with respect to charging stations.
pub fn estimate_demand(
    panel: &Panel,
    method: Estimator,
    options: &ModelOptions,
) -> Result<EstimationResult, ModelError> {
    let design = build_demand_design(panel, options)?;
    Ok(estimator::fit(
        &design,
        method,
        &[LOG_STATIONS],
        options.gmm_steps,
        &options.fit,
    )?)
}

/// Fits the supply equation; the EV-stock coefficient is the supply
/// elasticity with respect to the install base.
pub fn estimate_supply(
    panel: &Panel,
    method: Estimator,
    options: &ModelOptions,
) -> Result<EstimationResult, ModelError> {
    let design = build_supply_design(panel, options)?;
    Ok(estimator::fit(
        &design,
        method,
        &[LOG_EV_STOCK],
        options.gmm_steps,
        &options.fit,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationDescription {
    pub response: String,
    pub regressors: Vec<String>,
    pub endogenous: Vec<String>,
    pub instruments: Vec<String>,
    pub transforms: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescription {
    pub log_guard: String,
    pub burden_form: BurdenForm,
    pub demand: EquationDescription,
    pub supply: EquationDescription,
}

/// Column binding of both equations, for auditing.
pub fn describe(options: &ModelOptions) -> ModelDescription {
    let s = |v: &str| v.to_string();
    let burden = options.burden_form.column();
    let burden_transform = match options.burden_form {
        BurdenForm::Linear => "avg_ev_price / median_income",
        BurdenForm::Log => "ln(avg_ev_price / median_income)",
    };
    ModelDescription {
        log_guard: s("count variables are logged as ln(1 + x)"),
        burden_form: options.burden_form,
        demand: EquationDescription {
            response: s(LOG_SALES),
            regressors: vec![s(LOG_STATIONS), s(LOG_OIL), s(LOG_WHITE), s(LOG_ASIAN), s(burden), s(INTERCEPT)],
            endogenous: vec![s(LOG_STATIONS)],
            instruments: vec![s(INSTRUMENT), s(LOG_OIL), s(LOG_WHITE), s(LOG_ASIAN), s(burden), s(INTERCEPT)],
            transforms: vec![
                (s(LOG_SALES), s("ln(1 + ev_sales)")),
                (s(LOG_STATIONS), s("ln(1 + station_stock)")),
                (s(LOG_OIL), s("ln(oil_price)")),
                (s(LOG_WHITE), s("ln(1 + white_pop)")),
                (s(LOG_ASIAN), s("ln(1 + asian_pop)")),
                (s(burden), s(burden_transform)),
                (s(INSTRUMENT), s("ln(1 + parking_lots * sum of other zips' station_stock at t-1)")),
            ],
        },
        supply: EquationDescription {
            response: s(LOG_STATIONS),
            regressors: vec![s(LOG_EV_STOCK), s(LOG_PARKING), s(SATURATION), s(REBATE), s(INTERCEPT)],
            endogenous: vec![s(LOG_EV_STOCK)],
            instruments: vec![s(INSTRUMENT), s(LOG_PARKING), s(SATURATION), s(REBATE), s(INTERCEPT)],
            transforms: vec![
                (s(LOG_STATIONS), s("ln(1 + station_stock)")),
                (s(LOG_EV_STOCK), s("ln(1 + ev_stock)")),
                (s(LOG_PARKING), s("ln(1 + parking_lots)")),
                (s(SATURATION), s("min-max over panel of ln(1 + Q[t-1]) / max(ln(1 + E[t-1]), eps)")),
                (s(REBATE), s("rebate_pct")),
                (s(INSTRUMENT), s("ln(1 + parking_lots * sum of other zips' station_stock at t-1)")),
            ],
        },
    }
}
