//! Market dynamics: the reduced-form annual fixed point and the coupled
//! structural stepper.
//!
//! Reduced form. With every auxiliary variable folded into a constant `c`
//! and `k` the product of the two cross elasticities, annual sales solve
//!
//! ```text
//! s = exp(c + k * ln(s + delta * Q_prev))
//! ```
//!
//! For `0 <= k < 1` the right-hand side is monotone and concave in `s` and
//! has a unique positive fixed point. It is found by damped fixed-point
//! iteration with a bisection fallback.
//!
//! Structural form. Each simulated year alternates the supply equation
//! (station stock from the install base) and the demand equation (sales from
//! station stock) until the install base `Q = s + delta * Q_prev` is
//! self-consistent. Station stock is cumulative and never falls below the
//! previous year's level.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimationResult, INTERCEPT};
use crate::modelspec::columns::{BURDEN, LOG_BURDEN, LOG_EV_STOCK, LOG_STATIONS, SATURATION};
use crate::modelspec::{BurdenForm, DemandInputs, SupplyInputs};
use crate::panel::SaturationBounds;

/// Damping weight on the previous iterate.
const DAMPING: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid dynamics parameters: {0}")]
    InvalidParams(String),
    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{equation} coefficients missing: {missing:?}")]
    SpecificationMismatch {
        equation: &'static str,
        missing: Vec<String>,
    },
    #[error("exogenous path covers {got} year(s), {needed} needed")]
    ExogenousPath { needed: usize, got: usize },
    #[error("year {year}: {source}")]
    AtYear {
        year: i32,
        #[source]
        source: Box<DynamicsError>,
    },
}

/// Parameters of the reduced-form recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    /// Constant absorbing every variable held fixed (log units).
    pub c: f64,
    /// Cross elasticity product of demand and supply, in `[0, 1)`.
    pub k: f64,
    /// Fleet survival fraction.
    pub delta: f64,
    /// Relative convergence tolerance on `|s - g(s)|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl DynamicsParams {
    pub fn new(c: f64, k: f64, delta: f64) -> Result<Self, DynamicsError> {
        Self::with_tolerance(c, k, delta, 1e-13, 10_000)
    }

    pub fn with_tolerance(
        c: f64,
        k: f64,
        delta: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<Self, DynamicsError> {
        if !c.is_finite() {
            return Err(DynamicsError::InvalidParams(format!("c must be finite, got {c}")));
        }
        if !(0.0..1.0).contains(&k) {
            return Err(DynamicsError::InvalidParams(format!(
                "k must lie in [0, 1) for a contraction, got {k}"
            )));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(DynamicsError::InvalidParams(format!(
                "delta must lie in [0, 1], got {delta}"
            )));
        }
        if !(tol > 0.0) || max_iter == 0 {
            return Err(DynamicsError::InvalidParams(
                "tolerance must be > 0 and max_iter >= 1".into(),
            ));
        }
        Ok(Self {
            c,
            k,
            delta,
            tol,
            max_iter,
        })
    }

    fn map(&self, sales: f64, carried: f64) -> f64 {
        if self.k == 0.0 {
            return self.c.exp();
        }
        (self.c + self.k * (sales + carried).ln()).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Iteration,
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub sales: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

/// Annual sales solving `s = exp(c + k ln(s + delta * prev_stock))`.
pub fn solve_annual_fixed_point(
    params: &DynamicsParams,
    prev_stock: f64,
) -> Result<FixedPoint, DynamicsError> {
    if !(prev_stock >= 0.0) || !prev_stock.is_finite() {
        return Err(DynamicsError::Domain(format!(
            "previous stock must be finite and >= 0, got {prev_stock}"
        )));
    }
    let carried = params.delta * prev_stock;
    let mut s = params.c.exp() * (carried + 1.0).powf(params.k);
    let mut residual = f64::INFINITY;
    for iteration in 1..=params.max_iter {
        let next = params.map(s, carried);
        residual = (s - next).abs();
        if !residual.is_finite() {
            break;
        }
        if residual <= params.tol * s {
            return Ok(FixedPoint {
                sales: polish(params, carried, s),
                iterations: iteration,
                method: SolveMethod::Iteration,
            });
        }
        s = DAMPING * s + (1.0 - DAMPING) * next;
    }
    bisect_log(params, carried).ok_or(DynamicsError::NonConvergence {
        residual,
        iterations: params.max_iter,
    })
}

/// Two Newton steps on `h(x) = x - c - k ln(e^x + carried)` from `ln s`,
/// kept only if they reduce `|h|`.
fn polish(params: &DynamicsParams, carried: f64, s: f64) -> f64 {
    let h = |x: f64| x - params.c - params.k * (x.exp() + carried).ln();
    let mut x = s.ln();
    for _ in 0..2 {
        let e = x.exp();
        let slope = 1.0 - params.k * e / (e + carried);
        let next = x - h(x) / slope;
        if !(h(next).abs() < h(x).abs()) {
            break;
        }
        x = next;
    }
    x.exp()
}

/// Bisection on `h(x) = x - c - k ln(e^x + carried)` with `x = ln s`, which
/// is strictly increasing with slope at least `1 - k`.
fn bisect_log(params: &DynamicsParams, carried: f64) -> Option<FixedPoint> {
    let h = |x: f64| x - params.c - params.k * (x.exp() + carried).ln();
    let (mut lo, mut hi) = (params.c - 1.0, params.c + 1.0);
    let mut step = 1.0;
    while h(lo) > 0.0 {
        lo -= step;
        step *= 2.0;
        if !lo.is_finite() || lo < -745.0 {
            return None;
        }
    }
    step = 1.0;
    while h(hi) < 0.0 {
        hi += step;
        step *= 2.0;
        if hi > 709.0 {
            return None;
        }
    }
    for iteration in 1..=params.max_iter.max(200) {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * mid.abs().max(1.0) {
            return Some(FixedPoint {
                sales: (0.5 * (lo + hi)).exp(),
                iterations: iteration,
                method: SolveMethod::Bisection,
            });
        }
    }
    None
}

/// Constant that makes `observed_sales` the fixed point for `prev_stock`.
pub fn calibrate_constant(
    observed_sales: f64,
    prev_stock: f64,
    k: f64,
    delta: f64,
) -> Result<f64, DynamicsError> {
    if !(observed_sales > 0.0) {
        return Err(DynamicsError::Domain(format!(
            "calibration needs positive observed sales, got {observed_sales}"
        )));
    }
    if !(prev_stock >= 0.0) {
        return Err(DynamicsError::Domain(format!(
            "previous stock must be >= 0, got {prev_stock}"
        )));
    }
    if !(0.0..1.0).contains(&k) || !(0.0..=1.0).contains(&delta) {
        return Err(DynamicsError::InvalidParams(format!(
            "need 0 <= k < 1 and 0 <= delta <= 1, got k = {k}, delta = {delta}"
        )));
    }
    Ok(observed_sales.ln() - k * (observed_sales + delta * prev_stock).ln())
}

/// Market state at the end of a year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub year: i32,
    pub sales: f64,
    pub ev_stock: f64,
    pub station_stock: f64,
}

/// Reduced-form path point; station stock is not part of the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedFormState {
    pub year: i32,
    pub sales: f64,
    pub ev_stock: f64,
}

/// Iterates the reduced-form recursion from `initial` for `years` years.
pub fn simulate_reduced_form(
    params: &DynamicsParams,
    initial_year: i32,
    initial_stock: f64,
    years: usize,
) -> Result<Vec<ReducedFormState>, DynamicsError> {
    let mut out = Vec::with_capacity(years);
    let mut stock = initial_stock;
    for t in 1..=years {
        let year = initial_year + t as i32;
        let s = solve_annual_fixed_point(params, stock)
            .map_err(|e| DynamicsError::AtYear {
                year,
                source: Box::new(e),
            })?
            .sales;
        let carried = params.delta * stock;
        stock = s + carried;
        out.push(ReducedFormState {
            year,
            sales: stock - carried,
            ev_stock: stock,
        });
    }
    Ok(out)
}

/// Saturation regressor for a simulated year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SaturationInput {
    /// Use this normalized value as is.
    Fixed(f64),
    /// Recompute from the previous state's stocks with the model's frozen
    /// normalization bounds.
    FromState,
}

/// Exogenous inputs of one simulated year, in levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExogenousValues {
    pub oil_price: f64,
    pub white_pop: f64,
    pub asian_pop: f64,
    pub avg_ev_price: f64,
    pub median_income: f64,
    pub parking_lots: f64,
    pub rebate_pct: f64,
    pub saturation: SaturationInput,
}

impl ExogenousValues {
    pub fn burden(&self) -> f64 {
        self.avg_ev_price / self.median_income
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [
            ("oil_price", self.oil_price),
            ("avg_ev_price", self.avg_ev_price),
            ("median_income", self.median_income),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(DynamicsError::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("white_pop", self.white_pop),
            ("asian_pop", self.asian_pop),
            ("parking_lots", self.parking_lots),
            ("rebate_pct", self.rebate_pct),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(DynamicsError::Domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Intercept plus named slopes of one estimated equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEquation {
    pub intercept: f64,
    pub slopes: IndexMap<String, f64>,
}

impl LinearEquation {
    fn from_result(
        equation: &'static str,
        result: &EstimationResult,
        required: &[&str],
    ) -> Result<Self, DynamicsError> {
        let missing: Vec<String> = required
            .iter()
            .chain(std::iter::once(&INTERCEPT))
            .filter(|n| !result.coefficients.contains_key(**n))
            .map(|n| n.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(DynamicsError::SpecificationMismatch { equation, missing });
        }
        Ok(Self {
            intercept: result.coefficients[INTERCEPT],
            slopes: required
                .iter()
                .map(|n| (n.to_string(), result.coefficients[*n]))
                .collect(),
        })
    }

    fn slope(&self, name: &str) -> f64 {
        self.slopes[name]
    }

    /// Intercept plus every term except `skip`.
    fn partial(&self, values: &[(&str, f64)], skip: &str) -> f64 {
        self.intercept
            + values
                .iter()
                .filter(|(n, _)| *n != skip)
                .map(|(n, v)| self.slopes[*n] * v)
                .sum::<f64>()
    }
}

/// Coupled demand/supply system used for simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledModel {
    pub demand: LinearEquation,
    pub supply: LinearEquation,
    pub burden_form: BurdenForm,
    /// Frozen normalization of the saturation regressor.
    pub saturation_bounds: Option<SaturationBounds>,
    /// Station stock never falls below the previous year's level.
    pub retain_stations: bool,
    pub tol: f64,
    pub max_iter: usize,
}

impl CoupledModel {
    /// Extracts both equations from estimation results by column name. The
    /// burden form is read off the demand coefficient names.
    pub fn new(demand: &EstimationResult, supply: &EstimationResult) -> Result<Self, DynamicsError> {
        let burden_form = if demand.coefficients.contains_key(LOG_BURDEN) {
            BurdenForm::Log
        } else {
            BurdenForm::Linear
        };
        let probe = DemandInputs {
            stations: 0.0,
            oil_price: 1.0,
            white_pop: 0.0,
            asian_pop: 0.0,
            burden: 1.0,
        };
        let demand_names: Vec<&str> = probe.regressors(burden_form).iter().map(|(n, _)| *n).collect();
        let supply_probe = SupplyInputs {
            ev_stock: 0.0,
            parking_lots: 0.0,
            saturation: 0.0,
            rebate_pct: 0.0,
        };
        let supply_names: Vec<&str> = supply_probe.regressors().iter().map(|(n, _)| *n).collect();
        let model = Self {
            demand: LinearEquation::from_result("demand", demand, &demand_names)?,
            supply: LinearEquation::from_result("supply", supply, &supply_names)?,
            burden_form,
            saturation_bounds: None,
            retain_stations: true,
            tol: 1e-13,
            max_iter: 10_000,
        };
        let k = model.k();
        if !(k.abs() < 1.0) {
            return Err(DynamicsError::InvalidParams(format!(
                "cross elasticity product {k} must have magnitude < 1"
            )));
        }
        Ok(model)
    }

    pub fn with_saturation_bounds(mut self, bounds: SaturationBounds) -> Self {
        self.saturation_bounds = Some(bounds);
        self
    }

    /// Station elasticity of demand times EV-stock elasticity of supply.
    pub fn k(&self) -> f64 {
        self.demand.slope(LOG_STATIONS) * self.supply.slope(LOG_EV_STOCK)
    }

    fn saturation(&self, state: &MarketState, exog: &ExogenousValues) -> Result<f64, DynamicsError> {
        match exog.saturation {
            SaturationInput::Fixed(v) => Ok(v),
            SaturationInput::FromState => self
                .saturation_bounds
                .map(|b| b.saturation(state.ev_stock, state.station_stock))
                .ok_or_else(|| {
                    DynamicsError::InvalidParams(
                        "saturation is recomputed from state but no bounds are set".into(),
                    )
                }),
        }
    }

    fn demand_values(&self, stations: f64, exog: &ExogenousValues) -> [(&'static str, f64); 5] {
        DemandInputs {
            stations,
            oil_price: exog.oil_price,
            white_pop: exog.white_pop,
            asian_pop: exog.asian_pop,
            burden: exog.burden(),
        }
        .regressors(self.burden_form)
    }

    fn supply_values(&self, ev_stock: f64, saturation: f64, exog: &ExogenousValues) -> [(&'static str, f64); 4] {
        SupplyInputs {
            ev_stock,
            parking_lots: exog.parking_lots,
            saturation,
            rebate_pct: exog.rebate_pct,
        }
        .regressors()
    }

    /// Log-level contributions of everything except the endogenous terms:
    /// `(demand, supply)`.
    pub fn exogenous_parts(
        &self,
        state: &MarketState,
        exog: &ExogenousValues,
    ) -> Result<(f64, f64), DynamicsError> {
        let sat = self.saturation(state, exog)?;
        let d = self.demand.partial(&self.demand_values(0.0, exog), LOG_STATIONS);
        let s = self.supply.partial(&self.supply_values(0.0, sat, exog), LOG_EV_STOCK);
        Ok((d, s))
    }

    /// Reduced-form constant `c` implied by freezing every auxiliary at
    /// `exog` (log-guard offsets of the endogenous terms are neglected).
    pub fn reduced_form_constant(
        &self,
        state: &MarketState,
        exog: &ExogenousValues,
    ) -> Result<f64, DynamicsError> {
        let (d, s) = self.exogenous_parts(state, exog)?;
        Ok(d + self.demand.slope(LOG_STATIONS) * s)
    }

    /// Sets both intercepts so that the structural equations reproduce
    /// `observed` exactly, with saturation taken from `prev`.
    pub fn calibrate_intercepts(
        &mut self,
        prev: &MarketState,
        observed: &MarketState,
        exog: &ExogenousValues,
    ) -> Result<(), DynamicsError> {
        exog.validate()?;
        if !(observed.sales > 0.0) || !(observed.station_stock > 0.0) {
            return Err(DynamicsError::Domain(
                "calibration needs positive observed sales and station stock".into(),
            ));
        }
        let sat = self.saturation(prev, exog)?;
        self.supply.intercept = 0.0;
        self.demand.intercept = 0.0;
        let supply_fit = self.supply.partial(&self.supply_values(observed.ev_stock, sat, exog), "");
        let demand_fit = self.demand.partial(&self.demand_values(observed.station_stock, exog), "");
        self.supply.intercept = observed.station_stock.ln() - supply_fit;
        self.demand.intercept = observed.sales.ln() - demand_fit;
        Ok(())
    }

    /// Advances one year. The first pass evaluates supply at last year's
    /// install base; passes repeat until the install base is consistent.
    pub fn step(
        &self,
        state: &MarketState,
        exog: &ExogenousValues,
        delta: f64,
    ) -> Result<MarketState, DynamicsError> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(DynamicsError::InvalidParams(format!(
                "delta must lie in [0, 1], got {delta}"
            )));
        }
        if !(state.ev_stock >= 0.0 && state.station_stock >= 0.0 && state.sales >= 0.0) {
            return Err(DynamicsError::Domain(format!("state must be non-negative: {state:?}")));
        }
        exog.validate()?;
        let (demand_part, supply_part) = self.exogenous_parts(state, exog)?;
        let beta = self.demand.slope(LOG_STATIONS);
        let alpha = self.supply.slope(LOG_EV_STOCK);
        let carried = delta * state.ev_stock;
        let floor = if self.retain_stations { state.station_stock } else { 0.0 };

        let stations_for = |q: f64| (supply_part + alpha * q.ln_1p()).exp().max(floor);
        let sales_for = |e: f64| (demand_part + beta * e.ln_1p()).exp();

        let mut q = state.ev_stock;
        for _ in 0..self.max_iter {
            let e = stations_for(q);
            let s = sales_for(e);
            let next = s + carried;
            let converged = (next - q).abs() <= self.tol * next.max(1.0);
            q = next;
            if converged {
                // Sales are read back from the stock so that
                // `ev_stock - delta * prev` reproduces them bit for bit.
                let ev_stock = s + carried;
                return Ok(MarketState {
                    year: state.year + 1,
                    sales: ev_stock - carried,
                    ev_stock,
                    station_stock: e,
                });
            }
        }
        let e = stations_for(q);
        let residual = (sales_for(e) + carried - q).abs();
        Err(DynamicsError::NonConvergence {
            residual,
            iterations: self.max_iter,
        })
    }
}

/// One coupled year; see [`CoupledModel::step`].
pub fn step_coupled_year(
    state: &MarketState,
    model: &CoupledModel,
    exog: &ExogenousValues,
    delta: f64,
) -> Result<MarketState, DynamicsError> {
    model.step(state, exog, delta)
}

/// Simulates `years` years after `initial`. `exog[i]` drives year
/// `initial.year + 1 + i`. The returned path starts with `initial`.
pub fn simulate_horizon(
    initial: &MarketState,
    years: usize,
    model: &CoupledModel,
    exog: &[ExogenousValues],
    delta: f64,
) -> Result<Vec<MarketState>, DynamicsError> {
    if exog.len() < years {
        return Err(DynamicsError::ExogenousPath {
            needed: years,
            got: exog.len(),
        });
    }
    let mut path = Vec::with_capacity(years + 1);
    path.push(*initial);
    let mut state = *initial;
    for values in &exog[..years] {
        state = model
            .step(&state, values, delta)
            .map_err(|e| DynamicsError::AtYear {
                year: state.year + 1,
                source: Box::new(e),
            })?;
        path.push(state);
    }
    Ok(path)
}

/// Demand and supply coefficient names the coupled model requires, for a
/// burden form.
pub fn required_columns(form: BurdenForm) -> (Vec<&'static str>, Vec<&'static str>) {
    let burden = match form {
        BurdenForm::Linear => BURDEN,
        BurdenForm::Log => LOG_BURDEN,
    };
    (
        vec![
            LOG_STATIONS,
            crate::modelspec::columns::LOG_OIL,
            crate::modelspec::columns::LOG_WHITE,
            crate::modelspec::columns::LOG_ASIAN,
            burden,
            INTERCEPT,
        ],
        vec![
            LOG_EV_STOCK,
            crate::modelspec::columns::LOG_PARKING,
            SATURATION,
            crate::modelspec::columns::REBATE,
            INTERCEPT,
        ],
    )
}
