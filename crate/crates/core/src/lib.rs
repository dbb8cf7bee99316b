//! Estimation and simulation of the two-sided electric-vehicle market.
//!
//! The crate couples an EV demand equation (sales as a function of public
//! charging-station stock and affordability covariates) with a charging
//! supply equation (station stock as a function of the EV install base),
//! estimates both from zip-code/year panel data with OLS, two-stage least
//! squares or GMM, and simulates the resulting feedback loop forward under
//! incentive scenarios.
//!
//! Module map:
//!
//! - [`panel`]: CSV ingestion, validation and engineered regressors
//!   (burden, saturation, the parking-lot instrument).
//! - [`estimator`]: OLS / TSLS / GMM with heteroskedasticity-robust errors.
//! - [`modelspec`]: binds panel columns to the demand and supply equations.
//! - [`dynamics`]: reduced-form fixed point and the coupled structural stepper.
//! - [`policy`]: scenarios, fleet projection, forecasts and comparisons.
//! - [`synth`]: synthetic panels with known coefficients.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod estimator;
pub mod format;
pub mod modelspec;
pub mod panel;
pub mod policy;
pub mod synth;

pub use dynamics::{
    calibrate_constant, simulate_horizon, simulate_reduced_form, solve_annual_fixed_point,
    step_coupled_year, CoupledModel, DynamicsError, DynamicsParams, ExogenousValues, MarketState,
    SaturationInput,
};
pub use estimator::{
    fit_gmm, fit_ols, fit_tsls, CovarianceKind, DesignMatrix, EstimationError, EstimationResult,
    Estimator, FitOptions, WeightMatrixKind,
};
pub use modelspec::{
    build_demand_design, build_supply_design, describe, estimate_demand, estimate_supply,
    BurdenForm, ModelError, ModelOptions,
};
pub use panel::{
    load_panel, read_panel, write_records_csv, ColumnMapping, DerivedRecord, LoadMode,
    LoadedPanel, Panel, PanelError, PanelRecord, RowIssue, SaturationBounds, DEFAULT_DELTA,
    SATURATION_EPSILON,
};
pub use policy::{
    aggregate_year, apply_scenario, compare_scenarios, forecast_scenario, load_population,
    load_year_series, project_fleet, run_forecast, ChargerCostPath, ComparisonReport,
    CountyYear, EstimatePair, FleetProjection, ForecastSetup, PolicyError, Scenario, Trajectory,
};
pub use synth::{generate_panel, SynthConfig, SynthError, SynthPanel};
