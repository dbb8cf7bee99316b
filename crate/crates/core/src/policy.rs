//! Incentive scenarios, fleet projection and county-level forecasts.
//!
//! A scenario scales the purchase rebate and the charger rebate inside a
//! policy window. The purchase rebate reaches demand through the burden term:
//! only the increment beyond the baseline rebate lowers the effective price.
//! The charger rebate scales `rebate_pct` directly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    simulate_horizon, CoupledModel, DynamicsError, ExogenousValues, MarketState, SaturationInput,
};
use crate::estimator::EstimationResult;
use crate::format::fmt_sig;
use crate::panel::{Panel, SaturationBounds};

/// Default annual sales over fleet size: 437,000 / 6,220,000.
pub const DEFAULT_TURNOVER: f64 = 437_000.0 / 6_220_000.0;
pub const DEFAULT_PURCHASE_REBATE: f64 = 7_500.0;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario {scenario} is infeasible in {year}: adjusted EV price {price} <= 0")]
    Infeasible { scenario: String, year: i32, price: f64 },
    #[error("fleet projection: {0}")]
    Fleet(String),
    #[error("trajectories are not aligned: {0}")]
    Alignment(String),
    #[error("forecast setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing scenario: {0}")]
    Json(#[from] serde_json::Error),
}

fn default_purchase_rebate() -> f64 {
    DEFAULT_PURCHASE_REBATE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub demand_rebate_multiplier: f64,
    pub supply_rebate_multiplier: f64,
    /// Inclusive `[start, end]` years during which the multipliers apply.
    pub window: [i32; 2],
    #[serde(default = "default_purchase_rebate")]
    pub baseline_purchase_rebate: f64,
}

impl Scenario {
    pub fn new(name: &str, demand: f64, supply: f64, window: [i32; 2]) -> Result<Self, PolicyError> {
        let s = Self {
            name: name.to_string(),
            demand_rebate_multiplier: demand,
            supply_rebate_multiplier: supply,
            window,
            baseline_purchase_rebate: DEFAULT_PURCHASE_REBATE,
        };
        s.validate()?;
        Ok(s)
    }

    /// Current policy: both multipliers 1.
    pub fn baseline(window: [i32; 2]) -> Self {
        Self {
            name: "baseline".into(),
            demand_rebate_multiplier: 1.0,
            supply_rebate_multiplier: 1.0,
            window,
            baseline_purchase_rebate: DEFAULT_PURCHASE_REBATE,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::InvalidScenario(m));
        if self.name.trim().is_empty() {
            return bad("name is empty".into());
        }
        for (label, m) in [
            ("demand_rebate_multiplier", self.demand_rebate_multiplier),
            ("supply_rebate_multiplier", self.supply_rebate_multiplier),
        ] {
            if !(m >= 0.0) || !m.is_finite() {
                return bad(format!("{label} must be >= 0, got {m}"));
            }
        }
        if self.window[0] > self.window[1] {
            return bad(format!("window start {} after end {}", self.window[0], self.window[1]));
        }
        if !(self.baseline_purchase_rebate >= 0.0) {
            return bad(format!(
                "baseline_purchase_rebate must be >= 0, got {}",
                self.baseline_purchase_rebate
            ));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self, PolicyError> {
        let scenario: Self = serde_json::from_str(s)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn in_window(&self, year: i32) -> bool {
        (self.window[0]..=self.window[1]).contains(&year)
    }
}

/// Exogenous values after a scenario has been applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedExogenous {
    pub values: ExogenousValues,
    pub in_window: bool,
    /// The scaled charger rebate exceeded 1 and was clamped.
    pub rebate_clamped: bool,
}

/// Applies `scenario` to one year's baseline values. Outside the window the
/// input is returned unchanged.
pub fn apply_scenario(
    scenario: &Scenario,
    year: i32,
    base: &ExogenousValues,
) -> Result<AdjustedExogenous, PolicyError> {
    if !scenario.in_window(year) {
        return Ok(AdjustedExogenous {
            values: *base,
            in_window: false,
            rebate_clamped: false,
        });
    }
    let extra = scenario.baseline_purchase_rebate * (scenario.demand_rebate_multiplier - 1.0);
    let price = base.avg_ev_price - extra;
    if !(price > 0.0) {
        return Err(PolicyError::Infeasible {
            scenario: scenario.name.clone(),
            year,
            price,
        });
    }
    let scaled = base.rebate_pct * scenario.supply_rebate_multiplier;
    let rebate_clamped = scaled > 1.0;
    Ok(AdjustedExogenous {
        values: ExogenousValues {
            avg_ev_price: price,
            rebate_pct: scaled.clamp(0.0, 1.0),
            ..*base
        },
        in_window: true,
        rebate_clamped,
    })
}

/// Level 2 charger cost: linear through two anchor years, floored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargerCostPath {
    pub anchor_years: [i32; 2],
    pub anchor_costs: [f64; 2],
    pub floor: f64,
}

impl Default for ChargerCostPath {
    fn default() -> Self {
        Self {
            anchor_years: [2018, 2020],
            anchor_costs: [7_500.0, 6_000.0],
            floor: 3_000.0,
        }
    }
}

impl ChargerCostPath {
    pub fn cost(&self, year: i32) -> f64 {
        let [y0, y1] = self.anchor_years;
        let [c0, c1] = self.anchor_costs;
        let slope = (c1 - c0) / f64::from(y1 - y0);
        (c0 + slope * f64::from(year - y0)).max(self.floor)
    }

    /// Baseline rebate share in `year` when a fixed dollar rebate equal to
    /// `seed_pct` of the seed-year cost is kept, capped at 1.
    pub fn rebate_pct(&self, seed_pct: f64, seed_year: i32, year: i32) -> f64 {
        (seed_pct * self.cost(seed_year) / self.cost(year)).min(1.0)
    }
}

/// One point of the vehicles-on-population history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleetHistoryPoint {
    pub population: f64,
    pub vehicles: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sales: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetProjection {
    pub slope: f64,
    pub intercept: f64,
    pub population_path: BTreeMap<i32, f64>,
    pub turnover_fraction: f64,
}

impl FleetProjection {
    /// A fleet of fixed size in every year.
    pub fn constant(vehicles: f64) -> Result<Self, PolicyError> {
        if !(vehicles > 0.0) {
            return Err(PolicyError::Fleet(format!("fleet must be > 0, got {vehicles}")));
        }
        Ok(Self {
            slope: 0.0,
            intercept: vehicles,
            population_path: BTreeMap::new(),
            turnover_fraction: DEFAULT_TURNOVER,
        })
    }

    pub fn vehicles(&self, year: i32) -> Result<f64, PolicyError> {
        if self.slope == 0.0 {
            return Ok(self.intercept);
        }
        let pop = self
            .population_path
            .get(&year)
            .ok_or_else(|| PolicyError::Fleet(format!("no population for {year}")))?;
        Ok(self.intercept + self.slope * pop)
    }

    pub fn annual_sales(&self, year: i32) -> Result<f64, PolicyError> {
        Ok(self.turnover_fraction * self.vehicles(year)?)
    }
}

/// Least-squares line of vehicles on population. Turnover is the mean of
/// `sales / vehicles` when every history point carries sales, else the
/// default.
pub fn project_fleet(
    history: &[FleetHistoryPoint],
    future_population: BTreeMap<i32, f64>,
) -> Result<FleetProjection, PolicyError> {
    if history.len() < 2 {
        return Err(PolicyError::Fleet("need at least two history points".into()));
    }
    let n = history.len() as f64;
    let mx = history.iter().map(|h| h.population).sum::<f64>() / n;
    let my = history.iter().map(|h| h.vehicles).sum::<f64>() / n;
    let sxx: f64 = history.iter().map(|h| (h.population - mx).powi(2)).sum();
    let sxy: f64 = history
        .iter()
        .map(|h| (h.population - mx) * (h.vehicles - my))
        .sum();
    if !(sxx > 0.0) {
        return Err(PolicyError::Fleet(
            "singular fit: history populations are all equal".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let turnover_fraction = if history.iter().all(|h| h.sales.is_some()) {
        history
            .iter()
            .map(|h| h.sales.unwrap_or_default() / h.vehicles)
            .sum::<f64>()
            / n
    } else {
        DEFAULT_TURNOVER
    };
    if !(turnover_fraction > 0.0 && turnover_fraction < 1.0) {
        return Err(PolicyError::Fleet(format!(
            "turnover fraction {turnover_fraction} outside (0, 1)"
        )));
    }
    let projection = FleetProjection {
        slope,
        intercept,
        population_path: future_population,
        turnover_fraction,
    };
    for &year in projection.population_path.keys() {
        let v = projection.vehicles(year)?;
        if !(v > 0.0) {
            return Err(PolicyError::Fleet(format!("projected fleet {v} <= 0 in {year}")));
        }
    }
    Ok(projection)
}

/// County totals and exogenous values of one panel year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountyYear {
    pub state: MarketState,
    pub exog: ExogenousValues,
}

/// Aggregates the zips of `year`: counts are summed, the EV price is
/// income-weighted, income, oil price and rebate share are averaged.
pub fn aggregate_year(panel: &Panel, year: i32) -> Result<CountyYear, PolicyError> {
    let rows: Vec<_> = panel.year_records(year).collect();
    if rows.is_empty() {
        return Err(PolicyError::Setup(format!("panel has no records for {year}")));
    }
    let n = rows.len() as f64;
    let sum = |f: fn(&crate::panel::PanelRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>();
    let income_total = sum(|r| r.median_income);
    Ok(CountyYear {
        state: MarketState {
            year,
            sales: sum(|r| r.ev_sales),
            ev_stock: sum(|r| r.ev_stock),
            station_stock: sum(|r| r.station_stock),
        },
        exog: ExogenousValues {
            oil_price: sum(|r| r.oil_price) / n,
            white_pop: sum(|r| r.white_pop),
            asian_pop: sum(|r| r.asian_pop),
            avg_ev_price: sum(|r| r.avg_ev_price * r.median_income) / income_total,
            median_income: income_total / n,
            parking_lots: sum(|r| r.parking_lots),
            rebate_pct: sum(|r| r.rebate_pct) / n,
            saturation: SaturationInput::FromState,
        },
    })
}

/// Everything a forecast needs besides the estimates and the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSetup {
    pub seed: CountyYear,
    /// County state of the year before the seed, used for calibration.
    pub prev: MarketState,
    pub end_year: i32,
    pub delta: f64,
    pub saturation_bounds: SaturationBounds,
    pub charger_cost: ChargerCostPath,
    /// Oil price per year; missing years hold the seed value.
    pub oil_path: BTreeMap<i32, f64>,
    pub fleet: FleetProjection,
}

impl ForecastSetup {
    /// Seeds from `seed_year` (default: the final panel year).
    pub fn from_panel(
        panel: &Panel,
        seed_year: Option<i32>,
        end_year: i32,
        delta: f64,
        fleet: FleetProjection,
    ) -> Result<Self, PolicyError> {
        let seed_year = match seed_year {
            Some(y) => y,
            None => *panel
                .years()
                .last()
                .ok_or_else(|| PolicyError::Setup("panel is empty".into()))?,
        };
        if end_year < seed_year {
            return Err(PolicyError::Setup(format!(
                "end year {end_year} precedes seed year {seed_year}"
            )));
        }
        let seed = aggregate_year(panel, seed_year)?;
        let prev = aggregate_year(panel, seed_year - 1)
            .map_err(|_| {
                PolicyError::Setup(format!(
                    "seed year {seed_year} needs the preceding year in the panel"
                ))
            })?
            .state;
        let saturation_bounds = panel
            .saturation_bounds()
            .ok_or_else(|| PolicyError::Setup("panel has no saturation bounds".into()))?;
        Ok(Self {
            seed,
            prev,
            end_year,
            delta,
            saturation_bounds,
            charger_cost: ChargerCostPath::default(),
            oil_path: BTreeMap::new(),
            fleet,
        })
    }

    pub fn seed_year(&self) -> i32 {
        self.seed.state.year
    }

    /// Baseline exogenous values of a forecast year.
    pub fn baseline_exog(&self, year: i32) -> ExogenousValues {
        let seed_year = self.seed_year();
        ExogenousValues {
            oil_price: self.oil_path.get(&year).copied().unwrap_or(self.seed.exog.oil_price),
            rebate_pct: self
                .charger_cost
                .rebate_pct(self.seed.exog.rebate_pct, seed_year, year),
            saturation: SaturationInput::FromState,
            ..self.seed.exog
        }
    }

    /// Coupled model with intercepts recalibrated to the seed year.
    pub fn calibrated_model(
        &self,
        demand: &EstimationResult,
        supply: &EstimationResult,
    ) -> Result<CoupledModel, PolicyError> {
        let mut model = CoupledModel::new(demand, supply)?.with_saturation_bounds(self.saturation_bounds);
        model.calibrate_intercepts(&self.prev, &self.seed.state, &self.seed.exog)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scenario: String,
    pub window: [i32; 2],
    pub delta: f64,
    /// Seed state first, then one state per forecast year.
    pub states: Vec<MarketState>,
    pub ev_share: Vec<f64>,
    /// Years whose share exceeds 1; reported, not clamped.
    pub share_above_one: Vec<i32>,
    pub rebate_clamped_years: Vec<i32>,
}

impl Trajectory {
    pub fn years(&self) -> Vec<i32> {
        self.states.iter().map(|s| s.year).collect()
    }

    pub fn state(&self, year: i32) -> Option<&MarketState> {
        self.states.iter().find(|s| s.year == year)
    }

    pub fn share(&self, year: i32) -> Option<f64> {
        self.states
            .iter()
            .position(|s| s.year == year)
            .map(|i| self.ev_share[i])
    }

    /// `(s_end - s_{end+1}) / s_end` around the window end, when both years
    /// are on the path.
    pub fn drop_metric(&self) -> Option<f64> {
        let end = self.state(self.window[1])?.sales;
        let after = self.state(self.window[1] + 1)?.sales;
        Some((end - after) / end)
    }

    /// CSV with columns `year,sales,ev_stock,station_stock,ev_share`.
    pub fn to_csv(&self, digits: Option<usize>) -> String {
        let mut out = String::from("year,sales,ev_stock,station_stock,ev_share\n");
        for (s, share) in self.states.iter().zip(&self.ev_share) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.year,
                fmt_sig(s.sales, digits),
                fmt_sig(s.ev_stock, digits),
                fmt_sig(s.station_stock, digits),
                fmt_sig(*share, digits)
            ));
        }
        out
    }
}

/// Runs one scenario from the calibrated seed state to `setup.end_year`.
pub fn forecast_scenario(
    scenario: &Scenario,
    setup: &ForecastSetup,
    demand: &EstimationResult,
    supply: &EstimationResult,
) -> Result<Trajectory, PolicyError> {
    scenario.validate()?;
    let model = setup.calibrated_model(demand, supply)?;
    run_forecast(scenario, setup, &model)
}

/// As [`forecast_scenario`] with an already calibrated model.
pub fn run_forecast(
    scenario: &Scenario,
    setup: &ForecastSetup,
    model: &CoupledModel,
) -> Result<Trajectory, PolicyError> {
    let seed_year = setup.seed_year();
    let years = (setup.end_year - seed_year) as usize;
    let mut exog = Vec::with_capacity(years);
    let mut rebate_clamped_years = Vec::new();
    for year in seed_year + 1..=setup.end_year {
        let adjusted = apply_scenario(scenario, year, &setup.baseline_exog(year))?;
        if adjusted.rebate_clamped {
            rebate_clamped_years.push(year);
        }
        exog.push(adjusted.values);
    }
    let states = simulate_horizon(&setup.seed.state, years, model, &exog, setup.delta)?;
    let ev_share = states
        .iter()
        .map(|s| Ok(s.ev_stock / setup.fleet.vehicles(s.year)?))
        .collect::<Result<Vec<f64>, PolicyError>>()?;
    let share_above_one = states
        .iter()
        .zip(&ev_share)
        .filter(|(_, &v)| v > 1.0)
        .map(|(s, _)| s.year)
        .collect();
    Ok(Trajectory {
        scenario: scenario.name.clone(),
        window: scenario.window,
        delta: setup.delta,
        states,
        ev_share,
        share_above_one,
        rebate_clamped_years,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSeries {
    pub name: String,
    pub window: [i32; 2],
    pub sales: Vec<f64>,
    pub ev_stock: Vec<f64>,
    pub station_stock: Vec<f64>,
    pub ev_share: Vec<f64>,
    pub drop_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub years: Vec<i32>,
    pub scenarios: Vec<ScenarioSeries>,
}

impl ComparisonReport {
    pub fn scenario(&self, name: &str) -> Option<&ScenarioSeries> {
        self.scenarios.iter().find(|s| s.name == name)
    }

    /// Wide table: one row per year, sales and share columns per scenario.
    pub fn to_csv(&self, digits: Option<usize>) -> String {
        let mut header = vec!["year".to_string()];
        for s in &self.scenarios {
            for col in ["sales", "ev_stock", "station_stock", "ev_share"] {
                header.push(format!("{}_{col}", s.name));
            }
        }
        let mut out = header.join(",");
        out.push('\n');
        for (i, year) in self.years.iter().enumerate() {
            let mut row = vec![year.to_string()];
            for s in &self.scenarios {
                for v in [s.sales[i], s.ev_stock[i], s.station_stock[i], s.ev_share[i]] {
                    row.push(fmt_sig(v, digits));
                }
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// `scenario,window_end,drop_metric`; empty metric when the window end
    /// is outside the horizon.
    pub fn drops_csv(&self, digits: Option<usize>) -> String {
        let mut out = String::from("scenario,window_end,drop_metric\n");
        for s in &self.scenarios {
            out.push_str(&format!(
                "{},{},{}\n",
                s.name,
                s.window[1],
                s.drop_metric.map(|d| fmt_sig(d, digits)).unwrap_or_default()
            ));
        }
        out
    }
}

/// Lines trajectories up by year. All must cover the same years.
pub fn compare_scenarios(trajectories: &[Trajectory]) -> Result<ComparisonReport, PolicyError> {
    let first = trajectories
        .first()
        .ok_or_else(|| PolicyError::Alignment("no trajectories".into()))?;
    let years = first.years();
    for t in &trajectories[1..] {
        if t.years() != years {
            return Err(PolicyError::Alignment(format!(
                "{} covers {:?}..{:?}, {} covers {:?}..{:?}",
                first.scenario,
                years.first(),
                years.last(),
                t.scenario,
                t.years().first(),
                t.years().last()
            )));
        }
    }
    let mut names = std::collections::HashSet::new();
    for t in trajectories {
        if !names.insert(t.scenario.as_str()) {
            return Err(PolicyError::Alignment(format!(
                "scenario name {} appears twice",
                t.scenario
            )));
        }
    }
    Ok(ComparisonReport {
        years,
        scenarios: trajectories
            .iter()
            .map(|t| ScenarioSeries {
                name: t.scenario.clone(),
                window: t.window,
                sales: t.states.iter().map(|s| s.sales).collect(),
                ev_stock: t.states.iter().map(|s| s.ev_stock).collect(),
                station_stock: t.states.iter().map(|s| s.station_stock).collect(),
                ev_share: t.ev_share.clone(),
                drop_metric: t.drop_metric(),
            })
            .collect(),
    })
}

/// Demand and supply estimates as written by `estimate`; other keys are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatePair {
    pub demand: EstimationResult,
    pub supply: EstimationResult,
}

impl EstimatePair {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>, PolicyError> {
    let file = std::fs::File::open(path).map_err(|source| PolicyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn series_error(path: &Path, msg: impl std::fmt::Display) -> PolicyError {
    PolicyError::Setup(format!("{}: {msg}", path.display()))
}

/// Reads a `year,<column>` CSV into a year-keyed map.
pub fn load_year_series(path: impl AsRef<Path>, column: &str) -> Result<BTreeMap<i32, f64>, PolicyError> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(|e| series_error(path, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| series_error(path, format!("missing column `{name}`")))
    };
    let (yi, vi) = (find("year")?, find(column)?);
    let mut out = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| series_error(path, e))?;
        let line = i + 2;
        let year: i32 = row[yi]
            .parse()
            .map_err(|_| series_error(path, format!("line {line}: bad year `{}`", &row[yi])))?;
        let value: f64 = row[vi]
            .parse()
            .map_err(|_| series_error(path, format!("line {line}: bad {column} `{}`", &row[vi])))?;
        if !(value > 0.0) || !value.is_finite() {
            return Err(series_error(path, format!("line {line}: {column} must be > 0")));
        }
        if out.insert(year, value).is_some() {
            return Err(series_error(path, format!("line {line}: duplicate year {year}")));
        }
    }
    Ok(out)
}

/// Reads `year,population[,vehicles[,sales]]`. Rows with vehicles form the
/// regression history; every row's population joins the projection path.
pub fn load_population(path: impl AsRef<Path>) -> Result<FleetProjection, PolicyError> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(|e| series_error(path, e))?.clone();
    let pos = |name: &str| headers.iter().position(|h| h == name);
    let yi = pos("year").ok_or_else(|| series_error(path, "missing column `year`"))?;
    let pi = pos("population").ok_or_else(|| series_error(path, "missing column `population`"))?;
    let (vi, si) = (pos("vehicles"), pos("sales"));
    let mut history = Vec::new();
    let mut population = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| series_error(path, e))?;
        let line = i + 2;
        let num = |j: usize| -> Result<Option<f64>, PolicyError> {
            let cell = row.get(j).unwrap_or("");
            if cell.is_empty() {
                return Ok(None);
            }
            cell.parse()
                .map(Some)
                .map_err(|_| series_error(path, format!("line {line}: bad number `{cell}`")))
        };
        let year: i32 = row[yi]
            .parse()
            .map_err(|_| series_error(path, format!("line {line}: bad year `{}`", &row[yi])))?;
        let pop = num(pi)?.ok_or_else(|| series_error(path, format!("line {line}: population is empty")))?;
        population.insert(year, pop);
        if let Some(vehicles) = vi.map(num).transpose()?.flatten() {
            history.push(FleetHistoryPoint {
                population: pop,
                vehicles,
                sales: si.map(num).transpose()?.flatten(),
            });
        }
    }
    project_fleet(&history, population)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::tests::{exog, result_with};
    use crate::dynamics::required_columns;
    use crate::modelspec::BurdenForm;
    use proptest::prelude::*;

    fn paper_results() -> (EstimationResult, EstimationResult) {
        let (dn, sn) = required_columns(BurdenForm::Linear);
        (
            result_with(&dn, &[0.3583, 0.8546, 0.1260, 0.2592, -3.2022, 0.0]),
            result_with(&sn, &[0.4992, 0.0099, 3.6213, 1.771, 0.0]),
        )
    }

    fn setup() -> ForecastSetup {
        let mut seed_exog = exog();
        seed_exog.saturation = SaturationInput::FromState;
        seed_exog.median_income = 32_000.0;
        seed_exog.rebate_pct = 0.48;
        ForecastSetup {
            seed: CountyYear {
                state: MarketState { year: 2023, sales: 110_000.0, ev_stock: 255_500.0, station_stock: 30_000.0 },
                exog: seed_exog,
            },
            prev: MarketState { year: 2022, sales: 60_000.0, ev_stock: 150_000.0, station_stock: 25_500.0 },
            end_year: 2045,
            delta: 0.97,
            saturation_bounds: SaturationBounds { min: 1.0, max: 6.0, epsilon: 1e-6 },
            charger_cost: ChargerCostPath::default(),
            oil_path: BTreeMap::new(),
            fleet: FleetProjection::constant(6.22e6).unwrap(),
        }
    }

    #[test]
    fn identity_scenario_leaves_values_unchanged() {
        let s = Scenario::new("id", 1.0, 1.0, [2024, 2035]).unwrap();
        for year in [2020, 2024, 2030, 2035, 2040] {
            let out = apply_scenario(&s, year, &exog()).unwrap();
            assert_eq!(out.values, exog());
        }
    }

    #[test]
    fn demand_multiplier_lowers_price_by_increment() {
        let s = Scenario::new("d", 1.6, 1.0, [2024, 2035]).unwrap();
        let base = exog();
        let out = apply_scenario(&s, 2030, &base).unwrap().values;
        assert!((base.avg_ev_price - out.avg_ev_price - 4_500.0).abs() < 1e-9);
        assert!((base.burden() - out.burden() - 4_500.0 / base.median_income).abs() < 1e-12);
    }

    #[test]
    fn reversion_after_window() {
        let s = Scenario::new("d", 3.0, 5.0, [2024, 2035]).unwrap();
        assert_eq!(apply_scenario(&s, 2036, &exog()).unwrap().values, exog());
        assert_eq!(apply_scenario(&s, 2023, &exog()).unwrap().values, exog());
    }

    #[test]
    fn supply_multiplier_clamps_and_flags() {
        let s = Scenario::new("s", 1.0, 3.0, [2024, 2035]).unwrap();
        let out = apply_scenario(&s, 2025, &exog()).unwrap();
        assert_eq!(out.values.rebate_pct, 1.0);
        assert!(out.rebate_clamped);
    }

    #[test]
    fn infeasible_price_is_an_error() {
        let s = Scenario::new("huge", 10.0, 1.0, [2024, 2035]).unwrap();
        assert!(matches!(
            apply_scenario(&s, 2025, &exog()),
            Err(PolicyError::Infeasible { year: 2025, .. })
        ));
    }

    #[test]
    fn scenario_validation_and_json() {
        assert!(Scenario::new("x", -0.1, 1.0, [2024, 2035]).is_err());
        assert!(Scenario::new("x", 1.0, 1.0, [2036, 2035]).is_err());
        let s = Scenario::from_json_str(
            r#"{"name":"combined","demand_rebate_multiplier":1.6,"supply_rebate_multiplier":1.66,"window":[2024,2035]}"#,
        )
        .unwrap();
        assert_eq!(s.baseline_purchase_rebate, 7_500.0);
        assert!(Scenario::from_json_str(r#"{"name":"x"}"#).is_err());
    }

    #[test]
    fn charger_cost_path() {
        let p = ChargerCostPath::default();
        assert_eq!(p.cost(2018), 7_500.0);
        assert_eq!(p.cost(2020), 6_000.0);
        assert_eq!(p.cost(2019), 6_750.0);
        assert_eq!(p.cost(2023), 3_750.0);
        assert_eq!(p.cost(2045), 3_000.0);
        assert_eq!(p.rebate_pct(0.48, 2023, 2030), 0.6);
        assert_eq!(p.rebate_pct(0.9, 2023, 2030), 1.0);
    }

    #[test]
    fn fleet_projection_examples() {
        let history: Vec<FleetHistoryPoint> = [9.0e6, 9.5e6, 10.0e6]
            .iter()
            .map(|&p| FleetHistoryPoint { population: p, vehicles: 0.6 * p, sales: None })
            .collect();
        let future: BTreeMap<i32, f64> = (2023..=2045).map(|y| (y, 1.0e7 + 1.0e4 * f64::from(y - 2023))).collect();
        let fp = project_fleet(&history, future).unwrap();
        assert!((fp.slope - 0.6).abs() < 1e-12);
        assert!(fp.intercept.abs() < 1e-3);
        assert_eq!(fp.turnover_fraction, DEFAULT_TURNOVER);
        let v: Vec<f64> = (2023..=2045).map(|y| fp.vehicles(y).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        assert!(fp.vehicles(2050).is_err());

        let flat = [
            FleetHistoryPoint { population: 1.0, vehicles: 1.0, sales: None },
            FleetHistoryPoint { population: 1.0, vehicles: 2.0, sales: None },
        ];
        assert!(project_fleet(&flat, BTreeMap::new()).is_err());
        assert!(project_fleet(&flat[..1], BTreeMap::new()).is_err());

        let with_sales = [
            FleetHistoryPoint { population: 1.0e6, vehicles: 5.0e5, sales: Some(5.0e4) },
            FleetHistoryPoint { population: 2.0e6, vehicles: 1.0e6, sales: Some(5.0e4) },
        ];
        let fp = project_fleet(&with_sales, BTreeMap::new()).unwrap();
        assert!((fp.turnover_fraction - 0.075).abs() < 1e-12);
    }

    #[test]
    fn default_turnover_matches_fleet_and_sales() {
        let fp = FleetProjection::constant(6.22e6).unwrap();
        assert!((fp.annual_sales(2045).unwrap() - 437_000.0).abs() < 1e-6);
    }

    #[test]
    fn identity_scenario_is_bit_identical_to_baseline() {
        let (d, s) = paper_results();
        let setup = setup();
        let base = forecast_scenario(&Scenario::baseline([2024, 2035]), &setup, &d, &s).unwrap();
        let id = forecast_scenario(&Scenario::new("identity", 1.0, 1.0, [2024, 2035]).unwrap(), &setup, &d, &s).unwrap();
        assert_eq!(base.states, id.states);
        assert_eq!(base.ev_share, id.ev_share);
        assert_eq!(base.states.len(), 23);
        assert_eq!(base.states[0], setup.seed.state);
    }

    #[test]
    fn stations_persist_at_reversion() {
        let (d, s) = paper_results();
        let t = forecast_scenario(&Scenario::new("supply", 1.0, 2.0, [2024, 2035]).unwrap(), &setup(), &d, &s).unwrap();
        assert!(t.state(2036).unwrap().station_stock >= t.state(2035).unwrap().station_stock);
        assert!(!t.rebate_clamped_years.is_empty());
    }

    #[test]
    fn compare_rejects_misaligned() {
        let (d, s) = paper_results();
        let a = forecast_scenario(&Scenario::baseline([2024, 2035]), &setup(), &d, &s).unwrap();
        let mut short = setup();
        short.end_year = 2040;
        let b = forecast_scenario(&Scenario::new("other", 1.2, 1.0, [2024, 2035]).unwrap(), &short, &d, &s).unwrap();
        assert!(matches!(compare_scenarios(&[a.clone(), b]), Err(PolicyError::Alignment(_))));
        assert!(matches!(compare_scenarios(&[a.clone(), a.clone()]), Err(PolicyError::Alignment(_))));
        let mut renamed = a.clone();
        renamed.scenario = "copy".into();
        let report = compare_scenarios(&[a, renamed]).unwrap();
        assert_eq!(report.scenarios[0].sales, report.scenarios[1].sales);
        assert_eq!(report.scenarios[0].drop_metric, report.scenarios[1].drop_metric);
        assert!(report.to_csv(Some(6)).starts_with("year,baseline_sales,"));
    }

    #[test]
    fn trajectory_csv_layout() {
        let (d, s) = paper_results();
        let t = forecast_scenario(&Scenario::baseline([2024, 2035]), &setup(), &d, &s).unwrap();
        let csv = t.to_csv(Some(6));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "year,sales,ev_stock,station_stock,ev_share");
        assert_eq!(lines.len(), 24);
        assert!(lines[1].starts_with("2023,110000,255500,30000,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn share_monotone_in_multipliers(
            d1 in 0.0f64..2.0, s1 in 0.0f64..2.0, dd in 0.0f64..0.5, ds in 0.0f64..0.5,
        ) {
            let (d, s) = paper_results();
            let setup = setup();
            let lo = forecast_scenario(&Scenario::new("lo", d1, s1, [2024, 2035]).unwrap(), &setup, &d, &s).unwrap();
            let hi = forecast_scenario(&Scenario::new("hi", d1 + dd, s1 + ds, [2024, 2035]).unwrap(), &setup, &d, &s).unwrap();
            for (a, b) in lo.ev_share.iter().zip(&hi.ev_share) {
                prop_assert!(*a <= *b * (1.0 + 1e-12));
            }
        }

        #[test]
        fn reversion_equality(dm in 0.0f64..3.0, sm in 0.0f64..3.0, year in 2036i32..2100) {
            let s = Scenario::new("x", dm, sm, [2024, 2035]).unwrap();
            prop_assert_eq!(apply_scenario(&s, year, &exog()).unwrap().values, exog());
        }
    }
}
