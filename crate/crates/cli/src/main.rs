//! `evnet`: estimate, simulate and forecast the two-sided EV market.

mod manifest;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evnet_core::dynamics::ExogenousValues;
use evnet_core::format::{regression_table, round_json, round_sig, DEFAULT_SIG_DIGITS};
use evnet_core::{
    compare_scenarios, describe, estimate_demand, estimate_supply, generate_panel, load_population,
    load_year_series, read_panel, run_forecast, simulate_horizon, write_records_csv, BurdenForm,
    ColumnMapping, CovarianceKind, EstimatePair, EstimationResult, Estimator, FitOptions,
    FleetProjection, ForecastSetup, LoadMode, LoadedPanel, MarketState, ModelOptions, Scenario,
    SaturationBounds, SynthConfig, Trajectory, DEFAULT_DELTA, SATURATION_EPSILON,
};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use manifest::RunManifest;

/// Fleet size used when no population file is given.
const DEFAULT_FLEET: f64 = 6_220_000.0;
const DEFAULT_WINDOW: [i32; 2] = [2024, 2035];

#[derive(Parser)]
#[command(name = "evnet", version, about = "Two-sided EV market estimation and policy forecasts")]
struct Cli {
    /// Directory for output artifacts and the run manifest. Without it,
    /// results go to stdout.
    #[arg(long, global = true, env = "EVNET_OUT_DIR")]
    out: Option<PathBuf>,

    /// Write numbers at full precision instead of 6 significant digits.
    #[arg(long, global = true)]
    full_precision: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the demand and supply equations to a panel.
    Estimate(EstimateArgs),
    /// Simulate one trajectory from estimated coefficients.
    Simulate(SimulateArgs),
    /// Run incentive scenarios and compare them.
    Forecast(ForecastArgs),
    /// Generate a synthetic panel with known coefficients.
    Synth(SynthArgs),
    /// Print the column binding of both equations.
    Describe(DescribeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Ols,
    Tsls,
    Gmm,
}

impl From<Method> for Estimator {
    fn from(m: Method) -> Self {
        match m {
            Method::Ols => Estimator::Ols,
            Method::Tsls => Estimator::Tsls,
            Method::Gmm => Estimator::Gmm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Burden {
    Linear,
    Log,
}

#[derive(Clone, Copy, ValueEnum)]
enum Covariance {
    Hc0,
    Hc1,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum OutputFormat {
    Json,
    Text,
}

#[derive(Args)]
struct PanelArgs {
    /// Panel CSV; `-` or absent reads stdin.
    #[arg(long)]
    panel: Option<PathBuf>,
    /// JSON object remapping canonical field names to CSV headers.
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Drop invalid rows instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "gmm")]
    method: Method,
    #[arg(long, value_enum, default_value = "linear")]
    burden: Burden,
    #[arg(long, value_enum, default_value = "hc0")]
    covariance: Covariance,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    gmm_steps: u8,
}

impl ModelArgs {
    fn options(&self) -> ModelOptions {
        ModelOptions {
            burden_form: match self.burden {
                Burden::Linear => BurdenForm::Linear,
                Burden::Log => BurdenForm::Log,
            },
            fit: FitOptions {
                covariance: match self.covariance {
                    Covariance::Hc0 => CovarianceKind::HC0,
                    Covariance::Hc1 => CovarianceKind::HC1,
                },
                ..FitOptions::default()
            },
            gmm_steps: self.gmm_steps,
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Fleet survival fraction, recorded in the output header.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Stdout format.
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
}

#[derive(Args)]
struct HorizonArgs {
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Panel year that seeds calibration (default: final panel year).
    #[arg(long)]
    seed_year: Option<i32>,
    #[arg(long, default_value_t = 2045)]
    end_year: i32,
    /// CSV `year,oil_price`; years not listed hold the seed value.
    #[arg(long)]
    oil_path: Option<PathBuf>,
    /// CSV `year,population[,vehicles[,sales]]` for the fleet projection.
    #[arg(long)]
    population: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Estimates JSON with `demand` and `supply` results.
    #[arg(long)]
    coefficients: PathBuf,
    /// Panel used to calibrate intercepts to the seed year.
    #[arg(long, conflicts_with = "state")]
    panel: Option<PathBuf>,
    /// JSON `{state, exog, saturation_bounds?}`; intercepts are used as given.
    #[arg(long)]
    state: Option<PathBuf>,
    #[command(flatten)]
    horizon: HorizonArgs,
}

#[derive(Args)]
struct ForecastArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Estimates JSON; when absent the panel is estimated first.
    #[arg(long)]
    coefficients: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Scenario JSON, repeatable. Defaults to the baseline only.
    #[arg(long)]
    scenario: Vec<PathBuf>,
    #[command(flatten)]
    horizon: HorizonArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// SynthConfig JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_zips: Option<usize>,
    #[arg(long)]
    n_years: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
}

#[derive(Args)]
struct DescribeArgs {
    #[arg(long, value_enum, default_value = "linear")]
    burden: Burden,
}

/// Error surfaced as `{code, message, context}` on stderr.
#[derive(Debug)]
struct CliError {
    code: &'static str,
    message: String,
    context: Value,
}

impl CliError {
    fn new(code: &'static str, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
            context: Value::Null,
        }
    }

    fn with(mut self, context: Value) -> Self {
        self.context = context;
        self
    }
}

macro_rules! impl_from {
    ($($ty:ty => $code:literal),* $(,)?) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($code, &e)
            }
        }
    )*};
}

impl_from! {
    evnet_core::PanelError => "panel",
    evnet_core::ModelError => "estimation",
    evnet_core::DynamicsError => "dynamics",
    evnet_core::SynthError => "synth",
    serde_json::Error => "json",
}

impl From<evnet_core::PolicyError> for CliError {
    fn from(e: evnet_core::PolicyError) -> Self {
        let code = match e {
            evnet_core::PolicyError::Dynamics(_) => "dynamics",
            evnet_core::PolicyError::Io { .. } => "io",
            _ => "policy",
        };
        CliError::new(code, &e)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", e).with(json!({ "path": path.display().to_string() }))
}

/// Output sink: a directory of artifacts or stdout.
struct Output {
    dir: Option<PathBuf>,
    digits: Option<usize>,
    written: BTreeMap<String, String>,
}

impl Output {
    fn new(dir: Option<PathBuf>, full_precision: bool) -> Result<Self, CliError> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| io_error(d, e))?;
        }
        Ok(Self {
            dir,
            digits: (!full_precision).then_some(DEFAULT_SIG_DIGITS),
            written: BTreeMap::new(),
        })
    }

    fn json(&self, mut value: Value) -> String {
        if let Some(d) = self.digits {
            round_json(&mut value, d);
        }
        let mut s = serde_json::to_string_pretty(&value).expect("JSON values serialize");
        s.push('\n');
        s
    }

    /// Writes `name` into the output directory; no-op in stdout mode.
    fn file(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        if let Some(dir) = &self.dir {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|e| io_error(&path, e))?;
            self.written.insert(name.to_string(), manifest::sha256_hex(contents.as_bytes()));
        }
        Ok(())
    }

    fn stdout(&self, contents: &str) -> Result<(), CliError> {
        if self.dir.is_none() {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::new("io", e))?;
        }
        Ok(())
    }

    fn finish(self, mut manifest: RunManifest) -> Result<(), CliError> {
        if let Some(dir) = &self.dir {
            manifest.outputs = self.written;
            let path = dir.join("manifest.json");
            let text = serde_json::to_string_pretty(&manifest)? + "\n";
            std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        }
        Ok(())
    }
}

fn read_input(path: Option<&Path>, manifest: &mut RunManifest) -> Result<Vec<u8>, CliError> {
    match path {
        Some(p) if p != Path::new("-") => {
            let bytes = std::fs::read(p).map_err(|e| io_error(p, e))?;
            manifest.add_input(&p.display().to_string(), &bytes);
            Ok(bytes)
        }
        _ => {
            let mut bytes = Vec::new();
            std::io::stdin()
                .read_to_end(&mut bytes)
                .map_err(|e| CliError::new("io", e))?;
            manifest.add_input("<stdin>", &bytes);
            Ok(bytes)
        }
    }
}

fn hash_file(path: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    manifest.add_input(&path.display().to_string(), &bytes);
    Ok(())
}

fn load(args: &PanelArgs, manifest: &mut RunManifest) -> Result<LoadedPanel, CliError> {
    let mapping = match &args.mapping {
        Some(p) => {
            hash_file(p, manifest)?;
            ColumnMapping::from_json_file(p)?
        }
        None => ColumnMapping::default(),
    };
    let bytes = read_input(args.panel.as_deref(), manifest)?;
    let mode = if args.lenient { LoadMode::Lenient } else { LoadMode::Strict };
    Ok(read_panel(bytes.as_slice(), &mapping, mode)?)
}

fn check_delta(delta: f64) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(CliError::new("usage", format!("--delta must lie in [0, 1], got {delta}")));
    }
    Ok(())
}

fn run_estimate(args: &EstimateArgs, out: &mut Output, manifest: &mut RunManifest) -> Result<(), CliError> {
    check_delta(args.delta)?;
    let loaded = load(&args.panel, manifest)?;
    let opts = args.model.options();
    let method: Estimator = args.model.method.into();
    manifest.config = json!({
        "method": method.label(),
        "burden_form": opts.burden_form,
        "covariance": opts.fit.covariance,
        "gmm_steps": opts.gmm_steps,
        "delta": args.delta,
        "weak_instrument_f": opts.fit.weak_instrument_f,
        "lenient": args.panel.lenient,
    });
    let demand = estimate_demand(&loaded.panel, method, &opts)?;
    let supply = estimate_supply(&loaded.panel, method, &opts)?;
    let demand_ols = match method {
        Estimator::Ols => None,
        _ => Some(estimate_demand(&loaded.panel, Estimator::Ols, &opts)?),
    };

    let mut body = json!({
        "method": method.label(),
        "delta": args.delta,
        "log_guard": describe(&opts).log_guard,
        "burden_form": opts.burden_form,
        "demand": demand,
        "supply": supply,
    });
    if let Some(ols) = &demand_ols {
        body["demand_ols"] = serde_json::to_value(ols)?;
    }
    if !loaded.rejected.is_empty() {
        body["rejected_rows"] = serde_json::to_value(&loaded.rejected)?;
    }
    let json_text = out.json(body);
    let text = estimate_tables(method, &demand, demand_ols.as_ref(), &supply, args.delta);
    out.file("estimate.json", &json_text)?;
    out.file("estimate.txt", &text)?;
    out.stdout(if args.format == OutputFormat::Text { &text } else { &json_text })
}

fn estimate_tables(
    method: Estimator,
    demand: &EstimationResult,
    demand_ols: Option<&EstimationResult>,
    supply: &EstimationResult,
    delta: f64,
) -> String {
    let label = method.label();
    let mut demand_cols = vec![(label, demand)];
    if let Some(ols) = demand_ols {
        demand_cols.push(("OLS", ols));
    }
    format!(
        "delta = {delta}; counts enter as ln(1 + x)\n\n{}\n{}",
        regression_table("EV demand (response: ln(EV sales))", &demand_cols),
        regression_table("Charging supply (response: ln(Charging station))", &[(label, supply)]),
    )
}

fn fleet(horizon: &HorizonArgs, manifest: &mut RunManifest) -> Result<FleetProjection, CliError> {
    match &horizon.population {
        Some(p) => {
            hash_file(p, manifest)?;
            Ok(load_population(p)?)
        }
        None => Ok(FleetProjection::constant(DEFAULT_FLEET)?),
    }
}

fn oil_path(horizon: &HorizonArgs, manifest: &mut RunManifest) -> Result<BTreeMap<i32, f64>, CliError> {
    match &horizon.oil_path {
        Some(p) => {
            hash_file(p, manifest)?;
            Ok(load_year_series(p, "oil_price")?)
        }
        None => Ok(BTreeMap::new()),
    }
}

fn horizon_config(h: &HorizonArgs) -> Value {
    json!({
        "delta": h.delta,
        "seed_year": h.seed_year,
        "end_year": h.end_year,
        "oil_path": h.oil_path.as_ref().map(|p| p.display().to_string()),
        "population": h.population.as_ref().map(|p| p.display().to_string()),
        "default_fleet": h.population.is_none().then_some(DEFAULT_FLEET),
    })
}

fn setup_from_panel(
    loaded: &LoadedPanel,
    horizon: &HorizonArgs,
    manifest: &mut RunManifest,
) -> Result<ForecastSetup, CliError> {
    check_delta(horizon.delta)?;
    let fleet = fleet(horizon, manifest)?;
    let mut setup = ForecastSetup::from_panel(
        &loaded.panel,
        horizon.seed_year,
        horizon.end_year,
        horizon.delta,
        fleet,
    )?;
    setup.oil_path = oil_path(horizon, manifest)?;
    Ok(setup)
}

fn load_estimates(path: &Path, manifest: &mut RunManifest) -> Result<EstimatePair, CliError> {
    hash_file(path, manifest)?;
    Ok(EstimatePair::from_json_file(path)?)
}

#[derive(Deserialize)]
struct StateFile {
    state: MarketState,
    exog: ExogenousValues,
    saturation_bounds: Option<SaturationBounds>,
}

fn trajectory_json(t: &Trajectory) -> Value {
    json!({
        "scenario": t.scenario,
        "window": t.window,
        "delta": t.delta,
        "years": t.years(),
        "sales": t.states.iter().map(|s| s.sales).collect::<Vec<_>>(),
        "ev_stock": t.states.iter().map(|s| s.ev_stock).collect::<Vec<_>>(),
        "station_stock": t.states.iter().map(|s| s.station_stock).collect::<Vec<_>>(),
        "ev_share": t.ev_share,
        "share_above_one": t.share_above_one,
        "rebate_clamped_years": t.rebate_clamped_years,
        "drop_metric": t.drop_metric(),
    })
}

fn run_simulate(args: &SimulateArgs, out: &mut Output, manifest: &mut RunManifest) -> Result<(), CliError> {
    let estimates = load_estimates(&args.coefficients, manifest)?;
    manifest.config = horizon_config(&args.horizon);
    let baseline = Scenario::baseline(DEFAULT_WINDOW);
    let trajectory = match (&args.panel, &args.state) {
        (Some(panel), None) => {
            let panel_args = PanelArgs {
                panel: Some(panel.clone()),
                mapping: None,
                lenient: false,
            };
            let loaded = load(&panel_args, manifest)?;
            let setup = setup_from_panel(&loaded, &args.horizon, manifest)?;
            let model = setup.calibrated_model(&estimates.demand, &estimates.supply)?;
            run_forecast(&baseline, &setup, &model)?
        }
        (None, Some(state_path)) => {
            check_delta(args.horizon.delta)?;
            let bytes = read_input(Some(state_path), manifest)?;
            let file: StateFile = serde_json::from_slice(&bytes)?;
            let mut model = evnet_core::CoupledModel::new(&estimates.demand, &estimates.supply)?;
            if let Some(b) = file.saturation_bounds {
                model = model.with_saturation_bounds(b);
            }
            let oil = oil_path(&args.horizon, manifest)?;
            let fleet = fleet(&args.horizon, manifest)?;
            let start = file.state.year;
            if args.horizon.end_year < start {
                return Err(CliError::new("usage", "--end-year precedes the state's year"));
            }
            let exog: Vec<ExogenousValues> = (start + 1..=args.horizon.end_year)
                .map(|y| ExogenousValues {
                    oil_price: oil.get(&y).copied().unwrap_or(file.exog.oil_price),
                    ..file.exog
                })
                .collect();
            let states = simulate_horizon(&file.state, exog.len(), &model, &exog, args.horizon.delta)?;
            let ev_share = states
                .iter()
                .map(|s| Ok(s.ev_stock / fleet.vehicles(s.year)?))
                .collect::<Result<Vec<f64>, evnet_core::PolicyError>>()?;
            Trajectory {
                scenario: "simulation".into(),
                window: baseline.window,
                delta: args.horizon.delta,
                share_above_one: states
                    .iter()
                    .zip(&ev_share)
                    .filter(|(_, v)| **v > 1.0)
                    .map(|(s, _)| s.year)
                    .collect(),
                states,
                ev_share,
                rebate_clamped_years: vec![],
            }
        }
        _ => return Err(CliError::new("usage", "simulate needs exactly one of --panel or --state")),
    };
    let csv = trajectory.to_csv(out.digits);
    out.file("trajectory.csv", &csv)?;
    out.file("trajectory.json", &out.json(trajectory_json(&trajectory)))?;
    out.stdout(&csv)
}

fn run_forecast_cmd(args: &ForecastArgs, out: &mut Output, manifest: &mut RunManifest) -> Result<(), CliError> {
    let loaded = load(&args.panel, manifest)?;
    let opts = args.model.options();
    let (estimates, source) = match &args.coefficients {
        Some(p) => (load_estimates(p, manifest)?, p.display().to_string()),
        None => {
            let method: Estimator = args.model.method.into();
            let pair = EstimatePair {
                demand: estimate_demand(&loaded.panel, method, &opts)?,
                supply: estimate_supply(&loaded.panel, method, &opts)?,
            };
            (pair, format!("estimated ({})", method.label()))
        }
    };
    let mut scenarios = Vec::new();
    for p in &args.scenario {
        hash_file(p, manifest)?;
        scenarios.push(Scenario::from_json_file(p)?);
    }
    if scenarios.is_empty() {
        scenarios.push(Scenario::baseline(DEFAULT_WINDOW));
    }
    let setup = setup_from_panel(&loaded, &args.horizon, manifest)?;
    let mut config = horizon_config(&args.horizon);
    config["coefficients"] = json!(source);
    config["scenarios"] = serde_json::to_value(&scenarios)?;
    config["saturation_bounds"] = serde_json::to_value(setup.saturation_bounds)?;
    manifest.config = config;

    let model = setup.calibrated_model(&estimates.demand, &estimates.supply)?;
    let trajectories = scenarios
        .par_iter()
        .map(|s| run_forecast(s, &setup, &model))
        .collect::<Result<Vec<_>, _>>()?;
    let report = compare_scenarios(&trajectories)?;

    let wide = report.to_csv(out.digits);
    let drops = report.drops_csv(out.digits);
    let body = json!({
        "seed_year": setup.seed_year(),
        "delta": setup.delta,
        "report": report,
        "trajectories": trajectories.iter().map(trajectory_json).collect::<Vec<_>>(),
    });
    out.file("comparison.csv", &wide)?;
    out.file("drops.csv", &drops)?;
    out.file("comparison.json", &out.json(body))?;
    for t in &trajectories {
        out.file(&format!("trajectory_{}.csv", t.scenario), &t.to_csv(out.digits))?;
    }
    out.stdout(&format!("{wide}\n{drops}"))
}

fn run_synth(args: &SynthArgs, out: &mut Output, manifest: &mut RunManifest) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(p) => {
            let bytes = read_input(Some(p), manifest)?;
            serde_json::from_slice(&bytes)?
        }
        None => SynthConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.n_zips {
        config.n_zips = v;
    }
    if let Some(v) = args.n_years {
        config.n_years = v;
    }
    if let Some(v) = args.rho {
        config.endogeneity_rho = v;
    }
    if let Some(v) = args.noise_sd {
        config.noise_sd = v;
    }
    manifest.config = serde_json::to_value(&config)?;
    let synth = generate_panel(&config)?;
    let records: Vec<_> = synth
        .panel
        .records()
        .map(|r| {
            let mut r = r.clone();
            if let Some(d) = out.digits {
                for v in [
                    &mut r.ev_sales,
                    &mut r.ev_stock,
                    &mut r.station_stock,
                    &mut r.avg_ev_price,
                    &mut r.median_income,
                    &mut r.white_pop,
                    &mut r.asian_pop,
                    &mut r.oil_price,
                    &mut r.parking_lots,
                    &mut r.rebate_pct,
                ] {
                    *v = round_sig(*v, d);
                }
            }
            r
        })
        .collect();
    let mut csv = Vec::new();
    write_records_csv(&records, &mut csv)?;
    let csv = String::from_utf8(csv).expect("CSV output is UTF-8");
    out.file("panel.csv", &csv)?;
    out.file(
        "truth.json",
        &out.json(json!({ "demand": synth.true_demand, "supply": synth.true_supply, "config": config })),
    )?;
    out.stdout(&csv)
}

fn run_describe(args: &DescribeArgs, out: &mut Output, manifest: &mut RunManifest) -> Result<(), CliError> {
    let opts = ModelArgs {
        method: Method::Gmm,
        burden: args.burden,
        covariance: Covariance::Hc0,
        gmm_steps: 2,
    }
    .options();
    let description = describe(&opts);
    let mut body = serde_json::to_value(&description)?;
    body["defaults"] = json!({
        "delta": DEFAULT_DELTA,
        "saturation_epsilon": SATURATION_EPSILON,
        "weak_instrument_f": opts.fit.weak_instrument_f,
        "covariance": opts.fit.covariance,
        "significant_digits": DEFAULT_SIG_DIGITS,
    });
    manifest.config = json!({ "burden_form": opts.burden_form });
    let text = out.json(body);
    out.file("describe.json", &text)?;
    out.stdout(&text)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut out = Output::new(cli.out.clone(), cli.full_precision)?;
    let name = match &cli.command {
        Command::Estimate(_) => "estimate",
        Command::Simulate(_) => "simulate",
        Command::Forecast(_) => "forecast",
        Command::Synth(_) => "synth",
        Command::Describe(_) => "describe",
    };
    let mut manifest = RunManifest::new(name, cli.full_precision);
    match &cli.command {
        Command::Estimate(a) => run_estimate(a, &mut out, &mut manifest)?,
        Command::Simulate(a) => run_simulate(a, &mut out, &mut manifest)?,
        Command::Forecast(a) => run_forecast_cmd(a, &mut out, &mut manifest)?,
        Command::Synth(a) => run_synth(a, &mut out, &mut manifest)?,
        Command::Describe(a) => run_describe(a, &mut out, &mut manifest)?,
    }
    out.finish(manifest)
}

fn report(err: &CliError) {
    let body = json!({ "code": err.code, "message": err.message, "context": err.context });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let err = CliError::new("usage", e.render().to_string().trim_end())
                .with(json!({ "kind": e.kind().to_string() }));
            report(&err);
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(if e.code == "usage" { 2 } else { 1 })
        }
    }
}
