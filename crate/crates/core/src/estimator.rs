//! Linear estimators: OLS, two-stage least squares and linear GMM.
//!
//! All least-squares solves go through a Householder QR factorization of the
//! (projected or whitened) regressor matrix; normal equations are never
//! inverted explicitly. Standard errors are heteroskedasticity-robust
//! sandwich estimates (HC0 by default).

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Name of the intercept column added by [`DesignMatrix::new`].
pub const INTERCEPT: &str = "const";

/// Relative tolerance below which a QR pivot marks a dependent column.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("singular design: column(s) {columns:?} are constant or linearly dependent")]
    SingularDesign { columns: Vec<String> },
    #[error("invalid IV specification: {0}")]
    InvalidSpecification(String),
    #[error(
        "excluded instrument(s) {instruments:?} carry no information (first-stage F = {first_stage_f}); \
         weak first stage, model not identified"
    )]
    WeakIdentification {
        instruments: Vec<String>,
        first_stage_f: f64,
    },
    #[error("weight matrix is not invertible (condition estimate {condition:e})")]
    Conditioning { condition: f64 },
    #[error("GMM steps must be 1 or 2, got {0}")]
    InvalidSteps(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "TSLS")]
    Tsls,
    #[serde(rename = "GMM")]
    Gmm,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Ols => "OLS",
            Estimator::Tsls => "TSLS",
            Estimator::Gmm => "GMM",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ols" => Ok(Estimator::Ols),
            "tsls" | "2sls" | "iv" => Ok(Estimator::Tsls),
            "gmm" => Ok(Estimator::Gmm),
            other => Err(format!("unknown estimator `{other}` (expected ols, tsls or gmm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMatrixKind {
    /// One-step GMM: identity weight on instrument-whitened moments, i.e.
    /// `W = (Z'Z)^-1`.
    Identity,
    TwoStepRobust,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceKind {
    /// White sandwich without small-sample correction.
    #[default]
    HC0,
    /// HC0 scaled by `n / (n - k)`.
    HC1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub covariance: CovarianceKind,
    /// First-stage F below this attaches a weak-instrument warning.
    pub weak_instrument_f: f64,
    /// Largest acceptable condition estimate of the GMM moment covariance.
    pub max_condition: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            covariance: CovarianceKind::HC0,
            weak_instrument_f: 10.0,
            max_condition: 1e12,
        }
    }
}

/// Response, named regressors and (for IV methods) named instruments.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    response_name: String,
    response: DVector<f64>,
    regressors: DMatrix<f64>,
    regressor_names: Vec<String>,
    instruments: DMatrix<f64>,
    instrument_names: Vec<String>,
    include_intercept: bool,
}

impl DesignMatrix {
    /// Builds a design. With `include_intercept`, a column of ones named
    /// [`INTERCEPT`] is appended to the regressors and, when instruments are
    /// given, to the instruments.
    pub fn new(
        response_name: impl Into<String>,
        response: Vec<f64>,
        regressors: Vec<(String, Vec<f64>)>,
        instruments: Vec<(String, Vec<f64>)>,
        include_intercept: bool,
    ) -> Result<Self, EstimationError> {
        let n = response.len();
        let check = |name: &str, col: &[f64]| -> Result<(), EstimationError> {
            if col.len() != n {
                return Err(EstimationError::InvalidDesign(format!(
                    "column `{name}` has {} rows, response has {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(EstimationError::InvalidDesign(format!(
                    "column `{name}` has a non-finite entry at row {i}"
                )));
            }
            Ok(())
        };
        let response_name = response_name.into();
        check(&response_name, &response)?;
        for (name, col) in regressors.iter().chain(&instruments) {
            check(name, col)?;
        }
        let constant: Vec<String> = regressors
            .iter()
            .filter(|(_, col)| col.iter().all(|v| *v == col[0]))
            .map(|(name, _)| name.clone())
            .collect();
        if !constant.is_empty() {
            return Err(EstimationError::SingularDesign { columns: constant });
        }

        let assemble = |cols: &[(String, Vec<f64>)], with_const: bool| {
            let k = cols.len() + usize::from(with_const);
            let mut m = DMatrix::zeros(n, k);
            let mut names = Vec::with_capacity(k);
            for (j, (name, col)) in cols.iter().enumerate() {
                m.set_column(j, &DVector::from_column_slice(col));
                names.push(name.clone());
            }
            if with_const {
                m.set_column(k - 1, &DVector::from_element(n, 1.0));
                names.push(INTERCEPT.to_string());
            }
            (m, names)
        };
        let (x, regressor_names) = assemble(&regressors, include_intercept);
        let (z, instrument_names) =
            assemble(&instruments, include_intercept && !instruments.is_empty());
        for names in [&regressor_names, &instrument_names] {
            let mut sorted = names.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != names.len() {
                return Err(EstimationError::InvalidDesign(
                    "column names must be unique".into(),
                ));
            }
        }
        Ok(Self {
            response_name,
            response: DVector::from_vec(response),
            regressors: x,
            regressor_names,
            instruments: z,
            instrument_names,
            include_intercept,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.response.len()
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn regressors(&self) -> &DMatrix<f64> {
        &self.regressors
    }

    pub fn regressor_names(&self) -> &[String] {
        &self.regressor_names
    }

    pub fn instruments(&self) -> &DMatrix<f64> {
        &self.instruments
    }

    pub fn instrument_names(&self) -> &[String] {
        &self.instrument_names
    }

    pub fn include_intercept(&self) -> bool {
        self.include_intercept
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.regressor_names.iter().position(|n| n == name)?;
        Some(self.regressors.column(j).iter().copied().collect())
    }

    pub fn instrument_column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.instrument_names.iter().position(|n| n == name)?;
        Some(self.instruments.column(j).iter().copied().collect())
    }
}

/// Output of a fit, serialized in the layout consumed by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub estimator: Estimator,
    pub coefficients: IndexMap<String, f64>,
    pub std_errors: IndexMap<String, f64>,
    pub r_squared: f64,
    pub n_obs: usize,
    pub weight_matrix_kind: WeightMatrixKind,
    #[serde(default)]
    pub covariance: CovarianceKind,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub first_stage_f: IndexMap<String, f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EstimationResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients.get(name).copied()
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.std_errors.get(name).copied()
    }

    pub fn z_stat(&self, name: &str) -> Option<f64> {
        Some(self.coefficient(name)? / self.std_error(name)?)
    }

    /// Two-sided p-value from the robust z statistic.
    pub fn p_value(&self, name: &str) -> Option<f64> {
        let z = self.z_stat(name)?;
        if !z.is_finite() {
            return Some(0.0);
        }
        let normal = Normal::standard();
        Some(2.0 * (1.0 - normal.cdf(z.abs())))
    }

    pub fn is_significant(&self, name: &str, level: f64) -> bool {
        self.p_value(name).is_some_and(|p| p <= level)
    }

    pub fn coefficient_vector(&self) -> Vec<f64> {
        self.coefficients.values().copied().collect()
    }
}

/// Upper-triangular factor and orthonormal basis of a thin QR.
struct ThinQr {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn thin_qr(a: &DMatrix<f64>) -> ThinQr {
    let qr = a.clone().qr();
    ThinQr {
        q: qr.q(),
        r: qr.r(),
    }
}

/// Indices of columns that are (numerically) linear combinations of the
/// columns before them.
fn dependent_columns(a: &DMatrix<f64>, r: &DMatrix<f64>) -> Vec<usize> {
    (0..a.ncols())
        .filter(|&j| {
            let norm = a.column(j).norm();
            norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm
        })
        .collect()
}

fn upper_inverse(r: &DMatrix<f64>) -> DMatrix<f64> {
    let k = r.ncols();
    r.solve_upper_triangular(&DMatrix::identity(k, k))
        .expect("full-rank triangular factor")
}

/// Robust sandwich `bread * sum(e_i^2 x_i x_i') * bread`.
fn sandwich(
    bread: &DMatrix<f64>,
    x: &DMatrix<f64>,
    resid: &DVector<f64>,
    kind: CovarianceKind,
) -> DMatrix<f64> {
    let meat = weighted_cross(x, resid);
    let mut cov = bread * meat * bread;
    if kind == CovarianceKind::HC1 {
        let (n, k) = (x.nrows() as f64, x.ncols() as f64);
        cov *= n / (n - k);
    }
    cov
}

/// `sum_i e_i^2 a_i a_i'` for the rows `a_i` of `a`.
fn weighted_cross(a: &DMatrix<f64>, resid: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= resid[i].abs();
    }
    scaled.transpose() * scaled
}

fn r_squared(y: &DVector<f64>, resid: &DVector<f64>) -> f64 {
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return 0.0;
    }
    1.0 - resid.norm_squared() / sst
}

fn named(names: &[String], values: impl Iterator<Item = f64>) -> IndexMap<String, f64> {
    names.iter().cloned().zip(values).collect()
}

fn result(
    design: &DesignMatrix,
    estimator: Estimator,
    beta: &DVector<f64>,
    cov: &DMatrix<f64>,
    resid: &DVector<f64>,
    weight_matrix_kind: WeightMatrixKind,
    options: &FitOptions,
) -> EstimationResult {
    let names = design.regressor_names();
    EstimationResult {
        estimator,
        coefficients: named(names, beta.iter().copied()),
        std_errors: named(names, cov.diagonal().iter().map(|v| v.max(0.0).sqrt())),
        r_squared: r_squared(design.response(), resid),
        n_obs: design.n_obs(),
        weight_matrix_kind,
        covariance: options.covariance,
        first_stage_f: IndexMap::new(),
        warnings: Vec::new(),
    }
}

/// Ordinary least squares with robust standard errors.
pub fn fit_ols(
    design: &DesignMatrix,
    options: &FitOptions,
) -> Result<EstimationResult, EstimationError> {
    check_dof(design)?;
    let x = design.regressors();
    let y = design.response();
    let qr = thin_qr(x);
    let dependent = dependent_columns(x, &qr.r);
    if !dependent.is_empty() {
        return Err(EstimationError::SingularDesign {
            columns: dependent
                .into_iter()
                .map(|j| design.regressor_names()[j].clone())
                .collect(),
        });
    }
    let qty = qr.q.transpose() * y;
    let beta = qr
        .r
        .solve_upper_triangular(&qty)
        .expect("full-rank triangular factor");
    let resid = y - x * &beta;
    let r_inv = upper_inverse(&qr.r);
    let bread = &r_inv * r_inv.transpose();
    let cov = sandwich(&bread, x, &resid, options.covariance);
    Ok(result(
        design,
        Estimator::Ols,
        &beta,
        &cov,
        &resid,
        WeightMatrixKind::NotApplicable,
        options,
    ))
}

/// Validated split of regressors into endogenous and exogenous columns.
struct IvLayout {
    endogenous: Vec<usize>,
    exogenous: Vec<usize>,
    excluded: Vec<usize>,
}

/// Fits need more observations than regressors; designs may be smaller.
fn check_dof(design: &DesignMatrix) -> Result<(), EstimationError> {
    let (n, k) = (design.n_obs(), design.regressors().ncols());
    if n <= k {
        return Err(EstimationError::InvalidDesign(format!(
            "need more observations than regressors (n = {n}, k = {k})"
        )));
    }
    Ok(())
}

fn iv_layout(design: &DesignMatrix, endogenous: &[&str]) -> Result<IvLayout, EstimationError> {
    check_dof(design)?;
    let xn = design.regressor_names();
    let zn = design.instrument_names();
    if zn.is_empty() {
        return Err(EstimationError::InvalidSpecification(
            "IV estimation needs instruments".into(),
        ));
    }
    if endogenous.is_empty() {
        return Err(EstimationError::InvalidSpecification(
            "at least one endogenous regressor is required".into(),
        ));
    }
    let mut endo_idx = Vec::new();
    for name in endogenous {
        let j = xn.iter().position(|n| n == name).ok_or_else(|| {
            EstimationError::InvalidSpecification(format!("unknown endogenous column `{name}`"))
        })?;
        if zn.iter().any(|n| n == name) {
            return Err(EstimationError::InvalidSpecification(format!(
                "endogenous column `{name}` appears among the instruments"
            )));
        }
        endo_idx.push(j);
    }
    let exogenous: Vec<usize> = (0..xn.len()).filter(|j| !endo_idx.contains(j)).collect();
    for &j in &exogenous {
        if !zn.contains(&xn[j]) {
            return Err(EstimationError::InvalidSpecification(format!(
                "exogenous regressor `{}` must also be an instrument",
                xn[j]
            )));
        }
    }
    let excluded: Vec<usize> = (0..zn.len())
        .filter(|&j| !exogenous.iter().any(|&e| xn[e] == zn[j]))
        .collect();
    if zn.len() < xn.len() {
        return Err(EstimationError::InvalidSpecification(format!(
            "order condition fails: {} instruments for {} regressors",
            zn.len(),
            xn.len()
        )));
    }
    Ok(IvLayout {
        endogenous: endo_idx,
        exogenous,
        excluded,
    })
}

/// Orthonormal basis of the instrument space, rejecting degenerate
/// instrument sets.
fn instrument_basis(
    design: &DesignMatrix,
    layout: &IvLayout,
) -> Result<DMatrix<f64>, EstimationError> {
    let z = design.instruments();
    let qr = thin_qr(z);
    let dependent = dependent_columns(z, &qr.r);
    if dependent.is_empty() {
        return Ok(qr.q);
    }
    let names: Vec<String> = dependent
        .iter()
        .map(|&j| design.instrument_names()[j].clone())
        .collect();
    if dependent.iter().any(|j| layout.excluded.contains(j)) {
        return Err(EstimationError::WeakIdentification {
            instruments: names,
            first_stage_f: 0.0,
        });
    }
    Err(EstimationError::SingularDesign { columns: names })
}

/// First-stage F statistic for the excluded instruments of each endogenous
/// regressor.
fn first_stage(
    design: &DesignMatrix,
    layout: &IvLayout,
    qz: &DMatrix<f64>,
    options: &FitOptions,
) -> (IndexMap<String, f64>, Vec<String>) {
    let x = design.regressors();
    let n = design.n_obs() as f64;
    let m = design.instruments().ncols() as f64;
    let q = layout.excluded.len() as f64;
    let restricted = if layout.exogenous.is_empty() {
        None
    } else {
        Some(thin_qr(&x.select_columns(&layout.exogenous)).q)
    };
    let mut stats = IndexMap::new();
    let mut warnings = Vec::new();
    for &j in &layout.endogenous {
        let col = x.column(j).into_owned();
        let rss_u = (&col - qz * (qz.transpose() * &col)).norm_squared();
        let rss_r = match &restricted {
            Some(qr) => (&col - qr * (qr.transpose() * &col)).norm_squared(),
            None => col.norm_squared(),
        };
        let f = if rss_u == 0.0 {
            f64::INFINITY
        } else {
            ((rss_r - rss_u) / q) / (rss_u / (n - m))
        };
        let name = design.regressor_names()[j].clone();
        if f < options.weak_instrument_f {
            warnings.push(format!(
                "weak first stage for `{name}`: F = {f:.4} < {}",
                options.weak_instrument_f
            ));
        }
        stats.insert(name, f);
    }
    (stats, warnings)
}

fn iv_note(res: &mut EstimationResult) {
    if res.r_squared < 0.0 {
        res.warnings.push(format!(
            "R-squared from structural residuals is negative ({:.4}); reported unclamped",
            res.r_squared
        ));
    }
}

/// Two-stage least squares. Coefficients are reported against the original
/// regressors and R² uses the structural residuals `y - X b`.
pub fn fit_tsls(
    design: &DesignMatrix,
    endogenous: &[&str],
    options: &FitOptions,
) -> Result<EstimationResult, EstimationError> {
    let layout = iv_layout(design, endogenous)?;
    let qz = instrument_basis(design, &layout)?;
    let (f_stats, warnings) = first_stage(design, &layout, &qz, options);

    let x = design.regressors();
    let y = design.response();
    let x_hat = &qz * (qz.transpose() * x);
    let qr = thin_qr(&x_hat);
    let dependent = dependent_columns(&x_hat, &qr.r);
    if !dependent.is_empty() {
        return Err(EstimationError::SingularDesign {
            columns: dependent
                .into_iter()
                .map(|j| design.regressor_names()[j].clone())
                .collect(),
        });
    }
    let beta = qr
        .r
        .solve_upper_triangular(&(qr.q.transpose() * y))
        .expect("full-rank triangular factor");
    let resid = y - x * &beta;
    let r_inv = upper_inverse(&qr.r);
    let bread = &r_inv * r_inv.transpose();
    let cov = sandwich(&bread, &x_hat, &resid, options.covariance);
    let mut res = result(
        design,
        Estimator::Tsls,
        &beta,
        &cov,
        &resid,
        WeightMatrixKind::NotApplicable,
        options,
    );
    res.first_stage_f = f_stats;
    res.warnings = warnings;
    iv_note(&mut res);
    Ok(res)
}

/// Condition number of a symmetric positive semi-definite matrix after
/// scaling it to unit diagonal.
fn scaled_condition(s: &DMatrix<f64>) -> f64 {
    let d: Vec<f64> = s.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    if d.contains(&0.0) {
        return f64::INFINITY;
    }
    let scaled = DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| s[(i, j)] / (d[i] * d[j]));
    let eig = scaled.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Linear GMM with moment conditions `E[z (y - x'b)] = 0`.
///
/// Step 1 weights the moments by `(Z'Z)^-1` and reproduces TSLS. Step 2
/// re-weights with the inverse of the heteroskedasticity-robust moment
/// covariance built from step-1 residuals. Standard errors are the robust
/// GMM sandwich evaluated at the final residuals.
pub fn fit_gmm(
    design: &DesignMatrix,
    endogenous: &[&str],
    steps: u8,
    options: &FitOptions,
) -> Result<EstimationResult, EstimationError> {
    if !(1..=2).contains(&steps) {
        return Err(EstimationError::InvalidSteps(steps));
    }
    let layout = iv_layout(design, endogenous)?;
    let qz = instrument_basis(design, &layout)?;
    let (f_stats, warnings) = first_stage(design, &layout, &qz, options);

    let x = design.regressors();
    let y = design.response();
    let z = design.instruments();
    let n = design.n_obs() as f64;
    let zx = z.transpose() * x;
    let zy = z.transpose() * y;

    let solve = |moment_cov: &DMatrix<f64>| -> Result<DVector<f64>, EstimationError> {
        let condition = scaled_condition(moment_cov);
        if !condition.is_finite() || condition > options.max_condition {
            return Err(EstimationError::Conditioning { condition });
        }
        let chol = moment_cov
            .clone()
            .cholesky()
            .ok_or(EstimationError::Conditioning { condition })?;
        // With S = L L', W = S^-1 and the weighted problem is ordinary least
        // squares of L^-1 Z'y on L^-1 Z'X.
        let l = chol.l();
        let a = l.solve_lower_triangular(&zx).expect("non-singular factor");
        let b = l.solve_lower_triangular(&zy).expect("non-singular factor");
        let qr = thin_qr(&a);
        let dependent = dependent_columns(&a, &qr.r);
        if !dependent.is_empty() {
            return Err(EstimationError::SingularDesign {
                columns: dependent
                    .into_iter()
                    .map(|j| design.regressor_names()[j].clone())
                    .collect(),
            });
        }
        Ok(qr
            .r
            .solve_upper_triangular(&(qr.q.transpose() * b))
            .expect("full-rank triangular factor"))
    };

    let mut weight_cov = (z.transpose() * z) / n;
    let mut beta = solve(&weight_cov)?;
    let mut kind = WeightMatrixKind::Identity;
    if steps == 2 {
        let resid = y - x * &beta;
        weight_cov = weighted_cross(z, &resid) / n;
        beta = solve(&weight_cov)?;
        kind = WeightMatrixKind::TwoStepRobust;
    }

    let resid = y - x * &beta;
    let chol = weight_cov
        .clone()
        .cholesky()
        .expect("checked positive definite");
    // H = X'Z W Z'X, V = H^-1 X'Z W Omega W Z'X H^-1.
    let w_zx = chol.solve(&zx);
    let h = zx.transpose() * &w_zx;
    let h_inv = h.try_inverse().ok_or(EstimationError::SingularDesign {
        columns: design.regressor_names().to_vec(),
    })?;
    let omega = weighted_cross(z, &resid);
    let mut cov = &h_inv * w_zx.transpose() * omega * &w_zx * &h_inv;
    if options.covariance == CovarianceKind::HC1 {
        let k = x.ncols() as f64;
        cov *= n / (n - k);
    }
    let mut res = result(design, Estimator::Gmm, &beta, &cov, &resid, kind, options);
    res.first_stage_f = f_stats;
    res.warnings = warnings;
    iv_note(&mut res);
    Ok(res)
}

/// Dispatches on the estimator tag. `endogenous` is ignored for OLS.
pub fn fit(
    design: &DesignMatrix,
    estimator: Estimator,
    endogenous: &[&str],
    gmm_steps: u8,
    options: &FitOptions,
) -> Result<EstimationResult, EstimationError> {
    match estimator {
        Estimator::Ols => fit_ols(design, options),
        Estimator::Tsls => fit_tsls(design, endogenous, options),
        Estimator::Gmm => fit_gmm(design, endogenous, gmm_steps, options),
    }
}
