//! The GHCM test: regress `X` and `Y` on `Z`, form the Hadamard product of
//! the two residual Gram matrices, and calibrate
//! `T_n = (1/n) sum_ij <e_i, e_j><x_i, x_j>` against a weighted sum of
//! chi-square(1) variables whose weights are the non-zero eigenvalues of the
//! doubly centred product matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GhcmError, Result};
use crate::funcsample::{FunctionalData, InnerProduct};
use crate::quadform::{upper_tail_prob_with, ImhofOptions, WeightedChiSq};
use crate::regression::{build_kernel, GammaChoice, MeanRegressor, Regressor, RidgeRegressor};

/// Eigenvalues of the centred matrix below this fraction of the largest are
/// treated as zero.
pub const EIGEN_RETENTION_TOL: f64 = 1e-12;

/// Residuals of one regression together with the inner product used to
/// compare them.
///
/// Irregularly observed residuals are centred in function space: the mean
/// of the interpolating splines is subtracted when inner products are
/// formed. On a shared grid this coincides with subtracting the mean vector
/// before interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    residuals: FunctionalData,
    inner: InnerProduct,
    centered: bool,
}

impl ResidualSet {
    /// Data without a grid is compared with the Euclidean inner product
    /// whatever `inner` says; curves on differing grids need the spline one.
    pub fn new(residuals: FunctionalData, inner: InnerProduct) -> Result<Self> {
        let inner = resolve_inner(&residuals, inner)?;
        Ok(Self {
            residuals,
            inner,
            centered: false,
        })
    }

    pub fn n(&self) -> usize {
        self.residuals.n()
    }

    pub fn residuals(&self) -> &FunctionalData {
        &self.residuals
    }

    pub fn inner(&self) -> InnerProduct {
        self.inner
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Pairwise inner products of the (centred, if flagged) residuals.
    pub fn inner_products(&self) -> Result<DMatrix<f64>> {
        let gram = self.residuals.gram(self.inner)?;
        match (&self.residuals, self.centered) {
            (FunctionalData::Irregular(_), true) => Ok(double_center(&gram)),
            _ => Ok(gram),
        }
    }
}

fn resolve_inner(data: &FunctionalData, inner: InnerProduct) -> Result<InnerProduct> {
    match (data, inner) {
        (FunctionalData::Dense { grid: None, .. }, _) => Ok(InnerProduct::Euclidean),
        (FunctionalData::Irregular(_), InnerProduct::Euclidean) => Err(GhcmError::Representation(
            "residuals on differing grids need the spline inner product".into(),
        )),
        (_, inner) => Ok(inner),
    }
}

/// Subtracts the empirical mean residual from every residual.
pub fn center_residuals(r: ResidualSet) -> ResidualSet {
    let residuals = match r.residuals {
        FunctionalData::Dense { grid, mut values } => {
            let mean = values.row_mean();
            for mut row in values.row_iter_mut() {
                row -= &mean;
            }
            FunctionalData::Dense { grid, values }
        }
        irregular => irregular,
    };
    ResidualSet {
        residuals,
        inner: r.inner,
        centered: true,
    }
}

/// `(I - J) M (I - J)` with `J` the averaging matrix.
fn double_center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let row_means = m.column_mean();
    let col_means = m.row_mean();
    let grand = row_means.mean();
    let mut out = DMatrix::from_fn(n, n, |i, j| m[(i, j)] - row_means[i] - col_means[j] + grand);
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// `Gamma_ij = <e_i, e_j> <x_i, x_j>`.
pub fn gram_matrix(eps: &ResidualSet, xi: &ResidualSet) -> Result<DMatrix<f64>> {
    if eps.n() != xi.n() {
        return Err(GhcmError::DimensionMismatch(format!(
            "{} residuals for X but {} for Y",
            eps.n(),
            xi.n()
        )));
    }
    let a = eps.inner_products()?;
    let b = xi.inner_products()?;
    Ok(a.component_mul(&b))
}

/// `T_n = (1/n) sum_ij Gamma_ij`, clamped at zero against round-off.
pub fn test_statistic(gamma: &DMatrix<f64>) -> f64 {
    let n = gamma.nrows();
    if n == 0 {
        return 0.0;
    }
    (gamma.sum() / n as f64).max(0.0)
}

/// Non-zero eigenvalues of `(Gamma - J Gamma - Gamma J + J Gamma J) / (n - 1)`,
/// decreasing, at most `n - 1` of them.
pub fn weight_eigenvalues(gamma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = gamma.nrows();
    if n < 2 {
        return Err(GhcmError::SampleSize(format!(
            "eigenvalue weights need at least 2 observations, got {n}"
        )));
    }
    if gamma.ncols() != n {
        return Err(GhcmError::DimensionMismatch("Gamma must be square".into()));
    }
    let a = double_center(gamma) / (n - 1) as f64;
    let mut values: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|x, y| y.total_cmp(x));
    let top = values[0];
    // Centring a constant matrix leaves only round-off behind.
    let noise_floor = EIGEN_RETENTION_TOL * n as f64 * gamma.amax();
    if top <= noise_floor {
        return Ok(Vec::new());
    }
    values.retain(|&v| v > EIGEN_RETENTION_TOL * top);
    values.truncate(n - 1);
    Ok(values)
}

/// Outcome of one GHCM test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhcmResult {
    pub statistic: f64,
    pub eigenvalues: Vec<f64>,
    pub p_value: f64,
    pub n: usize,
    /// Number of retained eigenvalues.
    pub d: usize,
    pub alpha: f64,
    pub reject: bool,
    pub gamma_x: Option<f64>,
    pub gamma_y: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum RegressionMethod {
    Ridge { gamma: GammaChoice },
    MeanOnly,
}

impl Default for RegressionMethod {
    fn default() -> Self {
        RegressionMethod::Ridge {
            gamma: GammaChoice::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhcmOptions {
    pub regression: RegressionMethod,
    /// Inner product defining the covariate kernel.
    pub covariate_inner: InnerProduct,
    /// Inner product used on the residuals.
    pub residual_inner: InnerProduct,
    pub alpha: f64,
    pub imhof: ImhofOptions,
}

impl Default for GhcmOptions {
    fn default() -> Self {
        Self {
            regression: RegressionMethod::default(),
            covariate_inner: InnerProduct::Euclidean,
            residual_inner: InnerProduct::Euclidean,
            alpha: 0.05,
            imhof: ImhofOptions::default(),
        }
    }
}

impl GhcmOptions {
    /// Spline inner products throughout; needed for irregular grids.
    pub fn spline() -> Self {
        Self {
            covariate_inner: InnerProduct::Spline,
            residual_inner: InnerProduct::Spline,
            ..Self::default()
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

/// Tests `X ⫫ Y | Z`.
pub fn ghcm_test(
    x: &FunctionalData,
    y: &FunctionalData,
    z: &FunctionalData,
    opts: &GhcmOptions,
) -> Result<GhcmResult> {
    let n = x.n();
    if y.n() != n || z.n() != n {
        return Err(GhcmError::DimensionMismatch(format!(
            "sample sizes differ: X {n}, Y {}, Z {}",
            y.n(),
            z.n()
        )));
    }
    if n < 3 {
        return Err(GhcmError::SampleSize(format!(
            "the test needs at least 3 observations, got {n}"
        )));
    }
    check_alpha(opts.alpha)?;

    let (fit_x, fit_y) = match opts.regression {
        RegressionMethod::Ridge { gamma } => {
            let kernel = build_kernel(z, resolve_inner(z, opts.covariate_inner)?)?;
            let reg = RidgeRegressor::new(&kernel, gamma);
            (reg.fit(x)?, reg.fit(y)?)
        }
        RegressionMethod::MeanOnly => (MeanRegressor.fit(x)?, MeanRegressor.fit(y)?),
    };
    let eps = ResidualSet::new(fit_x.residuals, opts.residual_inner)?;
    let xi = ResidualSet::new(fit_y.residuals, opts.residual_inner)?;
    let mut result = ghcm_from_residuals(eps, xi, opts.alpha, opts.imhof)?;
    result.gamma_x = fit_x.gamma;
    result.gamma_y = fit_y.gamma;
    Ok(result)
}

/// Runs the test on residuals produced by any regression method.
pub fn ghcm_from_residuals(
    eps: ResidualSet,
    xi: ResidualSet,
    alpha: f64,
    imhof: ImhofOptions,
) -> Result<GhcmResult> {
    check_alpha(alpha)?;
    let n = eps.n();
    let eps = center_residuals(eps);
    let xi = center_residuals(xi);
    let gamma = gram_matrix(&eps, &xi)?;
    let statistic = test_statistic(&gamma);
    let eigenvalues = weight_eigenvalues(&gamma)?;

    let p_value = if eigenvalues.is_empty() {
        if gamma.amax() == 0.0 {
            // Residual products vanish identically: nothing can exceed T_n = 0.
            1.0
        } else {
            return Err(GhcmError::DegenerateTest(
                "the centred residual product matrix has no non-zero eigenvalues".into(),
            ));
        }
    } else {
        let dist = WeightedChiSq::new(&eigenvalues)?;
        upper_tail_prob_with(&dist, statistic, imhof)?.p_value
    };
    Ok(GhcmResult {
        statistic,
        d: eigenvalues.len(),
        eigenvalues,
        p_value,
        n,
        alpha,
        reject: p_value <= alpha,
        gamma_x: None,
        gamma_y: None,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(GhcmError::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}
