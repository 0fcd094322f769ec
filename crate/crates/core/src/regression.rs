//! Function-on-function ridge regression through the kernel trick.
//!
//! All regressions of a GHCM test share one covariate `Z`, so the kernel
//! `K_ij = <z_i, z_j> / n` is eigendecomposed once and every fit is a
//! spectral filter: `fitted = U diag(mu / (mu + gamma)) U^T Y`. The same
//! normalised `K` drives both the penalty selector and the hat matrix, which
//! is the unnormalised form with penalty `n * gamma`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{GhcmError, Result};
use crate::funcsample::{FunctionSample, FunctionalData, InnerProduct};

/// Eigenvalues in `(-NEGATIVE_EIGEN_TOL * mu_1, 0)` are round-off and
/// clipped to zero; anything lower is rejected.
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenpairs below this fraction of the top eigenvalue are treated as
/// null directions when the kernel is factored through the covariate space.
const NULL_EIGEN_TOL: f64 = 1e-12;

/// Normalised covariate Gram matrix with its cached eigendecomposition.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    entries: DMatrix<f64>,
    /// All `n` eigenvalues, decreasing, clipped at zero.
    eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors for the leading eigenvalues (column `k`
    /// belongs to `eigenvalues[k]`). Directions with zero eigenvalue may be
    /// omitted since the hat matrix annihilates them.
    eigenvectors: DMatrix<f64>,
}

impl KernelMatrix {
    /// From an unnormalised Gram matrix `G_ij = <z_i, z_j>`.
    pub fn from_gram(gram: DMatrix<f64>) -> Result<Self> {
        let n = gram.nrows();
        if n == 0 || gram.ncols() != n {
            return Err(GhcmError::DimensionMismatch(format!(
                "Gram matrix must be square and non-empty, got {}x{}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(GhcmError::NonFinite("Gram matrix entry".into()));
        }
        let scale = gram.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (gram[(i, j)] - gram[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(GhcmError::InvalidArgument(format!(
                        "Gram matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let mut entries = gram / n as f64;
        symmetrize(&mut entries);
        let eig = SymmetricEigen::new(entries.clone());
        let (values, vectors) = sorted_eigen(eig.eigenvalues, eig.eigenvectors);
        let values = clip_spectrum(values)?;
        Ok(Self {
            entries,
            eigenvalues: values,
            eigenvectors: vectors,
        })
    }

    /// From covariate coordinates (rows are observations) under the
    /// Euclidean inner product. With fewer coordinates than observations the
    /// eigenproblem is solved on the `p x p` side.
    pub fn from_coordinates(z: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = z.shape();
        if n == 0 {
            return Err(GhcmError::SampleSize("no observations".into()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(GhcmError::NonFinite("covariate value".into()));
        }
        if p >= n {
            return Self::from_gram(z * z.transpose());
        }
        let nf = n as f64;
        let mut cov = z.transpose() * z / nf;
        symmetrize(&mut cov);
        let eig = SymmetricEigen::new(cov);
        let (values, vectors) = sorted_eigen(eig.eigenvalues, eig.eigenvectors);
        let values = clip_spectrum(values)?;
        let top = values[0];
        let rank = values
            .iter()
            .take_while(|&&mu| mu > NULL_EIGEN_TOL * top && mu > 0.0)
            .count();
        let mut u = DMatrix::zeros(n, rank);
        for k in 0..rank {
            let col = z * vectors.column(k) / (nf * values[k]).sqrt();
            u.set_column(k, &col);
        }
        let mut all = DVector::zeros(n);
        all.rows_mut(0, rank).copy_from(&values.rows(0, rank));
        let mut entries = z * z.transpose() / nf;
        symmetrize(&mut entries);
        Ok(Self {
            entries,
            eigenvalues: all,
            eigenvectors: u,
        })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn is_zero(&self) -> bool {
        self.eigenvalues[0] <= 0.0
    }

    /// Hat-matrix shrinkage factors `mu / (mu + gamma)` for the stored
    /// eigenvectors.
    pub fn shrinkage(&self, gamma: f64) -> Vec<f64> {
        (0..self.eigenvectors.ncols())
            .map(|k| {
                let mu = self.eigenvalues[k];
                mu / (mu + gamma)
            })
            .collect()
    }

    /// `K (K + gamma I)^{-1}`.
    pub fn hat_matrix(&self, gamma: f64) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (k, s) in self.shrinkage(gamma).into_iter().enumerate() {
            scaled.column_mut(k).scale_mut(s);
        }
        scaled * u.transpose()
    }

    /// `K (K + gamma I)^{-1} Y` without forming the hat matrix.
    fn filter(&self, y: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        let mut coef = u.transpose() * y;
        for (k, s) in self.shrinkage(gamma).into_iter().enumerate() {
            coef.row_mut(k).scale_mut(s);
        }
        u * coef
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn sorted_eigen(values: DVector<f64>, vectors: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let sorted_values = DVector::from_iterator(values.len(), order.iter().map(|&k| values[k]));
    let mut sorted_vectors = DMatrix::zeros(vectors.nrows(), vectors.ncols());
    for (dst, &src) in order.iter().enumerate() {
        sorted_vectors.set_column(dst, &vectors.column(src));
    }
    (sorted_values, sorted_vectors)
}

fn clip_spectrum(mut values: DVector<f64>) -> Result<DVector<f64>> {
    let top = values[0].max(0.0);
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -NEGATIVE_EIGEN_TOL * top {
                return Err(GhcmError::NegativeEigenvalue {
                    eigenvalue: *v,
                    largest: top,
                });
            }
            *v = 0.0;
        }
    }
    Ok(values)
}

/// Kernel of the covariate under the chosen inner product.
pub fn build_kernel(z: &FunctionalData, inner: InnerProduct) -> Result<KernelMatrix> {
    match (inner, z) {
        (InnerProduct::Euclidean, FunctionalData::Dense { values, .. }) => {
            KernelMatrix::from_coordinates(values)
        }
        _ => KernelMatrix::from_gram(z.gram(inner)?),
    }
}

/// `(1 / (gamma n)) sum_i min(mu_i / 4, gamma) + gamma / 4`.
pub fn gamma_objective(eigenvalues: &[f64], gamma: f64) -> f64 {
    let n = eigenvalues.len() as f64;
    let s: f64 = eigenvalues.iter().map(|mu| (mu / 4.0).min(gamma)).sum();
    s / (gamma * n) + gamma / 4.0
}

/// Data-driven ridge penalty: the minimiser of [`gamma_objective`] over the
/// strictly positive breakpoints `mu_i / 4` and the stationary points
/// `2 sqrt(C)` of each piece, where `C = (1/n) sum_{mu_i/4 <= gamma} mu_i/4`.
pub fn select_gamma(k: &KernelMatrix) -> Result<f64> {
    select_gamma_from_spectrum(k.eigenvalues.as_slice())
}

pub fn select_gamma_from_spectrum(eigenvalues: &[f64]) -> Result<f64> {
    if eigenvalues.iter().all(|&mu| mu <= 0.0) {
        return Err(GhcmError::ZeroKernel);
    }
    let n = eigenvalues.len() as f64;
    let mut b: Vec<f64> = eigenvalues.iter().map(|mu| mu.max(0.0) / 4.0).collect();
    b.sort_by(f64::total_cmp);

    let mut candidates = Vec::with_capacity(2 * b.len());
    let mut prefix = 0.0;
    for (k, &bk) in b.iter().enumerate() {
        if bk > 0.0 {
            candidates.push(bk);
        }
        prefix += bk;
        // Piece [b_k, b_{k+1}): the first k + 1 terms are saturated.
        let hi = b.get(k + 1).copied().unwrap_or(f64::INFINITY);
        let stationary = 2.0 * (prefix / n).sqrt();
        if stationary > 0.0 && stationary >= bk && stationary <= hi {
            candidates.push(stationary);
        }
    }
    let mut best = (f64::INFINITY, f64::NAN);
    for g in candidates {
        let f = gamma_objective(eigenvalues, g);
        if f < best.0 {
            best = (f, g);
        }
    }
    Ok(best.1)
}

/// Upper bound on the in-sample mean squared prediction error of ridge with
/// penalty `gamma` on the normalised kernel, noise level `sigma_sq` and
/// operator norm `hs_norm_sq`:
/// `(sigma_sq / (gamma n)) sum_i min(mu_i / 4, gamma) + hs_norm_sq gamma / 4`.
pub fn mspe_bound(k: &KernelMatrix, gamma: f64, sigma_sq: f64, hs_norm_sq: f64) -> f64 {
    mspe_bound_from_spectrum(k.eigenvalues.as_slice(), gamma, sigma_sq, hs_norm_sq)
}

pub fn mspe_bound_from_spectrum(
    eigenvalues: &[f64],
    gamma: f64,
    sigma_sq: f64,
    hs_norm_sq: f64,
) -> f64 {
    let n = eigenvalues.len() as f64;
    let s: f64 = eigenvalues.iter().map(|mu| (mu / 4.0).min(gamma)).sum();
    sigma_sq * s / (gamma * n) + hs_norm_sq * gamma / 4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum GammaChoice {
    #[default]
    Auto,
    Fixed(f64),
    /// Skip the regression: residuals equal the response.
    None,
}

/// Output of one regression.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    /// Penalty used; `None` when no regression was performed.
    pub gamma: Option<f64>,
    pub fitted: FunctionalData,
    pub residuals: FunctionalData,
    pub in_sample_mspe_vs_truth: Option<f64>,
}

impl RegressionFit {
    fn unfitted(response: &FunctionalData) -> Self {
        let fitted = match response {
            FunctionalData::Dense { grid, values } => FunctionalData::Dense {
                grid: grid.clone(),
                values: DMatrix::zeros(values.nrows(), values.ncols()),
            },
            FunctionalData::Irregular(samples) => FunctionalData::Irregular(
                samples
                    .iter()
                    .map(|s| {
                        FunctionSample::new(s.grid().clone(), vec![0.0; s.len()])
                            .expect("zero curve on a valid grid")
                    })
                    .collect(),
            ),
        };
        Self {
            gamma: None,
            fitted,
            residuals: response.clone(),
            in_sample_mspe_vs_truth: None,
        }
    }

    /// Records `(1/n) sum_i ||fitted_i - truth_i||^2` for dense fits.
    pub fn with_truth(mut self, truth: &DMatrix<f64>) -> Result<Self> {
        let fitted = self.fitted.values().ok_or_else(|| {
            GhcmError::Representation("prediction error needs dense fitted values".into())
        })?;
        if fitted.shape() != truth.shape() {
            return Err(GhcmError::DimensionMismatch(format!(
                "fitted {:?} vs truth {:?}",
                fitted.shape(),
                truth.shape()
            )));
        }
        let n = fitted.nrows() as f64;
        self.in_sample_mspe_vs_truth = Some((fitted - truth).norm_squared() / n);
        Ok(self)
    }
}

/// Ridge fit with a given penalty.
pub fn ridge_fit(k: &KernelMatrix, y: &FunctionalData, gamma: f64) -> Result<RegressionFit> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(GhcmError::InvalidArgument(format!(
            "ridge penalty must be positive, got {gamma}"
        )));
    }
    if y.n() != k.n() {
        return Err(GhcmError::DimensionMismatch(format!(
            "response has {} observations, kernel {}",
            y.n(),
            k.n()
        )));
    }
    let (fitted, residuals) = match y {
        FunctionalData::Dense { grid, values } => {
            let fitted = k.filter(values, gamma);
            let residuals = values - &fitted;
            (
                FunctionalData::Dense {
                    grid: grid.clone(),
                    values: fitted,
                },
                FunctionalData::Dense {
                    grid: grid.clone(),
                    values: residuals,
                },
            )
        }
        FunctionalData::Irregular(samples) => {
            // The fitted curve of observation i is sum_j H_ij W_j, with W_j
            // the spline interpolant of curve j; evaluate it on i's own grid.
            let hat = k.hat_matrix(gamma);
            let splines = y.splines()?;
            irregular_fit(samples, |i, t| {
                splines
                    .iter()
                    .enumerate()
                    .map(|(j, s)| hat[(i, j)] * s.eval(t))
                    .sum()
            })?
        }
    };
    Ok(RegressionFit {
        gamma: Some(gamma),
        fitted,
        residuals,
        in_sample_mspe_vs_truth: None,
    })
}

fn irregular_fit(
    samples: &[FunctionSample],
    fitted_at: impl Fn(usize, f64) -> f64,
) -> Result<(FunctionalData, FunctionalData)> {
    let mut fitted = Vec::with_capacity(samples.len());
    let mut residuals = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let f: Vec<f64> = s.grid().points().iter().map(|&t| fitted_at(i, t)).collect();
        let r: Vec<f64> = s.values().iter().zip(&f).map(|(v, fv)| v - fv).collect();
        fitted.push(FunctionSample::new(s.grid().clone(), f)?);
        residuals.push(FunctionSample::new(s.grid().clone(), r)?);
    }
    Ok((
        FunctionalData::Irregular(fitted),
        FunctionalData::Irregular(residuals),
    ))
}

/// Anything that regresses a response on the (fixed) covariate.
pub trait Regressor: Sync {
    fn fit(&self, response: &FunctionalData) -> Result<RegressionFit>;
}

/// Ridge regression on a shared kernel.
#[derive(Debug, Clone, Copy)]
pub struct RidgeRegressor<'a> {
    pub kernel: &'a KernelMatrix,
    pub gamma: GammaChoice,
}

impl<'a> RidgeRegressor<'a> {
    pub fn new(kernel: &'a KernelMatrix, gamma: GammaChoice) -> Self {
        Self { kernel, gamma }
    }
}

impl Regressor for RidgeRegressor<'_> {
    fn fit(&self, response: &FunctionalData) -> Result<RegressionFit> {
        match self.gamma {
            GammaChoice::None => Ok(RegressionFit::unfitted(response)),
            GammaChoice::Fixed(g) => ridge_fit(self.kernel, response, g),
            GammaChoice::Auto => match select_gamma(self.kernel) {
                Ok(g) => ridge_fit(self.kernel, response, g),
                // A zero kernel carries no information: no regression.
                Err(GhcmError::ZeroKernel) => Ok(RegressionFit::unfitted(response)),
                Err(e) => Err(e),
            },
        }
    }
}

/// Baseline that ignores the covariate: fitted values are the sample mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanRegressor;

impl Regressor for MeanRegressor {
    fn fit(&self, response: &FunctionalData) -> Result<RegressionFit> {
        let n = response.n();
        if n == 0 {
            return Err(GhcmError::SampleSize("no observations".into()));
        }
        let (fitted, residuals) = match response {
            FunctionalData::Dense { grid, values } => {
                let mean = values.row_mean();
                let fitted = DMatrix::from_fn(values.nrows(), values.ncols(), |_, c| mean[c]);
                let residuals = values - &fitted;
                (
                    FunctionalData::Dense {
                        grid: grid.clone(),
                        values: fitted,
                    },
                    FunctionalData::Dense {
                        grid: grid.clone(),
                        values: residuals,
                    },
                )
            }
            FunctionalData::Irregular(samples) => {
                let splines = response.splines()?;
                let inv_n = 1.0 / n as f64;
                irregular_fit(samples, |_, t| {
                    splines.iter().map(|s| s.eval(t)).sum::<f64>() * inv_n
                })?
            }
        };
        Ok(RegressionFit {
            gamma: None,
            fitted,
            residuals,
            in_sample_mspe_vs_truth: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcsample::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    /// Cyclic Jacobi rotations; eigenvalues only.
    fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
        let n = a.nrows();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    #[test]
    fn kernel_of_repeated_unit_vector() {
        let z = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let k = build_kernel(&FunctionalData::dense(z), InnerProduct::Euclidean).unwrap();
        for v in k.entries().iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        assert!((k.eigenvalues()[0] - 1.0).abs() < 1e-14);
        assert!(k.eigenvalues()[1].abs() < 1e-14);
    }

    #[test]
    fn kernel_of_orthonormal_vectors() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let k = build_kernel(&FunctionalData::dense(z), InnerProduct::Euclidean).unwrap();
        assert!((k.entries() - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
        assert!((k.eigenvalues()[0] - 0.5).abs() < 1e-14);
        assert!((k.eigenvalues()[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn kernel_spectrum_matches_jacobi() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_matrix(5, 3, &mut rng);
        let k = build_kernel(&FunctionalData::dense(z.clone()), InnerProduct::Euclidean).unwrap();
        let reference = jacobi_eigenvalues(&z * z.transpose() / 5.0);
        for (a, b) in k.eigenvalues().iter().zip(&reference) {
            assert!((a - b.max(0.0)).abs() < 1e-10, "{a} vs {b}");
        }
        // wide covariates go through the n x n route
        let z = random_matrix(4, 9, &mut rng);
        let k = build_kernel(&FunctionalData::dense(z.clone()), InnerProduct::Euclidean).unwrap();
        let reference = jacobi_eigenvalues(&z * z.transpose() / 4.0);
        for (a, b) in k.eigenvalues().iter().zip(&reference) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn dual_route_matches_direct_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = random_matrix(12, 4, &mut rng);
        let y = random_matrix(12, 3, &mut rng);
        let dual = KernelMatrix::from_coordinates(&z).unwrap();
        let direct = KernelMatrix::from_gram(&z * z.transpose()).unwrap();
        assert_eq!(dual.eigenvectors().ncols(), 4);
        for k in 0..12 {
            assert!((dual.eigenvalues()[k] - direct.eigenvalues()[k]).abs() < 1e-12);
        }
        let yd = FunctionalData::dense(y);
        let a = ridge_fit(&dual, &yd, 0.3).unwrap();
        let b = ridge_fit(&direct, &yd, 0.3).unwrap();
        let diff = a.fitted.values().unwrap() - b.fitted.values().unwrap();
        assert!(diff.amax() < 1e-12);
    }

    #[test]
    fn negative_spectrum_is_rejected() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(
            KernelMatrix::from_gram(g),
            Err(GhcmError::NegativeEigenvalue { .. })
        ));
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-13]);
        let k = KernelMatrix::from_gram(g).unwrap();
        assert_eq!(k.eigenvalues()[1], 0.0);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0]);
        assert!(KernelMatrix::from_gram(asym).is_err());
    }

    #[test]
    fn spline_kernel_needs_curves() {
        let z = FunctionalData::dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert!(matches!(
            build_kernel(&z, InnerProduct::Spline),
            Err(GhcmError::Representation(_))
        ));
    }

    #[test]
    fn gamma_for_identity_spectrum() {
        // f(g) = 1/(4g) + g/4 on g >= 1/4, minimised at g = 1.
        let g = select_gamma_from_spectrum(&[1.0; 7]).unwrap();
        assert!((g - 1.0).abs() < 1e-9, "{g}");
        assert!((gamma_objective(&[1.0; 7], g) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gamma_for_single_observation() {
        let g = select_gamma_from_spectrum(&[4.0]).unwrap();
        assert!((g - 2.0).abs() < 1e-9, "{g}");
    }

    #[test]
    fn gamma_for_rank_one_spectrum() {
        let g = select_gamma_from_spectrum(&[4.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((g - 1.0).abs() < 1e-9, "{g}");
        // Only strictly positive candidates are considered; the objective's
        // infimum m/n as gamma -> 0 is not attained.
        assert!(
            gamma_objective(&[4.0, 0.0, 0.0, 0.0], 1e-6)
                < gamma_objective(&[4.0, 0.0, 0.0, 0.0], g)
        );
    }

    #[test]
    fn gamma_for_zero_spectrum_is_an_error() {
        assert_eq!(
            select_gamma_from_spectrum(&[0.0, 0.0]),
            Err(GhcmError::ZeroKernel)
        );
    }

    #[test]
    fn gamma_is_global_minimiser_for_full_rank_spectra() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = rng.random_range(1..40);
            let scale: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
            let mu: Vec<f64> = (0..n)
                .map(|_| scale * rng.random_range(0.001..1.0))
                .collect();
            let g = select_gamma_from_spectrum(&mu).unwrap();
            let best = gamma_objective(&mu, g);
            let mut sorted = mu.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let gs = select_gamma_from_spectrum(&sorted).unwrap();
            assert!((gs - g).abs() <= 1e-12 * g, "{gs} vs {g}");
            // Below the smallest breakpoint f(g) = 1 + g/4, so the objective
            // also approaches 1 as g -> 0 without attaining it.
            let floor = best.min(1.0);
            for _ in 0..1000 {
                let probe = 10f64.powf(rng.random_range(-6.0..4.0));
                assert!(floor <= gamma_objective(&mu, probe) + 1e-12);
            }
        }
    }

    #[test]
    fn heavy_penalty_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = random_matrix(6, 3, &mut rng);
        let y = random_matrix(6, 2, &mut rng);
        let k = KernelMatrix::from_coordinates(&z).unwrap();
        let fit = ridge_fit(&k, &FunctionalData::dense(y.clone()), 1e9).unwrap();
        assert!(fit.fitted.values().unwrap().amax() < 1e-7);
        assert!((fit.residuals.values().unwrap() - &y).amax() < 1e-7);
    }

    #[test]
    fn orthonormal_inputs_halve_the_response() {
        let k = KernelMatrix::from_gram(DMatrix::identity(2, 2)).unwrap();
        let y = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 4.0, 0.5, 3.0, -1.0]);
        let fit = ridge_fit(&k, &FunctionalData::dense(y.clone()), 0.5).unwrap();
        assert!((fit.fitted.values().unwrap() - &y * 0.5).amax() < 1e-15);
    }

    #[test]
    fn fit_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_matrix(6, 8, &mut rng);
        let y = random_matrix(6, 3, &mut rng);
        let gamma = 0.37;
        let k = build_kernel(&FunctionalData::dense(z), InnerProduct::Euclidean).unwrap();
        let fit = ridge_fit(&k, &FunctionalData::dense(y.clone()), gamma).unwrap();
        let system = k.entries() + DMatrix::identity(6, 6) * gamma;
        let b = system.lu().solve(&y).unwrap();
        let direct = k.entries() * b;
        assert!((fit.fitted.values().unwrap() - &direct).amax() < 1e-10);
        let sum = fit.fitted.values().unwrap() + fit.residuals.values().unwrap();
        assert!((sum - y).amax() < 1e-10);
    }

    #[test]
    fn shrinkage_factors_bound_fitted_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = random_matrix(15, 20, &mut rng);
        let y = random_matrix(15, 4, &mut rng);
        let k = KernelMatrix::from_coordinates(&z).unwrap();
        for gamma in [1e-4, 0.1, 1.0, 50.0] {
            for s in k.shrinkage(gamma) {
                assert!((0.0..1.0).contains(&s));
            }
            let fit = ridge_fit(&k, &FunctionalData::dense(y.clone()), gamma).unwrap();
            let f = fit.fitted.values().unwrap();
            for c in 0..4 {
                assert!(f.column(c).norm() <= y.column(c).norm() + 1e-12);
            }
        }
    }

    #[test]
    fn zero_kernel_skips_regression() {
        let k = KernelMatrix::from_coordinates(&DMatrix::zeros(4, 2)).unwrap();
        assert!(k.is_zero());
        let y = FunctionalData::dense(DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]));
        let fit = RidgeRegressor::new(&k, GammaChoice::Auto).fit(&y).unwrap();
        assert_eq!(fit.gamma, None);
        assert_eq!(fit.residuals, y);
    }

    #[test]
    fn ridge_rejects_bad_input() {
        let k = KernelMatrix::from_gram(DMatrix::identity(3, 3)).unwrap();
        let y = FunctionalData::dense(DMatrix::zeros(2, 1));
        assert!(matches!(
            ridge_fit(&k, &y, 1.0),
            Err(GhcmError::DimensionMismatch(_))
        ));
        let y = FunctionalData::dense(DMatrix::zeros(3, 1));
        assert!(ridge_fit(&k, &y, 0.0).is_err());
    }

    #[test]
    fn mean_regressor_centres() {
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 6.0, 5.0, 1.0]);
        let fit = MeanRegressor.fit(&FunctionalData::dense(y)).unwrap();
        let r = fit.residuals.values().unwrap();
        assert!(r.row_mean().amax() < 1e-15);
    }

    #[test]
    fn irregular_ridge_matches_dense_ridge_on_shared_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let grid = Grid::uniform(6).unwrap();
        let z = random_matrix(5, 4, &mut rng);
        let y = random_matrix(5, 6, &mut rng);
        let k = KernelMatrix::from_coordinates(&z).unwrap();
        let dense = FunctionalData::on_grid(grid.clone(), y.clone()).unwrap();
        let samples: Vec<FunctionSample> = (0..5)
            .map(|i| FunctionSample::new(grid.clone(), y.row(i).iter().copied().collect()).unwrap())
            .collect();
        let a = ridge_fit(&k, &dense, 0.2).unwrap();
        let b = ridge_fit(&k, &FunctionalData::Irregular(samples), 0.2).unwrap();
        let FunctionalData::Irregular(bres) = &b.residuals else {
            panic!()
        };
        let ares = a.residuals.values().unwrap();
        for (i, s) in bres.iter().enumerate() {
            for (c, v) in s.values().iter().enumerate() {
                assert!((v - ares[(i, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mspe_bound_examples() {
        // all mu/4 >= gamma: every min saturates at gamma
        let mu = [8.0, 6.0, 4.0, 4.0];
        let (gamma, s2, hs) = (0.5, 2.0, 3.0);
        let b = mspe_bound_from_spectrum(&mu, gamma, s2, hs);
        assert!((b - (s2 + hs * gamma / 4.0)).abs() < 1e-14);
        assert_eq!(mspe_bound_from_spectrum(&mu, gamma, 0.0, 0.0), 0.0);
        // with unit constants the bound is the penalty objective
        assert!(
            (mspe_bound_from_spectrum(&mu, 0.8, 1.0, 1.0) - gamma_objective(&mu, 0.8)).abs()
                < 1e-15
        );
    }

    #[test]
    fn mspe_bound_exponential_spectrum_rate() {
        let mut previous = f64::INFINITY;
        for n in [100usize, 1_000, 10_000] {
            let mu: Vec<f64> = (1..=n).map(|k| (-(k as f64)).exp()).collect();
            let b = mspe_bound_from_spectrum(&mu, 1.0 / n as f64, 1.0, 1.0);
            let nf = n as f64;
            let ratio = b / (nf.ln() / nf);
            assert!((0.1..=10.0).contains(&ratio), "n = {n}: ratio {ratio}");
            assert!(b < previous);
            previous = b;
        }
    }

    /// Linear model x = S z + noise with a Hilbert-Schmidt S; the in-sample
    /// error of ridge with the selected penalty falls as n grows.
    #[test]
    fn in_sample_error_decreases_with_n() {
        let p = 30;
        let q = 5;
        let s = DMatrix::from_fn(q, p, |a, b| {
            ((a + 1) as f64 * (b + 1) as f64 * 0.3).sin() / (1.0 + b as f64)
        });
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut last = f64::INFINITY;
        for n in [50usize, 100, 200, 400] {
            let mut total = 0.0;
            let reps = 30;
            for _ in 0..reps {
                let z = DMatrix::from_fn(n, p, |_, j| {
                    rng.sample::<f64, _>(StandardNormal) / (1.0 + j as f64)
                });
                let truth = &z * s.transpose();
                let noise = random_matrix(n, q, &mut rng);
                let x = FunctionalData::dense(&truth + noise);
                let k = KernelMatrix::from_coordinates(&z).unwrap();
                let fit = RidgeRegressor::new(&k, GammaChoice::Auto)
                    .fit(&x)
                    .unwrap()
                    .with_truth(&truth)
                    .unwrap();
                total += fit.in_sample_mspe_vs_truth.unwrap();
            }
            let mean = total / reps as f64;
            assert!(mean < last, "n = {n}: {mean} !< {last}");
            last = mean;
        }
    }
}
