//! Seedable generators for the simulation designs.
//!
//! All curves live on `[0, 1]`. Integrals against `Z` or `X` use the
//! trapezoidal rule on the regular grid; Brownian motion is pinned at 0.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{GhcmError, Result};
use crate::funcsample::{FunctionSample, FunctionalData, Grid};

/// Number of Simpson nodes used for `alpha_coef`.
pub const ALPHA_NODES: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    NullScalar,
    AltScalar,
    AltScalarScaled,
    NullFunctional,
    AltFunctional,
    Truncated,
    HeavyTailNull,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::NullScalar,
        Family::AltScalar,
        Family::AltScalarScaled,
        Family::NullFunctional,
        Family::AltFunctional,
        Family::Truncated,
        Family::HeavyTailNull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::NullScalar => "null_scalar",
            Family::AltScalar => "alt_scalar",
            Family::AltScalarScaled => "alt_scalar_scaled",
            Family::NullFunctional => "null_functional",
            Family::AltFunctional => "alt_functional",
            Family::Truncated => "truncated",
            Family::HeavyTailNull => "heavy_tail_null",
        }
    }

    pub fn is_null(self) -> bool {
        matches!(
            self,
            Family::NullScalar | Family::NullFunctional | Family::HeavyTailNull
        )
    }

    fn scalar_response(self) -> bool {
        !matches!(self, Family::NullFunctional | Family::AltFunctional)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = GhcmError;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| GhcmError::Scenario(format!("unknown family '{s}'")))
    }
}

/// Per-observation grids of `max(min_points, Poisson(mean_points))` uniform points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrregularSpec {
    pub min_points: usize,
    pub mean_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub family: Family,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_sigma_x")]
    pub sigma_x: f64,
    pub n: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub irregular: Option<IrregularSpec>,
    pub seed: u64,
}

fn default_a() -> f64 {
    2.0
}

fn default_sigma_x() -> f64 {
    1.0
}

fn default_grid_size() -> usize {
    100
}

impl Scenario {
    /// `a = 2`, `sigma_x = 1`, 100 grid points.
    pub fn new(family: Family, n: usize, seed: u64) -> Self {
        Self {
            family,
            a: default_a(),
            sigma_x: default_sigma_x(),
            n,
            grid_size: default_grid_size(),
            theta: None,
            df: None,
            irregular: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GhcmError::Scenario(msg));
        if !(self.a > 0.0 && self.a.is_finite()) {
            return bad(format!("a must be positive, got {}", self.a));
        }
        if !(self.sigma_x > 0.0 && self.sigma_x.is_finite()) {
            return bad(format!("sigma_x must be positive, got {}", self.sigma_x));
        }
        if self.n < 3 {
            return bad(format!("n must be at least 3, got {}", self.n));
        }
        if self.grid_size < 4 {
            return bad(format!(
                "grid_size must be at least 4, got {}",
                self.grid_size
            ));
        }
        if let Some(theta) = self.theta {
            if !(theta > 0.0 && theta < 1.0) {
                return bad(format!("theta must lie in (0, 1), got {theta}"));
            }
        }
        if self.df == Some(0) {
            return bad("df must be at least 1".into());
        }
        if let Some(irr) = self.irregular {
            if irr.min_points < 4 {
                return bad(format!(
                    "irregular grids need at least 4 points, got min_points {}",
                    irr.min_points
                ));
            }
            if !(irr.mean_points >= 0.0 && irr.mean_points.is_finite()) {
                return bad(format!("invalid mean_points {}", irr.mean_points));
            }
        }
        match self.family {
            Family::Truncated if self.theta.is_none() => {
                bad("the truncated family needs theta".into())
            }
            Family::Truncated if self.irregular.is_some() => {
                bad("the truncated family is generated on a regular grid only".into())
            }
            Family::HeavyTailNull if self.df.is_none() => bad("heavy_tail_null needs df".into()),
            _ => Ok(()),
        }
    }

    /// Scenario for replication `r`, seeded independently of the others.
    pub fn replicate(&self, r: u64) -> Scenario {
        Scenario {
            seed: child_seed(self.seed, r),
            ..self.clone()
        }
    }
}

/// Known conditional means on the regular grid, when available.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Truth {
    /// `E(X | Z)`.
    pub x_given_z: Option<DMatrix<f64>>,
    /// `E(Y | Z)`.
    pub y_given_z: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub family: Family,
    pub x: FunctionalData,
    pub y: FunctionalData,
    /// Absent for the truncated family, where the conditioning block is
    /// cut out of `x` by the caller.
    pub z: Option<FunctionalData>,
    pub truth: Truth,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.n()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `r`: `splitmix64(splitmix64(seed) ^ r)`.
pub fn child_seed(seed: u64, r: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ r)
}

/// Brownian motion with variance `sigma^2` per unit time, evaluated at
/// sorted points in `[0, 1]`.
pub fn brownian_values<R: Rng + ?Sized>(points: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    let mut prev_t = 0.0;
    let mut level = 0.0;
    points
        .iter()
        .map(|&t| {
            let dt = (t - prev_t).max(0.0);
            let z: f64 = rng.sample(StandardNormal);
            level += sigma * dt.sqrt() * z;
            prev_t = t;
            level
        })
        .collect()
}

pub fn brownian_motion<R: Rng + ?Sized>(grid: &Grid, sigma: f64, rng: &mut R) -> FunctionSample {
    let values = brownian_values(grid.points(), sigma, rng);
    FunctionSample::new(grid.clone(), values).expect("finite values on a valid grid")
}

pub fn beta_kernel(a: f64, s: f64, t: f64) -> f64 {
    let st = s * t;
    a * (-0.5 * st * st).exp() * (a * st).sin()
}

/// `int_0^1 beta_a(s, t) ds` by composite Simpson on [`ALPHA_NODES`] nodes.
pub fn alpha_coef(a: f64, t: f64) -> f64 {
    simpson(|s| beta_kernel(a, s, t), ALPHA_NODES)
}

/// Composite Simpson on `[0, 1]`; `nodes` must be odd and at least 3.
fn simpson(f: impl Fn(f64) -> f64, nodes: usize) -> f64 {
    let panels = nodes - 1;
    let h = 1.0 / panels as f64;
    let mut sum = f(0.0) + f(1.0);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(k as f64 * h);
    }
    sum * h / 3.0
}

/// Trapezoidal weights for sorted points.
pub fn trapezoid_weights(points: &[f64]) -> Vec<f64> {
    let m = points.len();
    let mut w = vec![0.0; m];
    for k in 1..m {
        let h = 0.5 * (points[k] - points[k - 1]);
        w[k - 1] += h;
        w[k] += h;
    }
    w
}

/// `t -> int kernel(s, t) z(s) ds` at each of `out`.
pub fn apply_integral_operator(
    kernel: impl Fn(f64, f64) -> f64,
    z: &FunctionSample,
    out: &[f64],
) -> Vec<f64> {
    let s = z.grid().points();
    let w = trapezoid_weights(s);
    out.iter()
        .map(|&t| {
            s.iter()
                .zip(&w)
                .zip(z.values())
                .map(|((&sj, &wj), &zj)| wj * kernel(sj, t) * zj)
                .sum()
        })
        .collect()
}

/// `int coef(t) z(t) dt`.
pub fn integrate_against(coef: impl Fn(f64) -> f64, z: &FunctionSample) -> f64 {
    let t = z.grid().points();
    trapezoid_weights(t)
        .iter()
        .zip(t)
        .zip(z.values())
        .map(|((&w, &tk), &zk)| w * coef(tk) * zk)
        .sum()
}

/// `int_0^theta coef(t) z(t) dt`; the last partial interval uses the
/// linear interpolant of `z`.
pub fn truncated_integral(coef: impl Fn(f64) -> f64, z: &FunctionSample, theta: f64) -> f64 {
    let t = z.grid().points();
    let v = z.values();
    let f = |k: usize| coef(t[k]) * v[k];
    let mut total = 0.0;
    for k in 1..t.len() {
        if t[k] <= theta {
            total += 0.5 * (t[k] - t[k - 1]) * (f(k - 1) + f(k));
        } else {
            if t[k - 1] < theta {
                let frac = (theta - t[k - 1]) / (t[k] - t[k - 1]);
                let z_theta = v[k - 1] + frac * (v[k] - v[k - 1]);
                total += 0.5 * (theta - t[k - 1]) * (f(k - 1) + coef(theta) * z_theta);
            }
            break;
        }
    }
    total
}

/// Coefficient of the truncated linear model.
pub fn truncation_coef(t: f64) -> f64 {
    10.0 * (t + 1.0).powf(-1.0 / 3.0)
}

/// `max(min_points, Poisson(mean_points))` sorted uniform points.
pub fn irregular_grid<R: Rng + ?Sized>(spec: IrregularSpec, rng: &mut R) -> Grid {
    let drawn = if spec.mean_points > 0.0 {
        Poisson::new(spec.mean_points)
            .map(|p| p.sample(rng) as usize)
            .unwrap_or(0)
    } else {
        0
    };
    let m = drawn.max(spec.min_points);
    loop {
        let mut pts: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        pts.sort_by(f64::total_cmp);
        if let Ok(grid) = Grid::new(pts) {
            return grid;
        }
    }
}

/// Discretised operators shared by every observation of a scenario.
struct Operators {
    grid: Grid,
    weights: Vec<f64>,
    /// `B[k, j] = beta(s_j, t_k) w_j`, so `B z` integrates against `beta(., t_k)`.
    beta: DMatrix<f64>,
    /// `alpha(t_k) w_k`.
    alpha: DVector<f64>,
}

impl Operators {
    fn new(a: f64, grid_size: usize) -> Result<Self> {
        let grid = Grid::uniform(grid_size)?;
        let weights = trapezoid_weights(grid.points());
        let t = grid.points();
        let beta = DMatrix::from_fn(grid_size, grid_size, |k, j| {
            beta_kernel(a, t[j], t[k]) * weights[j]
        });
        let alpha = DVector::from_fn(grid_size, |k, _| alpha_coef(a, t[k]) * weights[k]);
        Ok(Self {
            grid,
            weights,
            beta,
            alpha,
        })
    }

    /// `int beta(s, t) f(s) ds` at arbitrary `t`, for `f` on the regular grid.
    fn beta_at(&self, a: f64, f: &DVector<f64>, out: &[f64]) -> Vec<f64> {
        let s = self.grid.points();
        out.iter()
            .map(|&t| {
                (0..s.len())
                    .map(|j| self.weights[j] * beta_kernel(a, s[j], t) * f[j])
                    .sum()
            })
            .collect()
    }
}

/// Draws a dataset.
pub fn generate(scn: &Scenario) -> Result<Dataset> {
    scn.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    if scn.family == Family::Truncated {
        return Ok(generate_truncated(scn, &mut rng));
    }
    let ops = Operators::new(scn.a, scn.grid_size)?;
    let d = scn.grid_size;
    let n = scn.n;
    let coupling = match scn.family {
        Family::AltScalar | Family::AltFunctional => 1.0 / scn.a,
        Family::AltScalarScaled => (100.0 / n as f64).sqrt() / scn.a,
        _ => 0.0,
    };
    let t_noise = match (scn.family, scn.df) {
        (Family::HeavyTailNull, Some(df)) => Some(
            StudentT::new(df as f64).map_err(|e| GhcmError::Scenario(format!("t noise: {e}")))?,
        ),
        _ => None,
    };
    let scalar_y = scn.family.scalar_response();

    let mut z_mat = DMatrix::zeros(n, d);
    let mut x_mean = DMatrix::zeros(n, d);
    let mut y_mean = DMatrix::zeros(n, if scalar_y { 1 } else { d });
    let mut x_dense = DMatrix::zeros(n, d);
    let mut y_scalar = Vec::with_capacity(n);
    let mut y_dense = DMatrix::zeros(n, d);
    let mut x_curves = Vec::new();
    let mut y_curves = Vec::new();

    for i in 0..n {
        let z = DVector::from_vec(brownian_values(ops.grid.points(), 1.0, &mut rng));
        let bz = &ops.beta * &z;

        // X on the regular grid, plus on its own observation points if irregular.
        let x_points = scn.irregular.map(|spec| irregular_grid(spec, &mut rng));
        let (x_latent, x_observed) = match &x_points {
            None => {
                let noise =
                    DVector::from_vec(brownian_values(ops.grid.points(), scn.sigma_x, &mut rng));
                (&bz + noise, None)
            }
            Some(pts) => {
                let (on_grid, on_pts) =
                    brownian_on_union(ops.grid.points(), pts.points(), scn.sigma_x, &mut rng);
                let signal = ops.beta_at(scn.a, &z, pts.points());
                let observed: Vec<f64> = signal.iter().zip(&on_pts).map(|(s, e)| s + e).collect();
                (&bz + DVector::from_vec(on_grid), Some(observed))
            }
        };

        if scalar_y {
            let eps = match &t_noise {
                Some(t) => t.sample(&mut rng),
                None => rng.sample(StandardNormal),
            };
            let mean = ops.alpha.dot(&z) + coupling * ops.alpha.dot(&bz);
            y_scalar.push(ops.alpha.dot(&z) + coupling * ops.alpha.dot(&x_latent) + eps);
            y_mean[(i, 0)] = mean;
        } else {
            let mean = &bz + coupling * (&ops.beta * &bz);
            y_mean.row_mut(i).copy_from(&mean.transpose());
            match scn.irregular {
                None => {
                    let noise =
                        DVector::from_vec(brownian_values(ops.grid.points(), 1.0, &mut rng));
                    let y = &bz + coupling * (&ops.beta * &x_latent) + noise;
                    y_dense.row_mut(i).copy_from(&y.transpose());
                }
                Some(spec) => {
                    let pts = irregular_grid(spec, &mut rng);
                    let mut y = ops.beta_at(scn.a, &z, pts.points());
                    if coupling != 0.0 {
                        let bx = ops.beta_at(scn.a, &x_latent, pts.points());
                        y.iter_mut().zip(bx).for_each(|(v, b)| *v += coupling * b);
                    }
                    let noise = brownian_values(pts.points(), 1.0, &mut rng);
                    y.iter_mut().zip(noise).for_each(|(v, e)| *v += e);
                    y_curves.push(FunctionSample::new(pts, y)?);
                }
            }
        }

        z_mat.row_mut(i).copy_from(&z.transpose());
        x_mean.row_mut(i).copy_from(&bz.transpose());
        match (x_points, x_observed) {
            (Some(pts), Some(obs)) => x_curves.push(FunctionSample::new(pts, obs)?),
            _ => x_dense.row_mut(i).copy_from(&x_latent.transpose()),
        }
    }

    let x = if scn.irregular.is_some() {
        FunctionalData::from_samples(x_curves)
    } else {
        FunctionalData::on_grid(ops.grid.clone(), x_dense)?
    };
    let y = if scalar_y {
        FunctionalData::scalars(&y_scalar)
    } else if scn.irregular.is_some() {
        FunctionalData::from_samples(y_curves)
    } else {
        FunctionalData::on_grid(ops.grid.clone(), y_dense)?
    };
    Ok(Dataset {
        family: scn.family,
        x,
        y,
        z: Some(FunctionalData::on_grid(ops.grid, z_mat)?),
        truth: Truth {
            x_given_z: Some(x_mean),
            y_given_z: Some(y_mean),
        },
    })
}

/// One Brownian path observed on two sorted point sets.
fn brownian_on_union<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    sigma: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut merged: Vec<f64> = a.iter().chain(b).copied().collect();
    merged.sort_by(f64::total_cmp);
    merged.dedup();
    let path = brownian_values(&merged, sigma, rng);
    let lookup = |pts: &[f64]| {
        pts.iter()
            .map(|t| path[merged.partition_point(|m| m < t)])
            .collect::<Vec<f64>>()
    };
    (lookup(a), lookup(b))
}

fn generate_truncated(scn: &Scenario, rng: &mut ChaCha8Rng) -> Dataset {
    let theta = scn.theta.expect("validated");
    let grid = Grid::uniform(scn.grid_size).expect("validated");
    let mut x = DMatrix::zeros(scn.n, scn.grid_size);
    let mut y = Vec::with_capacity(scn.n);
    let mut y_mean = DMatrix::zeros(scn.n, 1);
    for i in 0..scn.n {
        let path = brownian_motion(&grid, 1.0, rng);
        let signal = truncated_integral(truncation_coef, &path, theta);
        let eps: f64 = rng.sample(StandardNormal);
        y.push(signal + eps);
        y_mean[(i, 0)] = signal;
        x.row_mut(i).copy_from_slice(path.values());
    }
    Dataset {
        family: Family::Truncated,
        x: FunctionalData::on_grid(grid, x).expect("shape matches grid"),
        y: FunctionalData::scalars(&y),
        z: None,
        truth: Truth {
            x_given_z: None,
            y_given_z: Some(y_mean),
        },
    }
}

/// Three curve-valued variables: a Brownian hub and two leaves
/// `L_k(t) = int beta_2(s, t) H(s) ds + W_k(t)` with independent Brownian
/// noise `W_k`. The leaves are independent given the hub.
pub fn star_graph(n: usize, grid_size: usize, seed: u64) -> Result<Vec<FunctionalData>> {
    let ops = Operators::new(2.0, grid_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = vec![DMatrix::zeros(n, grid_size); 3];
    for i in 0..n {
        let hub = DVector::from_vec(brownian_values(ops.grid.points(), 1.0, &mut rng));
        let signal = &ops.beta * &hub;
        blocks[0].row_mut(i).copy_from(&hub.transpose());
        for block in blocks.iter_mut().skip(1) {
            let noise = DVector::from_vec(brownian_values(ops.grid.points(), 1.0, &mut rng));
            block.row_mut(i).copy_from(&(&signal + noise).transpose());
        }
    }
    blocks
        .into_iter()
        .map(|b| FunctionalData::on_grid(ops.grid.clone(), b))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    }

    #[test]
    fn brownian_endpoint_variance() {
        let grid = Grid::new(vec![0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ends: Vec<f64> = (0..10_000)
            .map(|_| {
                let b = brownian_motion(&grid, 1.0, &mut rng);
                assert_eq!(b.values()[0], 0.0);
                b.values()[1]
            })
            .collect();
        let v = variance(&ends);
        assert!((0.94..=1.06).contains(&v), "{v}");
    }

    #[test]
    fn brownian_covariance_is_min() {
        let grid = Grid::new(vec![0.25, 0.75]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draws: Vec<(f64, f64)> = (0..10_000)
            .map(|_| {
                let b = brownian_motion(&grid, 1.0, &mut rng);
                (b.values()[0], b.values()[1])
            })
            .collect();
        let n = draws.len() as f64;
        let (ma, mb) = draws
            .iter()
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
        let cov = draws.iter().map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
        assert!((cov - 0.25).abs() < 0.03, "{cov}");
        // first value is N(0, t0) when the grid starts above 0
        let firsts: Vec<f64> = draws.iter().map(|d| d.0).collect();
        assert!((variance(&firsts) - 0.25).abs() < 0.02);
    }

    #[test]
    fn brownian_is_deterministic() {
        let grid = Grid::uniform(50).unwrap();
        let a = brownian_motion(&grid, 0.5, &mut ChaCha8Rng::seed_from_u64(3));
        let b = brownian_motion(&grid, 0.5, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn beta_examples() {
        for a in [2.0, 6.0, 12.0] {
            for t in [0.0, 0.3, 1.0] {
                assert_eq!(beta_kernel(a, 0.0, t), 0.0);
                assert_eq!(beta_kernel(a, t, 0.0), 0.0);
            }
        }
        let expected = 2.0 * (-0.5f64).exp() * 2.0f64.sin();
        assert!((beta_kernel(2.0, 1.0, 1.0) - expected).abs() < 1e-15);
        assert!((beta_kernel(2.0, 1.0, 1.0) - 1.10298).abs() < 1e-4);
    }

    #[test]
    fn alpha_examples() {
        for a in [2.0, 6.0, 12.0] {
            assert_eq!(alpha_coef(a, 0.0), 0.0);
        }
        // independent 2001-node Simpson
        let fine = {
            let m = 2000;
            let h = 1.0 / m as f64;
            let f = |s: f64| beta_kernel(2.0, s, 1.0);
            let mut acc = f(0.0) + f(1.0);
            for k in 1..m {
                acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
            }
            acc * h / 3.0
        };
        assert!((alpha_coef(2.0, 1.0) - fine).abs() < 1e-8);
        for (a, tol) in [(6.0, 1e-8), (12.0, 1e-6)] {
            for t in [0.5, 1.0] {
                let coarse = alpha_coef(a, t);
                let fine = simpson(|s| beta_kernel(a, s, t), 2001);
                assert!((coarse - fine).abs() < tol, "a={a} t={t}");
            }
        }
    }

    #[test]
    fn integral_operator_examples() {
        let grid = Grid::uniform(100).unwrap();
        let zero = FunctionSample::new(grid.clone(), vec![0.0; 100]).unwrap();
        assert!(
            apply_integral_operator(|s, t| beta_kernel(2.0, s, t), &zero, grid.points())
                .iter()
                .all(|v| *v == 0.0)
        );
        let c = FunctionSample::new(grid.clone(), vec![1.7; 100]).unwrap();
        for v in apply_integral_operator(|_, _| 1.0, &c, &[0.0, 0.5, 1.0]) {
            assert!((v - 1.7).abs() < 1e-13);
        }
        assert!((integrate_against(|_| 1.0, &c) - 1.7).abs() < 1e-13);

        let lin = FunctionSample::new(grid.clone(), grid.points().to_vec()).unwrap();
        let out = [0.0, 0.25, 0.6, 1.0];
        let coarse = apply_integral_operator(|s, t| beta_kernel(2.0, s, t), &lin, &out);
        let m = 10_000;
        for (t, v) in out.iter().zip(coarse) {
            let h = 1.0 / m as f64;
            let fine: f64 = (0..m)
                .map(|k| {
                    let s = (k as f64 + 0.5) * h;
                    h * beta_kernel(2.0, s, *t) * s
                })
                .sum();
            assert!((v - fine).abs() < 1e-4, "t={t}");
        }
    }

    #[test]
    fn truncated_integral_handles_partial_interval() {
        let grid = Grid::uniform(121).unwrap();
        let one = FunctionSample::new(grid.clone(), vec![1.0; 121]).unwrap();
        assert!((truncated_integral(|_| 1.0, &one, 0.275) - 0.275).abs() < 1e-13);
        let lin = FunctionSample::new(grid.clone(), grid.points().to_vec()).unwrap();
        // trapezoid of t on a linear interpolant is exact
        assert!(
            (truncated_integral(|_| 1.0, &lin, 0.6753) - 0.6753f64.powi(2) / 2.0).abs() < 1e-13
        );
        assert_eq!(truncated_integral(|_| 1.0, &one, 0.0), 0.0);
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        for family in Family::ALL {
            let mut scn = Scenario::new(family, 10, 99);
            scn.grid_size = 20;
            scn.theta = Some(0.4);
            scn.df = Some(3);
            let a = generate(&scn).unwrap();
            let b = generate(&scn).unwrap();
            assert_eq!(a, b, "{family}");
            assert_eq!(a.n(), 10);
            assert_eq!(a.y.n(), 10);
            let c = generate(&scn.replicate(1)).unwrap();
            assert_ne!(a.y, c.y, "{family}");
        }
    }

    #[test]
    fn child_seeds_do_not_depend_on_replication_count() {
        let seeds: Vec<u64> = (0..5).map(|r| child_seed(42, r)).collect();
        let more: Vec<u64> = (0..50).map(|r| child_seed(42, r)).collect();
        assert_eq!(seeds[..], more[..5]);
        let mut uniq = more.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 50);
    }

    #[test]
    fn alternative_differs_from_null_only_in_response() {
        let null = generate(&Scenario::new(Family::NullScalar, 30, 5)).unwrap();
        let alt = generate(&Scenario::new(Family::AltScalar, 30, 5)).unwrap();
        assert_eq!(null.x, alt.x);
        assert_eq!(null.z, alt.z);
        assert_ne!(null.y, alt.y);
        let grid = Grid::uniform(100).unwrap();
        let xv = null.x.values().unwrap();
        for i in 0..30 {
            let xi =
                FunctionSample::new(grid.clone(), xv.row(i).iter().copied().collect()).unwrap();
            let extra = integrate_against(|t| alpha_coef(2.0, t) / 2.0, &xi);
            let diff = alt.y.values().unwrap()[(i, 0)] - null.y.values().unwrap()[(i, 0)];
            assert!((diff - extra).abs() < 1e-10);
        }
    }

    #[test]
    fn null_noise_has_unit_variance() {
        let scn = Scenario::new(Family::NullScalar, 10_000, 17);
        let ds = generate(&scn).unwrap();
        let y = ds.y.values().unwrap();
        let mean = ds.truth.y_given_z.as_ref().unwrap();
        let resid: Vec<f64> = (0..scn.n).map(|i| y[(i, 0)] - mean[(i, 0)]).collect();
        let v = variance(&resid);
        assert!((v - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn conditional_mean_of_x_matches_truth() {
        let mut scn = Scenario::new(Family::NullFunctional, 4000, 21);
        scn.grid_size = 25;
        scn.sigma_x = 0.25;
        let ds = generate(&scn).unwrap();
        let noise = ds.x.values().unwrap() - ds.truth.x_given_z.as_ref().unwrap();
        let last: Vec<f64> = noise.column(24).iter().copied().collect();
        // N_X(1) ~ N(0, sigma_x^2)
        assert!((variance(&last) / 0.0625 - 1.0).abs() < 0.08);
    }

    #[test]
    fn irregular_grids_have_minimum_size() {
        let mut scn = Scenario::new(Family::AltFunctional, 40, 8);
        scn.grid_size = 30;
        scn.irregular = Some(IrregularSpec {
            min_points: 4,
            mean_points: 6.0,
        });
        let ds = generate(&scn).unwrap();
        for data in [&ds.x, &ds.y] {
            let FunctionalData::Irregular(curves) = data else {
                panic!("expected irregular curves");
            };
            assert!(curves.iter().all(|c| c.len() >= 4));
            assert!(curves.iter().any(|c| c.len() > 4));
        }
        scn.irregular = Some(IrregularSpec {
            min_points: 4,
            mean_points: 0.0,
        });
        let ds = generate(&scn).unwrap();
        let FunctionalData::Irregular(curves) = &ds.x else {
            panic!("expected irregular curves");
        };
        assert!(curves.iter().all(|c| c.len() == 4));
    }

    #[test]
    fn union_path_is_consistent() {
        let a = [0.0, 0.5, 1.0];
        let b = [0.25, 0.5, 0.9];
        let (pa, pb) = brownian_on_union(&a, &b, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(pa[1], pb[1]);
        assert_eq!(pa[0], 0.0);
    }

    #[test]
    fn scenario_validation() {
        let ok = Scenario::new(Family::NullScalar, 10, 1);
        assert!(ok.validate().is_ok());
        let mut s = ok.clone();
        s.n = 2;
        assert!(matches!(s.validate(), Err(GhcmError::Scenario(_))));
        let mut s = ok.clone();
        s.a = 0.0;
        assert!(s.validate().is_err());
        let mut s = ok.clone();
        s.family = Family::Truncated;
        assert!(s.validate().is_err());
        s.theta = Some(1.0);
        assert!(s.validate().is_err());
        let mut s = ok.clone();
        s.family = Family::HeavyTailNull;
        assert!(s.validate().is_err());
        assert!("bogus".parse::<Family>().is_err());
        assert_eq!(
            "alt_scalar_scaled".parse::<Family>().unwrap(),
            Family::AltScalarScaled
        );
    }

    #[test]
    fn scenario_json_round_trip() {
        let mut s = Scenario::new(Family::Truncated, 100, u64::MAX);
        s.theta = Some(0.275);
        s.grid_size = 121;
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Scenario>(&json).unwrap(), s);
        let minimal: Scenario =
            serde_json::from_str(r#"{"family":"null_scalar","n":50,"seed":3}"#).unwrap();
        assert_eq!(minimal, Scenario::new(Family::NullScalar, 50, 3));
        assert!(serde_json::from_str::<Scenario>(r#"{"family":"nope","n":5,"seed":1}"#).is_err());
    }

    #[test]
    fn star_graph_shapes() {
        let vars = star_graph(12, 15, 3).unwrap();
        assert_eq!(vars.len(), 3);
        assert!(vars
            .iter()
            .all(|v| v.n() == 12 && v.grid().unwrap().len() == 15));
        assert_eq!(vars, star_graph(12, 15, 3).unwrap());
    }
}
