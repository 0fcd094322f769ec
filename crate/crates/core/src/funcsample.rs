//! Discretised functions on `[0, 1]`, their inner products, and natural cubic
//! spline interpolation for curves observed on irregular grids.
//!
//! Two inner products are offered. The dense one is the plain Euclidean dot
//! product of evaluation vectors on a shared grid (no `1/d` Riemann factor:
//! downstream p-values are invariant to rescaling the statistic). The spline
//! one interpolates each curve by a natural cubic spline and integrates the
//! product over `[0, 1]` exactly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GhcmError, Result};

/// Strictly increasing evaluation points inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(GhcmError::InvalidGrid(format!(
                "a grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        for (k, &t) in points.iter().enumerate() {
            if !t.is_finite() || !(0.0..=1.0).contains(&t) {
                return Err(GhcmError::InvalidGrid(format!(
                    "point {k} = {t} lies outside [0, 1]"
                )));
            }
        }
        for (k, pair) in points.windows(2).enumerate() {
            if pair[1] == pair[0] {
                return Err(GhcmError::DegenerateGrid(format!(
                    "duplicate grid point {} at positions {k} and {}",
                    pair[0],
                    k + 1
                )));
            }
            if pair[1] < pair[0] {
                return Err(GhcmError::InvalidGrid(format!(
                    "grid is not increasing at position {}",
                    k + 1
                )));
            }
        }
        Ok(Self { points })
    }

    /// `d` equidistant points `0, 1/(d-1), ..., 1`.
    pub fn uniform(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(GhcmError::InvalidGrid(format!(
                "a uniform grid needs at least 2 points, got {d}"
            )));
        }
        let step = 1.0 / (d - 1) as f64;
        let mut points: Vec<f64> = (0..d).map(|k| k as f64 * step).collect();
        points[d - 1] = 1.0;
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest gap between consecutive points.
    pub fn max_spacing(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = GhcmError;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Grid::new(points)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(grid: Grid) -> Self {
        grid.points
    }
}

/// One observed curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSample {
    grid: Grid,
    values: Vec<f64>,
}

impl FunctionSample {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(GhcmError::DimensionMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(GhcmError::NonFinite(format!("function value at index {k}")));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Euclidean inner product of two curves observed on the same grid.
pub fn dot_dense(a: &FunctionSample, b: &FunctionSample) -> Result<f64> {
    if a.grid != b.grid {
        return Err(GhcmError::GridMismatch(
            "dense inner product requires identical grids".into(),
        ));
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum())
}

/// Piecewise cubic interpolant.
///
/// `coefs` holds one cubic per piece in the local variable `h = t - anchor`:
/// piece 0 extends left of the first knot, piece `k` (for `1 <= k < m`)
/// covers `[knots[k-1], knots[k]]`, and piece `m` extends right of the last
/// knot. Each piece is anchored at its left knot (piece 0 at `knots[0]`).
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    knots: Grid,
    coefs: Vec<[f64; 4]>,
}

impl CubicSpline {
    pub fn knots(&self) -> &Grid {
        &self.knots
    }

    /// Per-piece coefficients `[c0, c1, c2, c3]`, outer extrapolation pieces
    /// included.
    pub fn coefficients(&self) -> &[[f64; 4]] {
        &self.coefs
    }

    fn piece_index(&self, t: f64) -> usize {
        self.knots.points.partition_point(|&k| k <= t)
    }

    fn anchor(&self, piece: usize) -> f64 {
        self.knots.points[piece.max(1) - 1]
    }

    pub fn eval(&self, t: f64) -> f64 {
        let piece = self.piece_index(t);
        eval_cubic(&self.coefs[piece], t - self.anchor(piece))
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        let piece = self.piece_index(t);
        let [_, _, c2, c3] = self.coefs[piece];
        2.0 * c2 + 6.0 * c3 * (t - self.anchor(piece))
    }
}

#[inline]
fn eval_cubic(c: &[f64; 4], h: f64) -> f64 {
    c[0] + h * (c[1] + h * (c[2] + h * c[3]))
}

/// Natural cubic interpolating spline through the observed values.
///
/// Grids of 2 or 3 points fall back to the linear or quadratic interpolating
/// polynomial. Outside the knot range the spline continues linearly (the
/// natural extension); the polynomial fallbacks simply continue.
pub fn fit_natural_spline(fs: &FunctionSample) -> CubicSpline {
    let t = fs.grid.points();
    let y = fs.values();
    let m = t.len();
    let coefs = match m {
        2 | 3 => polynomial_pieces(t, y),
        _ => natural_pieces(t, y),
    };
    CubicSpline {
        knots: fs.grid.clone(),
        coefs,
    }
}

fn natural_pieces(t: &[f64], y: &[f64]) -> Vec<[f64; 4]> {
    let m = t.len();
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let slope: Vec<f64> = (0..m - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();

    // Thomas algorithm for the interior second derivatives; both ends are zero.
    let interior = m - 2;
    let mut diag = vec![0.0; interior];
    let mut rhs = vec![0.0; interior];
    for i in 0..interior {
        diag[i] = 2.0 * (h[i] + h[i + 1]);
        rhs[i] = 6.0 * (slope[i + 1] - slope[i]);
    }
    for i in 1..interior {
        let w = h[i] / diag[i - 1];
        diag[i] -= w * h[i];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut second = vec![0.0; m];
    for i in (0..interior).rev() {
        let upper = if i + 1 < interior {
            h[i + 1] * second[i + 2]
        } else {
            0.0
        };
        second[i + 1] = (rhs[i] - upper) / diag[i];
    }

    let mut coefs = Vec::with_capacity(m + 1);
    let first_slope = slope[0] - h[0] * (2.0 * second[0] + second[1]) / 6.0;
    coefs.push([y[0], first_slope, 0.0, 0.0]);
    for k in 0..m - 1 {
        coefs.push([
            y[k],
            slope[k] - h[k] * (2.0 * second[k] + second[k + 1]) / 6.0,
            second[k] / 2.0,
            (second[k + 1] - second[k]) / (6.0 * h[k]),
        ]);
    }
    let last = coefs[m - 1];
    let hl = h[m - 2];
    let end_slope = last[1] + 2.0 * last[2] * hl + 3.0 * last[3] * hl * hl;
    coefs.push([y[m - 1], end_slope, 0.0, 0.0]);
    coefs
}

/// Interpolating polynomial of degree `m - 1` re-expanded around each anchor.
fn polynomial_pieces(t: &[f64], y: &[f64]) -> Vec<[f64; 4]> {
    // Newton form: p(s) = y0 + d1 (s - t0) + d2 (s - t0)(s - t1).
    let d1 = (y[1] - y[0]) / (t[1] - t[0]);
    let d2 = if t.len() == 3 {
        let d12 = (y[2] - y[1]) / (t[2] - t[1]);
        (d12 - d1) / (t[2] - t[0])
    } else {
        0.0
    };
    let value = |s: f64| y[0] + d1 * (s - t[0]) + d2 * (s - t[0]) * (s - t[1]);
    let deriv = |s: f64| d1 + d2 * (2.0 * s - t[0] - t[1]);
    let m = t.len();
    (0..=m)
        .map(|piece| {
            let a = t[piece.max(1) - 1];
            [value(a), deriv(a), d2, 0.0]
        })
        .collect()
}

const GAUSS_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Exact `L2[0, 1]` inner product of two splines.
///
/// On every interval of the merged knot set both splines are single cubics,
/// so four-point Gauss-Legendre (exact up to degree 7) integrates the product
/// without error.
pub fn spline_l2_inner(s1: &CubicSpline, s2: &CubicSpline) -> f64 {
    let mut breaks: Vec<f64> = Vec::with_capacity(s1.knots.len() + s2.knots.len() + 2);
    breaks.push(0.0);
    breaks.push(1.0);
    breaks.extend(
        s1.knots
            .points()
            .iter()
            .copied()
            .filter(|&t| t > 0.0 && t < 1.0),
    );
    breaks.extend(
        s2.knots
            .points()
            .iter()
            .copied()
            .filter(|&t| t > 0.0 && t < 1.0),
    );
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let p1 = s1.piece_index(mid);
        let p2 = s2.piece_index(mid);
        let (c1, a1) = (&s1.coefs[p1], s1.anchor(p1));
        let (c2, a2) = (&s2.coefs[p2], s2.anchor(p2));
        let mut acc = 0.0;
        for (x, wt) in GAUSS_NODES.iter().zip(GAUSS_WEIGHTS) {
            let t = mid + half * x;
            acc += wt * eval_cubic(c1, t - a1) * eval_cubic(c2, t - a2);
        }
        total += half * acc;
    }
    total
}

/// Which inner product residuals and covariates are compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerProduct {
    #[default]
    Euclidean,
    Spline,
}

/// `n` observations of one variable.
///
/// `Dense` rows share one coordinate system (a common grid, or plain
/// coordinates when `grid` is `None`, e.g. scalars or stacked variables).
/// `Irregular` curves each carry their own grid.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalData {
    Dense {
        grid: Option<Grid>,
        values: DMatrix<f64>,
    },
    Irregular(Vec<FunctionSample>),
}

impl FunctionalData {
    pub fn dense(values: DMatrix<f64>) -> Self {
        FunctionalData::Dense { grid: None, values }
    }

    pub fn on_grid(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(GhcmError::DimensionMismatch(format!(
                "{} columns for a grid of {} points",
                values.ncols(),
                grid.len()
            )));
        }
        Ok(FunctionalData::Dense {
            grid: Some(grid),
            values,
        })
    }

    pub fn scalars(values: &[f64]) -> Self {
        Self::dense(DMatrix::from_column_slice(values.len(), 1, values))
    }

    /// Collapses to `Dense` when every curve shares the same grid.
    pub fn from_samples(samples: Vec<FunctionSample>) -> Self {
        let shared = samples
            .split_first()
            .map(|(first, rest)| rest.iter().all(|s| s.grid == first.grid))
            .unwrap_or(false);
        if !shared {
            return FunctionalData::Irregular(samples);
        }
        let grid = samples[0].grid.clone();
        let values = DMatrix::from_fn(samples.len(), grid.len(), |i, k| samples[i].values[k]);
        FunctionalData::Dense {
            grid: Some(grid),
            values,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            FunctionalData::Dense { values, .. } => values.nrows(),
            FunctionalData::Irregular(samples) => samples.len(),
        }
    }

    pub fn grid(&self) -> Option<&Grid> {
        match self {
            FunctionalData::Dense { grid, .. } => grid.as_ref(),
            FunctionalData::Irregular(_) => None,
        }
    }

    pub fn values(&self) -> Option<&DMatrix<f64>> {
        match self {
            FunctionalData::Dense { values, .. } => Some(values),
            FunctionalData::Irregular(_) => None,
        }
    }

    /// Observation `i` as a curve; dense data needs a grid.
    pub fn sample(&self, i: usize) -> Result<FunctionSample> {
        match self {
            FunctionalData::Dense {
                grid: Some(grid),
                values,
            } => FunctionSample::new(grid.clone(), values.row(i).iter().copied().collect()),
            FunctionalData::Dense { grid: None, .. } => Err(GhcmError::Representation(
                "dense data without a grid cannot be viewed as curves".into(),
            )),
            FunctionalData::Irregular(samples) => Ok(samples[i].clone()),
        }
    }

    pub fn splines(&self) -> Result<Vec<CubicSpline>> {
        (0..self.n())
            .map(|i| self.sample(i).map(|s| fit_natural_spline(&s)))
            .collect()
    }

    /// Column-wise concatenation of dense blocks; grids are dropped.
    pub fn hstack(parts: &[&FunctionalData]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(GhcmError::InvalidArgument("nothing to concatenate".into()));
        };
        let n = first.n();
        let mut blocks = Vec::with_capacity(parts.len());
        for part in parts {
            let values = part.values().ok_or_else(|| {
                GhcmError::Representation("only dense data can be concatenated".into())
            })?;
            if values.nrows() != n {
                return Err(GhcmError::DimensionMismatch(format!(
                    "cannot concatenate blocks with {} and {} observations",
                    n,
                    values.nrows()
                )));
            }
            blocks.push(values);
        }
        let width = blocks.iter().map(|b| b.ncols()).sum();
        let mut out = DMatrix::zeros(n, width);
        let mut col = 0;
        for b in blocks {
            out.columns_mut(col, b.ncols()).copy_from(b);
            col += b.ncols();
        }
        Ok(Self::dense(out))
    }

    /// `n x n` matrix of pairwise inner products.
    pub fn gram(&self, inner: InnerProduct) -> Result<DMatrix<f64>> {
        match (inner, self) {
            (InnerProduct::Euclidean, FunctionalData::Dense { values, .. }) => {
                Ok(values * values.transpose())
            }
            (InnerProduct::Euclidean, FunctionalData::Irregular(_)) => {
                Err(GhcmError::Representation(
                    "the Euclidean inner product needs curves on a common grid; use the spline inner product"
                        .into(),
                ))
            }
            (InnerProduct::Spline, _) => Ok(spline_gram(&self.splines()?)),
        }
    }
}

pub(crate) fn spline_gram(splines: &[CubicSpline]) -> DMatrix<f64> {
    let n = splines.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spline_l2_inner(&splines[i], &splines[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}
