//! Upper-tail probabilities of `sum_k lambda_k W_k`, `W_k` iid chi-square(1),
//! by numerical inversion of the characteristic function (Imhof).
//!
//! ```text
//! P(Q > x) = 1/2 + (1/pi) * int_0^inf sin(theta(u)) / (u rho(u)) du
//! theta(u) = 1/2 sum_k atan(lambda_k u) - x u / 2
//! rho(u)   = prod_k (1 + lambda_k^2 u^2)^(1/4)
//! ```
//!
//! `theta` is concave with `theta(0) = 0`, so the zeros of `sin(theta)` are
//! easy to bracket. The integral is accumulated between consecutive zeros
//! with adaptive Simpson. Integration stops once Imhof's truncation bound
//! drops below the tolerance; otherwise the alternating tail is summed with
//! iterated averaging of partial sums (Euler-type acceleration).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GhcmError, Result};

/// Relative drop tolerance for tiny weights.
pub const WEIGHT_DROP_TOL: f64 = 1e-12;

/// A weighted sum of independent chi-square(1) variables with positive
/// weights, stored in decreasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedChiSq {
    weights: Vec<f64>,
}

impl WeightedChiSq {
    /// Weights below `1e-12 * max` are discarded.
    pub fn new(weights: &[f64]) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(GhcmError::NonFinite(format!("weight {w}")));
        }
        if let Some(w) = weights.iter().find(|&&w| w < 0.0) {
            return Err(GhcmError::InvalidArgument(format!(
                "negative weight {w}; only non-negative weights are supported"
            )));
        }
        let max = weights.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(GhcmError::InvalidArgument(
                "at least one positive weight is required".into(),
            ));
        }
        let mut kept: Vec<f64> = weights
            .iter()
            .copied()
            .filter(|&w| w >= WEIGHT_DROP_TOL * max)
            .collect();
        kept.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { weights: kept })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImhofOptions {
    /// Absolute tolerance on the integral.
    pub abs_tol: f64,
    /// Budget of integrand evaluations.
    pub max_evals: usize,
}

impl Default for ImhofOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            max_evals: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailProbability {
    pub p_value: f64,
    /// Estimated absolute error of `p_value`.
    pub error_bound: f64,
    pub evaluations: usize,
}

/// `P(Q > x)` with default options.
pub fn upper_tail_prob(dist: &WeightedChiSq, x: f64) -> Result<f64> {
    upper_tail_prob_with(dist, x, ImhofOptions::default()).map(|t| t.p_value)
}

pub fn upper_tail_prob_with(
    dist: &WeightedChiSq,
    x: f64,
    opts: ImhofOptions,
) -> Result<TailProbability> {
    if !x.is_finite() {
        return Err(GhcmError::NonFinite(format!("quantile argument {x}")));
    }
    if x <= 0.0 {
        return Ok(TailProbability {
            p_value: 1.0,
            error_bound: 0.0,
            evaluations: 0,
        });
    }
    // Work on the scale where the largest weight is 1; the integral is
    // invariant under u -> c u.
    let scale = dist.weights[0];
    let weights: Vec<f64> = dist.weights.iter().map(|w| w / scale).collect();
    let integrand = Integrand::new(weights, x / scale);
    let (integral, err, evals) = integrand.integrate(opts)?;
    let p = (0.5 + integral / std::f64::consts::PI).clamp(0.0, 1.0);
    Ok(TailProbability {
        p_value: p,
        error_bound: err / std::f64::consts::PI,
        evaluations: evals,
    })
}

struct Integrand {
    weights: Vec<f64>,
    x: f64,
    /// `ln(prod_{r<=m} w_r^{1/2})` for each prefix length `m`.
    log_half_prod: Vec<f64>,
}

/// Segments of constant sign on the decreasing side before giving up.
const MAX_SEGMENTS: usize = 200_000;
/// Depth of the iterated-averaging triangle.
const AVERAGING_DEPTH: usize = 14;

impl Integrand {
    fn new(weights: Vec<f64>, x: f64) -> Self {
        let mut log_half_prod = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += 0.5 * w.ln();
            log_half_prod.push(acc);
        }
        Self {
            weights,
            x,
            log_half_prod,
        }
    }

    fn theta(&self, u: f64) -> f64 {
        0.5 * self.weights.iter().map(|w| (w * u).atan()).sum::<f64>() - 0.5 * self.x * u
    }

    fn theta_prime(&self, u: f64) -> f64 {
        0.5 * self
            .weights
            .iter()
            .map(|w| w / (1.0 + w * w * u * u))
            .sum::<f64>()
            - 0.5 * self.x
    }

    fn value(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.5 * (self.weights.iter().sum::<f64>() - self.x);
        }
        let mut theta = 0.0;
        let mut log_rho = 0.0;
        for w in &self.weights {
            let wu = w * u;
            theta += wu.atan();
            log_rho += (wu * wu).ln_1p();
        }
        theta = 0.5 * theta - 0.5 * self.x * u;
        theta.sin() / (u * (0.25 * log_rho).exp())
    }

    /// Imhof's bound on `int_U^inf |integrand|`, minimised over the number of
    /// leading weights used to lower-bound `rho`.
    fn truncation_bound(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return f64::INFINITY;
        }
        let ln_u = u.ln();
        let mut best = f64::INFINITY;
        for (m, lhp) in self.log_half_prod.iter().enumerate() {
            let k = 0.5 * (m + 1) as f64;
            let log_bound = -(std::f64::consts::PI * k).ln() - k * ln_u - lhp;
            best = best.min(log_bound.exp());
        }
        best
    }

    /// Point where `theta` attains its maximum.
    fn peak(&self) -> f64 {
        if self.theta_prime(0.0) <= 0.0 {
            return 0.0;
        }
        let mut hi = 1.0;
        while self.theta_prime(hi) > 0.0 {
            hi *= 2.0;
        }
        bisect(0.0, hi, |u| self.theta_prime(u) > 0.0)
    }

    fn integrate(&self, opts: ImhofOptions) -> Result<(f64, f64, usize)> {
        let seg_tol = opts.abs_tol / 64.0;
        let mut evals = 0usize;
        let mut integral = 0.0;
        let mut int_err = 0.0;

        // Rising side: split [0, peak] where theta crosses multiples of pi.
        let peak = self.peak();
        let theta_max = self.theta(peak);
        let top = (theta_max / std::f64::consts::PI).floor() as i64;
        let mut left = 0.0;
        for j in 1..=top {
            let level = j as f64 * std::f64::consts::PI;
            let right = bisect(left, peak, |u| self.theta(u) < level);
            let (v, e) = self.segment(left, right, seg_tol, &mut evals, opts)?;
            integral += v;
            int_err += e;
            left = right;
        }

        // First falling crossing of top * pi after the peak.
        let mut level = top as f64 * std::f64::consts::PI;
        let first = if theta_max == level {
            peak
        } else {
            let mut hi = peak.max(1.0);
            while self.theta(hi) > level {
                hi *= 2.0;
            }
            bisect(peak, hi, |u| self.theta(u) > level)
        };
        if first > left {
            let (v, e) = self.segment(left, first, seg_tol, &mut evals, opts)?;
            integral += v;
            int_err += e;
        }

        // Falling side: alternating segments.
        let mut u = first;
        let mut partial = vec![integral];
        let mut accelerated: Vec<f64> = Vec::new();
        for _ in 0..MAX_SEGMENTS {
            let tail = self.truncation_bound(u);
            if tail <= 0.5 * opts.abs_tol {
                return Ok((integral, int_err + tail, evals));
            }
            level -= std::f64::consts::PI;
            let slope = self.theta_prime(u);
            let next = if slope < 0.0 {
                // Concavity keeps theta below its tangent at u.
                let hi = u + std::f64::consts::PI / -slope;
                bisect(u, hi, |v| self.theta(v) > level)
            } else {
                let mut hi = u + 1.0;
                while self.theta(hi) > level {
                    hi = u + 2.0 * (hi - u);
                }
                bisect(u, hi, |v| self.theta(v) > level)
            };
            let (v, e) = self.segment(u, next, seg_tol, &mut evals, opts)?;
            integral += v;
            int_err += e;
            u = next;
            partial.push(integral);

            if partial.len() > AVERAGING_DEPTH + 1 {
                let window = &partial[partial.len() - AVERAGING_DEPTH - 1..];
                accelerated.push(iterated_average(window));
                let n = accelerated.len();
                if n >= 3 {
                    let d1 = (accelerated[n - 1] - accelerated[n - 2]).abs();
                    let d2 = (accelerated[n - 2] - accelerated[n - 3]).abs();
                    if d1.max(d2) <= 0.25 * opts.abs_tol {
                        return Ok((accelerated[n - 1], int_err + d1.max(d2), evals));
                    }
                }
            }
        }
        Err(GhcmError::Convergence {
            estimate: (0.5 + integral / std::f64::consts::PI).clamp(0.0, 1.0),
            error_bound: self.truncation_bound(u) / std::f64::consts::PI,
        })
    }

    fn segment(
        &self,
        a: f64,
        b: f64,
        tol: f64,
        evals: &mut usize,
        opts: ImhofOptions,
    ) -> Result<(f64, f64)> {
        let f = |u: f64| self.value(u);
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        *evals += 3;
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        let mut err = 0.0;
        let v = adaptive_simpson(&f, a, b, fa, fm, fb, whole, tol, 48, evals, &mut err);
        if *evals > opts.max_evals {
            return Err(GhcmError::Convergence {
                estimate: f64::NAN,
                error_bound: f64::INFINITY,
            });
        }
        Ok((v, err))
    }
}

/// Last point where `below` holds on a monotone predicate over `[lo, hi]`.
fn bisect(mut lo: f64, mut hi: f64, below: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    evals: &mut usize,
    err: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    *evals += 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        *err += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, evals, err)
        + adaptive_simpson(
            f,
            m,
            b,
            fm,
            frm,
            fb,
            right,
            0.5 * tol,
            depth - 1,
            evals,
            err,
        )
}

/// Repeatedly averages neighbouring partial sums until one value remains.
fn iterated_average(partial: &[f64]) -> f64 {
    let mut row = partial.to_vec();
    while row.len() > 1 {
        for i in 0..row.len() - 1 {
            row[i] = 0.5 * (row[i] + row[i + 1]);
        }
        row.pop();
    }
    row[0]
}

/// Monte Carlo estimate of `P(Q > x)`; deterministic for a given seed.
pub fn mc_upper_tail(dist: &WeightedChiSq, x: f64, n_draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mc_upper_tail_rng(dist.weights(), x, n_draws, &mut rng)
}

fn mc_upper_tail_rng(weights: &[f64], x: f64, n_draws: usize, rng: &mut ChaCha8Rng) -> f64 {
    if n_draws == 0 {
        return f64::NAN;
    }
    let mut hits = 0usize;
    for _ in 0..n_draws {
        let q: f64 = weights
            .iter()
            .map(|w| {
                let z: f64 = StandardNormal.sample(rng);
                w * z * z
            })
            .sum();
        if q > x {
            hits += 1;
        }
    }
    hits as f64 / n_draws as f64
}
