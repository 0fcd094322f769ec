//! Truncation-point confidence intervals and edge tests in functional
//! graphical models.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GhcmError, Result};
use crate::funcsample::{FunctionalData, Grid};
use crate::ghcm::{ghcm_test, GhcmOptions, GhcmResult};

/// Number of equidistant interior points tested before bisecting.
pub const INITIAL_POINTS: usize = 5;

/// One-sided interval `[lower, 1]` for the truncation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationCI {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    /// `(theta, p-value)` in increasing `theta`.
    pub tested_points: Vec<(f64, f64)>,
    /// Set when none of the initial points was accepted and the search ran
    /// in the top bracket.
    pub no_initial_accept: bool,
    /// Largest grid spacing; bisection stops below it.
    pub resolution: f64,
}

/// Splits curves on a shared grid into the parts with `t <= theta` and
/// `t > theta`. Returns `None` when either side is empty.
pub fn split_at(
    x: &FunctionalData,
    theta: f64,
) -> Result<Option<(FunctionalData, FunctionalData)>> {
    let (Some(grid), Some(values)) = (x.grid(), x.values()) else {
        return Err(GhcmError::Representation(
            "truncation intervals need curves on a common grid".into(),
        ));
    };
    let cut = grid.points().partition_point(|&t| t <= theta);
    let d = grid.len();
    if cut == 0 || cut == d {
        return Ok(None);
    }
    let side = |start: usize, len: usize| {
        let block = values.columns(start, len).into_owned();
        if len < 2 {
            // a single point is not a curve
            Ok(FunctionalData::dense(block))
        } else {
            FunctionalData::on_grid(
                Grid::new(grid.points()[start..start + len].to_vec())?,
                block,
            )
        }
    };
    Ok(Some((side(0, cut)?, side(cut, d - cut)?)))
}

/// Tests `Y indep X(t > theta) | X(t <= theta)`; `None` for an empty side.
pub fn truncation_test(
    x: &FunctionalData,
    y: &FunctionalData,
    theta: f64,
    opts: &GhcmOptions,
) -> Result<Option<GhcmResult>> {
    match split_at(x, theta)? {
        None => Ok(None),
        Some((left, right)) => ghcm_test(&right, y, &left, opts).map(Some),
    }
}

pub fn truncation_ci(
    x: &FunctionalData,
    y: &FunctionalData,
    opts: &GhcmOptions,
) -> Result<TruncationCI> {
    let Some(grid) = x.grid() else {
        return Err(GhcmError::Representation(
            "truncation intervals need curves on a common grid".into(),
        ));
    };
    if x.n() < 3 {
        return Err(GhcmError::SampleSize(format!(
            "need at least 3 observations, got {}",
            x.n()
        )));
    }
    if y.n() != x.n() {
        return Err(GhcmError::DimensionMismatch(format!(
            "{} curves but {} responses",
            x.n(),
            y.n()
        )));
    }
    let resolution = grid.max_spacing();
    let mut tested = Vec::new();
    let accepts = |theta: f64, tested: &mut Vec<(f64, f64)>| -> Result<Option<bool>> {
        Ok(truncation_test(x, y, theta, opts)?.map(|r| {
            tested.push((theta, r.p_value));
            !r.reject
        }))
    };

    let mut bracket = None;
    let mut previous = 0.0;
    for k in 1..=INITIAL_POINTS {
        let theta = k as f64 / (INITIAL_POINTS + 1) as f64;
        if accepts(theta, &mut tested)? == Some(true) {
            bracket = Some((previous, theta));
            break;
        }
        previous = theta;
    }
    let no_initial_accept = bracket.is_none();
    // H_1 holds trivially: nothing lies to the right of t = 1.
    let (mut lo, mut hi) = bracket.unwrap_or((previous, 1.0));

    while hi - lo >= resolution {
        let mid = 0.5 * (lo + hi);
        match accepts(mid, &mut tested)? {
            Some(true) | None => hi = mid,
            Some(false) => lo = mid,
        }
    }
    tested.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(TruncationCI {
        lower: hi,
        upper: 1.0,
        alpha: opts.alpha,
        tested_points: tested,
        no_initial_accept,
        resolution,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    /// Indices into the list of variables.
    pub members: Vec<usize>,
}

/// Named, pairwise disjoint, non-empty groups of variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Group>", into = "Vec<Group>")]
pub struct GroupSpec {
    groups: Vec<Group>,
}

impl GroupSpec {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut names = HashSet::new();
        for g in &groups {
            if g.members.is_empty() {
                return Err(GhcmError::GroupSpec(format!("group '{}' is empty", g.name)));
            }
            if !names.insert(g.name.as_str()) {
                return Err(GhcmError::GroupSpec(format!(
                    "group name '{}' repeated",
                    g.name
                )));
            }
            for &m in &g.members {
                if !seen.insert(m) {
                    return Err(GhcmError::GroupSpec(format!(
                        "variable {m} belongs to more than one group"
                    )));
                }
            }
        }
        Ok(Self { groups })
    }

    /// One group per variable, named by index.
    pub fn singletons(count: usize) -> Self {
        Self {
            groups: (0..count)
                .map(|i| Group {
                    name: i.to_string(),
                    members: vec![i],
                })
                .collect(),
        }
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

impl TryFrom<Vec<Group>> for GroupSpec {
    type Error = GhcmError;

    fn try_from(groups: Vec<Group>) -> Result<Self> {
        GroupSpec::new(groups)
    }
}

impl From<GroupSpec> for Vec<Group> {
    fn from(spec: GroupSpec) -> Self {
        spec.groups
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeResult {
    pub group_a: String,
    pub group_b: String,
    pub p_raw: Option<f64>,
    pub p_bonferroni: Option<f64>,
    pub p_bh: Option<f64>,
    pub reject_bonferroni: bool,
    pub reject_bh: bool,
    /// Why the pair has no p-value.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTestReport {
    pub alpha: f64,
    /// Pairs `(j, k)` with `j < k` in group order.
    pub edges: Vec<EdgeResult>,
}

/// `min(1, m p)`.
pub fn bonferroni(p: &[f64]) -> Vec<f64> {
    let m = p.len() as f64;
    p.iter().map(|&v| (v * m).min(1.0)).collect()
}

/// Step-up adjusted p-values.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(p[i] * (m as f64 / (rank + 1) as f64));
        adjusted[i] = running.min(1.0);
    }
    adjusted
}

fn block(vars: &[FunctionalData], members: &[usize]) -> Result<FunctionalData> {
    if let [only] = members {
        return Ok(vars[*only].clone());
    }
    let parts: Vec<&FunctionalData> = members.iter().map(|&m| &vars[m]).collect();
    FunctionalData::hstack(&parts)
}

fn check_groups(vars: &[FunctionalData], groups: &GroupSpec) -> Result<()> {
    if groups.len() < 3 {
        return Err(GhcmError::GroupSpec(format!(
            "edge tests need at least 3 groups so that every pair has a conditioning set, got {}",
            groups.len()
        )));
    }
    for g in groups.groups() {
        if let Some(&m) = g.members.iter().find(|&&m| m >= vars.len()) {
            return Err(GhcmError::GroupSpec(format!(
                "group '{}' refers to variable {m} but only {} are given",
                g.name,
                vars.len()
            )));
        }
    }
    let n = vars[0].n();
    if let Some(v) = vars.iter().find(|v| v.n() != n) {
        return Err(GhcmError::DimensionMismatch(format!(
            "variables have {} and {} observations",
            n,
            v.n()
        )));
    }
    Ok(())
}

/// Tests `G_j indep G_k | all other groups`.
pub fn edge_test(
    vars: &[FunctionalData],
    groups: &GroupSpec,
    j: usize,
    k: usize,
    opts: &GhcmOptions,
) -> Result<GhcmResult> {
    check_groups(vars, groups)?;
    if j == k || j >= groups.len() || k >= groups.len() {
        return Err(GhcmError::InvalidArgument(format!(
            "invalid group pair ({j}, {k})"
        )));
    }
    let g = groups.groups();
    let rest: Vec<usize> = (0..g.len())
        .filter(|&m| m != j && m != k)
        .flat_map(|m| g[m].members.iter().copied())
        .collect();
    let x = block(vars, &g[j].members)?;
    let y = block(vars, &g[k].members)?;
    let z = block(vars, &rest)?;
    ghcm_test(&x, &y, &z, opts)
}

/// Every pairwise edge test, adjusted over the pairs that produced a p-value.
pub fn graph_edge_tests(
    vars: &[FunctionalData],
    groups: &GroupSpec,
    opts: &GhcmOptions,
) -> Result<EdgeTestReport> {
    check_groups(vars, groups)?;
    let count = groups.len();
    let pairs: Vec<(usize, usize)> = (0..count)
        .flat_map(|j| (j + 1..count).map(move |k| (j, k)))
        .collect();
    let outcomes: Vec<Result<GhcmResult>> = pairs
        .par_iter()
        .map(|&(j, k)| edge_test(vars, groups, j, k, opts))
        .collect();

    let raw: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok().map(|r| r.p_value))
        .collect();
    let bonf = bonferroni(&raw);
    let bh = benjamini_hochberg(&raw);
    let mut valid = 0;
    let names = groups.groups();
    let edges = pairs
        .iter()
        .zip(outcomes)
        .map(|(&(j, k), outcome)| {
            let mut edge = EdgeResult {
                group_a: names[j].name.clone(),
                group_b: names[k].name.clone(),
                p_raw: None,
                p_bonferroni: None,
                p_bh: None,
                reject_bonferroni: false,
                reject_bh: false,
                error: None,
            };
            match outcome {
                Ok(r) => {
                    edge.p_raw = Some(r.p_value);
                    edge.p_bonferroni = Some(bonf[valid]);
                    edge.p_bh = Some(bh[valid]);
                    edge.reject_bonferroni = bonf[valid] <= opts.alpha;
                    edge.reject_bh = bh[valid] <= opts.alpha;
                    valid += 1;
                }
                Err(e) => edge.error = Some(e.to_string()),
            }
            edge
        })
        .collect();
    Ok(EdgeTestReport {
        alpha: opts.alpha,
        edges,
    })
}
