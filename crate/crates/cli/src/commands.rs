use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use ghcm::applications::{
    graph_edge_tests, truncation_ci, truncation_test, GroupSpec, TruncationCI,
};
use ghcm::funcsample::{FunctionalData, InnerProduct};
use ghcm::ghcm::{ghcm_test, GhcmOptions, GhcmResult, RegressionMethod};
use ghcm::quadform::{upper_tail_prob_with, ImhofOptions, WeightedChiSq};
use ghcm::regression::GammaChoice;
use ghcm::simulate::{generate, Family, Scenario};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{read_data, read_text, Format};

/// Coarser grids than this trigger a resolution warning in truncation-ci.
pub const CI_RESOLUTION_WARNING: f64 = 1.0 / 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerArg {
    Euclidean,
    Spline,
}

impl From<InnerArg> for InnerProduct {
    fn from(arg: InnerArg) -> Self {
        match arg {
            InnerArg::Euclidean => InnerProduct::Euclidean,
            InnerArg::Spline => InnerProduct::Spline,
        }
    }
}

/// `auto`, `none` or a positive number.
pub fn parse_gamma(s: &str) -> Result<GammaChoice, String> {
    match s {
        "auto" => Ok(GammaChoice::Auto),
        "none" => Ok(GammaChoice::None),
        v => match v.parse::<f64>() {
            Ok(g) if g > 0.0 && g.is_finite() => Ok(GammaChoice::Fixed(g)),
            _ => Err(format!(
                "gamma must be 'auto', 'none' or a positive number, got '{v}'"
            )),
        },
    }
}

pub fn parse_alpha(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(a) if a > 0.0 && a < 1.0 => Ok(a),
        _ => Err(format!("alpha must lie in (0, 1), got '{s}'")),
    }
}

fn options(inner: InnerArg, gamma: GammaChoice, alpha: f64) -> GhcmOptions {
    GhcmOptions {
        regression: RegressionMethod::Ridge { gamma },
        covariate_inner: inner.into(),
        residual_inner: inner.into(),
        alpha,
        imhof: ImhofOptions::default(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRequest {
    pub x: PathBuf,
    pub y: PathBuf,
    pub z: PathBuf,
    pub format: Format,
    pub inner: InnerArg,
    pub gamma: GammaChoice,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    #[serde(flatten)]
    pub result: GhcmResult,
    pub runtime_ms: f64,
    pub config: TestRequest,
}

pub fn cmd_test(req: &TestRequest) -> CliResult<ResultRecord> {
    let start = Instant::now();
    let x = read_data(&req.x, req.format)?;
    let y = read_data(&req.y, req.format)?;
    let z = read_data(&req.z, req.format)?;
    let result = ghcm_test(&x, &y, &z, &options(req.inner, req.gamma, req.alpha))?;
    Ok(ResultRecord {
        result,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
        config: req.clone(),
    })
}

/// A single scenario object or an array of them. The `seed` field is
/// taken from the command line and overrides any value in the file.
pub fn load_scenarios(path: &Path, seed: u64) -> CliResult<Vec<Scenario>> {
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        single => vec![single],
    };
    items
        .into_iter()
        .map(|mut item| {
            if let Some(obj) = item.as_object_mut() {
                obj.insert("seed".into(), seed.into());
            }
            let scn: Scenario = serde_json::from_value(item).map_err(|e| {
                CliError::Parse(format!("{}: invalid scenario: {e}", path.display()))
            })?;
            scn.validate()?;
            Ok(scn)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub family: Family,
    pub a: f64,
    pub sigma_x: f64,
    pub n: usize,
    pub alpha: f64,
    pub reps: u64,
    pub rejections: u64,
    pub rate: f64,
}

/// One replication: the GHCM test of the scenario's hypothesis. For the
/// truncated family this is `H_theta` at the true truncation point.
pub fn replicate_rejects(scn: &Scenario, r: u64, alpha: f64) -> CliResult<bool> {
    let ds = generate(&scn.replicate(r))?;
    let irregular = matches!(ds.x, FunctionalData::Irregular(_))
        || matches!(ds.y, FunctionalData::Irregular(_));
    let opts = if irregular {
        GhcmOptions::spline().with_alpha(alpha)
    } else {
        GhcmOptions::default().with_alpha(alpha)
    };
    let result = match &ds.z {
        Some(z) => Some(ghcm_test(&ds.x, &ds.y, z, &opts)?),
        None => {
            let theta = scn.theta.ok_or_else(|| {
                ghcm::GhcmError::Scenario("the truncated family needs theta".into())
            })?;
            truncation_test(&ds.x, &ds.y, theta, &opts)?
        }
    };
    Ok(result.is_some_and(|r| r.reject))
}

pub fn cmd_simulate(scenarios: &[Scenario], reps: u64, alpha: f64) -> CliResult<Vec<RateRow>> {
    if reps == 0 {
        return Ok(Vec::new());
    }
    scenarios
        .iter()
        .map(|scn| {
            let outcomes: Vec<CliResult<bool>> = (0..reps)
                .into_par_iter()
                .map(|r| replicate_rejects(scn, r, alpha))
                .collect();
            let mut rejections = 0;
            for o in outcomes {
                rejections += u64::from(o?);
            }
            Ok(RateRow {
                family: scn.family,
                a: scn.a,
                sigma_x: scn.sigma_x,
                n: scn.n,
                alpha,
                reps,
                rejections,
                rate: rejections as f64 / reps as f64,
            })
        })
        .collect()
}

pub fn rates_csv(rows: &[RateRow]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "family",
        "a",
        "sigma_x",
        "n",
        "alpha",
        "reps",
        "rejections",
        "rate",
    ])
    .map_err(|e| CliError::Parse(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.family.to_string(),
            r.a.to_string(),
            r.sigma_x.to_string(),
            r.n.to_string(),
            r.alpha.to_string(),
            r.reps.to_string(),
            r.rejections.to_string(),
            r.rate.to_string(),
        ])
        .map_err(|e| CliError::Parse(e.to_string()))?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> CliResult<String> {
    let bytes = w.into_inner().map_err(|e| CliError::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Parse(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRecord {
    #[serde(flatten)]
    pub ci: TruncationCI,
    pub warnings: Vec<String>,
}

pub fn cmd_truncation_ci(x: &Path, y: &Path, format: Format, alpha: f64) -> CliResult<CiRecord> {
    let x = read_data(x, format)?;
    let y = read_data(y, format)?;
    let ci = truncation_ci(&x, &y, &GhcmOptions::default().with_alpha(alpha))?;
    let mut warnings = Vec::new();
    if ci.resolution > CI_RESOLUTION_WARNING {
        warnings.push(format!(
            "grid spacing {} limits the resolution of the interval",
            ci.resolution
        ));
    }
    if ci.no_initial_accept {
        warnings.push(
            "no initial point was accepted; the bound was searched in the top bracket".into(),
        );
    }
    Ok(CiRecord { ci, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Correction {
    Bh,
    Bonferroni,
}

pub fn load_groups(path: Option<&Path>, data: &[PathBuf]) -> CliResult<GroupSpec> {
    match path {
        Some(p) => {
            let text = read_text(p)?;
            serde_json::from_str(&text).map_err(|e| {
                CliError::Core(ghcm::GhcmError::GroupSpec(format!("{}: {e}", p.display())))
            })
        }
        None => {
            let names = data.iter().enumerate().map(|(i, p)| {
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| i.to_string())
            });
            let groups = names
                .enumerate()
                .map(|(i, name)| ghcm::applications::Group {
                    name,
                    members: vec![i],
                })
                .collect();
            Ok(GroupSpec::new(groups)?)
        }
    }
}

pub fn cmd_graph(
    data: &[PathBuf],
    groups: &GroupSpec,
    format: Format,
    inner: InnerArg,
    alpha: f64,
    correction: Correction,
) -> CliResult<String> {
    let vars = data
        .iter()
        .map(|p| read_data(p, format))
        .collect::<CliResult<Vec<_>>>()?;
    let report = graph_edge_tests(&vars, groups, &options(inner, GammaChoice::Auto, alpha))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |v: Option<f64>| v.map(|p| p.to_string()).unwrap_or_default();
    w.write_record([
        "group_a", "group_b", "p_raw", "p_bonf", "p_bh", "reject", "error",
    ])
    .map_err(|e| CliError::Parse(e.to_string()))?;
    for e in &report.edges {
        let reject = match correction {
            Correction::Bh => e.reject_bh,
            Correction::Bonferroni => e.reject_bonferroni,
        };
        w.write_record([
            e.group_a.clone(),
            e.group_b.clone(),
            fmt(e.p_raw),
            fmt(e.p_bonferroni),
            fmt(e.p_bh),
            reject.to_string(),
            e.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| CliError::Parse(e.to_string()))?;
    }
    finish_csv(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadformRecord {
    pub weights: Vec<f64>,
    pub x: f64,
    pub p_value: f64,
    pub error_bound: f64,
    pub evaluations: usize,
}

pub fn cmd_quadform(weights: &[f64], x: f64) -> CliResult<QuadformRecord> {
    let dist = WeightedChiSq::new(weights)?;
    let tail = upper_tail_prob_with(&dist, x, ImhofOptions::default())?;
    Ok(QuadformRecord {
        weights: weights.to_vec(),
        x,
        p_value: tail.p_value,
        error_bound: tail.error_bound,
        evaluations: tail.evaluations,
    })
}
