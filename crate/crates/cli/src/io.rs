//! CSV ingestion.
//!
//! Wide files hold one observation per row. An optional first line
//! `# grid: t1,t2,...` attaches the evaluation points; without it the rows
//! are plain coordinate vectors (a single column gives scalars). Other lines
//! starting with `#` are comments.
//!
//! Long files start with the header `obs_id,t,value` and list one
//! evaluation per row. Observations keep the order of first appearance and
//! need at least [`MIN_LONG_POINTS`] points each.

use std::collections::HashMap;
use std::path::Path;

use clap::ValueEnum;
use ghcm::funcsample::{FunctionSample, FunctionalData, Grid};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MIN_LONG_POINTS: usize = 4;
pub const LONG_HEADER: [&str; 3] = ["obs_id", "t", "value"];
const GRID_PREFIX: &str = "# grid:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// Long if the header is `obs_id,t,value`, wide otherwise.
    Auto,
    Wide,
    Long,
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_data(path: &Path, format: Format) -> CliResult<FunctionalData> {
    let text = read_text(path)?;
    parse_data(&text, format).map_err(|e| match e {
        CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_data(text: &str, format: Format) -> CliResult<FunctionalData> {
    let format = match format {
        Format::Auto if looks_long(text) => Format::Long,
        Format::Auto => Format::Wide,
        f => f,
    };
    match format {
        Format::Long => parse_long(text),
        _ => parse_wide(text),
    }
}

fn looks_long(text: &str) -> bool {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split(',').map(str::trim).eq(LONG_HEADER))
        .unwrap_or(false)
}

fn parse_number(field: &str, line: u64, column: usize) -> CliResult<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        CliError::Parse(format!(
            "row {line}, column {column}: cannot parse '{}' as a number",
            field.trim()
        ))
    })
}

fn reader(body: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes())
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Parse(e.to_string())
}

pub fn parse_wide(text: &str) -> CliResult<FunctionalData> {
    let mut grid = None;
    if let Some(first) = text.lines().next() {
        if let Some(rest) = first.trim().strip_prefix(GRID_PREFIX) {
            let points = rest
                .split(',')
                .enumerate()
                .map(|(k, f)| parse_number(f, 1, k + 1))
                .collect::<CliResult<Vec<f64>>>()?;
            grid = Some(Grid::new(points)?);
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for record in reader(text).records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(k, f)| parse_number(f, line, k + 1))
            .collect::<CliResult<Vec<f64>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(CliError::Parse(format!(
                    "row {line}: expected {w} columns, found {}",
                    row.len()
                )))
            }
            _ => {}
        }
        rows.push(row);
    }
    let Some(width) = width else {
        return Err(CliError::Parse("no observations".into()));
    };
    let values = DMatrix::from_fn(rows.len(), width, |i, k| rows[i][k]);
    if let Some((i, k)) = (0..rows.len())
        .flat_map(|i| (0..width).map(move |k| (i, k)))
        .find(|&(i, k)| !rows[i][k].is_finite())
    {
        return Err(CliError::Parse(format!(
            "observation {}, column {}: non-finite value",
            i + 1,
            k + 1
        )));
    }
    Ok(match grid {
        Some(g) => FunctionalData::on_grid(g, values)?,
        None => FunctionalData::dense(values),
    })
}

pub fn parse_long(text: &str) -> CliResult<FunctionalData> {
    let mut records = reader(text).into_records();
    let header = loop {
        match records.next() {
            None => return Err(CliError::Parse("empty long-format file".into())),
            Some(r) => {
                let r = r.map_err(csv_error)?;
                if !(r.len() == 1 && r[0].is_empty()) {
                    break r;
                }
            }
        }
    };
    if !header.iter().eq(LONG_HEADER) {
        return Err(CliError::Parse(format!(
            "long format needs the header '{}'",
            LONG_HEADER.join(",")
        )));
    }

    let mut order: Vec<String> = Vec::new();
    let mut points: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(CliError::Parse(format!(
                "row {line}: expected 3 columns, found {}",
                record.len()
            )));
        }
        let id = record[0].to_string();
        let t = parse_number(&record[1], line, 2)?;
        let v = parse_number(&record[2], line, 3)?;
        if !v.is_finite() {
            return Err(CliError::Parse(format!(
                "row {line}, column 3: non-finite value"
            )));
        }
        points
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push((t, v));
    }
    if order.is_empty() {
        return Err(CliError::Parse("no observations".into()));
    }

    let samples = order
        .iter()
        .map(|id| {
            let mut obs = points.remove(id).unwrap_or_default();
            if obs.len() < MIN_LONG_POINTS {
                return Err(CliError::Parse(format!(
                    "observation '{id}' has {} points; at least {MIN_LONG_POINTS} are required",
                    obs.len()
                )));
            }
            obs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (t, v): (Vec<f64>, Vec<f64>) = obs.into_iter().unzip();
            let grid =
                Grid::new(t).map_err(|e| CliError::Parse(format!("observation '{id}': {e}")))?;
            Ok(FunctionSample::new(grid, v)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(FunctionalData::from_samples(samples))
}

pub fn write_output(path: Option<&Path>, contents: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, contents).map_err(|source| CliError::Write {
            path: p.display().to_string(),
            source,
        }),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wide_with_grid() {
        let text = "# grid: 0,0.5,1\n1,2,3\n4,5,6\n";
        let data = parse_data(text, Format::Auto).unwrap();
        assert_eq!(data.grid().unwrap().points(), &[0.0, 0.5, 1.0]);
        assert_eq!(data.values().unwrap()[(1, 2)], 6.0);
    }

    #[test]
    fn wide_without_grid_and_comments() {
        let text = "# scalar response\n1.5\n\n-2\n3e-1\n";
        let data = parse_wide(text).unwrap();
        assert!(data.grid().is_none());
        assert_eq!(data.values().unwrap().as_slice(), &[1.5, -2.0, 0.3]);
    }

    #[test]
    fn wide_errors_name_row_and_column() {
        let err = parse_wide("1,2\n3,x\n").unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("column 2"), "{err}");
        let err = parse_wide("1,2\n3\n").unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
        assert!(parse_wide("").is_err());
        assert!(parse_wide("# grid: 0,1\n1,2,3\n").is_err());
    }

    #[test]
    fn long_collapses_to_shared_grid() {
        let text =
            "obs_id,t,value\na,0,1\na,1,2\na,0.5,1.5\na,0.25,1\nb,0,0\nb,0.25,1\nb,0.5,2\nb,1,3\n";
        let data = parse_data(text, Format::Auto).unwrap();
        assert_eq!(data.grid().unwrap().points(), &[0.0, 0.25, 0.5, 1.0]);
        assert_eq!(
            data.values()
                .unwrap()
                .row(0)
                .iter()
                .copied()
                .collect::<Vec<_>>(),
            vec![1.0, 1.0, 1.5, 2.0]
        );
    }

    #[test]
    fn long_irregular_and_minimum() {
        let text =
            "obs_id,t,value\na,0,1\na,0.2,1\na,0.6,1\na,1,1\nb,0.1,0\nb,0.3,1\nb,0.5,2\nb,0.9,3\n";
        assert!(matches!(
            parse_long(text).unwrap(),
            FunctionalData::Irregular(_)
        ));
        let short = "obs_id,t,value\na,0,1\na,0.5,1\na,1,1\n";
        let err = parse_long(short).unwrap_err().to_string();
        assert!(err.contains("at least 4"), "{err}");
        let dup = "obs_id,t,value\na,0,1\na,0.5,1\na,0.5,2\na,1,1\n";
        assert!(parse_long(dup).is_err());
        assert!(parse_long("id,t,v\na,0,1\n").is_err());
    }
}
