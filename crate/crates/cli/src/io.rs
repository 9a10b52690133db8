//! Session tables on disk.
//!
//! TAC files carry the header `time_hours,tac_mg_dl`, BrAC files
//! `time_hours,brac_pct`. Times are in hours and need not be equally spaced
//! or shared between the two tables.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use tac_core::{BracCurve, Session};

use crate::error::{CliError, CliResult};

pub const TAC_HEADER: [&str; 2] = ["time_hours", "tac_mg_dl"];
pub const BRAC_HEADER: [&str; 2] = ["time_hours", "brac_pct"];
pub const FIT_HEADER: [&str; 3] = ["time_hours", "observed_tac", "fitted_tac"];

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Reads a two-column table with the given header. Rows out of time order
/// are sorted, with a warning.
pub fn read_table(path: &Path, header: [&str; 2], warnings: &mut Vec<String>) -> CliResult<Table> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(file);
    let parse_err = |e: csv::Error| CliError::Parse {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        message: match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                format!("expected {expected_len} fields, found {len}")
            }
            _ => e.to_string(),
        },
    };

    let found = reader.headers().map_err(parse_err)?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(parse_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> CliResult<f64> {
            let raw = &record[i];
            let v: f64 = raw.parse().map_err(|_| CliError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("`{}` is not a number in column `{}`", raw, header[i]),
            })?;
            if !v.is_finite() {
                return Err(CliError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("non-finite value in column `{}`", header[i]),
                });
            }
            Ok(v)
        };
        let (t, v) = (field(0)?, field(1)?);
        if t < 0.0 {
            return Err(CliError::Parse { path: path.to_path_buf(), line, message: format!("negative time {t}") });
        }
        rows.push((t, v));
    }

    if rows.len() < 2 {
        return Err(CliError::Table {
            path: path.to_path_buf(),
            message: format!("need at least 2 rows, found {}", rows.len()),
        });
    }
    if rows.windows(2).any(|w| w[1].0 < w[0].0) {
        warnings.push(format!("{}: rows were not in time order and have been sorted", path.display()));
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let (times, values) = rows.into_iter().unzip();
    Ok(Table { times, values })
}

/// Linear interpolation of a sorted table; zero before the first time and
/// the last value after the last.
pub fn interpolate(table: &Table, t: f64) -> f64 {
    let (ts, vs) = (&table.times, &table.values);
    if t < ts[0] {
        return 0.0;
    }
    let i = ts.partition_point(|&x| x <= t);
    if i == ts.len() {
        return *vs.last().unwrap();
    }
    let (t0, t1) = (ts[i - 1], ts[i]);
    let w = (t - t0) / (t1 - t0);
    vs[i - 1] + w * (vs[i] - vs[i - 1])
}

/// Piecewise-constant input on `n` equal subintervals of `[0, horizon]`,
/// each level the mean of the interpolated BrAC at its two endpoints.
/// Negative readings are clipped to zero.
pub fn brac_curve(table: &Table, horizon: f64, n: usize) -> CliResult<BracCurve> {
    let node = |i: usize| if i == n { horizon } else { horizon * i as f64 / n as f64 };
    let values: Vec<f64> = (0..=n).map(|i| interpolate(table, node(i)).max(0.0)).collect();
    let levels = values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    Ok(BracCurve::uniform(horizon, levels)?)
}

/// Loads a TAC/BrAC pair as one session over `[0, T]`, `T` the last time in
/// either table.
pub fn load_session(
    tac_path: &Path,
    brac_path: &Path,
    subintervals: usize,
    warnings: &mut Vec<String>,
) -> CliResult<(Session, Table)> {
    let tac = read_table(tac_path, TAC_HEADER, warnings)?;
    let brac = read_table(brac_path, BRAC_HEADER, warnings)?;
    let horizon = tac.times.last().unwrap().max(*brac.times.last().unwrap());
    if !(horizon > 0.0) {
        return Err(CliError::Table { path: tac_path.to_path_buf(), message: "all times are zero".into() });
    }
    if tac.times.windows(2).any(|w| w[0] == w[1]) {
        warnings.push(format!("{}: repeated observation times", tac_path.display()));
    }
    let curve = brac_curve(&brac, horizon, subintervals)?;
    let session = Session::new(tac.times.clone(), tac.values.clone(), curve)?;
    Ok((session, brac))
}

/// Writes a CSV with `header` and rows of floats in shortest round-trip
/// form.
pub fn write_table<const N: usize>(path: &Path, header: [&str; N], rows: impl IntoIterator<Item = [f64; N]>) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::io(path, e);
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}
