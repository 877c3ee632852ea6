//! CSV ingestion and the output files.

use std::fs::File;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use mhs_core::harness::{MeasurementStream, Truth};
use mhs_core::model::{SimulationTrace, SwitchingSystem};
use mhs_core::smoother::ModeMarginals;

use crate::config::InputSpec;
use crate::error::CliError;

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    let file = File::create(path).map_err(|e| CliError::io(format!("{}", path.display()), e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(format!("{}", path.display()), io),
        other => CliError::Config(format!("{}: {other:?}", path.display())),
    }
}

fn finish(path: &Path, mut w: csv::Writer<File>) -> Result<(), CliError> {
    w.flush()
        .map_err(|e| CliError::io(format!("{}", path.display()), e))
}

fn write_rows(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (0..count).map(move |i| format!("{prefix}{i}"))
}

/// `step,mode,x0..,z0..`; row `k` carries the mode that produced `x_k`.
pub fn write_simulation(
    path: &Path,
    system: &SwitchingSystem,
    trace: &SimulationTrace,
) -> Result<(), CliError> {
    let header = ["step".to_string(), "mode".to_string()]
        .into_iter()
        .chain(numbered("x", system.state_dim))
        .chain(numbered("z", system.measurement_dim))
        .collect();
    let rows = (0..trace.steps())
        .map(|k| {
            let mode = match k {
                0 => String::new(),
                _ => trace.modes[k - 1].to_string(),
            };
            [k.to_string(), mode]
                .into_iter()
                .chain(trace.state(k).iter().map(|&v| float(v)))
                .chain(trace.measurement(k).iter().map(|&v| float(v)))
                .collect()
        })
        .collect();
    write_rows(path, header, rows)
}

/// `step,p_<label>..`, one row per slot starting at `first_slot`.
pub fn write_marginals(
    path: &Path,
    labels: &[&str],
    marginals: &ModeMarginals,
    first_slot: usize,
) -> Result<(), CliError> {
    let header = std::iter::once("step".to_string())
        .chain(labels.iter().map(|l| format!("p_{l}")))
        .collect();
    let rows = marginals
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            std::iter::once((first_slot + k).to_string())
                .chain(row.iter().map(|&p| float(p)))
                .collect()
        })
        .collect();
    write_rows(path, header, rows)
}

pub fn write_modes(
    path: &Path,
    labels: &[&str],
    modes: &[usize],
    first_slot: usize,
) -> Result<(), CliError> {
    let header = vec!["step".into(), "mode".into(), "label".into()];
    let rows = modes
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            vec![
                (first_slot + k).to_string(),
                m.to_string(),
                labels[m].to_string(),
            ]
        })
        .collect();
    write_rows(path, header, rows)
}

pub fn write_trajectory(
    path: &Path,
    states: &[DVector<f64>],
    first_state: usize,
) -> Result<(), CliError> {
    let dim = states.first().map_or(0, DVector::len);
    let header = std::iter::once("step".to_string())
        .chain(numbered("x", dim))
        .collect();
    let rows = states
        .iter()
        .enumerate()
        .map(|(k, x)| {
            std::iter::once((first_state + k).to_string())
                .chain(x.iter().map(|&v| float(v)))
                .collect()
        })
        .collect();
    write_rows(path, header, rows)
}

/// Columns of several marginal tables side by side, keyed by slot.
pub fn write_curves(
    path: &Path,
    labels: &[&str],
    curves: &[(&str, &ModeMarginals)],
) -> Result<(), CliError> {
    let mut header = vec!["step".to_string()];
    for (name, _) in curves {
        header.extend(labels.iter().map(|l| format!("{name}_p_{l}")));
    }
    let slots = curves.first().map_or(0, |(_, c)| c.slots());
    let rows = (0..slots)
        .map(|k| {
            let mut r = vec![k.to_string()];
            for (_, c) in curves {
                r.extend(c.rows[k].iter().map(|&p| float(p)));
            }
            r
        })
        .collect();
    write_rows(path, header, rows)
}

pub fn write_table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
    write_rows(path, header.iter().map(|h| h.to_string()).collect(), rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("cannot encode {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(format!("{}", path.display()), e))
}

fn is_reserved(name: &str) -> bool {
    let numbered_x = name
        .strip_prefix('x')
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()));
    matches!(name, "step" | "mode") || numbered_x
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

/// Pick the measurement columns: the configured names, else `z0..`, else every
/// non-reserved column when their count matches the measurement dimension.
fn measurement_columns(
    headers: &csv::StringRecord,
    system: &SwitchingSystem,
    spec: &InputSpec,
) -> Result<Vec<usize>, CliError> {
    let m = system.measurement_dim;
    let lookup = |names: &[String]| -> Option<Vec<usize>> {
        names.iter().map(|n| column(headers, n)).collect()
    };
    if let Some(names) = &spec.measurement_columns {
        if names.len() != m {
            return Err(CliError::Config(format!(
                "config error at `input.measurement_columns`: {} columns for a {m}-dimensional measurement",
                names.len()
            )));
        }
        return lookup(names).ok_or_else(|| {
            CliError::Config(format!(
                "config error at `input.measurement_columns`: {names:?} not all present in the input header"
            ))
        });
    }
    let z: Vec<String> = numbered("z", m).collect();
    if let Some(cols) = lookup(&z) {
        return Ok(cols);
    }
    let rest: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !is_reserved(h))
        .map(|(i, _)| i)
        .collect();
    if rest.len() == m {
        Ok(rest)
    } else {
        Err(CliError::Config(format!(
            "input has {} candidate measurement columns but the system measures {m}; set input.measurement_columns",
            rest.len()
        )))
    }
}

fn parse_float(path: &Path, line: usize, name: &str, cell: &str) -> Result<f64, CliError> {
    cell.trim().parse().map_err(|_| {
        CliError::Config(format!(
            "{}: row {line}, column `{name}`: `{cell}` is not a number",
            path.display()
        ))
    })
}

fn parse_vector(
    path: &Path,
    line: usize,
    headers: &csv::StringRecord,
    record: &csv::StringRecord,
    cols: &[usize],
) -> Result<Option<DVector<f64>>, CliError> {
    let cells: Vec<&str> = cols.iter().map(|&c| record.get(c).unwrap_or("")).collect();
    let blank = cells.iter().filter(|c| c.trim().is_empty()).count();
    if cols.is_empty() || blank == cells.len() {
        return Ok(None);
    }
    if blank > 0 {
        return Err(CliError::Config(format!(
            "{}: row {line} is partially empty",
            path.display()
        )));
    }
    let values = cols
        .iter()
        .zip(&cells)
        .map(|(&c, cell)| parse_float(path, line, &headers[c], cell))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(DVector::from_vec(values)))
}

fn parse_mode(
    path: &Path,
    line: usize,
    system: &SwitchingSystem,
    cell: &str,
) -> Result<usize, CliError> {
    let cell = cell.trim();
    let mode = match cell.parse::<usize>() {
        Ok(i) => Some(i),
        Err(_) => system.mode_index(cell),
    };
    mode.filter(|&m| m < system.mode_count()).ok_or_else(|| {
        CliError::Config(format!(
            "{}: row {line}: unknown mode `{cell}`",
            path.display()
        ))
    })
}

/// Read a measurement CSV: row `k` holds `z_k`; blank cells mark a missing
/// measurement. A mode column (row `k` naming the mode that produced `x_k`)
/// and state columns `x0..`, when complete, form the ground truth.
pub fn read_input(
    path: &Path,
    system: &SwitchingSystem,
    spec: &InputSpec,
) -> Result<(MeasurementStream, Option<Truth>), CliError> {
    let file = File::open(path).map_err(|e| CliError::io(format!("{}", path.display()), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let z_cols = measurement_columns(&headers, system, spec)?;
    let mode_col = match &spec.mode_column {
        Some(name) => Some(column(&headers, name).ok_or_else(|| {
            CliError::Config(format!(
                "config error at `input.mode_column`: `{name}` not in the input header"
            ))
        })?),
        None => column(&headers, "mode"),
    };
    let x_cols: Option<Vec<usize>> = numbered("x", system.state_dim)
        .map(|n| column(&headers, &n))
        .collect();

    let mut measurements = Vec::new();
    let mut modes = Vec::new();
    let mut states = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = k + 2;
        measurements.push(parse_vector(path, line, &headers, &record, &z_cols)?);
        if let Some(c) = mode_col {
            let cell = record.get(c).unwrap_or("").trim();
            modes.push(match (k, cell.is_empty()) {
                (0, _) | (_, true) => None,
                _ => Some(parse_mode(path, line, system, cell)?),
            });
        }
        if let Some(cols) = &x_cols {
            states.push(parse_vector(path, line, &headers, &record, cols)?);
        }
    }
    if measurements.len() < 2 {
        return Err(CliError::Config(format!(
            "{}: need at least 2 rows, got {}",
            path.display(),
            measurements.len()
        )));
    }

    let use_initial = spec.initial_measurement.unwrap_or(true);
    let mut rows = measurements.into_iter();
    let first = rows.next().flatten();
    let stream = MeasurementStream {
        initial: if use_initial { first } else { None },
        measurements: rows.collect(),
        controls: Vec::new(),
    };
    let truth_modes: Option<Vec<usize>> = modes.into_iter().skip(1).collect();
    let truth = match (mode_col, truth_modes) {
        (Some(_), Some(modes)) => Some(Truth {
            modes,
            states: states.into_iter().collect(),
        }),
        (Some(_), None) => {
            log::warn!("mode column is incomplete; running without ground truth");
            None
        }
        (None, _) => None,
    };
    Ok((stream, truth))
}
