use std::fs::File;
use std::path::Path;

use crate::config::SweepAxis;
use crate::error::{HarnessError, Result};
use crate::experiment::{ResultRow, TraceRow};

pub const RESULT_HEADER: [&str; 8] = [
    "scheme",
    "sweep_axis",
    "sweep_value",
    "realization",
    "sum_rate",
    "per_user_rates",
    "wall_time_s",
    "error",
];

pub const TRACE_HEADER: [&str; 10] = [
    "scheme",
    "sweep_value",
    "realization",
    "iteration",
    "rho",
    "gamma",
    "sample_objective",
    "running_objective",
    "positions_feasible",
    "orientations_feasible",
];

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|source| csv_error(path, source))
}

fn csv_error(path: &Path, source: csv::Error) -> HarnessError {
    HarnessError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes result rows with a fixed column order. Floats use the shortest
/// representation that parses back to the same value.
pub fn emit_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(RESULT_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        let per_user = r
            .per_user_rates
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            r.scheme.as_str().to_string(),
            r.sweep_axis.as_str().to_string(),
            r.sweep_value.to_string(),
            r.realization.to_string(),
            opt(r.sum_rate),
            per_user,
            opt(r.wall_time_s),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let bad = |field: &'static str, value: &str| HarnessError::Field {
        path: path.display().to_string(),
        field,
        value: value.to_string(),
    };
    let float = |field: &'static str, s: &str| s.parse::<f64>().map_err(|_| bad(field, s));
    let opt_float = |field: &'static str, s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            float(field, s).map(Some)
        }
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let rec = record.map_err(|e| csv_error(path, e))?;
        if rec.len() != RESULT_HEADER.len() {
            return Err(bad("record", &format!("{rec:?}")));
        }
        let per_user_rates = if rec[5].is_empty() {
            Vec::new()
        } else {
            rec[5]
                .split(';')
                .map(|s| float("per_user_rates", s))
                .collect::<Result<_>>()?
        };
        rows.push(ResultRow {
            scheme: rec[0].parse().map_err(|_| bad("scheme", &rec[0]))?,
            sweep_axis: rec[1]
                .parse::<SweepAxis>()
                .map_err(|_| bad("sweep_axis", &rec[1]))?,
            sweep_value: float("sweep_value", &rec[2])?,
            realization: rec[3].parse().map_err(|_| bad("realization", &rec[3]))?,
            sum_rate: opt_float("sum_rate", &rec[4])?,
            per_user_rates,
            wall_time_s: opt_float("wall_time_s", &rec[6])?,
            error: (!rec[7].is_empty()).then(|| rec[7].to_string()),
        });
    }
    Ok(rows)
}

pub fn emit_trace_csv(rows: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(TRACE_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for t in rows {
        let r = &t.record;
        w.write_record([
            t.scheme.as_str().to_string(),
            t.sweep_value.to_string(),
            t.realization.to_string(),
            r.iteration.to_string(),
            r.rho.to_string(),
            r.gamma.to_string(),
            r.sample_objective.to_string(),
            r.running_objective.to_string(),
            r.positions_feasible.to_string(),
            r.orientations_feasible.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Empirical CDF: sorted values paired with `i / n`.
pub fn compute_cdf(rates: &[f64]) -> Result<Vec<(f64, f64)>> {
    if rates.is_empty() {
        return Err(HarnessError::Empty("CDF input"));
    }
    let mut sorted = rates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| (r, (i + 1) as f64 / n))
        .collect())
}

/// One CDF per scheme, in the order the schemes first appear.
pub fn emit_cdf_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut schemes = Vec::new();
    for r in rows {
        if !schemes.contains(&r.scheme) {
            schemes.push(r.scheme);
        }
    }
    let mut w = writer(path)?;
    w.write_record(["scheme", "sum_rate", "cumulative_probability"])
        .map_err(|e| csv_error(path, e))?;
    for scheme in schemes {
        let rates: Vec<f64> = rows
            .iter()
            .filter(|r| r.scheme == scheme)
            .filter_map(|r| r.sum_rate)
            .collect();
        if rates.is_empty() {
            continue;
        }
        for (rate, p) in compute_cdf(&rates)? {
            w.write_record([scheme.as_str().to_string(), rate.to_string(), p.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}
