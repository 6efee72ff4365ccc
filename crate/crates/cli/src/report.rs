//! Benchmark records, their CSV form, and per-method summaries.

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use crate::error::CliError;

pub const RAW_HEADER: [&str; 8] = [
    "method",
    "trial",
    "observed_frac",
    "error_m",
    "time_ms",
    "n_evals",
    "map_slack",
    "status",
];

/// One inference run. Failed runs keep their method, trial and fraction and
/// leave the measurements empty.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub method: String,
    pub trial: usize,
    pub observed_frac: f64,
    pub outcome: Result<Measured, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measured {
    pub error_m: f64,
    pub time_ms: f64,
    pub n_evals: usize,
    pub map_slack: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!("checked io kind"),
        }
    } else {
        CliError::Parse {
            what: path.display().to_string(),
            msg: e.to_string(),
        }
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

pub fn write_raw(path: &Path, records: &[BenchRecord]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(RAW_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        let mut row = vec![r.method.clone(), r.trial.to_string(), r.observed_frac.to_string()];
        match &r.outcome {
            Ok(m) => row.extend([
                m.error_m.to_string(),
                m.time_ms.to_string(),
                m.n_evals.to_string(),
                m.map_slack.to_string(),
                "ok".to_string(),
            ]),
            Err(msg) => {
                row.extend(std::iter::repeat(String::new()).take(4));
                row.push(format!("failed: {msg}"));
            }
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_raw(path: &Path) -> Result<Vec<BenchRecord>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(RAW_HEADER) {
        return Err(CliError::Parse {
            what: path.display().to_string(),
            msg: format!("unexpected header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |msg: String| CliError::Parse {
            what: format!("{}:{}", path.display(), i + 2),
            msg,
        };
        let num = |j: usize| -> Result<f64, CliError> {
            row[j].parse::<f64>().map_err(|e| bad(format!("{}: {e}", RAW_HEADER[j])))
        };
        let outcome = if &row[7] == "ok" {
            Ok(Measured {
                error_m: num(3)?,
                time_ms: num(4)?,
                n_evals: row[5].parse().map_err(|e| bad(format!("n_evals: {e}")))?,
                map_slack: num(6)?,
            })
        } else {
            Err(row[7].trim_start_matches("failed: ").to_string())
        };
        out.push(BenchRecord {
            method: row[0].to_string(),
            trial: row[1].parse().map_err(|e| bad(format!("trial: {e}")))?,
            observed_frac: num(2)?,
            outcome,
        });
    }
    Ok(out)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub method: String,
    pub observed_frac: f64,
    pub runs: usize,
    pub failed: usize,
    pub error_m: (f64, f64),
    pub time_ms: (f64, f64),
    pub n_evals: (f64, f64),
}

/// One summary per method and observed fraction, in first-appearance order.
/// Failed runs are counted but excluded from the statistics.
pub fn summarize(records: &[BenchRecord]) -> Vec<Summary> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in records {
        let key = (r.method.clone(), r.observed_frac);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, frac)| {
            let group: Vec<&BenchRecord> = records
                .iter()
                .filter(|r| r.method == method && r.observed_frac == frac)
                .collect();
            let ok: Vec<&Measured> = group.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let col = |f: fn(&Measured) -> f64| mean_std(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
            Summary {
                runs: group.len(),
                failed: group.len() - ok.len(),
                error_m: col(|m| m.error_m),
                time_ms: col(|m| m.time_ms),
                n_evals: col(|m| m.n_evals as f64),
                method,
                observed_frac: frac,
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "method",
    "observed_frac",
    "runs",
    "failed",
    "error_m_mean",
    "error_m_std",
    "time_ms_mean",
    "time_ms_std",
    "n_evals_mean",
    "n_evals_std",
];

pub fn write_summary(path: &Path, rows: &[Summary]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(SUMMARY_HEADER).map_err(|e| csv_err(path, e))?;
    for s in rows {
        w.write_record([
            s.method.clone(),
            s.observed_frac.to_string(),
            s.runs.to_string(),
            s.failed.to_string(),
            s.error_m.0.to_string(),
            s.error_m.1.to_string(),
            s.time_ms.0.to_string(),
            s.time_ms.1.to_string(),
            s.n_evals.0.to_string(),
            s.n_evals.1.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Human-readable table with errors in centimeters.
pub fn format_table(rows: &[Summary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>6} {:>20} {:>22} {:>22}",
        "method", "obs", "err (cm)", "time (ms)", "# evals"
    );
    for s in rows {
        let _ = writeln!(
            out,
            "{:<16} {:>5.0}% {:>9.2} ± {:<8.2} {:>10.2} ± {:<9.2} {:>10.0} ± {:<9.0}{}",
            s.method,
            100.0 * s.observed_frac,
            100.0 * s.error_m.0,
            100.0 * s.error_m.1,
            s.time_ms.0,
            s.time_ms.1,
            s.n_evals.0,
            s.n_evals.1,
            if s.failed > 0 {
                format!(" ({} failed)", s.failed)
            } else {
                String::new()
            }
        );
    }
    out
}

/// `(time_ms, error_m)` pairs of one method's successful runs.
pub fn write_points(path: &Path, records: &[&BenchRecord]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["time_ms", "error_m"]).map_err(|e| csv_err(path, e))?;
    for r in records {
        if let Ok(m) = &r.outcome {
            w.write_record([m.time_ms.to_string(), m.error_m.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, trial: usize, err: Option<f64>) -> BenchRecord {
        BenchRecord {
            method: method.into(),
            trial,
            observed_frac: 0.5,
            outcome: match err {
                Some(e) => Ok(Measured {
                    error_m: e,
                    time_ms: 1.5 * trial as f64,
                    n_evals: 100 + trial,
                    map_slack: 0.01,
                }),
                None => Err("boom, with comma".into()),
            },
        }
    }

    #[test]
    fn raw_csv_round_trips_including_failures() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        let rows = vec![rec("tp", 0, Some(0.1)), rec("tp", 1, None), rec("grid", 0, Some(0.3))];
        write_raw(&path, &rows).unwrap();
        assert_eq!(read_raw(&path).unwrap(), rows);
    }

    #[test]
    fn summary_counts_and_means() {
        let rows = vec![
            rec("tp", 0, Some(0.1)),
            rec("tp", 1, Some(0.2)),
            rec("tp", 2, None),
            rec("grid", 0, Some(0.3)),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].runs, s[0].failed), (3, 1));
        assert!((s[0].error_m.0 - 0.15).abs() < 1e-15);
        assert!((s[0].error_m.1 - 0.05).abs() < 1e-15);
        assert_eq!(s[1].n_evals, (100.0, 0.0));
        assert!(format_table(&s).contains("1 failed"));
    }
}
