//! Output files: `rounds.csv`, `report.json`, `config-echo.json`, `sweep.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::learner::{FeedbackKind, RoundRecord};
use crate::error::{Error, Result};

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_ECHO_FILE: &str = "config-echo.json";
pub const SWEEP_FILE: &str = "sweep.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// 17 significant digits, enough to round-trip any f64.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn rounds_header(d: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "y", "loss", "cum_loss", "feedback_kind"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=d).map(|i| format!("beta_plus_{i}")));
    h.extend((1..=d).map(|i| format!("xhat_{i}")));
    h
}

pub fn write_rounds(path: &Path, d: usize, records: &[RoundRecord]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(rounds_header(d)).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.t.to_string(),
            r.y.to_string(),
            fmt_float(r.loss),
            fmt_float(r.cum_loss),
            r.feedback.as_str().to_string(),
        ];
        row.extend(r.beta_plus.iter().map(|&v| fmt_float(v)));
        row.extend(r.xhat.iter().map(|&v| fmt_float(v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_rounds(path: &Path) -> Result<Vec<RoundRecord>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let bad = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let width = reader.headers().map_err(csv_err)?.len();
    if width < 5 || (width - 5) % 2 != 0 {
        return Err(bad(format!("{width} columns is not a rounds file")));
    }
    let d = (width - 5) / 2;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let num =
            |i: usize| -> Result<f64> { rec[i].parse::<f64>().map_err(|e| bad(format!("column {}: {e}", i + 1))) };
        let feedback = match &rec[4] {
            "nonstrategic" => FeedbackKind::NonStrategic,
            "strategic" => FeedbackKind::Strategic,
            other => return Err(bad(format!("unknown feedback kind {other:?}"))),
        };
        out.push(RoundRecord {
            t: rec[0].parse().map_err(|e| bad(format!("round index: {e}")))?,
            y: rec[1].parse().map_err(|e| bad(format!("label: {e}")))?,
            loss: num(2)?,
            cum_loss: num(3)?,
            feedback,
            beta_plus: (5..5 + d).map(num).collect::<Result<_>>()?,
            xhat: (5 + d..5 + 2 * d).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(f).map_err(io_err(path))
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir.to_path_buf())
}

/// Writes `config-echo.json`: the config as parsed, defaults filled in.
pub fn write_config_echo(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    write_json(&dir.join(CONFIG_ECHO_FILE), config)
}
