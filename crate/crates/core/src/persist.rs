//! File formats: record CSV with a JSON sidecar, trajectory and series
//! CSVs, and small helpers shared by the command layer.
//!
//! Floats in CSVs are written with 17 significant digits so a written
//! record parses back bit-exactly; JSON floats round-trip through
//! serde_json's shortest representation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::effect::EffectTrajectory;
use crate::error::{Error, Result};
use crate::filter::{HiddenTruth, MeasurementRecord, StateTrajectory};
use crate::model::ScenarioConfig;
use crate::paststate::SeriesPoint;
use crate::qops::Operator;

/// Decimal form that parses back to the identical f64.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Sidecar carried next to every record CSV; the scenario echo makes the
/// file self-describing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub model_fingerprint: String,
    pub scenario: ScenarioConfig,
}

/// record.csv -> record.meta.json, next to it.
pub fn meta_path_for(record_path: &Path) -> PathBuf {
    record_path.with_extension("meta.json")
}

/// Header `step,t,dY` for diffusive records, `step,t,dN_1..dN_c` for
/// counting ones, bare `step,t` when the model has no read-out channel;
/// t is the left endpoint of the step the increment belongs to.
pub fn write_record_csv(path: &Path, record: &MeasurementRecord) -> Result<()> {
    let diffusive = !record.diffusive_increments().is_empty()
        || (record.counting_increments().is_empty() && record.n_steps() == 0);
    let has_counting = !record.counting_increments().is_empty();
    let mut text = String::from("step,t");
    if has_counting {
        for c in 1..=record.counting_increments().len() {
            let _ = write!(text, ",dN_{c}");
        }
    } else if diffusive {
        text.push_str(",dY");
    }
    text.push('\n');
    for i in 0..record.n_steps() {
        let _ = write!(text, "{i},{}", format_float(i as f64 * record.dt()));
        if has_counting {
            for series in record.counting_increments() {
                let _ = write!(text, ",{}", series[i]);
            }
        } else if diffusive {
            let _ = write!(text, ",{}", format_float(record.diffusive_increments()[i]));
        }
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn write_record_meta(
    path: &Path,
    record: &MeasurementRecord,
    scenario: &ScenarioConfig,
) -> Result<()> {
    let meta = RecordMeta {
        dt: record.dt(),
        n_steps: record.n_steps(),
        seed: record.seed(),
        model_fingerprint: record.model_fingerprint().to_string(),
        scenario: scenario.clone(),
    };
    write_text(path, &to_pretty_json(&meta)?)
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{what}: {e}")))
}

/// Load a record CSV plus its sidecar back into a validated pair.
pub fn read_record(csv_path: &Path, meta_path: &Path) -> Result<(MeasurementRecord, RecordMeta)> {
    let meta: RecordMeta = from_json(&read_text(meta_path)?, "record sidecar")?;
    let text = read_text(csv_path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty record file", csv_path.display())))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 2 || columns[0] != "step" || columns[1] != "t" {
        return Err(Error::Config(format!(
            "{}: unexpected record header `{header}`",
            csv_path.display()
        )));
    }
    let diffusive = columns.get(2) == Some(&"dY");
    let n_counting = if diffusive { 0 } else { columns.len() - 2 };
    for (c, col) in columns.iter().skip(2).enumerate() {
        if !diffusive && *col != format!("dN_{}", c + 1) {
            return Err(Error::Config(format!(
                "{}: unexpected record column `{col}`",
                csv_path.display()
            )));
        }
    }

    let mut diffusive_increments = Vec::new();
    let mut counting_increments = vec![Vec::new(); n_counting];
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::Config(format!(
                "{}: row {row} has {} fields, expected {}",
                csv_path.display(),
                fields.len(),
                columns.len()
            )));
        }
        let step: usize = fields[0]
            .parse()
            .map_err(|_| Error::Config(format!("{}: bad step index {}", csv_path.display(), fields[0])))?;
        if step != row {
            return Err(Error::Config(format!(
                "{}: steps out of order at row {row}",
                csv_path.display()
            )));
        }
        if diffusive {
            let dy: f64 = fields[2].parse().map_err(|_| {
                Error::Config(format!("{}: bad increment {}", csv_path.display(), fields[2]))
            })?;
            diffusive_increments.push(dy);
        } else {
            for (c, series) in counting_increments.iter_mut().enumerate() {
                let dn: u8 = fields[2 + c].parse().map_err(|_| {
                    Error::Config(format!("{}: bad click {}", csv_path.display(), fields[2 + c]))
                })?;
                series.push(dn);
            }
        }
    }
    let record = MeasurementRecord::new(
        meta.dt,
        meta.n_steps,
        diffusive_increments,
        counting_increments,
        meta.seed,
        meta.model_fingerprint.clone(),
    )?;
    Ok((record, meta))
}

fn write_matrix_csv<'a, I>(path: &Path, dim: usize, times: &[f64], rows: I) -> Result<()>
where
    I: Iterator<Item = (&'a Operator, f64)>,
{
    let mut text = String::from("step,t,log_norm");
    for i in 0..dim {
        for j in 0..dim {
            let _ = write!(text, ",m{i}_{j}_re,m{i}_{j}_im");
        }
    }
    text.push('\n');
    for (step, ((op, log_norm), &t)) in rows.zip(times).enumerate() {
        let _ = write!(text, "{step},{},{}", format_float(t), format_float(log_norm));
        let arr = op.as_array();
        for i in 0..dim {
            for j in 0..dim {
                let z = arr[[i, j]];
                let _ = write!(text, ",{},{}", format_float(z.re), format_float(z.im));
            }
        }
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn write_state_trajectory_csv(path: &Path, traj: &StateTrajectory) -> Result<()> {
    let dim = traj.states().first().map_or(0, |s| s.dim());
    write_matrix_csv(
        path,
        dim,
        traj.times(),
        traj.states().iter().map(|s| (s.operator(), s.log_norm())),
    )
}

pub fn write_effect_trajectory_csv(path: &Path, traj: &EffectTrajectory) -> Result<()> {
    let dim = traj.effects().first().map_or(0, |e| e.dim());
    write_matrix_csv(
        path,
        dim,
        traj.times(),
        traj.effects().iter().map(|e| (e.operator(), e.log_norm())),
    )
}

/// Gap markers: a degenerate pair writes `nan` for both weak columns.
pub fn write_series_csv(path: &Path, series: &[SeriesPoint]) -> Result<()> {
    let mut text = String::from("t,forward_mean,weak_re,weak_im\n");
    for point in series {
        let _ = write!(
            text,
            "{},{}",
            format_float(point.time),
            format_float(point.forward_mean)
        );
        match point.weak_value {
            Some(w) => {
                let _ = write!(text, ",{},{}", format_float(w.re), format_float(w.im));
            }
            None => text.push_str(",nan,nan"),
        }
        text.push('\n');
    }
    write_text(path, &text)
}

/// One line of the site-probability output for the two-site scenario.
#[derive(Clone, Copy, Debug)]
pub struct SiteRow {
    pub t: f64,
    pub filtered: f64,
    /// None marks a degenerate retrodiction at this grid point.
    pub smoothed: Option<f64>,
}

pub fn write_site_series_csv(path: &Path, rows: &[SiteRow]) -> Result<()> {
    let mut text = String::from("t,filtered_pb,smoothed_pb\n");
    for row in rows {
        let _ = write!(
            text,
            "{},{}",
            format_float(row.t),
            format_float(row.filtered)
        );
        match row.smoothed {
            Some(p) => {
                let _ = write!(text, ",{}", format_float(p));
            }
            None => text.push_str(",nan"),
        }
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn write_truth_csv(path: &Path, times: &[f64], truth: &HiddenTruth) -> Result<()> {
    let mut text = String::from("step,t,site\n");
    for (step, (&t, &site)) in times.iter().zip(&truth.sites).enumerate() {
        let _ = writeln!(text, "{step},{},{site}", format_float(t));
    }
    write_text(path, &text)
}

/// Histogram over [0,1] in equal bins.
pub fn write_histogram_csv(path: &Path, counts: &[u64]) -> Result<()> {
    let n = counts.len().max(1) as f64;
    let mut text = String::from("bin_low,bin_high,count\n");
    for (i, &count) in counts.iter().enumerate() {
        let _ = writeln!(text, "{},{},{count}", i as f64 / n, (i + 1) as f64 / n);
    }
    write_text(path, &text)
}
