use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::approx::ApproxReport;
use super::localize::LocalizationReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    /// both
    All,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "all" => Ok(Format::All),
            _ => Err(Error::Config(format!("unknown format '{s}'; expected csv, json or all"))),
        }
    }
}

impl Format {
    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::All)
    }
    fn json(self) -> bool {
        matches!(self, Format::Json | Format::All)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io { path: path.display().to_string(), source: std::io::Error::other(e) }
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

fn prepare(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

#[derive(Serialize)]
struct Timings<'a> {
    seconds: &'a [(String, f64)],
}

/// Writes `<name>_density.csv` (`x,true,dpbm,dppm`), `<name>.json` and
/// `<name>_timings.json`. Only the timings vary between identical runs.
pub fn emit_approx(report: &ApproxReport, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    prepare(dir)?;
    let name = report.config.scenario.name();
    let mut out = Vec::new();
    if format.csv() {
        let path = dir.join(format!("{name}_density.csv"));
        let t = &report.table;
        let rows = (0..t.x.len()).map(|i| vec![t.x[i].to_string(), t.truth[i].to_string(), t.dpbm[i].to_string(), t.dppm[i].to_string()]);
        write_csv(&path, &["x", "true", "dpbm", "dppm"], rows)?;
        out.push(path);
    }
    if format.json() {
        let path = dir.join(format!("{name}.json"));
        write_json(&path, report)?;
        out.push(path);
    }
    let path = dir.join(format!("{name}_timings.json"));
    write_json(&path, &Timings { seconds: &report.seconds })?;
    out.push(path);
    Ok(out)
}

/// Writes `localization_rmse.csv` (`t` then one column per filter in the
/// order kf, pf, dpbm, dppm, oracle), `localization.json` and
/// `localization_timings.json`.
pub fn emit_localization(report: &LocalizationReport, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    prepare(dir)?;
    let mut out = Vec::new();
    if format.csv() {
        let path = dir.join("localization_rmse.csv");
        let mut header = vec!["t"];
        header.extend(report.rmse.iter().map(|c| c.filter.name()));
        let rows = (0..report.config.steps)
            .map(|t| std::iter::once(t.to_string()).chain(report.rmse.iter().map(|c| c.rmse[t].to_string())).collect());
        write_csv(&path, &header, rows)?;
        out.push(path);
    }
    if format.json() {
        let path = dir.join("localization.json");
        write_json(&path, report)?;
        out.push(path);
    }
    let path = dir.join("localization_timings.json");
    write_json(&path, &Timings { seconds: &report.seconds_per_step() })?;
    out.push(path);
    Ok(out)
}
