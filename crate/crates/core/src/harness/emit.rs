use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{MetricsRecord, METRICS_HEADER};
use crate::error::{Error, Result};

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

/// Write `rows` under an explicit header, so an empty table still gets one.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    create_parent(path)?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_err)
}

/// `metrics.csv`: one row per simulation step.
pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_csv(path, &METRICS_HEADER, records)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    read_csv(path)
}

pub const PLOT_HEADER: [&str; 6] = ["figure", "series", "seed", "x", "metric", "value"];

/// One point of the long-format plot table: `x` against `value` for one
/// series and metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub figure: String,
    pub series: String,
    pub seed: u64,
    pub x: f64,
    pub metric: String,
    pub value: f64,
}

impl PlotPoint {
    pub fn new(figure: &str, series: &str, seed: u64, x: f64, metric: &str, value: f64) -> Self {
        PlotPoint {
            figure: figure.to_string(),
            series: series.to_string(),
            seed,
            x,
            metric: metric.to_string(),
            value,
        }
    }
}

pub fn write_plot(path: &Path, points: &[PlotPoint]) -> Result<()> {
    write_csv(path, &PLOT_HEADER, points)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::MPH_PER_MPS;

    fn record(t: u64, v: f64) -> MetricsRecord {
        MetricsRecord {
            timestep: t,
            v_bar_mps: v,
            v_bar_mph: v * MPH_PER_MPS,
            c_bar: 2.75,
            min_headway_m: if t == 0 { f64::INFINITY } else { 0.1 + t as f64 / 3.0 },
            flow_vps: 0.015 * v,
            unsafe_actions: 0,
            es_count: 1,
            collisions: 0,
            episode_reward: -1.0 / 7.0,
        }
    }

    #[test]
    fn empty_metrics_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics(&path, &[]).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "timestep,v_bar_mps,v_bar_mph,c_bar,min_headway_m,flow_vps,unsafe_actions,es_count,collisions,episode_reward\n"
        );
        assert!(read_metrics(&path).unwrap().is_empty());
    }

    #[test]
    fn metrics_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/metrics.csv");
        let recs: Vec<_> = (0..20).map(|t| record(t, 13.0 + t as f64 / 9.0)).collect();
        write_metrics(&path, &recs).unwrap();
        assert_eq!(read_metrics(&path).unwrap(), recs);
    }

    #[test]
    fn mph_mirror() {
        let r = record(1, 10.0);
        assert!((r.v_bar_mph - 22.3694).abs() < 1e-4, "{}", r.v_bar_mph);
    }

    #[test]
    fn io_errors_carry_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let target = blocker.join("metrics.csv");
        let msg = write_metrics(&target, &[]).unwrap_err().to_string();
        assert!(msg.contains("file"), "{msg}");
    }
}
