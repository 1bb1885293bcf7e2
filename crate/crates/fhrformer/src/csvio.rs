//! CSV files: raw recordings in, results out.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use fhrformer_core::apps::ForecastResult;
use fhrformer_core::metrics::{MetricsReport, METRIC_KEYS};
use fhrformer_core::prep::RawRecord;
use fhrformer_core::trainer::{EpochLog, Evaluated, SweepRow};

use crate::error::{CliError, Result};

/// One row of a raw recording file. Dropout samples are written as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub episode_id: u64,
    pub sample_index: usize,
    pub fhr_bpm: f32,
}

pub fn write_raw(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    for r in records {
        for (i, &v) in r.samples.iter().enumerate() {
            w.serialize(RawRow { episode_id: r.episode_id, sample_index: i, fhr_bpm: v }).map_err(|e| CliError::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Groups rows by episode; each episode's indices must run 0, 1, 2, ...
/// in file order.
pub fn read_raw(path: &Path) -> Result<Vec<RawRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let mut by: BTreeMap<u64, Vec<f32>> = BTreeMap::new();
    for row in r.deserialize::<RawRow>() {
        let row = row.map_err(|e| CliError::csv(path, e))?;
        let s = by.entry(row.episode_id).or_default();
        if row.sample_index != s.len() {
            return Err(CliError::format(
                path,
                format!("episode {}: expected sample_index {}, found {}", row.episode_id, s.len(), row.sample_index),
            ));
        }
        s.push(row.fhr_bpm);
    }
    if by.is_empty() {
        return Err(CliError::format(path, "no samples"));
    }
    Ok(by.into_iter().map(|(episode_id, samples)| RawRecord { episode_id, samples }).collect())
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))
}

/// `sample_index,value` rows.
pub fn write_series(path: &Path, start: usize, values: &[f32]) -> Result<()> {
    let mut w = create(path)?;
    let wrap = |e| CliError::csv(path, e);
    w.write_record(["sample_index", "value"]).map_err(wrap)?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([(start + i).to_string(), v.to_string()]).map_err(wrap)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `sample_index,value,lower95,upper95`, indices continuing after the context.
pub fn write_forecast(path: &Path, start: usize, f: &ForecastResult, scale: f32) -> Result<()> {
    let mut w = create(path)?;
    let wrap = |e| CliError::csv(path, e);
    w.write_record(["sample_index", "value", "lower95", "upper95"]).map_err(wrap)?;
    for t in 0..f.mean.len() {
        w.write_record([
            (start + t).to_string(),
            (f.mean[t] * scale).to_string(),
            (f.lower95[t] * scale).to_string(),
            (f.upper95[t] * scale).to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn metrics_header() -> Vec<String> {
    METRIC_KEYS.iter().map(|k| k.to_string()).collect()
}

fn metric_cells(m: &MetricsReport) -> Vec<String> {
    m.values().iter().map(|v| v.to_string()).collect()
}

/// Header of the 8 metric names plus one row.
pub fn write_metrics_csv(path: &Path, m: &MetricsReport) -> Result<()> {
    let mut w = create(path)?;
    let wrap = |e| CliError::csv(path, e);
    w.write_record(metrics_header()).map_err(wrap)?;
    w.write_record(metric_cells(m)).map_err(wrap)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One row per test signal: episode id and its per-signal metrics.
pub fn write_per_signal(path: &Path, rows: &[Evaluated]) -> Result<()> {
    let mut w = create(path)?;
    let wrap = |e| CliError::csv(path, e);
    w.write_record(["episode_id", "rl", "mse", "mae", "psnr", "ssim", "cc"]).map_err(wrap)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([r.episode_id.to_string(), m.rl.to_string(), m.mse.to_string(), m.mae.to_string(), m.psnr.to_string(), m.ssim.to_string(), m.cc.to_string()])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One metric per line: `key value`.
pub fn write_metrics_record(path: &Path, m: &MetricsReport) -> Result<()> {
    let text: String = METRIC_KEYS.iter().zip(m.values()).map(|(k, v)| format!("{k} {v}\n")).collect();
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn parse_metrics_record(text: &str) -> Option<MetricsReport> {
    let mut vals = [f64::NAN; 8];
    let mut seen = [false; 8];
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once(' ')?;
        let i = METRIC_KEYS.iter().position(|key| *key == k)?;
        vals[i] = v.trim().parse().ok()?;
        seen[i] = true;
    }
    seen.iter().all(|&s| s).then(|| MetricsReport::from_values(vals))
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = create(path)?;
    let wrap = |e| CliError::csv(path, e);
    let mut header = vec!["patch_size".to_string(), "mask_ratio".to_string()];
    header.extend(metrics_header());
    header.extend(["best_epoch".to_string(), "status".to_string()]);
    w.write_record(&header).map_err(wrap)?;
    for r in rows {
        let mut cells = vec![r.patch_size.to_string(), r.mask_ratio.to_string()];
        match &r.outcome {
            Ok((m, best)) => {
                cells.extend(metric_cells(m));
                cells.extend([best.to_string(), "ok".to_string()]);
            }
            Err(e) => {
                cells.extend(std::iter::repeat_n(String::new(), 9));
                cells.push(format!("failed: {e}"));
            }
        }
        w.write_record(&cells).map_err(wrap)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Append-only training log.
pub struct TrainLog {
    file: File,
}

impl TrainLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| CliError::io(path, e))?;
        writeln!(file, "epoch,train_loss,val_loss,lr,stale").map_err(|e| CliError::io(path, e))?;
        Ok(Self { file })
    }

    pub fn append(&mut self, l: &EpochLog) -> std::io::Result<()> {
        writeln!(self.file, "{},{},{},{},{}", l.epoch, l.train_loss, l.val_loss, l.lr, l.stale)?;
        self.file.flush()
    }
}
