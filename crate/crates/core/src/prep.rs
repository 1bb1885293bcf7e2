//! Raw device output to fixed-length, normalised, mask-annotated signals.
//!
//! Pipeline: Doppler doubling/halving correction (running-median ratio
//! test), linear gap interpolation, trim/left-pad to a fixed length, then
//! division by the fixed physiological range.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::numerics::Scalar;

pub const SAMPLE_RATE_HZ: f64 = 2.0;
/// Upper end of the fixed normalisation range, in bpm.
pub const BPM_MAX: f64 = 240.0;
pub const DEFAULT_LENGTH: usize = 7200;

/// Mask value for an observed sample.
pub const OBSERVED: u8 = 1;
/// Mask value for an interpolated or padded sample.
pub const MISSING: u8 = 0;

/// Device output for one episode: FHR in bpm at 2 Hz, 0 = dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub episode_id: u64,
    pub samples: Vec<f32>,
}

/// Model-ready signal.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSignal {
    pub episode_id: u64,
    /// Normalised to `[0, 1]`.
    pub values: Vec<f32>,
    /// [`OBSERVED`] or [`MISSING`] per sample.
    pub missing_mask: Vec<u8>,
}

impl PreparedSignal {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Length of the left padding: the leading run of unobserved exact zeros.
    ///
    /// Interpolated samples are never zero (they are built from observed
    /// values of at least 50 bpm), so this run is exactly the padding.
    pub fn pad_len(&self) -> usize {
        self.values
            .iter()
            .zip(&self.missing_mask)
            .take_while(|(&v, &m)| m == MISSING && v == 0.0)
            .count()
    }

    pub fn observed_count(&self) -> usize {
        self.missing_mask.iter().filter(|&&m| m == OBSERVED).count()
    }
}

/// Thresholds of the Doppler artifact surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopplerConfig {
    /// Running-median window, in samples.
    pub window: usize,
    /// Ratio band (to the running median) treated as frequency doubling.
    pub doubling: (f64, f64),
    /// Ratio band treated as frequency halving.
    pub halving: (f64, f64),
    /// Plausible FHR range in bpm; anything else is missing.
    pub valid: (f64, f64),
}

impl Default for DopplerConfig {
    fn default() -> Self {
        Self { window: 30, doubling: (1.8, 2.2), halving: (0.45, 0.55), valid: (50.0, 210.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corrected {
    pub record: RawRecord,
    /// 1 where a sample was halved or doubled.
    pub artifact_mask: Vec<u8>,
    /// [`OBSERVED`] / [`MISSING`] after range checks.
    pub missing_mask: Vec<u8>,
}

fn median(buf: &mut [f32]) -> Option<f64> {
    if buf.is_empty() {
        return None;
    }
    buf.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = buf.len();
    Some(if n % 2 == 1 { buf[n / 2] as f64 } else { 0.5 * (buf[n / 2 - 1] as f64 + buf[n / 2] as f64) })
}

/// Halves doubled samples and doubles halved ones, then flags zeros and
/// out-of-range values as missing. Missing samples are left untouched.
pub fn correct_doppler_artifacts(raw: &RawRecord, cfg: &DopplerConfig) -> Result<Corrected> {
    let n = raw.samples.len();
    if n == 0 {
        bail!(Data, "episode {} has no samples", raw.episode_id);
    }
    let present: Vec<bool> = raw.samples.iter().map(|&v| v.is_finite() && v > 0.0).collect();
    let half = cfg.window / 2;
    let mut out = raw.samples.clone();
    let mut artifact_mask = vec![0u8; n];
    let mut buf = Vec::with_capacity(cfg.window + 1);
    for i in 0..n {
        if !present[i] {
            continue;
        }
        let lo = i.saturating_sub(half);
        let hi = (i + cfg.window - half).min(n);
        buf.clear();
        buf.extend((lo..hi).filter(|&j| present[j]).map(|j| raw.samples[j]));
        let Some(med) = median(&mut buf) else { continue };
        let ratio = raw.samples[i] as f64 / med;
        if ratio >= cfg.doubling.0 && ratio <= cfg.doubling.1 {
            out[i] = raw.samples[i] * 0.5;
            artifact_mask[i] = 1;
        } else if ratio >= cfg.halving.0 && ratio <= cfg.halving.1 {
            out[i] = raw.samples[i] * 2.0;
            artifact_mask[i] = 1;
        }
    }
    let missing_mask = out
        .iter()
        .zip(&present)
        .map(|(&v, &p)| {
            let v = v as f64;
            if p && v >= cfg.valid.0 && v <= cfg.valid.1 {
                OBSERVED
            } else {
                MISSING
            }
        })
        .collect();
    Ok(Corrected { record: RawRecord { episode_id: raw.episode_id, samples: out }, artifact_mask, missing_mask })
}

/// Fills every missing run with the straight line between its observed
/// neighbours; leading/trailing runs copy the nearest observed value.
/// Observed samples are returned bit-identical.
pub fn interpolate_gaps(samples: &[f32], missing_mask: &[u8]) -> Result<Vec<f32>> {
    if samples.len() != missing_mask.len() {
        bail!(Dimension, "{} samples but {} mask entries", samples.len(), missing_mask.len());
    }
    let observed: Vec<usize> = (0..samples.len()).filter(|&i| missing_mask[i] == OBSERVED).collect();
    let (Some(&first), Some(&last)) = (observed.first(), observed.last()) else {
        bail!(Data, "signal has no observed samples");
    };
    let mut out = samples.to_vec();
    out[..first].fill(samples[first]);
    out[last + 1..].fill(samples[last]);
    for w in observed.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a < 2 {
            continue;
        }
        let (va, vb) = (samples[a] as f64, samples[b] as f64);
        let span = (b - a) as f64;
        for (i, slot) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            *slot = (va + (vb - va) * (i - a) as f64 / span) as f32;
        }
    }
    Ok(out)
}

/// Keeps the last `length` samples, or left-pads with zeros flagged missing.
pub fn fit_length(samples: &[f32], missing_mask: &[u8], length: usize) -> Result<(Vec<f32>, Vec<u8>)> {
    if length == 0 {
        bail!(Parameter, "target length must be positive");
    }
    if samples.len() != missing_mask.len() {
        bail!(Dimension, "{} samples but {} mask entries", samples.len(), missing_mask.len());
    }
    let n = samples.len();
    if n >= length {
        return Ok((samples[n - length..].to_vec(), missing_mask[n - length..].to_vec()));
    }
    let pad = length - n;
    let mut values = vec![0.0f32; pad];
    values.extend_from_slice(samples);
    let mut mask = vec![MISSING; pad];
    mask.extend_from_slice(missing_mask);
    Ok((values, mask))
}

/// `v / 240` over the fixed `[0, 240]` bpm range.
pub fn normalize<T: Scalar>(values: &[T]) -> Result<Vec<T>> {
    let max = T::lit(BPM_MAX);
    if let Some(bad) = values.iter().find(|&&v| !(v >= T::zero() && v <= max)) {
        bail!(Data, "value {:?} bpm outside [0, {}]", bad, BPM_MAX);
    }
    Ok(values.iter().map(|&v| v / max).collect())
}

pub fn denormalize<T: Scalar>(values: &[T]) -> Vec<T> {
    let max = T::lit(BPM_MAX);
    values.iter().map(|&v| v * max).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepConfig {
    pub length: usize,
    pub doppler: DopplerConfig,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self { length: DEFAULT_LENGTH, doppler: DopplerConfig::default() }
    }
}

/// Full pipeline for one record.
pub fn prepare(raw: &RawRecord, cfg: &PrepConfig) -> Result<PreparedSignal> {
    let corrected = correct_doppler_artifacts(raw, &cfg.doppler)?;
    let filled = interpolate_gaps(&corrected.record.samples, &corrected.missing_mask)
        .map_err(|e| crate::Error::Data(alloc::format!("episode {}: {}", raw.episode_id, e)))?;
    let (values, missing_mask) = fit_length(&filled, &corrected.missing_mask, cfg.length)?;
    let values = normalize(&values)?;
    Ok(PreparedSignal { episode_id: raw.episode_id, values, missing_mask })
}
