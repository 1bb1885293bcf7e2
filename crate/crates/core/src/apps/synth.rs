//! Synthetic FHR records.
//!
//! Each record is a constant baseline plus a slow sinusoidal drift, a
//! quasi-periodic variability component (a few sinusoids in the 12-20 s
//! band), white jitter, Gaussian-shaped decelerations placed by a Poisson
//! process, and finally dropout runs set to zero.

use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::error::{bail, Result};
use crate::prep::{RawRecord, SAMPLE_RATE_HZ};
use crate::rng::{stream, Stream, StreamRng};

/// Physiological clamp applied before dropout zeroing.
pub const BPM_RANGE: (f64, f64) = (50.0, 210.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    /// Baseline band in bpm.
    pub baseline: (f64, f64),
    /// Peak amplitude of the slow drift in bpm.
    pub drift_amplitude: f64,
    /// Drift period range in samples.
    pub drift_period: (f64, f64),
    /// Standard deviation of the quasi-periodic variability in bpm.
    pub variability: f64,
    /// Variability period range in samples.
    pub variability_period: (f64, f64),
    /// Number of sinusoids in the variability component.
    pub variability_components: usize,
    /// White jitter standard deviation in bpm.
    pub jitter: f64,
    /// Expected decelerations per hour.
    pub decel_rate: f64,
    /// Deceleration depth range in bpm.
    pub decel_depth: (f64, f64),
    /// Deceleration duration range in samples (about four Gaussian sigmas).
    pub decel_duration: (f64, f64),
    /// Expected dropout runs per hour.
    pub dropout_rate: f64,
    /// Dropout run length range in samples.
    pub dropout_duration: (usize, usize),
    /// Record length range in samples.
    pub length: (usize, usize),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            baseline: (110.0, 160.0),
            drift_amplitude: 4.0,
            drift_period: (600.0, 2400.0),
            variability: 3.0,
            variability_period: (24.0, 40.0),
            variability_components: 3,
            jitter: 1.0,
            decel_rate: 3.0,
            decel_depth: (15.0, 40.0),
            decel_duration: (60.0, 180.0),
            dropout_rate: 2.0,
            dropout_duration: (10, 120),
            length: (1800, 2100),
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// No variability, events or dropout: a constant-baseline generator.
    pub fn flat(self) -> Self {
        Self { drift_amplitude: 0.0, variability: 0.0, jitter: 0.0, decel_rate: 0.0, dropout_rate: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !ordered(self.baseline) || self.baseline.0 < BPM_RANGE.0 || self.baseline.1 > BPM_RANGE.1 {
            bail!(Config, "baseline band {:?} must lie inside {:?}", self.baseline, BPM_RANGE);
        }
        for (name, r) in [
            ("drift period", self.drift_period),
            ("variability period", self.variability_period),
            ("deceleration depth", self.decel_depth),
            ("deceleration duration", self.decel_duration),
        ] {
            if !ordered(r) || r.0 < 0.0 {
                bail!(Config, "{} range {:?} is invalid", name, r);
            }
        }
        if self.drift_period.0 <= 0.0 || self.variability_period.0 <= 0.0 {
            bail!(Config, "periods must be positive");
        }
        for (name, v) in [
            ("drift amplitude", self.drift_amplitude),
            ("variability", self.variability),
            ("jitter", self.jitter),
            ("deceleration rate", self.decel_rate),
            ("dropout rate", self.dropout_rate),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                bail!(Config, "{} must be a non-negative number, got {}", name, v);
            }
        }
        if self.length.0 == 0 || self.length.0 > self.length.1 {
            bail!(Config, "length range {:?} is invalid", self.length);
        }
        if self.dropout_duration.0 == 0 || self.dropout_duration.0 > self.dropout_duration.1 {
            bail!(Config, "dropout duration range {:?} is invalid", self.dropout_duration);
        }
        Ok(())
    }
}

fn uniform(rng: &mut StreamRng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Event start times of a Poisson process with `per_hour` events per hour.
fn poisson_times(rng: &mut StreamRng, per_hour: f64, len: usize) -> Vec<f64> {
    let mut times = Vec::new();
    if per_hour <= 0.0 {
        return times;
    }
    let per_sample = per_hour / (3600.0 * SAMPLE_RATE_HZ);
    let gap = Exp::new(per_sample).expect("positive rate");
    let mut t = gap.sample(rng);
    while t < len as f64 {
        times.push(t);
        t += gap.sample(rng);
    }
    times
}

/// The clean signal, clamped to [`BPM_RANGE`], before dropout.
pub fn clean_signal(spec: &SyntheticSpec, rng: &mut StreamRng, len: usize) -> Vec<f64> {
    let baseline = uniform(rng, spec.baseline);
    let drift_period = uniform(rng, spec.drift_period);
    let drift_phase = rng.random_range(0.0..TAU);
    let k = spec.variability_components.max(1);
    // equal amplitudes giving the requested standard deviation
    let amp = spec.variability * libm::sqrt(2.0 / k as f64);
    let comps: Vec<(f64, f64)> =
        (0..k).map(|_| (TAU / uniform(rng, spec.variability_period), rng.random_range(0.0..TAU))).collect();
    let decels: Vec<(f64, f64, f64)> = poisson_times(rng, spec.decel_rate, len)
        .into_iter()
        .map(|t| (t, uniform(rng, spec.decel_depth), uniform(rng, spec.decel_duration) / 4.0))
        .collect();
    let jitter = Normal::new(0.0, spec.jitter.max(0.0)).expect("finite jitter");
    (0..len)
        .map(|i| {
            let t = i as f64;
            let mut v = baseline + spec.drift_amplitude * libm::sin(TAU * t / drift_period + drift_phase);
            for &(w, ph) in &comps {
                v += amp * libm::sin(w * t + ph);
            }
            for &(c, depth, sigma) in &decels {
                let z = (t - c) / sigma.max(1.0);
                if libm::fabs(z) < 6.0 {
                    v -= depth * libm::exp(-0.5 * z * z);
                }
            }
            if spec.jitter > 0.0 {
                v += jitter.sample(rng);
            }
            v.clamp(BPM_RANGE.0, BPM_RANGE.1)
        })
        .collect()
}

/// Zeroes Poisson-placed runs of samples.
pub fn apply_dropout(spec: &SyntheticSpec, rng: &mut StreamRng, samples: &mut [f32]) {
    for t in poisson_times(rng, spec.dropout_rate, samples.len()) {
        let run = rng.random_range(spec.dropout_duration.0..=spec.dropout_duration.1);
        let start = t as usize;
        let end = (start + run).min(samples.len());
        samples[start..end].fill(0.0);
    }
}

/// One record per episode id `0..count`, each from its own stream.
pub fn generate_synthetic(spec: &SyntheticSpec, count: usize) -> Result<Vec<RawRecord>> {
    spec.validate()?;
    Ok((0..count as u64).map(|id| generate_one(spec, id)).collect())
}

pub fn generate_one(spec: &SyntheticSpec, episode_id: u64) -> RawRecord {
    let mut rng = stream(spec.seed, Stream::Synth, episode_id, 0);
    let len = rng.random_range(spec.length.0..=spec.length.1);
    let mut samples: Vec<f32> = clean_signal(spec, &mut rng, len).into_iter().map(|v| v as f32).collect();
    apply_dropout(spec, &mut rng, &mut samples);
    RawRecord { episode_id, samples }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_spec_gives_constant_records() {
        let spec = SyntheticSpec::default().flat();
        for r in generate_synthetic(&spec, 5).unwrap() {
            assert!(r.samples.iter().all(|&v| v == r.samples[0]));
            assert!((110.0..=160.0).contains(&r.samples[0]));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::default();
        assert_eq!(generate_synthetic(&spec, 4).unwrap(), generate_synthetic(&spec, 4).unwrap());
        let other = SyntheticSpec { seed: 8, ..spec };
        assert_ne!(generate_synthetic(&spec, 4).unwrap(), generate_synthetic(&other, 4).unwrap());
    }

    #[test]
    fn clean_values_stay_in_range() {
        let spec = SyntheticSpec { decel_rate: 30.0, decel_depth: (60.0, 120.0), length: (200, 400), ..Default::default() };
        for id in 0..2000 {
            let mut rng = stream(spec.seed, Stream::Synth, id, 0);
            let v = clean_signal(&spec, &mut rng, 300);
            assert!(v.iter().all(|x| (BPM_RANGE.0..=BPM_RANGE.1).contains(x)));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let d = SyntheticSpec::default();
        assert!(SyntheticSpec { baseline: (160.0, 110.0), ..d }.validate().is_err());
        assert!(SyntheticSpec { jitter: -1.0, ..d }.validate().is_err());
        assert!(SyntheticSpec { length: (0, 10), ..d }.validate().is_err());
    }
}
