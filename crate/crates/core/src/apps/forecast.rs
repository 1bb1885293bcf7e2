//! Recursive forecasting and Monte-Carlo dropout bands.
//!
//! Each iteration takes the latest `context_len` samples, appends
//! `step / p_s` masked patches, reconstructs, and adopts the predicted tail.
//! Positions continue the absolute timeline: the window of iteration `k`
//! starts at patch `k·step/p_s` of the trimmed context.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::exec::Executor;
use crate::model::{FhrFormer, PatchLayout};
use crate::numerics::Graph;
use crate::rng::{stream, Stream, StreamRng};

/// Two-sided 95 % normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForecastConfig {
    /// Samples of history seen by the model.
    pub context_len: usize,
    /// Samples predicted per iteration.
    pub step: usize,
    /// Total samples to predict.
    pub horizon: usize,
}

impl ForecastConfig {
    /// One hour of history, 15 s steps.
    pub fn paper() -> Self {
        Self { context_len: 3600, step: 30, horizon: 300 }
    }

    pub fn toy() -> Self {
        Self { context_len: 1200, ..Self::paper() }
    }

    pub fn iterations(&self) -> usize {
        self.horizon / self.step.max(1)
    }

    pub fn validate(&self, patch_size: usize) -> Result<()> {
        if self.context_len == 0 || self.step == 0 || self.horizon == 0 {
            bail!(Parameter, "context, step and horizon must be positive");
        }
        if self.context_len % patch_size != 0 || self.step % patch_size != 0 {
            bail!(Parameter, "context {} and step {} must be multiples of patch size {}", self.context_len, self.step, patch_size);
        }
        if self.horizon % self.step != 0 {
            bail!(Parameter, "horizon {} is not a multiple of step {}", self.horizon, self.step);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub context_len: usize,
    pub step: usize,
    pub horizon: usize,
    pub iterations: usize,
    pub mean: Vec<f32>,
    pub lower95: Vec<f32>,
    pub upper95: Vec<f32>,
}

/// One recursive rollout; `rng = Some` keeps dropout active.
fn rollout(model: &FhrFormer<f32>, history: &[f32], cfg: &ForecastConfig, mut rng: Option<&mut StreamRng>) -> Result<(Vec<f32>, usize)> {
    let p = model.config().patch_size;
    let mut buffer = history.to_vec();
    let tail = cfg.step / p;
    let n = (cfg.context_len + cfg.step) / p;
    let layout = PatchLayout::from_masked(n, &(n - tail..n).collect::<Vec<_>>())?;
    let mut iterations = 0;
    for k in 0..cfg.iterations() {
        let start = k * cfg.step;
        let mut window = buffer[start..start + cfg.context_len].to_vec();
        window.resize(cfg.context_len + cfg.step, 0.0);
        let mut g = Graph::new();
        let b = model.bind(&mut g);
        let out = model.forward(&mut g, &b, &window, &layout, start / p, rng.as_deref_mut())?;
        buffer.extend_from_slice(&g.value(out.recon)[cfg.context_len..]);
        iterations += 1;
    }
    Ok((buffer.split_off(history.len()), iterations))
}

fn trimmed<'c>(context: &'c [f32], cfg: &ForecastConfig, patch_size: usize) -> Result<&'c [f32]> {
    cfg.validate(patch_size)?;
    if context.len() < cfg.context_len {
        bail!(Data, "context has {} samples, need at least {}", context.len(), cfg.context_len);
    }
    Ok(&context[context.len() - cfg.context_len..])
}

/// Deterministic (dropout-off) forecast; the band collapses to the mean.
pub fn forecast(model: &FhrFormer<f32>, context: &[f32], cfg: &ForecastConfig) -> Result<ForecastResult> {
    let history = trimmed(context, cfg, model.config().patch_size)?;
    let (mean, iterations) = rollout(model, history, cfg, None)?;
    Ok(ForecastResult {
        context_len: cfg.context_len,
        step: cfg.step,
        horizon: cfg.horizon,
        iterations,
        lower95: mean.clone(),
        upper95: mean.clone(),
        mean,
    })
}

/// Deterministic forecast with a band of `mean ± 1.96·std` over `passes`
/// seeded rollouts with dropout active.
pub fn forecast_interval<E: Executor>(
    model: &FhrFormer<f32>,
    context: &[f32],
    cfg: &ForecastConfig,
    passes: usize,
    seed: u64,
    exec: &E,
) -> Result<ForecastResult> {
    if passes < 2 {
        bail!(Parameter, "need at least 2 passes, got {}", passes);
    }
    let mut result = forecast(model, context, cfg)?;
    let history = trimmed(context, cfg, model.config().patch_size)?;
    let runs: Vec<Vec<f32>> = exec
        .map(passes, |i| rollout(model, history, cfg, Some(&mut stream(seed, Stream::McDropout, i as u64, 0))).map(|r| r.0))
        .into_iter()
        .collect::<Result<_>>()?;
    for t in 0..cfg.horizon {
        let n = passes as f64;
        let m = runs.iter().map(|r| r[t] as f64).sum::<f64>() / n;
        let var = runs.iter().map(|r| (r[t] as f64 - m) * (r[t] as f64 - m)).sum::<f64>() / (n - 1.0);
        let half = (Z95 * libm::sqrt(var)) as f32;
        result.lower95[t] = result.mean[t] - half;
        result.upper95[t] = result.mean[t] + half;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::model::ModelConfig;

    fn cfg() -> ForecastConfig {
        ForecastConfig { context_len: 16, step: 4, horizon: 40 }
    }

    fn context() -> Vec<f32> {
        (0..20).map(|i| 0.55 + 0.02 * (i as f32 * 0.7).sin()).collect()
    }

    #[test]
    fn iteration_count_and_shapes() {
        let m = FhrFormer::new(ModelConfig::tiny(), 3).unwrap();
        let r = forecast(&m, &context(), &cfg()).unwrap();
        assert_eq!(r.iterations, 10);
        assert_eq!(r.mean.len(), 40);
        assert!(r.mean.iter().all(|v| v.is_finite()));
        let one = forecast(&m, &context(), &ForecastConfig { horizon: 4, ..cfg() }).unwrap();
        assert_eq!(one.iterations, 1);
        assert_eq!(one.mean[..], r.mean[..4]);
    }

    #[test]
    fn single_step_equals_masked_tail_reconstruction() {
        let m = FhrFormer::new(ModelConfig::tiny(), 3).unwrap();
        let c = ForecastConfig { horizon: 4, ..cfg() };
        let r = forecast(&m, &context(), &c).unwrap();
        let mut w = context()[4..].to_vec();
        w.extend([0.0; 4]);
        let layout = PatchLayout::from_masked(5, &[4]).unwrap();
        let recon = m.reconstruct(&w, &layout, 0).unwrap();
        assert_eq!(r.mean[..], recon[16..]);
    }

    #[test]
    fn band_brackets_mean_and_collapses_without_dropout() {
        let noisy = ModelConfig { dropout: 0.2, ..ModelConfig::tiny() };
        let m = FhrFormer::new(noisy, 3).unwrap();
        let r = forecast_interval(&m, &context(), &cfg(), 8, 1, &Sequential).unwrap();
        assert!((0..40).all(|t| r.lower95[t] <= r.mean[t] && r.mean[t] <= r.upper95[t]));
        assert!((0..40).any(|t| r.upper95[t] > r.lower95[t]));
        let m0 = FhrFormer::new(ModelConfig::tiny(), 3).unwrap();
        let r0 = forecast_interval(&m0, &context(), &cfg(), 4, 1, &Sequential).unwrap();
        assert_eq!(r0.lower95, r0.mean);
        assert_eq!(r0.upper95, r0.mean);
    }

    #[test]
    fn invalid_requests() {
        let m = FhrFormer::new(ModelConfig::tiny(), 3).unwrap();
        assert!(matches!(forecast(&m, &context()[..10], &cfg()), Err(crate::Error::Data(_))));
        assert!(forecast(&m, &context(), &ForecastConfig { horizon: 6, ..cfg() }).is_err());
        assert!(forecast(&m, &context(), &ForecastConfig { step: 3, horizon: 9, ..cfg() }).is_err());
        assert!(matches!(forecast_interval(&m, &context(), &cfg(), 1, 0, &Sequential), Err(crate::Error::Parameter(_))));
    }
}
