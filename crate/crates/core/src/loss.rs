//! Hybrid objective: masked-patch squared error plus a focal frequency term
//! on the composed reconstruction.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::model::{ForwardOutput, PatchLayout};
use crate::numerics::{dft_magnitude_values, DftBasis, Graph, Scalar, Var};

pub const DEFAULT_ALPHA: f64 = 0.95;
pub const DEFAULT_BETA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the time-domain term, in (0, 1).
    pub alpha: f64,
    /// Focal exponent.
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, beta: DEFAULT_BETA }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!(Parameter, "alpha {} outside (0, 1)", self.alpha);
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            bail!(Parameter, "focal exponent {} must be positive", self.beta);
        }
        Ok(())
    }
}

/// Values of the three loss terms for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub recon: f64,
    pub freq: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Graph nodes of the three loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub recon: Var,
    pub freq: Var,
    pub total: Var,
}

impl LossNodes {
    pub fn breakdown<T: Scalar>(&self, g: &Graph<'_, T>, cfg: &LossConfig) -> LossBreakdown {
        LossBreakdown {
            recon: g.scalar(self.recon).as_f64(),
            freq: g.scalar(self.freq).as_f64(),
            total: g.scalar(self.total).as_f64(),
            alpha: cfg.alpha,
            beta: cfg.beta,
        }
    }
}

/// `(1/|M|)·Σ_{i∈M} ‖x̂_i − x_i‖²` as a graph node.
pub fn recon_loss_node<T: Scalar>(
    g: &mut Graph<'_, T>,
    predictions: Var,
    patches: Var,
    masked: &[usize],
) -> Result<Var> {
    if masked.is_empty() {
        bail!(Data, "reconstruction loss needs at least one masked patch");
    }
    let pred_rows: Vec<(Var, usize)> = masked.iter().map(|&i| (predictions, i)).collect();
    let true_rows: Vec<(Var, usize)> = masked.iter().map(|&i| (patches, i)).collect();
    let p = g.stack_rows(&pred_rows)?;
    let t = g.stack_rows(&true_rows)?;
    let diff = g.sub(p, t)?;
    let sq = g.square(diff);
    let s = g.sum(sq);
    Ok(g.scale(s, T::lit(1.0 / masked.len() as f64)))
}

/// Focal frequency loss of `recon` against the constant spectrum `target_mag`.
pub fn freq_loss_node<T: Scalar>(
    g: &mut Graph<'_, T>,
    basis: &DftBasis<T>,
    recon: Var,
    target_mag: Var,
    beta: f64,
) -> Result<Var> {
    let mag = basis.magnitude(g, recon)?;
    let diff = g.sub(target_mag, mag)?;
    let delta = g.abs(diff);
    let neg = g.scale(delta, -T::one());
    let e = g.exp(neg);
    let one_minus = g.scale(e, -T::one());
    let mut weight = g.add_scalar(one_minus, T::one());
    if beta != 1.0 {
        weight = g.powf(weight, T::lit(beta));
    }
    let focal = g.mul(weight, delta)?;
    Ok(g.mean(focal))
}

/// `α·recon + (1−α)·freq` for one forward pass.
pub fn hybrid_loss_node<T: Scalar>(
    g: &mut Graph<'_, T>,
    basis: &DftBasis<T>,
    out: &ForwardOutput,
    layout: &PatchLayout,
    cfg: &LossConfig,
) -> Result<LossNodes> {
    cfg.validate()?;
    let recon = recon_loss_node(g, out.predictions, out.patches, &layout.masked)?;
    let n = g.value(out.recon).len();
    let x = g.reshape(out.patches, &[n])?;
    let target_mag = basis.magnitude(g, x)?;
    let freq = freq_loss_node(g, basis, out.recon, target_mag, cfg.beta)?;
    let a = g.scale(recon, T::lit(cfg.alpha));
    let b = g.scale(freq, T::lit(1.0 - cfg.alpha));
    let total = g.add(a, b)?;
    Ok(LossNodes { recon, freq, total })
}

/// Value-only reconstruction loss; `predictions` and `target` are `[N × p]`
/// row-major.
pub fn recon_loss<T: Scalar>(predictions: &[T], target: &[T], patch_size: usize, masked: &[usize]) -> Result<f64> {
    if masked.is_empty() {
        bail!(Data, "reconstruction loss needs at least one masked patch");
    }
    if predictions.len() != target.len() || patch_size == 0 || target.len() % patch_size != 0 {
        bail!(Dimension, "prediction length {} does not match target {}", predictions.len(), target.len());
    }
    let mut total = 0.0;
    for &i in masked {
        let range = i * patch_size..(i + 1) * patch_size;
        if range.end > target.len() {
            bail!(Dimension, "masked patch {} out of range", i);
        }
        total += predictions[range.clone()]
            .iter()
            .zip(&target[range])
            .map(|(a, b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum::<f64>();
    }
    Ok(total / masked.len() as f64)
}

/// Value-only focal frequency loss between two equal-length signals.
pub fn freq_loss<T: Scalar>(recon: &[T], original: &[T], beta: f64) -> Result<f64> {
    if recon.len() != original.len() {
        bail!(Dimension, "length mismatch: {} vs {}", recon.len(), original.len());
    }
    let basis = DftBasis::new(recon.len())?;
    let a = dft_magnitude_values(original, &basis)?;
    let b = dft_magnitude_values(recon, &basis)?;
    Ok(focal_mean(&a, &b, beta))
}

/// `mean_k (1 − e^{−δ_k})^β · δ_k` with `δ_k = |a_k − b_k|`.
pub fn focal_mean<T: Scalar>(a: &[T], b: &[T], beta: f64) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = libm::fabs(x.as_f64() - y.as_f64());
            libm::pow(1.0 - libm::exp(-d), beta) * d
        })
        .sum::<f64>()
        / n
}

pub fn total_loss(recon: f64, freq: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!(Parameter, "alpha {} outside (0, 1)", alpha);
    }
    Ok(alpha * recon + (1.0 - alpha) * freq)
}
