//! Evaluation metrics on normalized signals (peak value 1).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::{trace_sqrt_product, SquareMatrix};
use crate::model::FhrFormer;
use crate::numerics::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Shrinkage toward a scaled identity when a covariance has at most as many
/// samples as dimensions.
pub const FID_SHRINKAGE: f64 = 0.1;

/// Metric names in report order.
pub const METRIC_KEYS: [&str; 8] = ["rl", "mse", "rmse", "mae", "psnr", "ssim", "fid", "cc"];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub rl: f64,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub fid: f64,
    pub cc: f64,
}

impl MetricsReport {
    /// Values in [`METRIC_KEYS`] order.
    pub fn values(&self) -> [f64; 8] {
        [self.rl, self.mse, self.rmse, self.mae, self.psnr, self.ssim, self.fid, self.cc]
    }

    pub fn from_values(v: [f64; 8]) -> Self {
        Self { rl: v[0], mse: v[1], rmse: v[2], mae: v[3], psnr: v[4], ssim: v[5], fid: v[6], cc: v[7] }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        METRIC_KEYS.iter().position(|k| *k == key).map(|i| self.values()[i])
    }
}

fn check_pair<T>(x: &[T], y: &[T]) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        bail!(Dimension, "metric needs equal nonzero lengths, got {} and {}", x.len(), y.len());
    }
    Ok(())
}

pub fn mse<T: Scalar>(x: &[T], y: &[T]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / x.len() as f64)
}

pub fn rmse<T: Scalar>(x: &[T], y: &[T]) -> Result<f64> {
    Ok(libm::sqrt(mse(x, y)?))
}

pub fn mae<T: Scalar>(x: &[T], y: &[T]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| libm::fabs(a.as_f64() - b.as_f64())).sum::<f64>() / x.len() as f64)
}

/// `10·log10(max² / MSE)`; `+∞` when the signals are identical.
pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * libm::log10(max_value * max_value / mse)
    }
}

pub fn psnr<T: Scalar>(x: &[T], y: &[T], max_value: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?, max_value))
}

/// Pearson correlation.
pub fn cc<T: Scalar>(x: &[T], y: &[T]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let my = y.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a.as_f64() - mx, b.as_f64() - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        bail!(UndefinedCorrelation, "correlation of a constant signal is undefined");
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean SSIM over every full Gaussian window (stride 1), dynamic range 1.
pub fn ssim_1d<T: Scalar>(x: &[T], y: &[T]) -> Result<f64> {
    check_pair(x, y)?;
    if x.len() < SSIM_WINDOW {
        bail!(Data, "SSIM needs at least {} samples, got {}", SSIM_WINDOW, x.len());
    }
    let w = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let windows = x.len() - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for s in 0..windows {
        let xs = &x[s..s + SSIM_WINDOW];
        let ys = &y[s..s + SSIM_WINDOW];
        let mx: f64 = w.iter().zip(xs).map(|(w, v)| w * v.as_f64()).sum();
        let my: f64 = w.iter().zip(ys).map(|(w, v)| w * v.as_f64()).sum();
        let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
        for k in 0..SSIM_WINDOW {
            let (dx, dy) = (xs[k].as_f64() - mx, ys[k].as_f64() - my);
            vx += w[k] * dx * dx;
            vy += w[k] * dy * dy;
            cxy += w[k] * dx * dy;
        }
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / windows as f64)
}

/// Mean vector and covariance (`n − 1` denominator) of a feature set.
/// When `n ≤ d` the covariance is shrunk toward `tr(Σ)/d · I`.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<(Vec<f64>, SquareMatrix)> {
    let Some(first) = features.first() else {
        bail!(Data, "feature set is empty");
    };
    let d = first.len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        bail!(Dimension, "features must share one nonzero dimension");
    }
    let n = features.len();
    let mut mu = vec![0.0; d];
    for f in features {
        mu.iter_mut().zip(f).for_each(|(m, v)| *m += v);
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = SquareMatrix::zeros(d);
    if n > 1 {
        for f in features {
            for i in 0..d {
                let di = f[i] - mu[i];
                for j in 0..d {
                    cov.data[i * d + j] += di * (f[j] - mu[j]);
                }
            }
        }
        cov.data.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    }
    if n <= d {
        let iso = cov.trace() / d as f64;
        cov.data.iter_mut().for_each(|v| *v *= 1.0 - FID_SHRINKAGE);
        for i in 0..d {
            cov.data[i * d + i] += FID_SHRINKAGE * iso;
        }
    }
    Ok((mu, cov))
}

/// `‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2(Σ_aΣ_b)^{1/2})`, clamped at zero.
pub fn frechet_distance(mu_a: &[f64], cov_a: &SquareMatrix, mu_b: &[f64], cov_b: &SquareMatrix) -> Result<f64> {
    if mu_a.len() != mu_b.len() || cov_a.n != mu_a.len() || cov_b.n != mu_b.len() {
        bail!(Dimension, "Gaussian statistics of different dimension");
    }
    let mean_term: f64 = mu_a.iter().zip(mu_b).map(|(a, b)| (a - b) * (a - b)).sum();
    let cross = trace_sqrt_product(cov_a, cov_b);
    Ok((mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross).max(0.0))
}

pub fn frechet_from_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = gaussian_stats(a)?;
    let (mb, cb) = gaussian_stats(b)?;
    frechet_distance(&ma, &ca, &mb, &cb)
}

/// Fréchet distance between mean-pooled encoder features of two signal sets.
pub fn fid_latent<T: Scalar>(model: &FhrFormer<T>, set_a: &[Vec<T>], set_b: &[Vec<T>]) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        bail!(Data, "FID needs two nonempty signal sets");
    }
    let feats = |set: &[Vec<T>]| -> Result<Vec<Vec<f64>>> {
        set.iter().map(|s| Ok(model.features(s)?.iter().map(|v| v.as_f64()).collect())).collect()
    };
    frechet_from_features(&feats(set_a)?, &feats(set_b)?)
}

/// Per-signal metrics on one original / reconstruction pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalMetrics {
    pub rl: f64,
    pub mse: f64,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub cc: f64,
}

impl SignalMetrics {
    /// `recon` is the composed reconstruction, `rl` the masked-patch loss.
    pub fn compute<T: Scalar>(original: &[T], recon: &[T], rl: f64) -> Result<Self> {
        let m = mse(original, recon)?;
        Ok(Self {
            rl,
            mse: m,
            mae: mae(original, recon)?,
            psnr: psnr_from_mse(m, 1.0),
            ssim: ssim_1d(original, recon)?,
            cc: cc(original, recon)?,
        })
    }
}

/// Averages per-signal metrics in index order; `rmse` is the square root of
/// the averaged MSE so that `rmse² == mse`.
pub fn aggregate(per_signal: &[SignalMetrics], fid: f64) -> Result<MetricsReport> {
    if per_signal.is_empty() {
        bail!(Data, "no signal to aggregate");
    }
    let n = per_signal.len() as f64;
    let mean = |f: fn(&SignalMetrics) -> f64| per_signal.iter().map(f).sum::<f64>() / n;
    let mse = mean(|s| s.mse);
    Ok(MetricsReport {
        rl: mean(|s| s.rl),
        mse,
        rmse: libm::sqrt(mse),
        mae: mean(|s| s.mae),
        psnr: mean(|s| s.psnr),
        ssim: mean(|s| s.ssim),
        fid,
        cc: mean(|s| s.cc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::vec;

    #[test]
    fn psnr_examples() {
        assert!((psnr_from_mse(0.000072, 1.0) - 41.427).abs() < 1e-3);
        assert_eq!(psnr_from_mse(4.0, 2.0), 0.0);
        assert!((psnr_from_mse(0.04, 1.0) - psnr_from_mse(0.01, 1.0) + 6.0206).abs() < 1e-3);
        assert_eq!(psnr(&[1.0f64], &[1.0], 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn scalar_metric_examples() {
        assert_eq!(mae(&[1.0f64, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        let x = [0.1f64, 0.4, 0.3, 0.9];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((cc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((cc(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(cc(&[1.0f64, 1.0], &[0.0, 1.0]), Err(crate::Error::UndefinedCorrelation(_))));
        assert!(mse::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn ssim_examples() {
        let x: Vec<f64> = (0..40).map(|i| 0.5 + 0.3 * (i as f64 * 0.4).sin()).collect();
        assert!((ssim_1d(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let flipped: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        assert!(ssim_1d(&x, &flipped).unwrap() < 1.0);
        assert!(ssim_1d(&x[..5], &x[..5]).is_err());
    }

    #[test]
    fn frechet_isotropic_closed_form() {
        let k = 4;
        let a = SquareMatrix::identity(k);
        let mut b = SquareMatrix::identity(k);
        b.data.iter_mut().for_each(|v| *v *= 4.0);
        let mu = vec![0.3; k];
        assert!((frechet_distance(&mu, &a, &mu, &b).unwrap() - k as f64).abs() < 1e-10);
    }

    #[test]
    fn frechet_shift_and_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a: Vec<Vec<f64>> = (0..30).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
        assert!(frechet_from_features(&a, &a).unwrap() < 1e-4);
        let v = [0.5, -1.0, 0.0, 2.0, 0.25];
        let b: Vec<Vec<f64>> = a.iter().map(|f| f.iter().zip(&v).map(|(x, s)| x + s).collect()).collect();
        let shift: f64 = v.iter().map(|s| s * s).sum();
        assert!((frechet_from_features(&a, &b).unwrap() - shift).abs() < 1e-6);
        let c: Vec<Vec<f64>> = (0..30).map(|_| (0..5).map(|_| rng.random::<f64>() * 2.0).collect()).collect();
        let ab = frechet_from_features(&a, &c).unwrap();
        let ba = frechet_from_features(&c, &a).unwrap();
        assert!((ab - ba).abs() < 1e-6);
        assert!(frechet_from_features(&[], &a).is_err());
    }

    proptest! {
        #[test]
        fn rmse_squares_to_mse(x in proptest::collection::vec(0.0f64..1.0, 12..40), seed in 0u64..100) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
            let m = mse(&x, &y).unwrap();
            prop_assert!((rmse(&x, &y).unwrap().powi(2) - m).abs() < 1e-7);
            let s = ssim_1d(&x, &y).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn psnr_decreases_with_mse(a in 1e-8f64..1.0, b in 1e-8f64..1.0) {
            prop_assume!(a != b);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(psnr_from_mse(lo, 1.0) > psnr_from_mse(hi, 1.0));
        }
    }
}
