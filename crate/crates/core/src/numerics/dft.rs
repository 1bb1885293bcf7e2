//! Real-input DFT magnitude as two dense products against cached
//! cosine/sine bases, so that it differentiates like any other graph op.

use alloc::sync::Arc;
use alloc::vec::Vec;

use super::{Graph, Scalar, Var};
use crate::error::{bail, Result};

/// Added under the square root so the magnitude has a gradient at zero.
pub const MAGNITUDE_EPS: f64 = 1e-12;

/// Cosine and sine matrices `[n × (n/2+1)]` for one signal length.
#[derive(Clone)]
pub struct DftBasis<T> {
    n: usize,
    cos: Arc<[T]>,
    sin: Arc<[T]>,
}

impl<T: Scalar> DftBasis<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            bail!(Parameter, "DFT length must be at least 2, got {}", n);
        }
        let bins = n / 2 + 1;
        let mut cos = Vec::with_capacity(n * bins);
        let mut sin = Vec::with_capacity(n * bins);
        let step = core::f64::consts::TAU / n as f64;
        for t in 0..n {
            for k in 0..bins {
                // reduce k·t mod n first to keep the angle small
                let angle = step * ((k * t) % n) as f64;
                cos.push(T::lit(libm::cos(angle)));
                sin.push(T::lit(-libm::sin(angle)));
            }
        }
        Ok(Self { n, cos: cos.into(), sin: sin.into() })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// `|DFT(x)|` for a length-`n` node (vector or `1×n` row), as a graph op.
    pub fn magnitude<'a>(&self, g: &mut Graph<'a, T>, x: Var) -> Result<Var> {
        if g.value(x).len() != self.n {
            bail!(Dimension, "DFT basis of length {} applied to {:?}", self.n, g.shape(x));
        }
        let row = g.reshape(x, &[1, self.n])?;
        let c = g.shared(self.cos.clone(), &[self.n, self.bins()])?;
        let s = g.shared(self.sin.clone(), &[self.n, self.bins()])?;
        let re = g.matmul(row, c)?;
        let im = g.matmul(row, s)?;
        let re2 = g.square(re);
        let im2 = g.square(im);
        let power = g.add(re2, im2)?;
        let power = g.add_scalar(power, T::lit(MAGNITUDE_EPS));
        let mag = g.sqrt(power);
        g.reshape(mag, &[self.bins()])
    }
}

/// Non-differentiable convenience wrapper around [`DftBasis::magnitude`].
pub fn dft_magnitude_values<T: Scalar>(x: &[T], basis: &DftBasis<T>) -> Result<Vec<T>> {
    let mut g = Graph::new();
    let v = g.constant_slice(x, &[x.len()])?;
    let m = basis.magnitude(&mut g, v)?;
    Ok(g.value(m).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::vec::Vec;

    /// O(n²) complex DFT written out directly.
    fn naive_dft(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &v) in x.iter().enumerate() {
                    let a = -2.0 * core::f64::consts::PI * (k * t) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn constant_signal_is_dc_only() {
        let b = DftBasis::<f64>::new(8).unwrap();
        let m = dft_magnitude_values(&[2.5; 8], &b).unwrap();
        assert!((m[0] - 20.0).abs() < 1e-9);
        for &v in &m[1..] {
            assert!(v < 1e-5);
        }
    }

    #[test]
    fn pure_tone_peaks_at_its_bin() {
        let n = 16;
        let b = DftBasis::<f64>::new(n).unwrap();
        let x: Vec<f64> = (0..n).map(|t| (2.0 * core::f64::consts::PI * 2.0 * t as f64 / n as f64).cos()).collect();
        let m = dft_magnitude_values(&x, &b).unwrap();
        let peak = m.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        assert_eq!(peak, 2);
        assert!((m[2] - 8.0).abs() < 1e-9);
    }

    #[test]
    fn matches_naive_dft_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [32usize, 33] {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = DftBasis::<f64>::new(n).unwrap();
            let m = dft_magnitude_values(&x, &b).unwrap();
            for (a, w) in m.iter().zip(naive_dft(&x)) {
                assert!((a - w).abs() < 1e-5);
            }
            if n % 2 == 0 {
                let energy: f64 = x.iter().map(|v| v * v).sum();
                let h = n / 2;
                let spec = m[0] * m[0] + 2.0 * m[1..h].iter().map(|v| v * v).sum::<f64>() + m[h] * m[h];
                assert!(((spec / n as f64) - energy).abs() / energy < 1e-4);
            }
        }
    }

    #[test]
    fn rejects_short_input() {
        assert!(DftBasis::<f32>::new(1).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 12;
        let x = Tensor::from_fn(&[n], |_| rng.random_range(-1.0..1.0));
        let w: Vec<f64> = (0..n / 2 + 1).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = DftBasis::<f64>::new(n).unwrap();
        let f = |x: &Tensor<f64>| -> (f64, Vec<f64>) {
            let mut g = Graph::new();
            let v = g.input(x.clone(), true);
            let m = b.magnitude(&mut g, v).unwrap();
            let wv = g.constant(Tensor::new(&[n / 2 + 1], w.clone()).unwrap());
            let p = g.mul(m, wv).unwrap();
            let l = g.sum(p);
            let grads = g.backward(l).unwrap();
            (g.scalar(l), grads.wrt(v).unwrap().to_vec())
        };
        let (_, analytic) = f(&x);
        for i in 0..n {
            let mut p = x.clone();
            p.data_mut()[i] += 1e-3;
            let mut m = x.clone();
            m.data_mut()[i] -= 1e-3;
            let numeric = (f(&p).0 - f(&m).0) / 2e-3;
            assert!((analytic[i] - numeric).abs() / numeric.abs().max(1e-2) < 1e-4);
        }
    }
}
