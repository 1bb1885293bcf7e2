use alloc::vec::Vec;

use crate::numerics::{Scalar, Tensor};

/// Fixed sinusoidal encodings, shared by encoder and decoder.
///
/// Rows beyond the cached range are computed on demand, so any absolute
/// patch position can be encoded.
#[derive(Debug, Clone)]
pub struct PositionalTable<T> {
    d_model: usize,
    table: Vec<T>,
}

fn encoding(pos: usize, d_model: usize, out: &mut Vec<f64>) {
    out.clear();
    for j in 0..d_model {
        let pair = (j / 2) * 2;
        let freq = libm::pow(10_000.0, -(pair as f64) / d_model as f64);
        let angle = pos as f64 * freq;
        out.push(if j % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) });
    }
}

impl<T: Scalar> PositionalTable<T> {
    pub fn new(n_max: usize, d_model: usize) -> Self {
        let mut table = Vec::with_capacity(n_max * d_model);
        let mut row = Vec::with_capacity(d_model);
        for p in 0..n_max {
            encoding(p, d_model, &mut row);
            table.extend(row.iter().map(|&v| T::lit(v)));
        }
        Self { d_model, table }
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn cached_rows(&self) -> usize {
        self.table.len() / self.d_model.max(1)
    }

    /// Encodings of `positions`, one row each.
    pub fn rows(&self, positions: impl IntoIterator<Item = usize>) -> Tensor<T> {
        let d = self.d_model;
        let mut data = Vec::new();
        let mut tmp = Vec::with_capacity(d);
        let mut n = 0;
        for p in positions {
            if p < self.cached_rows() {
                data.extend_from_slice(&self.table[p * d..(p + 1) * d]);
            } else {
                encoding(p, d, &mut tmp);
                data.extend(tmp.iter().map(|&v| T::lit(v)));
            }
            n += 1;
        }
        Tensor::new(&[n, d], data).expect("rows × d_model")
    }
}
