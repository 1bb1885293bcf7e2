//! Parameter inventory: names, shapes and initialisation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::numerics::{NamedTensor, Scalar, Tensor};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfnIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LnIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderIdx {
    pub attn: AttnIdx,
    pub ln1: LnIdx,
    pub ffn: FfnIdx,
    pub ln2: LnIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderIdx {
    pub self_attn: AttnIdx,
    pub ln1: LnIdx,
    pub cross_attn: AttnIdx,
    pub ln2: LnIdx,
    pub ffn: FfnIdx,
    pub ln3: LnIdx,
}

/// Slot of every learnable array in the flat parameter list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub w_in: usize,
    pub b_in: usize,
    pub mask_token: usize,
    pub encoder: Vec<EncoderIdx>,
    pub decoder: Vec<DecoderIdx>,
    pub w_out: usize,
    pub b_out: usize,
}

enum Init {
    Glorot,
    Zeros,
    Ones,
    Normal(f64),
}

struct Builder<'r, T> {
    params: Vec<NamedTensor<T>>,
    rng: Option<&'r mut StreamRng>,
}

impl<T: Scalar> Builder<'_, T> {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let tensor = match (init, self.rng.as_deref_mut()) {
            (Init::Ones, _) => Tensor::filled(shape, T::one()),
            (Init::Zeros, _) | (_, None) => Tensor::zeros(shape),
            (Init::Glorot, Some(rng)) => {
                let (fan_out, fan_in) = (shape[0], shape[1]);
                let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                Tensor::from_fn(shape, |_| T::lit(rng.random_range(-limit..limit)))
            }
            (Init::Normal(std), Some(rng)) => {
                let normal = Normal::new(0.0, std).expect("positive std");
                Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
            }
        };
        self.params.push(NamedTensor { name, tensor });
        self.params.len() - 1
    }

    fn attn(&mut self, p: &str, d: usize) -> AttnIdx {
        AttnIdx {
            wq: self.add(format!("{p}.wq"), &[d, d], Init::Glorot),
            bq: self.add(format!("{p}.bq"), &[d], Init::Zeros),
            wk: self.add(format!("{p}.wk"), &[d, d], Init::Glorot),
            bk: self.add(format!("{p}.bk"), &[d], Init::Zeros),
            wv: self.add(format!("{p}.wv"), &[d, d], Init::Glorot),
            bv: self.add(format!("{p}.bv"), &[d], Init::Zeros),
            wo: self.add(format!("{p}.wo"), &[d, d], Init::Glorot),
            bo: self.add(format!("{p}.bo"), &[d], Init::Zeros),
        }
    }

    fn ffn(&mut self, p: &str, d: usize, hidden: usize) -> FfnIdx {
        FfnIdx {
            w1: self.add(format!("{p}.w1"), &[hidden, d], Init::Glorot),
            b1: self.add(format!("{p}.b1"), &[hidden], Init::Zeros),
            w2: self.add(format!("{p}.w2"), &[d, hidden], Init::Glorot),
            b2: self.add(format!("{p}.b2"), &[d], Init::Zeros),
        }
    }

    fn ln(&mut self, p: &str, d: usize) -> LnIdx {
        LnIdx {
            gain: self.add(format!("{p}.gain"), &[d], Init::Ones),
            bias: self.add(format!("{p}.bias"), &[d], Init::Zeros),
        }
    }
}

/// Builds the parameter list for `cfg`. Without an rng every array that
/// would be random is zero, which is enough to describe names and shapes.
pub(crate) fn build<T: Scalar>(cfg: &ModelConfig, rng: Option<&mut StreamRng>) -> (ParamLayout, Vec<NamedTensor<T>>) {
    let d = cfg.d_model;
    let mut b = Builder { params: Vec::new(), rng };
    let w_in = b.add("embed.w_in".into(), &[d, cfg.patch_size], Init::Glorot);
    let b_in = b.add("embed.b_in".into(), &[d], Init::Zeros);
    let mask_token = b.add("mask_token".into(), &[d], Init::Normal(0.02));
    let encoder = (0..cfg.encoder_layers)
        .map(|l| {
            let p = format!("enc.{l}");
            EncoderIdx {
                attn: b.attn(&format!("{p}.attn"), d),
                ln1: b.ln(&format!("{p}.ln1"), d),
                ffn: b.ffn(&format!("{p}.ffn"), d, cfg.ffn_dim),
                ln2: b.ln(&format!("{p}.ln2"), d),
            }
        })
        .collect();
    let decoder = (0..cfg.decoder_layers)
        .map(|l| {
            let p = format!("dec.{l}");
            DecoderIdx {
                self_attn: b.attn(&format!("{p}.self_attn"), d),
                ln1: b.ln(&format!("{p}.ln1"), d),
                cross_attn: b.attn(&format!("{p}.cross_attn"), d),
                ln2: b.ln(&format!("{p}.ln2"), d),
                ffn: b.ffn(&format!("{p}.ffn"), d, cfg.ffn_dim),
                ln3: b.ln(&format!("{p}.ln3"), d),
            }
        })
        .collect();
    let w_out = b.add("head.w_out".into(), &[cfg.patch_size, d], Init::Glorot);
    let b_out = b.add("head.b_out".into(), &[cfg.patch_size], Init::Zeros);
    (ParamLayout { w_in, b_in, mask_token, encoder, decoder, w_out, b_out }, b.params)
}
