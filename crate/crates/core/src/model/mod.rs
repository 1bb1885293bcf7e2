//! The masked encoder-decoder.
//!
//! Patches are embedded linearly and given fixed sinusoidal positions. Only
//! visible patches enter the encoder. The decoder sees every position: the
//! encoder output for visible patches, a shared learnable mask token for
//! masked ones, each plus its positional encoding. Blocks are post-norm
//! (`LN(x + sublayer(x))`) with bidirectional attention. A linear head maps
//! every decoded row back to a patch, and the reconstruction keeps the
//! original samples on visible patches.

mod config;
mod params;
mod patch;
mod positional;

use alloc::vec::Vec;

pub use config::ModelConfig;
pub use params::{AttnIdx, DecoderIdx, EncoderIdx, FfnIdx, LnIdx, ParamLayout};
pub use patch::{eligible_patches, mask_count, patchify, sample_mask, unpatchify, PatchLayout};
pub use positional::PositionalTable;

use crate::error::{bail, Result};
use crate::numerics::{Graph, NamedTensor, Scalar, Tensor, Var};
use crate::rng::{stream, Stream, StreamRng};

pub const LN_EPS: f64 = 1e-5;

/// Model parameters plus the architecture that interprets them.
#[derive(Debug, Clone)]
pub struct FhrFormer<T> {
    config: ModelConfig,
    layout: ParamLayout,
    params: Vec<NamedTensor<T>>,
    positions: PositionalTable<T>,
}

/// Parameters bound into one graph.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    fn get(&self, slot: usize) -> Var {
        self.vars[slot]
    }
}

/// Nodes produced by [`FhrFormer::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// Original patches `[N × p_s]` (constant).
    pub patches: Var,
    /// Encoder output `[|U| × d_model]`.
    pub latent: Var,
    /// Decoder output `[N × d_model]`.
    pub decoded: Var,
    /// Head output for every patch `[N × p_s]`.
    pub predictions: Var,
    /// Composed reconstruction `[L]`.
    pub recon: Var,
}

impl<T: Scalar> FhrFormer<T> {
    /// Fresh model: Glorot-uniform weights, zero biases, unit LN gains,
    /// mask token from N(0, 0.02²).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Stream::Init, 0, 0);
        let (layout, params) = params::build(&config, Some(&mut rng));
        Ok(Self::assemble(config, layout, params))
    }

    /// Rebuilds a model from named arrays, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: Vec<NamedTensor<T>>) -> Result<Self> {
        config.validate()?;
        let (layout, expected) = params::build::<T>(&config, None);
        if expected.len() != params.len() {
            bail!(Config, "expected {} parameters, got {}", expected.len(), params.len());
        }
        for (e, p) in expected.iter().zip(&params) {
            if e.name != p.name || e.tensor.shape() != p.tensor.shape() {
                bail!(
                    Config,
                    "parameter mismatch: expected '{}' {:?}, got '{}' {:?}",
                    e.name,
                    e.tensor.shape(),
                    p.name,
                    p.tensor.shape()
                );
            }
            if !p.tensor.is_finite() {
                bail!(NonFinite, "parameter '{}' holds a non-finite value", p.name);
            }
        }
        Ok(Self::assemble(config, layout, params))
    }

    fn assemble(config: ModelConfig, layout: ParamLayout, params: Vec<NamedTensor<T>>) -> Self {
        let positions = PositionalTable::new(config.n_patches(), config.d_model);
        Self { config, layout, params, positions }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[NamedTensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<NamedTensor<T>> {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn positions(&self) -> &PositionalTable<T> {
        &self.positions
    }

    pub fn cast<U: Scalar>(&self) -> FhrFormer<U> {
        let params = self
            .params
            .iter()
            .map(|p| NamedTensor { name: p.name.clone(), tensor: p.tensor.cast() })
            .collect();
        FhrFormer::assemble(self.config, self.layout.clone(), params)
    }

    /// Registers every parameter as a graph leaf, slot = list index.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a, T>) -> Bound {
        Bound { vars: self.params.iter().enumerate().map(|(i, p)| g.param(i, &p.tensor)).collect() }
    }

    /// `Ẽ = {W_in·x_i + b_in + p_i : i ∈ U}`, positions taken from the
    /// absolute patch index (offset by `first_position`).
    pub fn embed_visible(
        &self,
        g: &mut Graph<'_, T>,
        b: &Bound,
        patches: Var,
        layout: &PatchLayout,
        first_position: usize,
        mut rng: Option<&mut StreamRng>,
    ) -> Result<Var> {
        if layout.visible.is_empty() {
            bail!(Data, "no visible patch to embed");
        }
        let rows: Vec<(Var, usize)> = layout.visible.iter().map(|&i| (patches, i)).collect();
        let x = g.stack_rows(&rows)?;
        let e = g.linear(x, b.get(self.layout.w_in), Some(b.get(self.layout.b_in)))?;
        let pos = g.constant(self.positions.rows(layout.visible.iter().map(|&i| i + first_position)));
        let e = g.add(e, pos)?;
        g.dropout(e, self.config.dropout, rng.as_deref_mut())
    }

    fn attention(&self, g: &mut Graph<'_, T>, b: &Bound, a: &AttnIdx, query: Var, context: Var) -> Result<Var> {
        let q = g.linear(query, b.get(a.wq), Some(b.get(a.bq)))?;
        let k = g.linear(context, b.get(a.wk), Some(b.get(a.bk)))?;
        let v = g.linear(context, b.get(a.wv), Some(b.get(a.bv)))?;
        let dh = self.config.head_dim();
        let scale = T::lit(1.0 / libm::sqrt(dh as f64));
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = g.cols(q, h * dh, dh)?;
            let kh = g.cols(k, h * dh, dh)?;
            let vh = g.cols(v, h * dh, dh)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax(scores, 1)?;
            heads.push(g.matmul(weights, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        g.linear(cat, b.get(a.wo), Some(b.get(a.bo)))
    }

    fn feed_forward(&self, g: &mut Graph<'_, T>, b: &Bound, f: &FfnIdx, x: Var) -> Result<Var> {
        let h = g.linear(x, b.get(f.w1), Some(b.get(f.b1)))?;
        let h = g.gelu(h);
        g.linear(h, b.get(f.w2), Some(b.get(f.b2)))
    }

    /// `LN(x + dropout(sublayer))`
    fn add_norm(
        &self,
        g: &mut Graph<'_, T>,
        b: &Bound,
        ln: &LnIdx,
        x: Var,
        sub: Var,
        rng: Option<&mut StreamRng>,
    ) -> Result<Var> {
        let sub = g.dropout(sub, self.config.dropout, rng)?;
        let s = g.add(x, sub)?;
        g.layer_norm(s, b.get(ln.gain), b.get(ln.bias), T::lit(LN_EPS))
    }

    /// Encoder stack over the visible embeddings.
    pub fn encode(&self, g: &mut Graph<'_, T>, b: &Bound, embedded: Var, mut rng: Option<&mut StreamRng>) -> Result<Var> {
        let mut h = embedded;
        for blk in &self.layout.encoder {
            let a = self.attention(g, b, &blk.attn, h, h)?;
            let h1 = self.add_norm(g, b, &blk.ln1, h, a, rng.as_deref_mut())?;
            let f = self.feed_forward(g, b, &blk.ffn, h1)?;
            h = self.add_norm(g, b, &blk.ln2, h1, f, rng.as_deref_mut())?;
        }
        Ok(h)
    }

    /// Decoder stack over all `N` positions, cross-attending to `latent`.
    pub fn decode(
        &self,
        g: &mut Graph<'_, T>,
        b: &Bound,
        latent: Var,
        layout: &PatchLayout,
        first_position: usize,
        mut rng: Option<&mut StreamRng>,
    ) -> Result<Var> {
        let n = layout.n_patches();
        if g.shape(latent).first() != Some(&layout.visible.len()) {
            bail!(Dimension, "latent {:?} does not match {} visible patches", g.shape(latent), layout.visible.len());
        }
        let rank = layout.visible_rank();
        let token = b.get(self.layout.mask_token);
        let rows: Vec<(Var, usize)> = (0..n)
            .map(|i| match rank[i] {
                Some(r) => (latent, r),
                None => (token, 0),
            })
            .collect();
        let d0 = g.stack_rows(&rows)?;
        let pos = g.constant(self.positions.rows((0..n).map(|i| i + first_position)));
        let d0 = g.add(d0, pos)?;
        let mut d = g.dropout(d0, self.config.dropout, rng.as_deref_mut())?;
        for blk in &self.layout.decoder {
            let a = self.attention(g, b, &blk.self_attn, d, d)?;
            let d1 = self.add_norm(g, b, &blk.ln1, d, a, rng.as_deref_mut())?;
            let c = self.attention(g, b, &blk.cross_attn, d1, latent)?;
            let d2 = self.add_norm(g, b, &blk.ln2, d1, c, rng.as_deref_mut())?;
            let f = self.feed_forward(g, b, &blk.ffn, d2)?;
            d = self.add_norm(g, b, &blk.ln3, d2, f, rng.as_deref_mut())?;
        }
        Ok(d)
    }

    /// Head `x̂_i = W_out·d_i + b_out` for every patch, then the composed
    /// reconstruction (originals on visible patches, `x̂` on masked ones).
    /// Returns `(recon [L], predictions [N × p_s])`.
    pub fn project_and_compose(
        &self,
        g: &mut Graph<'_, T>,
        b: &Bound,
        decoded: Var,
        layout: &PatchLayout,
        patches: Var,
    ) -> Result<(Var, Var)> {
        let pred = g.linear(decoded, b.get(self.layout.w_out), Some(b.get(self.layout.b_out)))?;
        let rows: Vec<(Var, usize)> =
            (0..layout.n_patches()).map(|i| if layout.mask[i] == 1 { (patches, i) } else { (pred, i) }).collect();
        let stacked = g.stack_rows(&rows)?;
        let len = layout.n_patches() * self.config.patch_size;
        let recon = g.reshape(stacked, &[len])?;
        Ok((recon, pred))
    }

    /// Full forward pass on one signal. `rng = None` is inference mode.
    ///
    /// The signal may be any multiple of the patch size long;
    /// `first_position` shifts every positional index.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a, T>,
        b: &Bound,
        signal: &'a [T],
        layout: &PatchLayout,
        first_position: usize,
        mut rng: Option<&mut StreamRng>,
    ) -> Result<ForwardOutput> {
        let p = self.config.patch_size;
        if signal.len() % p != 0 || signal.len() / p != layout.n_patches() {
            bail!(
                Dimension,
                "signal of length {} does not split into {} patches of {}",
                signal.len(),
                layout.n_patches(),
                p
            );
        }
        let patches = g.constant_slice(signal, &[layout.n_patches(), p])?;
        let embedded = self.embed_visible(g, b, patches, layout, first_position, rng.as_deref_mut())?;
        let latent = self.encode(g, b, embedded, rng.as_deref_mut())?;
        let decoded = self.decode(g, b, latent, layout, first_position, rng.as_deref_mut())?;
        let (recon, predictions) = self.project_and_compose(g, b, decoded, layout, patches)?;
        Ok(ForwardOutput { patches, latent, decoded, predictions, recon })
    }

    /// Inference-mode reconstruction of one signal.
    pub fn reconstruct(&self, signal: &[T], layout: &PatchLayout, first_position: usize) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let out = self.forward(&mut g, &b, signal, layout, first_position, None)?;
        Ok(g.value(out.recon).to_vec())
    }

    /// Mean-pooled encoder output of the fully visible signal.
    pub fn features(&self, signal: &[T]) -> Result<Vec<T>> {
        let layout = PatchLayout::all_visible(signal.len() / self.config.patch_size);
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let patches = g.constant_slice(signal, &[layout.n_patches(), self.config.patch_size])?;
        let e = self.embed_visible(&mut g, &b, patches, &layout, 0, None)?;
        let z = self.encode(&mut g, &b, e, None)?;
        let d = self.config.d_model;
        let rows = layout.n_patches();
        let zv = g.value(z);
        let inv = T::one() / T::lit(rows as f64);
        Ok((0..d).map(|j| (0..rows).map(|r| zv[r * d + j]).sum::<T>() * inv).collect())
    }

    /// Owned copy of the head predictions for every patch, as a tensor.
    pub fn predictions_tensor(g: &Graph<'_, T>, out: &ForwardOutput) -> Tensor<T> {
        g.to_tensor(out.predictions)
    }
}

#[cfg(test)]
mod tests;
