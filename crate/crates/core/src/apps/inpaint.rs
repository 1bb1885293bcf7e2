//! Filling real missing samples with model reconstructions.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::model::{FhrFormer, PatchLayout};
use crate::prep::{PreparedSignal, MISSING};

#[derive(Debug, Clone, PartialEq)]
pub struct Inpainted {
    /// Input with model values spliced in at non-padding missing samples.
    pub signal: PreparedSignal,
    /// Patches hidden from the encoder.
    pub masked_patches: Vec<usize>,
    /// Number of samples replaced.
    pub replaced: usize,
}

/// Patches holding at least one missing sample outside the left padding.
pub fn gap_patches(signal: &PreparedSignal, patch_size: usize) -> Vec<usize> {
    let pad = signal.pad_len();
    let n = signal.len() / patch_size;
    (0..n)
        .filter(|&i| (i * patch_size..(i + 1) * patch_size).any(|t| t >= pad && signal.missing_mask[t] == MISSING))
        .collect()
}

/// Masks every patch containing a real gap, reconstructs in inference mode
/// and replaces only the missing samples. Observed samples and the left
/// padding are returned bit-identical.
pub fn inpaint(model: &FhrFormer<f32>, signal: &PreparedSignal) -> Result<Inpainted> {
    let p = model.config().patch_size;
    if signal.values.len() != signal.missing_mask.len() {
        bail!(Dimension, "{} values but {} mask entries", signal.values.len(), signal.missing_mask.len());
    }
    if signal.is_empty() || signal.len() % p != 0 {
        bail!(Config, "signal length {} is not a positive multiple of patch size {}", signal.len(), p);
    }
    if signal.observed_count() == 0 {
        bail!(Data, "episode {} has no observed sample", signal.episode_id);
    }
    let masked = gap_patches(signal, p);
    let mut out = signal.clone();
    if masked.is_empty() {
        return Ok(Inpainted { signal: out, masked_patches: masked, replaced: 0 });
    }
    let layout = PatchLayout::from_masked(signal.len() / p, &masked)?;
    let recon = model.reconstruct(&signal.values, &layout, 0)?;
    let pad = signal.pad_len();
    let mut replaced = 0;
    for &i in &masked {
        for t in i * p..(i + 1) * p {
            if t >= pad && signal.missing_mask[t] == MISSING {
                out.values[t] = recon[t];
                replaced += 1;
            }
        }
    }
    Ok(Inpainted { signal: out, masked_patches: masked, replaced })
}
