//! Patch partition and random patch masking.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::error::{bail, Result};
use crate::numerics::{Scalar, Tensor};

/// Splits a signal into `len / patch_size` rows of `patch_size` samples.
pub fn patchify<T: Scalar>(signal: &[T], patch_size: usize) -> Result<Tensor<T>> {
    if patch_size == 0 || signal.len() % patch_size != 0 {
        bail!(Config, "length {} is not divisible by patch size {}", signal.len(), patch_size);
    }
    Tensor::new(&[signal.len() / patch_size, patch_size], signal.to_vec())
}

pub fn unpatchify<T: Scalar>(patches: &Tensor<T>) -> Vec<T> {
    patches.data().to_vec()
}

/// Which patches the encoder sees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchLayout {
    /// Per patch: 1 = visible, 0 = masked.
    pub mask: Vec<u8>,
    /// Masked indices, ascending.
    pub masked: Vec<usize>,
    /// Visible indices, ascending.
    pub visible: Vec<usize>,
}

impl PatchLayout {
    pub fn from_masked(n_patches: usize, masked: &[usize]) -> Result<Self> {
        let mut mask = vec![1u8; n_patches];
        for &i in masked {
            if i >= n_patches {
                bail!(Dimension, "masked patch {} out of range for {} patches", i, n_patches);
            }
            mask[i] = 0;
        }
        let layout = Self::from_mask(mask);
        if layout.visible.is_empty() {
            bail!(Data, "every patch is masked; the encoder needs at least one visible patch");
        }
        Ok(layout)
    }

    /// Every patch visible; nothing to reconstruct.
    pub fn all_visible(n_patches: usize) -> Self {
        Self::from_mask(vec![1u8; n_patches])
    }

    fn from_mask(mask: Vec<u8>) -> Self {
        let masked = (0..mask.len()).filter(|&i| mask[i] == 0).collect();
        let visible = (0..mask.len()).filter(|&i| mask[i] == 1).collect();
        Self { mask, masked, visible }
    }

    pub fn n_patches(&self) -> usize {
        self.mask.len()
    }

    /// Rank of each visible patch among the visible ones.
    pub fn visible_rank(&self) -> Vec<Option<usize>> {
        let mut rank = vec![None; self.mask.len()];
        for (r, &i) in self.visible.iter().enumerate() {
            rank[i] = Some(r);
        }
        rank
    }
}

/// `max(1, round(ratio · eligible))`, the number of patches to hide.
pub fn mask_count(ratio: f64, eligible: usize) -> usize {
    let target = libm::round(ratio * eligible as f64) as usize;
    target.max(1).min(eligible)
}

/// Hides `mask_count(ratio, |eligible|)` patches drawn uniformly without
/// replacement from `eligible`.
pub fn sample_mask<R: Rng + ?Sized>(n_patches: usize, ratio: f64, eligible: &[usize], rng: &mut R) -> Result<PatchLayout> {
    if eligible.is_empty() {
        bail!(Data, "no patch is eligible for masking");
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        bail!(Parameter, "mask ratio {} outside (0, 1)", ratio);
    }
    let k = mask_count(ratio, eligible.len());
    let picks = index::sample(rng, eligible.len(), k);
    let masked: Vec<usize> = picks.iter().map(|j| eligible[j]).collect();
    PatchLayout::from_masked(n_patches, &masked)
}

/// Patches that do not overlap the left padding.
pub fn eligible_patches(pad_len: usize, patch_size: usize, n_patches: usize) -> Vec<usize> {
    (0..n_patches).filter(|&i| i * patch_size >= pad_len).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    #[test]
    fn patch_counts() {
        let x = vec![0.0f32; 7200];
        assert_eq!(patchify(&x, 30).unwrap().shape(), &[240, 30]);
        assert_eq!(patchify(&x, 480).unwrap().shape(), &[15, 480]);
        assert!(matches!(patchify(&x, 7), Err(crate::Error::Config(_))));
    }

    #[test]
    fn mask_count_examples() {
        let all: Vec<usize> = (0..240).collect();
        let l = sample_mask(240, 0.15, &all, &mut stream(1, Stream::Mask, 0, 0)).unwrap();
        assert_eq!(l.masked.len(), 36);
        assert_eq!(l.visible.len(), 204);
        let l = sample_mask(240, 1e-9, &all, &mut stream(1, Stream::Mask, 0, 0)).unwrap();
        assert_eq!(l.masked.len(), 1);
        let a = sample_mask(240, 0.15, &all, &mut stream(5, Stream::Mask, 3, 0)).unwrap();
        let b = sample_mask(240, 0.15, &all, &mut stream(5, Stream::Mask, 3, 0)).unwrap();
        assert_eq!(a, b);
        assert!(sample_mask(240, 0.15, &[], &mut stream(1, Stream::Mask, 0, 0)).is_err());
    }

    #[test]
    fn masking_respects_eligibility() {
        let eligible = eligible_patches(95, 30, 10);
        assert_eq!(eligible, (4..10).collect::<Vec<_>>());
        for s in 0..20 {
            let l = sample_mask(10, 0.3, &eligible, &mut stream(s, Stream::Mask, 0, 0)).unwrap();
            assert_eq!(l.masked.len(), 2);
            assert!(l.masked.iter().all(|i| *i >= 4));
        }
    }

    #[test]
    fn all_masked_layout_is_rejected() {
        assert!(PatchLayout::from_masked(2, &[0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn patchify_round_trip(x in proptest::collection::vec(-1e3f32..1e3, 1..20), p in 1usize..6) {
            let n = (x.len() / p).max(1) * p;
            let mut x = x;
            x.resize(n, 0.5);
            let back = unpatchify(&patchify(&x, p).unwrap());
            prop_assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn layout_partitions_patches(n in 2usize..300, ratio in 0.01f64..0.5, seed in 0u64..1000) {
            let all: Vec<usize> = (0..n).collect();
            let l = sample_mask(n, ratio, &all, &mut stream(seed, Stream::Mask, 0, 0)).unwrap();
            prop_assert_eq!(l.masked.len(), mask_count(ratio, n));
            prop_assert_eq!(l.masked.len() + l.visible.len(), n);
            prop_assert!(l.masked.iter().all(|i| l.mask[*i] == 0));
            prop_assert!(l.visible.iter().all(|i| l.mask[*i] == 1));
        }
    }
}
