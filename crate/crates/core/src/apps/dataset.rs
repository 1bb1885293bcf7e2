//! Preprocessing a raw corpus and splitting it by episode.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{bail, Result};
use crate::prep::{prepare, PrepConfig, PreparedSignal, RawRecord};
use crate::rng::{stream, Stream};

pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SplitTag {
    Train = 0,
    Validation = 1,
    Test = 2,
    /// A single unsplit set.
    All = 3,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "val",
            SplitTag::Test => "test",
            SplitTag::All => "all",
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(SplitTag::Train),
            1 => Some(SplitTag::Validation),
            2 => Some(SplitTag::Test),
            3 => Some(SplitTag::All),
            _ => None,
        }
    }
}

/// A set of prepared signals of one length.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetContainer {
    pub version: u32,
    pub length: usize,
    pub split: SplitTag,
    pub records: Vec<PreparedSignal>,
}

impl DatasetContainer {
    pub fn new(length: usize, split: SplitTag, records: Vec<PreparedSignal>) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.values.len() != length || r.missing_mask.len() != length) {
            bail!(Dimension, "episode {} does not have length {}", r.episode_id, length);
        }
        Ok(Self { version: CONTAINER_VERSION, length, split, records })
    }
}

/// Relative sizes of train / validation / test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    /// 4486 : 369 : 370 episodes.
    fn default() -> Self {
        Self { train: 4486.0, validation: 369.0, test: 370.0 }
    }
}

impl SplitRatios {
    /// Episode counts for `n` episodes; the test split takes the remainder.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        let total = self.train + self.validation + self.test;
        if !(self.train > 0.0 && self.validation > 0.0 && self.test > 0.0) || !total.is_finite() {
            bail!(Config, "split ratios must be positive");
        }
        let tr = libm::round(n as f64 * self.train / total) as usize;
        let va = libm::round(n as f64 * self.validation / total) as usize;
        if tr == 0 || va == 0 || tr + va >= n {
            bail!(Config, "{} episodes cannot be split {}:{}:{} without an empty subset", n, self.train, self.validation, self.test);
        }
        Ok((tr, va, n - tr - va))
    }
}

/// The three splits of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: DatasetContainer,
    pub validation: DatasetContainer,
    pub test: DatasetContainer,
}

/// Prepares every record, then assigns whole episodes to splits in a
/// seeded random order.
pub fn build_dataset(raw: &[RawRecord], ratios: &SplitRatios, prep: &PrepConfig, seed: u64) -> Result<Splits> {
    if raw.len() < 3 {
        bail!(Config, "need at least 3 episodes, got {}", raw.len());
    }
    let mut by_episode: BTreeMap<u64, Vec<PreparedSignal>> = BTreeMap::new();
    for r in raw {
        by_episode.entry(r.episode_id).or_default().push(prepare(r, prep)?);
    }
    let mut ids: Vec<u64> = by_episode.keys().copied().collect();
    let (tr, va, _) = ratios.counts(ids.len())?;
    ids.shuffle(&mut stream(seed, Stream::Split, 0, 0));
    let take = |ids: &[u64], by: &mut BTreeMap<u64, Vec<PreparedSignal>>| -> Vec<PreparedSignal> {
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        sorted.iter().flat_map(|id| by.remove(id).unwrap_or_default()).collect()
    };
    let train = take(&ids[..tr], &mut by_episode);
    let validation = take(&ids[tr..tr + va], &mut by_episode);
    let test = take(&ids[tr + va..], &mut by_episode);
    Ok(Splits {
        train: DatasetContainer::new(prep.length, SplitTag::Train, train)?,
        validation: DatasetContainer::new(prep.length, SplitTag::Validation, validation)?,
        test: DatasetContainer::new(prep.length, SplitTag::Test, test)?,
    })
}
