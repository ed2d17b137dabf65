//! Quality labels, synthetic fundus generation, manifests, k-fold splits
//! and seeded batching.

mod batch;
mod kfold;
mod manifest;
mod synth;

pub use batch::{batch_iter, Batch, BatchIter, ManifestSource, MemorySource, SampleSource};
pub use kfold::{kfold_indices, kfold_split, Fold};
pub use manifest::{Manifest, ManifestRecord};
pub use synth::{
    dark_channel_unevenness, generate_dataset, render_fundus, synth_fundus, synth_sample, PerLabel, Range,
    SyntheticParams, SyntheticSample,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityLabel {
    Good = 0,
    Usable = 1,
    Reject = 2,
}

impl QualityLabel {
    pub const ALL: [QualityLabel; 3] = [QualityLabel::Good, QualityLabel::Usable, QualityLabel::Reject];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::LabelOutOfRange(i))
    }

    pub fn name(self) -> &'static str {
        match self {
            QualityLabel::Good => "good",
            QualityLabel::Usable => "usable",
            QualityLabel::Reject => "reject",
        }
    }
}

impl fmt::Display for QualityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QualityLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown label '{s}' (expected good, usable or reject)"))
    }
}

/// Mixes several integers into one seed (splitmix64 finaliser per part).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_encoding() {
        assert_eq!(QualityLabel::Good.index(), 0);
        assert_eq!(QualityLabel::Reject.index(), 2);
        assert_eq!("usable".parse::<QualityLabel>().unwrap(), QualityLabel::Usable);
        assert!("Good".parse::<QualityLabel>().is_err());
        assert!(QualityLabel::from_index(3).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_eq!(derive_seed(&[5, 6]), derive_seed(&[5, 6]));
    }
}
