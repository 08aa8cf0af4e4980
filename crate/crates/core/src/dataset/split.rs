//! Group-wise partitioning. All ROIs sharing a `group_id` land on the same
//! side, so multiple wounds of one photo (or one patient) never leak across.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DatasetError, ImageRecord, Result, SeverityClass};
use crate::seed;

/// Reference to one ROI: a (record, box) pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RoiRef {
    pub image_id: String,
    pub box_index: usize,
    pub group_id: String,
    pub label: SeverityClass,
}

impl RoiRef {
    pub fn expand(records: &[ImageRecord]) -> Vec<RoiRef> {
        records
            .iter()
            .flat_map(|r| {
                (0..r.roi_count()).map(move |box_index| RoiRef {
                    image_id: r.image_id.clone(),
                    box_index,
                    group_id: r.group_id.clone(),
                    label: r.label,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_val: Vec<RoiRef>,
    pub test: Vec<RoiRef>,
    pub ratio: f64,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train_val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fraction of ROIs that landed in train_val.
    pub fn achieved_ratio(&self) -> f64 {
        self.train_val.len() as f64 / self.len() as f64
    }

    /// group_id → true when the group went to train_val.
    pub fn group_assignment(&self) -> BTreeMap<String, bool> {
        let mut out = BTreeMap::new();
        for r in &self.train_val {
            out.insert(r.group_id.clone(), true);
        }
        for r in &self.test {
            out.insert(r.group_id.clone(), false);
        }
        out
    }
}

pub fn split_by_group(records: &[ImageRecord], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    let refs = RoiRef::expand(records);
    let (train_val, test) = split_refs(&refs, ratio, seed)?;
    Ok(DatasetSplit { train_val, test, ratio, seed })
}

/// Carves a validation part out of train_val; `val_fraction` of the ROIs
/// (group-wise) go to the second list.
pub fn carve_validation(train_val: &[RoiRef], val_fraction: f64, seed: u64) -> Result<(Vec<RoiRef>, Vec<RoiRef>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DatasetError::InvalidRatio(val_fraction));
    }
    split_refs(train_val, 1.0 - val_fraction, seed::derive_seed(seed, "validation"))
}

/// Splits ROI references so that roughly `ratio` of them land in the first
/// list. Input order is preserved inside each list.
pub fn split_refs(refs: &[RoiRef], ratio: f64, seed: u64) -> Result<(Vec<RoiRef>, Vec<RoiRef>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in refs {
        *sizes.entry(r.group_id.as_str()).or_default() += 1;
    }
    if sizes.len() < 2 {
        return Err(DatasetError::TooFewGroups(sizes.len()));
    }

    let mut groups: Vec<(&str, usize)> = sizes.into_iter().collect();
    let mut rng = seed::rng_for(seed, "split");
    groups.shuffle(&mut rng);

    let target = ratio * refs.len() as f64;
    let mut first: BTreeSet<&str> = BTreeSet::new();
    let mut taken = 0usize;
    for &(group, size) in &groups {
        // take the group unless doing so moves further from the target
        if (taken + size) as f64 <= target + size as f64 / 2.0 {
            first.insert(group);
            taken += size;
        }
    }
    let smallest = |pick_from_first: bool| {
        groups
            .iter()
            .filter(|(g, _)| first.contains(g) == pick_from_first)
            .min_by_key(|&&(g, s)| (s, g))
            .map(|&(g, _)| g)
    };
    if first.len() == groups.len() {
        let g = smallest(true).expect("non-empty");
        first.remove(g);
    } else if first.is_empty() {
        let g = smallest(false).expect("non-empty");
        first.insert(g);
    }

    let (a, b): (Vec<RoiRef>, Vec<RoiRef>) = refs.iter().cloned().partition(|r| first.contains(r.group_id.as_str()));
    Ok((a, b))
}
