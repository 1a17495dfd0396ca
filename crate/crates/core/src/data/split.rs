use rand::seq::SliceRandom;

use super::{DataError, LabelMap, Result};
use crate::rng::{stream, Purpose};

/// One labeled/test partition of the reference pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    /// `labeled[c]` holds the chosen pixel indices of class `c + 1`.
    pub labeled: Vec<Vec<usize>>,
    /// Every remaining reference pixel, in raster order.
    pub test: Vec<usize>,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl SplitSpec {
    /// Labeled pixels with their class ids, class by class.
    pub fn labeled_pairs(&self) -> Vec<(usize, u32)> {
        self.labeled
            .iter()
            .enumerate()
            .flat_map(|(c, idx)| idx.iter().map(move |&i| (i, c as u32 + 1)))
            .collect()
    }
}

/// Draws `n_per_class` labeled pixels per class uniformly without
/// replacement; the rest of the reference pixels form the test set.
pub fn split_dataset(labels: &LabelMap, n_per_class: usize, seed: u64) -> Result<SplitSpec> {
    let k = labels.num_classes();
    if k == 0 {
        return Err(DataError::Param("label map has no reference pixels".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l != 0 {
            by_class[l as usize - 1].push(i);
        }
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(DataError::Param(format!("class {} has no labeled pixels", c + 1)));
    }

    let mut warnings = Vec::new();
    let mut in_train = vec![false; labels.labels().len()];
    let mut labeled = Vec::with_capacity(k);
    for (c, pixels) in by_class.iter_mut().enumerate() {
        let mut rng = stream(seed, Purpose::Split, &[c as u64]);
        pixels.shuffle(&mut rng);
        let take = if pixels.len() < n_per_class {
            warnings.push(format!(
                "class {} has only {} pixels; all used for training (wanted {n_per_class})",
                c + 1,
                pixels.len()
            ));
            pixels.len()
        } else {
            n_per_class
        };
        let chosen = pixels[..take].to_vec();
        for &i in &chosen {
            in_train[i] = true;
        }
        labeled.push(chosen);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let test = labels
        .reference_pixels()
        .into_iter()
        .filter(|&i| !in_train[i])
        .collect();
    Ok(SplitSpec {
        labeled,
        test,
        seed,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlabeledPool {
    pub indices: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Draws `count` distinct reference pixels, discarding their labels.
pub fn sample_unlabeled(labels: &LabelMap, count: usize, seed: u64) -> UnlabeledPool {
    let mut pool = labels.reference_pixels();
    let mut warnings = Vec::new();
    let take = if count > pool.len() {
        let w = format!(
            "requested {count} unlabeled samples but only {} reference pixels exist",
            pool.len()
        );
        log::warn!("{w}");
        warnings.push(w);
        pool.len()
    } else {
        count
    };
    let mut rng = stream(seed, Purpose::Unlabeled, &[]);
    let (chosen, _) = pool.partial_shuffle(&mut rng, take);
    UnlabeledPool {
        indices: chosen.to_vec(),
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn map() -> LabelMap {
        // class 1: 6 pixels, class 2: 3 pixels, class 3: 4 pixels, 3 background
        LabelMap::new(4, 4, vec![1, 1, 1, 2, 1, 1, 1, 2, 0, 2, 3, 3, 0, 0, 3, 3]).unwrap()
    }

    #[test]
    fn partition_and_exhaustion() {
        let m = map();
        let s = split_dataset(&m, 3, 5).unwrap();
        assert_eq!(s.labeled.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3]);
        let train: BTreeSet<usize> = s.labeled.iter().flatten().copied().collect();
        let test: BTreeSet<usize> = s.test.iter().copied().collect();
        assert!(train.is_disjoint(&test));
        let all: BTreeSet<usize> = m.reference_pixels().into_iter().collect();
        assert_eq!(&train | &test, all);
        // class 2 has exactly 3 pixels: none left for testing
        assert!(s.test.iter().all(|&i| m.labels()[i] != 2));
        assert!(s.warnings.is_empty());
        assert!(s.labeled_pairs().iter().all(|&(i, c)| m.labels()[i] == c));
    }

    #[test]
    fn short_class_warns() {
        let s = split_dataset(&map(), 5, 1).unwrap();
        assert_eq!(s.labeled[1].len(), 3);
        assert_eq!(s.labeled[2].len(), 4);
        assert_eq!(s.warnings.len(), 2);
    }

    #[test]
    fn deterministic() {
        assert_eq!(split_dataset(&map(), 2, 9).unwrap(), split_dataset(&map(), 2, 9).unwrap());
    }

    #[test]
    fn unlabeled_draws() {
        let m = map();
        let all = sample_unlabeled(&m, 13, 3);
        let mut sorted = all.indices.clone();
        sorted.sort();
        assert_eq!(sorted, m.reference_pixels());

        let some = sample_unlabeled(&m, 7, 3);
        let distinct: BTreeSet<usize> = some.indices.iter().copied().collect();
        assert_eq!(distinct.len(), 7);
        assert_eq!(some, sample_unlabeled(&m, 7, 3));

        let clamped = sample_unlabeled(&m, 100, 3);
        assert_eq!(clamped.indices.len(), 13);
        assert_eq!(clamped.warnings.len(), 1);
    }
}
