//! Patient-level train/validation/test splits and negative subsampling.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

const STREAM_SPLIT: u64 = 0x5711;
const STREAM_SUBSAMPLE: u64 = 0x5B5A;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

/// Disjoint patient-id sets; each list is sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// `floor` that tolerates representation error just below an integer.
fn floor_tolerant(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

/// Validation and test receive `floor(ratio * n)` patients each; the
/// remainder goes to training.
pub fn split_patients(ids: &[String], ratios: SplitRatios, seed: u64) -> Result<CohortSplit> {
    for (name, r) in [
        ("train", ratios.train),
        ("validation", ratios.validation),
        ("test", ratios.test),
    ] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!(
                "{name} ratio {r} outside [0, 1]"
            )));
        }
    }
    let total = ratios.train + ratios.validation + ratios.test;
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios sum to {total}, not 1")));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.dedup();
    shuffled.shuffle(&mut seed::rng(seed, &[STREAM_SPLIT]));

    let n = shuffled.len();
    let n_val = floor_tolerant(ratios.validation * n as f64);
    let n_test = floor_tolerant(ratios.test * n as f64);
    let mut validation = shuffled[..n_val].to_vec();
    let mut test = shuffled[n_val..n_val + n_test].to_vec();
    let mut train = shuffled[n_val + n_test..].to_vec();
    train.sort();
    validation.sort();
    test.sort();
    Ok(CohortSplit {
        train,
        validation,
        test,
        seed,
    })
}

/// Randomly drops negatives until `negatives / total <= target_neg_frac`,
/// keeping every positive. Returns the kept ids in input order.
pub fn subsample_negatives(
    ids: &[String],
    labels: &[bool],
    target_neg_frac: f64,
    seed: u64,
) -> Result<Vec<String>> {
    if ids.len() != labels.len() {
        return Err(Error::Shape("ids and labels differ in length".into()));
    }
    if !(target_neg_frac > 0.0 && target_neg_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "negative fraction must lie in (0, 1), got {target_neg_frac}"
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Data("cannot subsample a training set with no positives".into()));
    }
    let negatives: Vec<usize> = (0..ids.len()).filter(|&i| !labels[i]).collect();
    let max_neg = floor_tolerant(positives as f64 * target_neg_frac / (1.0 - target_neg_frac));
    let mut keep = vec![true; ids.len()];
    if negatives.len() > max_neg {
        let mut shuffled = negatives.clone();
        shuffled.shuffle(&mut seed::rng(seed, &[STREAM_SUBSAMPLE]));
        for &i in &shuffled[max_neg..] {
            keep[i] = false;
        }
    }
    Ok(ids
        .iter()
        .zip(keep)
        .filter_map(|(id, k)| k.then(|| id.clone()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:05}")).collect()
    }

    #[test]
    fn exact_division() {
        let s = split_patients(&ids(100), SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (80, 10, 10));
    }

    #[test]
    fn paper_scale_floor_arithmetic() {
        let s = split_patients(&ids(31_244), SplitRatios::default(), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (24_996, 3_124, 3_124));
    }

    #[test]
    fn deterministic_and_disjoint() {
        let a = split_patients(&ids(57), SplitRatios::default(), 9).unwrap();
        let b = split_patients(&ids(57), SplitRatios::default(), 9).unwrap();
        assert_eq!(a, b);
        let c = split_patients(&ids(57), SplitRatios::default(), 10).unwrap();
        assert_ne!(a, c);
        let mut all: Vec<_> = a.train.iter().chain(&a.validation).chain(&a.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 57);
    }

    #[test]
    fn bad_ratios() {
        let r = SplitRatios { train: 1.2, validation: -0.1, test: -0.1 };
        assert!(split_patients(&ids(10), r, 0).is_err());
        let r = SplitRatios { train: 0.5, validation: 0.1, test: 0.1 };
        assert!(split_patients(&ids(10), r, 0).is_err());
    }

    fn labelled(pos: usize, neg: usize) -> (Vec<String>, Vec<bool>) {
        let ids = ids(pos + neg);
        let labels = (0..pos + neg).map(|i| i < pos).collect();
        (ids, labels)
    }

    #[test]
    fn subsample_examples() {
        let (i, l) = labelled(30, 70);
        assert_eq!(subsample_negatives(&i, &l, 0.7, 1).unwrap().len(), 100);

        let (i, l) = labelled(10, 990);
        let kept = subsample_negatives(&i, &l, 0.7, 1).unwrap();
        assert_eq!(kept.len(), 33);
        assert!(i[..10].iter().all(|p| kept.contains(p)));

        let (i, l) = labelled(5, 0);
        assert_eq!(subsample_negatives(&i, &l, 0.7, 1).unwrap().len(), 5);

        let (i, l) = labelled(0, 5);
        assert!(subsample_negatives(&i, &l, 0.7, 1).is_err());
    }
}
