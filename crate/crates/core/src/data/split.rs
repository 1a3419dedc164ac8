//! Subject-disjoint splitting.

use crate::error::{Error, Result};
use crate::rng::{fisher_yates, stream_rng, Stream};

use super::manifest::DatasetManifest;

/// Partition subjects into `k` shuffled folds; fold `i` yields
/// `(train, test)` where the test set holds exactly the fold-`i` subjects'
/// samples. Subjects are taken in first-appearance order before shuffling,
/// and fold sizes differ by at most one.
pub fn kfold_subject_split(
    manifest: &DatasetManifest,
    k: usize,
    seed: u64,
) -> Result<Vec<(DatasetManifest, DatasetManifest)>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k must be >= 2, got {k}")));
    }
    let mut subjects = manifest.subjects();
    if subjects.len() < k {
        return Err(Error::TooFewSubjects {
            k,
            subjects: subjects.len(),
        });
    }
    fisher_yates(&mut subjects, &mut stream_rng(seed, Stream::Split));

    // contiguous chunks; the first (n mod k) folds take the extra subject
    let n = subjects.len();
    let base = n / k;
    let extra = n % k;
    let mut folds: Vec<Vec<&String>> = Vec::with_capacity(k);
    let mut pos = 0usize;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        folds.push(subjects[pos..pos + size].iter().collect());
        pos += size;
    }

    let mut out = Vec::with_capacity(k);
    for (i, fold) in folds.iter().enumerate() {
        let in_fold = |subject: &str| fold.iter().any(|s| s.as_str() == subject);
        let test_samples: Vec<_> = manifest
            .samples
            .iter()
            .filter(|s| in_fold(&s.subject_id))
            .cloned()
            .collect();
        let train_samples: Vec<_> = manifest
            .samples
            .iter()
            .filter(|s| !in_fold(&s.subject_id))
            .cloned()
            .collect();
        out.push((
            DatasetManifest {
                name: format!("{}_fold{}_train", manifest.name, i),
                samples: train_samples,
            },
            DatasetManifest {
                name: format!("{}_fold{}_test", manifest.name, i),
                samples: test_samples,
            },
        ));
    }
    Ok(out)
}

/// Single subject-disjoint holdout split: fold 0 of a k-fold partition with
/// `k = round(1 / test_fraction)`, so `test_fraction = 0.2` gives an 80/20
/// subject split.
pub fn holdout_subject_split(
    manifest: &DatasetManifest,
    test_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let k = (1.0 / test_fraction).round().max(2.0) as usize;
    let folds = kfold_subject_split(manifest, k, seed)?;
    Ok(folds.into_iter().next().unwrap())
}
