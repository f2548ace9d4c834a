//! Seeded 80/10/10 splitting.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::BugInstance;
use crate::{CoreError, Result};

/// Train/valid/test partition of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<BugInstance>,
    pub valid: Vec<BugInstance>,
    pub test: Vec<BugInstance>,
}

/// Sizes for an N-instance variant: test and valid each take ceil(N/10),
/// train keeps the remainder. Ceiling is what reproduces the published
/// test-split sizes (5,820 / 827 / 2,449 / 468).
pub fn split_sizes(total: usize) -> (usize, usize, usize) {
    let test = total.div_ceil(10);
    let valid = total.div_ceil(10);
    (total - test - valid, valid, test)
}

/// Deterministically shuffle under `seed` and partition train/valid/test.
///
/// The shuffle is a hand-rolled Fisher-Yates over a ChaCha20 stream so the
/// byte layout of a split depends only on (instances, seed), not on the
/// version of any RNG helper crate.
pub fn split(instances: &[BugInstance], seed: u64) -> Result<Splits> {
    if instances.len() < 10 {
        return Err(CoreError::DegenerateSplit {
            size: instances.len(),
        });
    }

    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }

    let (train_n, valid_n, test_n) = split_sizes(instances.len());
    let pick = |range: std::ops::Range<usize>| -> Vec<BugInstance> {
        order[range].iter().map(|&i| instances[i].clone()).collect()
    };
    Ok(Splits {
        train: pick(0..train_n),
        valid: pick(train_n..train_n + valid_n),
        test: pick(train_n + valid_n..train_n + valid_n + test_n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn instances(n: usize) -> Vec<BugInstance> {
        (0..n)
            .map(|i| BugInstance {
                id: format!("c{i:011x}:{i}"),
                project_name: format!("proj{}", i % 7),
                fix_commit_sha1: format!("{i:040x}"),
                bug_type: "T".into(),
                source_before_fix: format!("a{i}"),
                source_after_fix: format!("b{i}"),
                extra: serde_json::Map::new(),
            })
            .collect()
    }

    #[test]
    fn sizes_match_published_test_denominators() {
        assert_eq!(split_sizes(24_488).2, 2_449);
        assert_eq!(split_sizes(4_680).2, 468);
        assert_eq!(split_sizes(58_198).2, 5_820);
        assert_eq!(split_sizes(8_263).2, 827);
    }

    #[test]
    fn ten_instances_split_8_1_1() {
        let s = split(&instances(10), 7).unwrap();
        assert_eq!(
            (s.train.len(), s.valid.len(), s.test.len()),
            (8, 1, 1)
        );
    }

    #[test]
    fn nine_instances_is_fatal() {
        assert!(matches!(
            split(&instances(9), 7),
            Err(CoreError::DegenerateSplit { size: 9 })
        ));
    }

    #[test]
    fn same_seed_same_split_different_seed_differs() {
        let data = instances(100);
        let a = split(&data, 42).unwrap();
        let b = split(&data, 42).unwrap();
        let c = split(&data, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn partition_is_exact() {
        let data = instances(53);
        let s = split(&data, 1).unwrap();
        let mut ids: HashSet<&str> = HashSet::new();
        for inst in s.train.iter().chain(&s.valid).chain(&s.test) {
            assert!(ids.insert(&inst.id), "id {} appears twice", inst.id);
        }
        assert_eq!(ids.len(), data.len());
        assert_eq!(s.train.len() + s.valid.len() + s.test.len(), data.len());
    }
}
