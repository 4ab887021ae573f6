use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const MIN_SPLIT_RECORDS: usize = 5;

/// Shuffles `items` with `seed` and cuts them into a training part of
/// `⌈n · a / (a + b)⌉` items and a validation part holding the rest, for a
/// ratio `a : b`.
pub fn split_train_val<T: Clone>(
    items: &[T],
    ratio: (u32, u32),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    let (a, b) = ratio;
    if a == 0 || b == 0 {
        return Err(Error::Config(format!(
            "split ratio parts must be positive, got {a}:{b}"
        )));
    }
    let n = items.len();
    if n < MIN_SPLIT_RECORDS {
        return Err(Error::TooFewRecords {
            needed: MIN_SPLIT_RECORDS,
            found: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, total) = (a as usize, (a + b) as usize);
    let train_len = (n * a).div_ceil(total);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..train_len]), pick(&order[train_len..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn hundred_splits_eighty_twenty() {
        let items: Vec<u32> = (0..100).collect();
        let (train, val) = split_train_val(&items, (4, 1), 3).unwrap();
        assert_eq!((train.len(), val.len()), (80, 20));
    }

    #[test]
    fn rounding_favours_training() {
        let items: Vec<u32> = (0..7).collect();
        let (train, val) = split_train_val(&items, (4, 1), 0).unwrap();
        // ⌈5.6⌉ = 6
        assert_eq!((train.len(), val.len()), (6, 1));
    }

    #[test]
    fn too_few_records() {
        assert!(matches!(
            split_train_val(&[1, 2, 3, 4], (4, 1), 0),
            Err(Error::TooFewRecords {
                needed: 5,
                found: 4
            })
        ));
    }

    #[test]
    fn seeds_control_the_shuffle() {
        let items: Vec<u32> = (0..50).collect();
        assert_eq!(
            split_train_val(&items, (4, 1), 9).unwrap(),
            split_train_val(&items, (4, 1), 9).unwrap()
        );
        let distinct = (0..20)
            .map(|s| split_train_val(&items, (4, 1), s).unwrap().1)
            .collect::<BTreeSet<_>>();
        assert!(distinct.len() >= 19);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 5usize..300, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let (train, val) = split_train_val(&items, (4, 1), seed).unwrap();
            prop_assert_eq!(train.len(), (4 * n).div_ceil(5));
            let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, items);
        }
    }
}
