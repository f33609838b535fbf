use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CorpusError;

/// Shuffles deterministically and splits off `floor(n · test_fraction)`
/// items for testing (a 1e-9 guard absorbs float error, so 3,470 × 0.1 gives 347).
pub fn split_dataset<T: Clone>(records: &[T], test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::Argument(format!(
            "test fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    let n = records.len();
    let n_test = ((n as f64 * test_fraction) + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order[..n_test].iter().map(|&i| records[i].clone()).collect();
    let train = order[n_test..].iter().map(|&i| records[i].clone()).collect();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_scale_split_sizes() {
        let items: Vec<usize> = (0..3470).collect();
        let (train, test) = split_dataset(&items, 0.10, 0).unwrap();
        assert_eq!((train.len(), test.len()), (3123, 347));
    }

    #[test]
    fn single_record_rounds_test_down() {
        let (train, test) = split_dataset(&[42], 0.5, 1).unwrap();
        assert_eq!((train, test), (vec![42], vec![]));
    }

    #[test]
    fn fraction_out_of_range() {
        for f in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(split_dataset(&[1, 2, 3], f, 0), Err(CorpusError::Argument(_))));
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let items: Vec<usize> = (0..10).collect();
        assert_eq!(split_dataset(&items, 0.1, 9).unwrap(), split_dataset(&items, 0.1, 9).unwrap());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 0usize..200, f in 0.01f64..0.99, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let (train, test) = split_dataset(&items, f, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), n);
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort();
            prop_assert_eq!(all, items);
        }
    }
}
