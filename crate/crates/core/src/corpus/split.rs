use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const EIGHT_ONE_ONE: SplitRatios = SplitRatios {
        train: 8.0,
        dev: 1.0,
        test: 1.0,
    };

    pub fn new(train: f64, dev: f64, test: f64) -> Self {
        Self { train, dev, test }
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self::EIGHT_ONE_ONE
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

/// Shuffle under `seed` and partition by rounded ratio sizes. Ratios are
/// normalized; the test partition absorbs rounding remainder.
pub fn split_corpus(corpus: &Corpus, ratios: SplitRatios, seed: u64) -> Result<Split> {
    if corpus.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "corpus of {} conversations is too small to split",
            corpus.len()
        )));
    }
    let parts = [ratios.train, ratios.dev, ratios.test];
    if parts.iter().any(|r| !r.is_finite() || *r < 0.0) || parts.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config(format!("invalid split ratios {ratios:?}")));
    }
    let total: f64 = parts.iter().sum();
    let n = corpus.len();
    let n_train = ((ratios.train / total) * n as f64).round() as usize;
    let n_dev = (((ratios.dev / total) * n as f64).round() as usize).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| Corpus::new(idx.iter().map(|&i| corpus.conversations[i].clone()).collect());
    Ok(Split {
        train: take(&order[..n_train]),
        dev: take(&order[n_train..n_train + n_dev]),
        test: take(&order[n_train + n_dev..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, GeneratorConfig};
    use crate::dialogue::TemplateBank;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn corpus(n: usize) -> Corpus {
        let cfg = GeneratorConfig {
            n_conversations: n,
            ..GeneratorConfig::default()
        };
        generate_synthetic(&cfg, &TemplateBank::default_bank()).unwrap()
    }

    #[test]
    fn eight_one_one_sizes() {
        let s = split_corpus(&corpus(1000), SplitRatios::EIGHT_ONE_ONE, 3).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (800, 100, 100));
    }

    #[test]
    fn degenerate_ratio_keeps_everything_in_train() {
        let s = split_corpus(&corpus(10), SplitRatios::new(1.0, 0.0, 0.0), 3).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (10, 0, 0));
    }

    #[test]
    fn deterministic_membership() {
        let c = corpus(50);
        assert_eq!(
            split_corpus(&c, SplitRatios::default(), 9).unwrap(),
            split_corpus(&c, SplitRatios::default(), 9).unwrap()
        );
    }

    #[test]
    fn too_small_rejected() {
        assert!(split_corpus(&corpus(2), SplitRatios::default(), 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn partitions_are_disjoint_and_cover(
            a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.01f64..10.0, seed in any::<u64>()
        ) {
            let corpus = corpus(37);
            let s = split_corpus(&corpus, SplitRatios::new(a, b, c), seed).unwrap();
            let ids = |c: &Corpus| c.iter().map(|x| x.id.clone()).collect::<HashSet<_>>();
            let (tr, dv, te) = (ids(&s.train), ids(&s.dev), ids(&s.test));
            prop_assert!(tr.is_disjoint(&dv) && tr.is_disjoint(&te) && dv.is_disjoint(&te));
            let all: HashSet<_> = tr.union(&dv).chain(te.iter()).cloned().collect();
            prop_assert_eq!(all, ids(&corpus));
        }
    }
}
