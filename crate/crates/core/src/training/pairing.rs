use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Partner assignment `j(i) ≠ i` for every sample of a mini-batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPairing {
    partners: Vec<usize>,
}

impl BatchPairing {
    /// Fails if the mapping has a fixed point or an out-of-range index.
    pub fn from_partners(partners: Vec<usize>) -> Result<Self> {
        let n = partners.len();
        if n < 2 {
            return Err(Error::InvalidInput("pairing needs at least two samples".into()));
        }
        for (i, &j) in partners.iter().enumerate() {
            if j == i || j >= n {
                return Err(Error::InvalidInput(format!("invalid partner {j} for sample {i}")));
            }
        }
        Ok(Self { partners })
    }

    pub fn partner(&self, i: usize) -> usize {
        self.partners[i]
    }

    pub fn partners(&self) -> &[usize] {
        &self.partners
    }

    pub fn len(&self) -> usize {
        self.partners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partners.is_empty()
    }
}

/// Uniformly random derangement by rejection: shuffle until no fixed point.
/// The acceptance rate tends to `1/e`.
pub fn pair_batch<R: Rng + ?Sized>(batch_size: usize, rng: &mut R) -> Result<BatchPairing> {
    if batch_size < 2 {
        return Err(Error::InvalidInput(format!(
            "batch size {batch_size} is too small to pair (need >= 2)"
        )));
    }
    let mut perm: Vec<usize> = (0..batch_size).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &j)| i != j) {
            return Ok(BatchPairing { partners: perm });
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn two_samples_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(pair_batch(2, &mut rng).unwrap().partners(), &[1, 0]);
        }
    }

    #[test]
    fn rejects_tiny_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(pair_batch(1, &mut rng).is_err());
        assert!(pair_batch(0, &mut rng).is_err());
        assert!(BatchPairing::from_partners(vec![0, 1]).is_err());
    }

    /// All permutations of `0..n` without fixed points, by enumeration.
    fn derangements(n: usize) -> Vec<Vec<usize>> {
        fn rec(n: usize, prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == n {
                out.push(prefix.clone());
                return;
            }
            let i = prefix.len();
            for j in 0..n {
                if !used[j] && j != i {
                    used[j] = true;
                    prefix.push(j);
                    rec(n, prefix, used, out);
                    prefix.pop();
                    used[j] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(n, &mut Vec::new(), &mut vec![false; n], &mut out);
        out
    }

    #[test]
    fn derangements_of_four_are_uniform() {
        let all = derangements(4);
        assert_eq!(all.len(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 10_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            let p = pair_batch(4, &mut rng).unwrap();
            *counts.entry(p.partners().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 9);
        for d in &all {
            let freq = counts[d] as f64 / draws as f64;
            assert!((freq - 1.0 / 9.0).abs() <= 0.02, "{d:?} freq {freq}");
        }
    }

    proptest::proptest! {
        #[test]
        fn never_pairs_with_self(n in 2usize..64, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = pair_batch(n, &mut rng).unwrap();
            for i in 0..n {
                proptest::prop_assert_ne!(p.partner(i), i);
            }
        }
    }
}
