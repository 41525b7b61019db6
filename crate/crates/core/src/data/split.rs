use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Label, Split};
use crate::error::{Error, Result};

/// Relative weights of the train, validation and test splits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatio {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 6,
            val: 1,
            test: 1,
        }
    }
}

impl SplitRatio {
    fn counts(&self, n: usize) -> [usize; 3] {
        let total = (self.train + self.val + self.test) as usize;
        let val = n * self.val as usize / total;
        let test = n * self.test as usize / total;
        [n - val - test, val, test]
    }
}

/// Stratified, seeded assignment of items to splits. Each class is shuffled
/// independently and cut by `ratio`; the remainder of integer division goes
/// to the training split.
pub fn split_dataset(labels: &[Label], ratio: SplitRatio, seed: u64) -> Result<Vec<Split>> {
    if ratio.train + ratio.val + ratio.test == 0 {
        return Err(Error::InvalidArgument("split ratio must not be all zero".into()));
    }
    let mut out = vec![Split::Train; labels.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in Label::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        idx.shuffle(&mut rng);
        let [train, val, _] = ratio.counts(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            out[i] = if k < train {
                Split::Train
            } else if k < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}
