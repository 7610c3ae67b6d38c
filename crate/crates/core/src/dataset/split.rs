use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Order-based test / train / val split. `train: None` takes everything after
/// the test block, leaving val empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test: usize,
    pub train: Option<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test: 500,
            train: Some(6500),
        }
    }
}

impl SplitSpec {
    pub fn new(test: usize, train: Option<usize>) -> Self {
        SplitSpec { test, train }
    }

    /// Index ranges `(test, train, val)` for a dataset of `n` frames.
    pub fn ranges(&self, n: usize) -> Result<[std::ops::Range<usize>; 3]> {
        let train = self.train.unwrap_or(n.saturating_sub(self.test));
        let requested = self.test + train;
        if requested > n {
            return Err(Error::SplitOverflow { requested, available: n });
        }
        Ok([0..self.test, self.test..requested, requested..n])
    }
}

pub fn apply_split<'a, T>(frames: &'a [T], spec: &SplitSpec) -> Result<(&'a [T], &'a [T], &'a [T])> {
    let [a, b, c] = spec.ranges(frames.len())?;
    Ok((&frames[a], &frames[b], &frames[c]))
}
