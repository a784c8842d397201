use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitKind {
    Train,
    Val,
    Test,
    None,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
            SplitKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitKind::Train),
            "val" => Some(SplitKind::Val),
            "test" => Some(SplitKind::Test),
            "none" => Some(SplitKind::None),
            _ => None,
        }
    }
}

/// Per-node split assignment. One kind per node, so the train, val and
/// test sets are disjoint by construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    kinds: Vec<SplitKind>,
}

impl Splits {
    pub fn from_kinds(kinds: Vec<SplitKind>) -> Self {
        Splits { kinds }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, u: usize) -> SplitKind {
        self.kinds[u]
    }

    pub fn kinds(&self) -> &[SplitKind] {
        &self.kinds
    }

    pub fn nodes(&self, kind: SplitKind) -> Vec<usize> {
        (0..self.kinds.len()).filter(|&u| self.kinds[u] == kind).collect()
    }

    pub fn count(&self, kind: SplitKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }
}

/// Train/val percentages: the first task gets 60/20, later tasks 30/20.
/// Whatever remains after rounding down goes to test.
pub fn split_percentages(task_index: usize) -> (usize, usize) {
    if task_index == 0 {
        (60, 20)
    } else {
        (30, 20)
    }
}

/// Deterministic split of the labeled nodes of one task.
pub fn make_splits(
    task_index: usize,
    n: usize,
    labeled: &[usize],
    num_classes: usize,
    seed: u64,
) -> Result<Splits> {
    if labeled.is_empty() || labeled.len() < num_classes {
        return Err(Error::InvalidArgument(format!(
            "{} labeled nodes for {num_classes} classes",
            labeled.len()
        )));
    }
    if let Some(&u) = labeled.iter().find(|&&u| u >= n) {
        return Err(Error::InvalidArgument(format!("labeled node {u} >= {n}")));
    }
    let mut order = labeled.to_vec();
    order.sort_unstable();
    order.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task_index as u64);
    order.shuffle(&mut rng);

    let (train_pct, val_pct) = split_percentages(task_index);
    let total = order.len();
    let n_train = total * train_pct / 100;
    let n_val = total * val_pct / 100;

    let mut kinds = vec![SplitKind::None; n];
    for (i, &u) in order.iter().enumerate() {
        kinds[u] = if i < n_train {
            SplitKind::Train
        } else if i < n_train + n_val {
            SplitKind::Val
        } else {
            SplitKind::Test
        };
    }
    Ok(Splits { kinds })
}
