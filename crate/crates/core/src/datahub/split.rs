use rand::seq::SliceRandom;
use rand::Rng;

use super::InteractionSet;
use crate::error::{Error, Result};
use crate::rng;

/// Per-user train / validation / test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    n_items: usize,
    /// Sorted item lists.
    pub train: Vec<Vec<usize>>,
    pub validation: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Holdout {
    Validation,
    Test,
}

impl DatasetSplit {
    /// Builds a split from explicit lists; they are sorted and must be
    /// disjoint per user with every index below `n_items`.
    pub fn from_parts(
        n_items: usize,
        mut train: Vec<Vec<usize>>,
        mut validation: Vec<Vec<usize>>,
        mut test: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n = train.len();
        if validation.len() != n || test.len() != n {
            return Err(Error::Data("train, validation and test must cover the same users".into()));
        }
        for u in 0..n {
            let mut all = Vec::new();
            for part in [&mut train[u], &mut validation[u], &mut test[u]] {
                part.sort_unstable();
                all.extend_from_slice(part);
            }
            all.sort_unstable();
            if all.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Data(format!("user {u}: an item appears twice in the split")));
            }
            if let Some(&i) = all.last().filter(|&&i| i >= n_items) {
                return Err(Error::Index { index: i, size: n_items });
            }
        }
        Ok(DatasetSplit {
            n_items,
            train,
            validation,
            test,
        })
    }

    pub fn n_users(&self) -> usize {
        self.train.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn is_train(&self, user: usize, item: usize) -> bool {
        self.train[user].binary_search(&item).is_ok()
    }

    pub fn holdout(&self, which: Holdout) -> &[Vec<usize>] {
        match which {
            Holdout::Validation => &self.validation,
            Holdout::Test => &self.test,
        }
    }

    /// All training positives, ordered by user then item.
    pub fn train_pairs(&self) -> Vec<(usize, usize)> {
        self.train
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
            .collect()
    }

    /// Items outside the user's training set.
    pub fn candidate_count(&self, user: usize) -> usize {
        self.n_items - self.train[user].len()
    }

    pub fn train_item_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_items];
        for items in &self.train {
            for &i in items {
                c[i] += 1;
            }
        }
        c
    }
}

/// Test share per user: `ceil(n/5)`, but at least one interaction stays in
/// the training pool.
pub fn test_count(n: usize) -> usize {
    n.div_ceil(5).min(n.saturating_sub(1))
}

/// Random per-user 8:2 split, then `floor(10%)` of the pooled training
/// interactions moved to validation, drawn globally.
pub fn split_dataset(set: &InteractionSet, seed: u64) -> Result<DatasetSplit> {
    let by_user = set.by_user();
    if let Some(u) = by_user.iter().position(|v| v.is_empty()) {
        return Err(Error::Data(format!(
            "user {:?} has no interactions",
            set.users.token(u)
        )));
    }
    let mut train = Vec::with_capacity(by_user.len());
    let mut test = Vec::with_capacity(by_user.len());
    for (u, items) in by_user.iter().enumerate() {
        let mut items = items.clone();
        items.sort_unstable();
        items.shuffle(&mut rng::stream(seed, "split.test", u as u64, 0));
        let t = test_count(items.len());
        let mut te = items.split_off(items.len() - t);
        te.sort_unstable();
        test.push(te);
        train.push(items);
    }

    let mut pool: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(u, it)| it.iter().map(move |&i| (u, i)))
        .collect();
    pool.sort_unstable();
    let want = pool.len() / 10;
    pool.shuffle(&mut rng::stream(seed, "split.validation", 0, 0));
    let mut remaining: Vec<usize> = train.iter().map(Vec::len).collect();
    let mut validation = vec![Vec::new(); train.len()];
    let mut moved = 0;
    for &(u, i) in &pool {
        if moved == want {
            break;
        }
        if remaining[u] > 1 {
            remaining[u] -= 1;
            validation[u].push(i);
            moved += 1;
        }
    }
    for (u, val) in validation.iter_mut().enumerate() {
        val.sort_unstable();
        train[u].retain(|i| val.binary_search(i).is_err());
        train[u].sort_unstable();
    }
    Ok(DatasetSplit {
        n_items: set.n_items(),
        train,
        validation,
        test,
    })
}

/// `n_neg` items drawn uniformly with replacement from outside the user's
/// training set. The draw depends only on `(seed, user, step)`.
pub fn sample_negatives(split: &DatasetSplit, user: usize, n_neg: usize, seed: u64, step: u64) -> Result<Vec<usize>> {
    if n_neg == 0 {
        return Err(Error::Config("n_neg must be ≥ 1".into()));
    }
    let free = split.candidate_count(user);
    if free == 0 {
        return Err(Error::Data(format!(
            "user {user} trained on every item; no negatives available"
        )));
    }
    let mut rng = rng::stream(seed, "negatives", step, user as u64);
    let n = split.n_items();
    let train = &split.train[user];
    let mut out = Vec::with_capacity(n_neg);
    if free * 4 >= n {
        while out.len() < n_neg {
            let i = rng.random_range(0..n);
            if train.binary_search(&i).is_err() {
                out.push(i);
            }
        }
    } else {
        // dense training set: index into the complement directly
        for _ in 0..n_neg {
            let r = rng.random_range(0..free);
            out.push(nth_free(train, r));
        }
    }
    Ok(out)
}

/// The `r`-th item (0-based) not contained in sorted `taken`.
fn nth_free(taken: &[usize], r: usize) -> usize {
    let mut item = r;
    for &t in taken {
        if t <= item {
            item += 1;
        } else {
            break;
        }
    }
    item
}
