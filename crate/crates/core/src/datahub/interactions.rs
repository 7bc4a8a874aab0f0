use std::collections::HashSet;
use std::path::Path;

use super::{read_lines, Vocab};
use crate::error::{Error, Result};

/// Implicit-feedback interactions over dense user and item index spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    pub users: Vocab,
    pub items: Vocab,
    /// Deduplicated `(user, item)` pairs in first-appearance order.
    pub pairs: Vec<(usize, usize)>,
}

impl InteractionSet {
    /// Builds a set from raw pairs, dropping duplicates.
    pub fn from_pairs(users: Vocab, items: Vocab, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (u, i) in pairs {
            if u >= users.len() {
                return Err(Error::Index { index: u, size: users.len() });
            }
            if i >= items.len() {
                return Err(Error::Index { index: i, size: items.len() });
            }
            if seen.insert((u, i)) {
                out.push((u, i));
            }
        }
        Ok(InteractionSet { users, items, pairs: out })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Items of each user, in interaction order.
    pub fn by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users()];
        for &(u, i) in &self.pairs {
            out[u].push(i);
        }
        out
    }

    pub fn item_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_items()];
        for &(_, i) in &self.pairs {
            c[i] += 1;
        }
        c
    }
}

/// Reads `user<TAB>item` lines. Tokens get dense indices in first-appearance
/// order unless vocabularies are supplied, in which case unknown tokens are an
/// error.
pub fn load_interactions(path: &Path) -> Result<InteractionSet> {
    load_interactions_with(path, None, None)
}

pub fn load_interactions_with(
    path: &Path,
    users: Option<Vocab>,
    items: Option<Vocab>,
) -> Result<InteractionSet> {
    let fixed_users = users.is_some();
    let fixed_items = items.is_some();
    let mut users = users.unwrap_or_default();
    let mut items = items.unwrap_or_default();
    let mut pairs = Vec::new();
    for (lineno, line) in read_lines(path)? {
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split('\t');
        let (Some(u), Some(i), None) = (f.next(), f.next(), f.next()) else {
            return Err(Error::parse(path, lineno, "expected `user<TAB>item`"));
        };
        let (u, i) = (u.trim(), i.trim());
        if u.is_empty() || i.is_empty() {
            return Err(Error::parse(path, lineno, "empty token"));
        }
        let ui = if fixed_users {
            users
                .get(u)
                .ok_or_else(|| Error::parse(path, lineno, format!("unknown user {u:?}")))?
        } else {
            users.intern(u)
        };
        let ii = if fixed_items {
            items
                .get(i)
                .ok_or_else(|| Error::parse(path, lineno, format!("unknown item {i:?}")))?
        } else {
            items.intern(i)
        };
        pairs.push((ui, ii));
    }
    if pairs.is_empty() {
        return Err(Error::Data(format!("{}: no interactions", path.display())));
    }
    InteractionSet::from_pairs(users, items, pairs)
}

/// Users and items that survive iterative pruning to at least `k`
/// interactions each. `k <= 1` keeps everything.
pub fn kcore_members(set: &InteractionSet, k: usize) -> (Vec<bool>, Vec<bool>) {
    let mut keep_u = vec![true; set.n_users()];
    let mut keep_i = vec![true; set.n_items()];
    if k <= 1 {
        return (keep_u, keep_i);
    }
    loop {
        let mut cu = vec![0usize; set.n_users()];
        let mut ci = vec![0usize; set.n_items()];
        for &(u, i) in &set.pairs {
            if keep_u[u] && keep_i[i] {
                cu[u] += 1;
                ci[i] += 1;
            }
        }
        let mut changed = false;
        for u in 0..cu.len() {
            if keep_u[u] && cu[u] < k {
                keep_u[u] = false;
                changed = true;
            }
        }
        for i in 0..ci.len() {
            if keep_i[i] && ci[i] < k {
                keep_i[i] = false;
                changed = true;
            }
        }
        if !changed {
            return (keep_u, keep_i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_lines() {
        let f = file("u1\ti1\nu1\ti2\n");
        let s = load_interactions(f.path()).unwrap();
        assert_eq!((s.n_users(), s.n_items(), s.len()), (1, 2, 2));
    }

    #[test]
    fn duplicates_collapse() {
        let f = file("u1\ti1\nu1\ti1\n");
        assert_eq!(load_interactions(f.path()).unwrap().len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = file("u1\ti1\nbroken\n");
        let err = load_interactions(f.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_file_rejected() {
        let f = file("");
        assert!(matches!(load_interactions(f.path()), Err(Error::Data(_))));
    }

    #[test]
    fn kcore_prunes_iteratively() {
        let mut users = Vocab::new();
        let mut items = Vocab::new();
        for t in ["a", "b", "c"] {
            users.intern(t);
        }
        for t in ["x", "y", "z"] {
            items.intern(t);
        }
        // a and b form a 2-core with x,y; c only touches z
        let s = InteractionSet::from_pairs(users, items, [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (2, 0)]).unwrap();
        let (ku, ki) = kcore_members(&s, 2);
        assert_eq!(ku, vec![true, true, false]);
        assert_eq!(ki, vec![true, true, false]);
    }
}
