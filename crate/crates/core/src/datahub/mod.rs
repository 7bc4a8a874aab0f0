//! Dataset ingestion, splitting, negative sampling and synthetic data.
//!
//! On disk a dataset is a directory:
//!
//! | file | format |
//! |---|---|
//! | `interactions.tsv` | `user<TAB>item` |
//! | `features_textual.tsv`, `features_visual.tsv` | header `item_token <d0>`, then `item<TAB>f1,...,fd0` |
//! | `attributes.tsv` | `item<TAB>attr=value;attr=value` |
//! | `users.tsv`, `items.tsv` | `index<TAB>token` sidecars, optional |
//! | `attribute_values.tsv` | `attr<TAB>index<TAB>value` sidecar, optional |
//!
//! When sidecars are present they fix the index order, so a dataset written by
//! [`Dataset::save_dir`] reloads with identical indices.

mod attributes;
mod discretize;
mod features;
mod interactions;
mod split;
mod synthetic;
mod vocab;

use std::io::{BufRead, Write};
use std::path::Path;

pub use attributes::{
    load_attributes, load_schema, save_attributes, save_schema, Attribute, AttributeLabels, AttributeSchema,
    RESIDUAL_NAME, UNKNOWN_VALUE,
};
pub use discretize::discretize_levels;
pub use features::{FeatureTable, Modality};
pub use interactions::{kcore_members, load_interactions, load_interactions_with, InteractionSet};
pub use split::{sample_negatives, split_dataset, test_count, DatasetSplit, Holdout};
pub use synthetic::{gen_synthetic, SyntheticSpec};
pub use vocab::Vocab;

use crate::error::{Error, Result};

pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const ATTRIBUTES_FILE: &str = "attributes.tsv";
pub const USERS_FILE: &str = "users.tsv";
pub const ITEMS_FILE: &str = "items.tsv";
pub const SCHEMA_FILE: &str = "attribute_values.tsv";

pub fn features_file(m: Modality) -> String {
    format!("features_{}.tsv", m.name())
}

pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    std::io::BufReader::new(f)
        .lines()
        .enumerate()
        .map(|(n, l)| l.map(|l| (n + 1, l)).map_err(|e| Error::io(path, e)))
        .collect()
}

/// Loading switches.
#[derive(Debug, Clone, PartialEq)]
pub struct DataOptions {
    /// Minimum interactions per user and item; 0 or 1 disables the filter.
    pub kcore: usize,
    /// When ≥ 2, appends a `popularity` attribute with this many quantile
    /// levels of interaction counts.
    pub popularity_levels: usize,
    pub residual_chunk: bool,
}

impl Default for DataOptions {
    fn default() -> Self {
        DataOptions {
            kcore: 0,
            popularity_levels: 0,
            residual_chunk: true,
        }
    }
}

/// Everything the model consumes, aligned on one item index space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub interactions: InteractionSet,
    pub text: FeatureTable,
    pub visual: FeatureTable,
    pub schema: AttributeSchema,
    pub labels: AttributeLabels,
}

impl Dataset {
    pub fn new(
        interactions: InteractionSet,
        text: FeatureTable,
        visual: FeatureTable,
        schema: AttributeSchema,
        labels: AttributeLabels,
    ) -> Result<Self> {
        let n = interactions.n_items();
        if text.n_items() != n || visual.n_items() != n || labels.n_items() != n {
            return Err(Error::Data(format!(
                "item counts disagree: interactions {n}, textual {}, visual {}, labels {}",
                text.n_items(),
                visual.n_items(),
                labels.n_items()
            )));
        }
        Ok(Dataset {
            interactions,
            text,
            visual,
            schema,
            labels,
        })
    }

    pub fn n_users(&self) -> usize {
        self.interactions.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.interactions.n_items()
    }

    pub fn features(&self, m: Modality) -> &FeatureTable {
        match m {
            Modality::Textual => &self.text,
            Modality::Visual => &self.visual,
        }
    }

    pub fn load_dir(dir: &Path, opts: &DataOptions) -> Result<Self> {
        let users = load_vocab_if_present(&dir.join(USERS_FILE))?;
        let items = load_vocab_if_present(&dir.join(ITEMS_FILE))?;
        let interactions = load_interactions_with(&dir.join(INTERACTIONS_FILE), users, items)?;
        let text = FeatureTable::load(&dir.join(features_file(Modality::Textual)), Modality::Textual, &interactions.items)?;
        let visual = FeatureTable::load(&dir.join(features_file(Modality::Visual)), Modality::Visual, &interactions.items)?;
        let schema_path = dir.join(SCHEMA_FILE);
        let fixed = if schema_path.exists() {
            Some(load_schema(&schema_path, opts.residual_chunk)?)
        } else {
            None
        };
        let (schema, labels) =
            load_attributes(&dir.join(ATTRIBUTES_FILE), &interactions.items, fixed, opts.residual_chunk)?;
        let mut ds = Dataset::new(interactions, text, visual, schema, labels)?;
        if opts.kcore > 1 {
            ds = ds.kcore(opts.kcore)?;
        }
        if opts.popularity_levels >= 2 {
            ds.add_popularity(opts.popularity_levels)?;
        }
        Ok(ds)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ints = dir.join(INTERACTIONS_FILE);
        let io = |e| Error::io(&ints, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(&ints).map_err(io)?);
        for &(u, i) in &self.interactions.pairs {
            writeln!(w, "{}\t{}", self.interactions.users.token(u), self.interactions.items.token(i)).map_err(io)?;
        }
        w.flush().map_err(io)?;
        save_vocab(&dir.join(USERS_FILE), &self.interactions.users)?;
        save_vocab(&dir.join(ITEMS_FILE), &self.interactions.items)?;
        for m in Modality::ALL {
            self.features(m).save(&dir.join(features_file(m)), &self.interactions.items)?;
        }
        save_attributes(&dir.join(ATTRIBUTES_FILE), &self.interactions.items, &self.schema, &self.labels)?;
        save_schema(&dir.join(SCHEMA_FILE), &self.schema)
    }

    /// Restricts to the `k`-core and compacts both index spaces.
    pub fn kcore(self, k: usize) -> Result<Self> {
        let (keep_u, keep_i) = kcore_members(&self.interactions, k);
        let remap = |keep: &[bool], vocab: &Vocab| -> Result<(Vocab, Vec<Option<usize>>)> {
            let mut v = Vocab::new();
            let map = keep
                .iter()
                .enumerate()
                .map(|(i, &k)| k.then(|| v.intern(vocab.token(i))))
                .collect();
            if v.is_empty() {
                return Err(Error::Data(format!("{k}-core filter removed everything")));
            }
            Ok((v, map))
        };
        let (users, umap) = remap(&keep_u, &self.interactions.users)?;
        let (items, imap) = remap(&keep_i, &self.interactions.items)?;
        let pairs = self
            .interactions
            .pairs
            .iter()
            .filter_map(|&(u, i)| Some((umap[u]?, imap[i]?)));
        let interactions = InteractionSet::from_pairs(users, items, pairs)?;
        let kept: Vec<usize> = (0..keep_i.len()).filter(|&i| keep_i[i]).collect();
        let feat = |t: &FeatureTable| -> Result<FeatureTable> {
            let data = kept.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
            FeatureTable::new(t.modality, t.dim(), data)
        };
        let labels = kept.iter().flat_map(|&i| self.labels.item(i).iter().copied()).collect();
        let labels = AttributeLabels::new(self.schema.n_attrs(), labels, &self.schema)?;
        Dataset::new(interactions, feat(&self.text)?, feat(&self.visual)?, self.schema, labels)
    }

    /// Appends a `popularity` attribute: quantile levels of each item's
    /// interaction count, named `L0` (least) upward.
    pub fn add_popularity(&mut self, n_levels: usize) -> Result<()> {
        if self.schema.attr_index("popularity").is_some() {
            return Err(Error::Data("dataset already has a popularity attribute".into()));
        }
        let counts: Vec<Option<f64>> = self.interactions.item_counts().iter().map(|&c| Some(c as f64)).collect();
        let levels = discretize_levels(&counts, n_levels)?;
        let k = self.schema.n_attrs();
        let mut attrs = self.schema.attributes.clone();
        attrs.push(Attribute {
            name: "popularity".into(),
            values: (0..n_levels).map(|l| format!("L{l}")).collect(),
        });
        let schema = AttributeSchema::new(attrs, self.schema.residual_chunk)?;
        let mut labels = Vec::with_capacity(self.n_items() * (k + 1));
        for (i, &l) in levels.iter().enumerate() {
            labels.extend_from_slice(self.labels.item(i));
            labels.push(l);
        }
        self.labels = AttributeLabels::new(k + 1, labels, &schema)?;
        self.schema = schema;
        Ok(())
    }
}

fn save_vocab(path: &Path, v: &Vocab) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for (i, t) in v.tokens().iter().enumerate() {
        writeln!(w, "{i}\t{t}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let mut tokens = Vec::new();
    for (lineno, line) in read_lines(path)? {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, tok) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected `index<TAB>token`"))?;
        if idx.trim().parse::<usize>().ok() != Some(tokens.len()) {
            return Err(Error::parse(path, lineno, "indices must be 0, 1, 2, ..."));
        }
        tokens.push(tok.to_string());
    }
    Vocab::from_tokens(tokens).map_err(|m| Error::Data(format!("{}: {m}", path.display())))
}

fn load_vocab_if_present(path: &Path) -> Result<Option<Vocab>> {
    if path.exists() {
        load_vocab(path).map(Some)
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_round_trip_is_exact() {
        let spec = SyntheticSpec {
            n_users: 15,
            n_items: 30,
            interactions_per_user: 6,
            ..SyntheticSpec::default()
        };
        let d = gen_synthetic(&spec, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save_dir(dir.path()).unwrap();
        let back = Dataset::load_dir(dir.path(), &DataOptions::default()).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn popularity_attribute_appended() {
        let spec = SyntheticSpec {
            n_users: 40,
            n_items: 30,
            value_counts: vec![4],
            interactions_per_user: 6,
            ..SyntheticSpec::default()
        };
        let mut d = gen_synthetic(&spec, 2).unwrap();
        d.add_popularity(5).unwrap();
        assert_eq!(d.schema.n_attrs(), 2);
        assert_eq!(d.schema.attributes[1].name, "popularity");
        assert!(d.add_popularity(5).is_err());
    }

    #[test]
    fn kcore_keeps_alignment() {
        let spec = SyntheticSpec {
            n_users: 40,
            n_items: 40,
            interactions_per_user: 8,
            ..SyntheticSpec::default()
        };
        let d = gen_synthetic(&spec, 5).unwrap();
        let before = d.clone();
        let f = d.kcore(6).unwrap();
        assert!(f.n_items() < before.n_items());
        for i in 0..f.n_items() {
            let orig = before.interactions.items.get(f.interactions.items.token(i)).unwrap();
            assert_eq!(f.text.row(i), before.text.row(orig));
            assert_eq!(f.labels.item(i), before.labels.item(orig));
        }
        for c in f.interactions.item_counts() {
            assert!(c >= 6);
        }
    }
}
