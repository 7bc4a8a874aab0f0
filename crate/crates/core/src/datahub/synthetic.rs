use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Attribute, AttributeLabels, AttributeSchema, Dataset, FeatureTable, InteractionSet, Modality, Vocab};
use crate::error::{Error, Result};
use crate::rng;

const ATTR_NAMES: [&str; 4] = ["price", "popularity", "brand", "category"];

/// Planted-attribute dataset parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    /// Values per attribute; its length is the attribute count.
    pub value_counts: Vec<usize>,
    pub d0_text: usize,
    pub d0_visual: usize,
    pub interactions_per_user: usize,
    /// Feature noise standard deviation, and the chance that an interaction
    /// ignores preferences and picks a uniform item.
    pub noise: f64,
    /// Weight multiplier per matched preferred value.
    pub affinity: f64,
    pub residual_chunk: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_users: 200,
            n_items: 300,
            value_counts: vec![4, 3, 5],
            d0_text: 32,
            d0_visual: 32,
            interactions_per_user: 20,
            noise: 0.1,
            affinity: 8.0,
            residual_chunk: true,
        }
    }
}

/// Generates a dataset whose structure is fully determined by item attributes.
///
/// Each item gets uniform attribute labels. A modality's feature vector is the
/// concatenated one-hot encoding of those labels times a per-modality Gaussian
/// mixing matrix, plus Gaussian noise. Each user prefers one value per
/// attribute; an item's sampling weight is `affinity` raised to the number of
/// preferred values it carries. Items are drawn without replacement.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    let k = spec.value_counts.len();
    if k == 0 || spec.value_counts.contains(&0) {
        return Err(Error::Config("every attribute needs at least one value".into()));
    }
    if spec.n_users == 0 || spec.n_items == 0 || spec.interactions_per_user == 0 {
        return Err(Error::Config("users, items and interactions per user must be positive".into()));
    }
    if spec.n_items < spec.interactions_per_user {
        return Err(Error::Config(format!(
            "{} items cannot supply {} distinct interactions per user",
            spec.n_items, spec.interactions_per_user
        )));
    }
    if spec.d0_text == 0 || spec.d0_visual == 0 || !(0.0..=1.0).contains(&spec.noise) {
        return Err(Error::Config("feature sizes must be positive and noise in [0, 1]".into()));
    }
    if !(spec.affinity >= 1.0 && spec.affinity.is_finite()) {
        return Err(Error::Config(format!("affinity must be finite and at least 1, got {}", spec.affinity)));
    }

    let mut rng_labels = rng::stream(seed, "synthetic.labels", 0, 0);
    let labels: Vec<usize> = (0..spec.n_items * k)
        .map(|j| rng_labels.random_range(0..spec.value_counts[j % k]))
        .collect();

    let attributes: Vec<Attribute> = spec
        .value_counts
        .iter()
        .enumerate()
        .map(|(a, &n)| Attribute {
            name: ATTR_NAMES.get(a).map(|s| s.to_string()).unwrap_or(format!("attr{a}")),
            values: (0..n).map(|v| format!("v{v}")).collect(),
        })
        .collect();
    let schema = AttributeSchema::new(attributes, spec.residual_chunk)?;
    let labels = AttributeLabels::new(k, labels, &schema)?;

    let offsets: Vec<usize> = spec
        .value_counts
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let onehot_len: usize = spec.value_counts.iter().sum();
    let features = |modality: Modality, d0: usize, tag: u64| -> Result<FeatureTable> {
        let mut r = rng::stream(seed, "synthetic.features", tag, 0);
        let scale = (1.0 / k as f64).sqrt();
        let mix: Vec<f64> = (0..onehot_len * d0)
            .map(|_| scale * r.sample::<f64, _>(StandardNormal))
            .collect();
        let mut data = Vec::with_capacity(spec.n_items * d0);
        for item in 0..spec.n_items {
            let mut row = vec![0.0; d0];
            for (a, &off) in offsets.iter().enumerate() {
                let hot = off + labels.get(item, a);
                for (x, m) in row.iter_mut().zip(&mix[hot * d0..(hot + 1) * d0]) {
                    *x += m;
                }
            }
            for x in row.iter_mut() {
                *x += spec.noise * r.sample::<f64, _>(StandardNormal);
            }
            data.extend(row);
        }
        FeatureTable::new(modality, d0, data)
    };
    let text = features(Modality::Textual, spec.d0_text, 0)?;
    let visual = features(Modality::Visual, spec.d0_visual, 1)?;

    let mut pairs = Vec::with_capacity(spec.n_users * spec.interactions_per_user);
    for u in 0..spec.n_users {
        let mut r = rng::stream(seed, "synthetic.user", u as u64, 0);
        let pref: Vec<usize> = spec.value_counts.iter().map(|&n| r.random_range(0..n)).collect();
        let mut weight: Vec<f64> = (0..spec.n_items)
            .map(|i| spec.affinity.powi((0..k).filter(|&a| labels.get(i, a) == pref[a]).count() as i32))
            .collect();
        let mut taken = vec![false; spec.n_items];
        for _ in 0..spec.interactions_per_user {
            let pick = if spec.noise > 0.0 && r.random::<f64>() < spec.noise {
                let free: Vec<usize> = (0..spec.n_items).filter(|&i| !taken[i]).collect();
                free[r.random_range(0..free.len())]
            } else {
                let total: f64 = weight.iter().sum();
                let mut t = r.random::<f64>() * total;
                let mut chosen = None;
                for (i, &w) in weight.iter().enumerate() {
                    if w > 0.0 {
                        chosen = Some(i);
                        if t < w {
                            break;
                        }
                        t -= w;
                    }
                }
                chosen.expect("free items remain")
            };
            taken[pick] = true;
            weight[pick] = 0.0;
            pairs.push((u, pick));
        }
    }

    let users = Vocab::from_tokens((0..spec.n_users).map(|u| format!("u{u}")).collect()).map_err(Error::Data)?;
    let items = Vocab::from_tokens((0..spec.n_items).map(|i| format!("i{i}")).collect()).map_err(Error::Data)?;
    let interactions = InteractionSet::from_pairs(users, items, pairs)?;
    Dataset::new(interactions, text, visual, schema, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_the_contract() {
        let d = gen_synthetic(&SyntheticSpec::default(), 7).unwrap();
        assert_eq!(d.interactions.len(), 4000);
        assert_eq!((d.labels.n_items(), d.labels.n_attrs()), (300, 3));
        assert_eq!(d.text.dim(), 32);
        assert_eq!(d.schema.value_counts(), vec![4, 3, 5]);
        for u in d.interactions.by_user() {
            assert_eq!(u.len(), 20);
        }
    }

    #[test]
    fn deterministic() {
        let s = SyntheticSpec {
            n_users: 20,
            n_items: 40,
            ..SyntheticSpec::default()
        };
        let a = gen_synthetic(&s, 3).unwrap();
        let b = gen_synthetic(&s, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.interactions.pairs, gen_synthetic(&s, 4).unwrap().interactions.pairs);
    }

    #[test]
    fn noiseless_single_attribute_is_separable() {
        let s = SyntheticSpec {
            n_users: 30,
            n_items: 60,
            value_counts: vec![2],
            interactions_per_user: 10,
            noise: 0.0,
            affinity: 1e9,
            ..SyntheticSpec::default()
        };
        let d = gen_synthetic(&s, 1).unwrap();
        for items in d.interactions.by_user() {
            let v = d.labels.get(items[0], 0);
            assert!(items.iter().all(|&i| d.labels.get(i, 0) == v));
        }
    }

    #[test]
    fn too_few_items_rejected() {
        let s = SyntheticSpec {
            n_items: 10,
            interactions_per_user: 11,
            ..SyntheticSpec::default()
        };
        assert!(matches!(gen_synthetic(&s, 0), Err(Error::Config(_))));
    }
}
