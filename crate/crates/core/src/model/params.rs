use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::diffcore::{xavier_init, Tensor};
use crate::error::{Error, Result};
use crate::rng;

/// Named trainable tensors.
///
/// Names:
///
/// - `user_emb` `[|U|, d]`, `item_emb` `[|I|, d]`
/// - `proj.textual.w` `[d, d0_text]`, `proj.textual.b` `[d]`, and the same for `visual`
/// - `intra.{user,item,textual,visual}.w` `[C, chunk_dim]`, `.b` `[C]`
/// - `attn.w1` `[h, chunk_dim]`, `attn.b` `[h]`, `attn.w2` `[3, h]`
/// - `low.{k}.w` `[A_k, chunk_dim]`, `low.{k}.b` `[A_k]`
///
/// Weight matrices are stored `[out, in]`. Biases start at zero, everything
/// else is Xavier-uniform with a seed derived from the tensor name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    tensors: BTreeMap<String, Tensor>,
}

/// The embedding tables, which take the per-row L2 penalty.
pub const EMBEDDING_NAMES: [&str; 2] = ["user_emb", "item_emb"];

impl ParameterStore {
    pub fn shapes(config: &ModelConfig, n_users: usize, n_items: usize) -> Vec<(String, Vec<usize>)> {
        let (d, cd, c, h) = (config.dim(), config.chunk_dim, config.n_chunks(), config.attention_hidden);
        let mut s = vec![
            ("user_emb".to_string(), vec![n_users, d]),
            ("item_emb".to_string(), vec![n_items, d]),
            ("proj.textual.w".to_string(), vec![d, config.d0_text]),
            ("proj.textual.b".to_string(), vec![d]),
            ("proj.visual.w".to_string(), vec![d, config.d0_visual]),
            ("proj.visual.b".to_string(), vec![d]),
            ("attn.w1".to_string(), vec![h, cd]),
            ("attn.b".to_string(), vec![h]),
            ("attn.w2".to_string(), vec![3, h]),
        ];
        for src in ["user", "item", "textual", "visual"] {
            s.push((format!("intra.{src}.w"), vec![c, cd]));
            s.push((format!("intra.{src}.b"), vec![c]));
        }
        for (k, &a) in config.value_counts.iter().enumerate() {
            s.push((format!("low.{k}.w"), vec![a, cd]));
            s.push((format!("low.{k}.b"), vec![a]));
        }
        s
    }

    pub fn init(config: &ModelConfig, n_users: usize, n_items: usize, seed: u64) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for (name, shape) in Self::shapes(config, n_users, n_items) {
            let t = if is_bias(&name) {
                Tensor::zeros(&shape)
            } else {
                xavier_init(&shape, rng::derive(seed, &name))?
            };
            tensors.insert(name, t);
        }
        Ok(ParameterStore { tensors })
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        ParameterStore { tensors }
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParameterStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// # Panics
    /// If `name` is not a parameter; names are fixed by [`ParameterStore::shapes`].
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named `{name}`"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.tensors.values().cloned().collect()
    }

    /// Rebuilds a store from tensors in name order, e.g. after a gradient check.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                self.tensors.len(),
                tensors.len()
            )));
        }
        let mut out = BTreeMap::new();
        for ((name, old), t) in self.tensors.iter().zip(tensors) {
            if old.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "`{name}`: expected {:?}, got {:?}",
                    old.shape(),
                    t.shape()
                )));
            }
            out.insert(name.clone(), t);
        }
        Ok(ParameterStore { tensors: out })
    }

    /// Checks names and shapes against a configuration.
    pub fn check(&self, config: &ModelConfig, n_users: usize, n_items: usize) -> Result<()> {
        let want = Self::shapes(config, n_users, n_items);
        if want.len() != self.tensors.len() {
            return Err(Error::Data(format!(
                "parameter store has {} tensors, configuration implies {}",
                self.tensors.len(),
                want.len()
            )));
        }
        for (name, shape) in want {
            match self.tensors.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Data(format!(
                        "parameter `{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Data(format!("parameter `{name}` is missing"))),
            }
        }
        Ok(())
    }
}

pub fn is_bias(name: &str) -> bool {
    name.ends_with(".b")
}
