//! Forward computation, loss terms and score decomposition.
//!
//! Every representation is a vector of `C` contiguous chunks of width
//! `chunk_dim`, one per attribute plus an optional residual chunk. Batched
//! representations are `[B, C·chunk_dim]` and are reshaped to `[B·C, chunk_dim]`
//! wherever a per-chunk operation is needed.

mod forward;
mod params;
mod toy;

use serde::{Deserialize, Serialize};

pub use forward::{
    attention_fuse, bpr_loss, inter_modality_loss, intra_chunk_losses, intra_modality_loss, low_level_loss,
    project_batch, score_chunks, total_loss, batch_terms, Batch, BatchTerms, Forward, ItemReps, LossReport, Source,
};
pub use params::{is_bias, ParameterStore, EMBEDDING_NAMES};
pub use toy::{gradcheck_toy, toy_problem, ToyProblem};

use crate::datahub::{Dataset, Modality};
use crate::diffcore::{softplus_scalar, Tape, Tensor};
use crate::error::{Error, Result};

/// Nonlinearity applied after the modality projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
    Identity,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::Config(format!(
                "unknown activation `{s}` (expected tanh, softplus or identity)"
            ))),
        }
    }
}

/// Model hyperparameters plus the dataset-derived structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Value counts `A_k` of the named attributes; its length is `K`.
    pub value_counts: Vec<usize>,
    pub chunk_dim: usize,
    pub residual_chunk: bool,
    pub d0_text: usize,
    pub d0_visual: usize,
    pub temperature: f64,
    pub activation: Activation,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// L2-normalise chunks before contrastive similarities.
    pub normalize_contrastive: bool,
    /// Include the residual chunk in contrastive alignment.
    pub inter_residual: bool,
    /// Hidden width of the attention network.
    pub attention_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            value_counts: Vec::new(),
            chunk_dim: 32,
            residual_chunk: true,
            d0_text: 0,
            d0_visual: 0,
            temperature: 0.2,
            activation: Activation::Tanh,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            lambda: 1e-3,
            normalize_contrastive: false,
            inter_residual: true,
            attention_hidden: 3,
        }
    }
}

impl ModelConfig {
    pub fn n_attrs(&self) -> usize {
        self.value_counts.len()
    }

    /// Number of chunks `C`.
    pub fn n_chunks(&self) -> usize {
        self.n_attrs() + usize::from(self.residual_chunk)
    }

    /// Full representation width `d`.
    pub fn dim(&self) -> usize {
        self.chunk_dim * self.n_chunks()
    }

    pub fn d0(&self, m: Modality) -> usize {
        match m {
            Modality::Textual => self.d0_text,
            Modality::Visual => self.d0_visual,
        }
    }

    /// Copies the structural fields from a dataset.
    pub fn fit_to(&mut self, ds: &Dataset) {
        self.value_counts = ds.schema.value_counts();
        self.residual_chunk = ds.schema.residual_chunk;
        self.d0_text = ds.text.dim();
        self.d0_visual = ds.visual.dim();
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_chunks() == 0 {
            return bad("model needs at least one chunk".into());
        }
        if self.chunk_dim == 0 {
            return bad("chunk_dim must be positive".into());
        }
        if self.d0_text == 0 || self.d0_visual == 0 {
            return bad("raw feature sizes must be positive".into());
        }
        if self.value_counts.contains(&0) {
            return bad("every attribute needs at least one value".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be a non-negative finite number, got {w}"));
            }
        }
        if self.attention_hidden == 0 {
            return bad("attention_hidden must be positive".into());
        }
        Ok(())
    }
}

/// A vector viewed as contiguous equal-width chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedVector {
    data: Vec<f64>,
    chunk_dim: usize,
}

impl ChunkedVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn n_chunks(&self) -> usize {
        self.data.len() / self.chunk_dim
    }

    pub fn chunk(&self, k: usize) -> &[f64] {
        &self.data[k * self.chunk_dim..(k + 1) * self.chunk_dim]
    }

    pub fn chunks(&self) -> std::slice::Chunks<'_, f64> {
        self.data.chunks(self.chunk_dim)
    }
}

pub fn chunk_vector(v: Vec<f64>, config: &ModelConfig) -> Result<ChunkedVector> {
    if v.len() != config.dim() {
        return Err(Error::Shape(format!(
            "expected a vector of length {} ({} chunks of {}), got {}",
            config.dim(),
            config.n_chunks(),
            config.chunk_dim,
            v.len()
        )));
    }
    Ok(ChunkedVector {
        data: v,
        chunk_dim: config.chunk_dim,
    })
}

/// Projects one raw feature vector.
pub fn project_modality(model: &Model, e: &[f64], m: Modality) -> Result<ChunkedVector> {
    if e.len() != model.config.d0(m) {
        return Err(Error::Shape(format!(
            "{m} features have length {}, model expects {}",
            e.len(),
            model.config.d0(m)
        )));
    }
    let tape = Tape::new();
    let f = Forward::constant(&tape, model)?;
    let x = tape.constant(Tensor::matrix(1, e.len(), e.to_vec())?);
    let v = project_batch(&f, x, m)?;
    let data = v.value().data().to_vec();
    chunk_vector(data, &model.config)
}

/// Per-chunk scores of one user-item pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBreakdown {
    pub parts: Vec<f64>,
    pub total: f64,
}

impl ScoreBreakdown {
    pub fn from_parts(parts: Vec<f64>) -> Self {
        let total = parts.iter().sum();
        ScoreBreakdown { parts, total }
    }

    /// Shares of the total per chunk.
    pub fn shares(&self) -> Vec<f64> {
        self.parts.iter().map(|p| p / self.total).collect()
    }
}

/// Per-chunk softplus scores between a user and a fused item vector.
pub fn score_pair(user: &ChunkedVector, item: &ChunkedVector) -> Result<ScoreBreakdown> {
    if user.data.len() != item.data.len() || user.chunk_dim != item.chunk_dim {
        return Err(Error::Shape(format!(
            "user vector has {} entries, item vector {}",
            user.data.len(),
            item.data.len()
        )));
    }
    Ok(ScoreBreakdown::from_parts(
        user.chunks().zip(item.chunks()).map(|(u, i)| softplus_scalar(dot(u, i))).collect(),
    ))
}

/// Rescales one attribute's part by `xi` and re-sums.
pub fn controllable_score(b: &ScoreBreakdown, attr: usize, n_attrs: usize, xi: f64) -> Result<f64> {
    if attr >= n_attrs || attr >= b.parts.len() {
        return Err(Error::Index {
            index: attr,
            size: n_attrs.min(b.parts.len()),
        });
    }
    Ok(b.parts
        .iter()
        .enumerate()
        .map(|(k, &s)| if k == attr { xi * s } else { s })
        .sum())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inference-time tables for every item.
#[derive(Debug, Clone)]
pub struct ItemTables {
    /// Pre-fusion chunks per source, `[I, d]` each.
    pub id: Tensor,
    pub text: Tensor,
    pub visual: Tensor,
    /// Attention weights `[I·C, 3]` over (ID, textual, visual).
    pub attention: Tensor,
    /// Fused representations `[I, d]`.
    pub fused: Tensor,
}

/// Configuration plus trained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterStore,
}

impl Model {
    pub fn init(config: ModelConfig, n_users: usize, n_items: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParameterStore::init(&config, n_users, n_items, seed)?;
        Ok(Model { config, params })
    }

    pub fn n_users(&self) -> usize {
        self.params.get("user_emb").rows()
    }

    pub fn n_items(&self) -> usize {
        self.params.get("item_emb").rows()
    }

    /// Checks that the model and dataset agree on every dimension.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        let mut want = self.config.clone();
        want.fit_to(ds);
        if want != self.config || ds.n_users() != self.n_users() || ds.n_items() != self.n_items() {
            return Err(Error::Data(format!(
                "dataset ({} users, {} items, values {:?}, d0 {}/{}) does not match the model \
                 ({} users, {} items, values {:?}, d0 {}/{})",
                ds.n_users(),
                ds.n_items(),
                want.value_counts,
                want.d0_text,
                want.d0_visual,
                self.n_users(),
                self.n_items(),
                self.config.value_counts,
                self.config.d0_text,
                self.config.d0_visual
            )));
        }
        Ok(())
    }

    pub fn user_vector(&self, user: usize) -> Result<ChunkedVector> {
        let t = self.params.get("user_emb");
        if user >= t.rows() {
            return Err(Error::Index {
                index: user,
                size: t.rows(),
            });
        }
        chunk_vector(t.row(user).to_vec(), &self.config)
    }

    pub fn item_tables(&self, ds: &Dataset) -> Result<ItemTables> {
        self.check_dataset(ds)?;
        let tape = Tape::new();
        let f = Forward::constant(&tape, self)?;
        let items: Vec<usize> = (0..ds.n_items()).collect();
        let reps = f.items(ds, &items)?;
        let (att, fused) = attention_fuse(&f, reps.id, reps.text, reps.visual)?;
        let out = ItemTables {
            id: reps.id.value().clone(),
            text: reps.text.value().clone(),
            visual: reps.visual.value().clone(),
            attention: att.value().clone(),
            fused: fused.value().clone(),
        };
        Ok(out)
    }

    /// Score breakdowns of `user` against every item.
    pub fn breakdowns(&self, user: usize, tables: &ItemTables) -> Result<Vec<ScoreBreakdown>> {
        let u = self.user_vector(user)?;
        (0..tables.fused.rows())
            .map(|i| score_pair(&u, &chunk_vector(tables.fused.row(i).to_vec(), &self.config)?))
            .collect()
    }
}
