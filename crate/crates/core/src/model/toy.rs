//! A tiny fixed problem for gradient verification.

use rand::seq::IteratorRandom;

use super::{batch_terms, total_loss, Batch, Forward, Model, ModelConfig};
use crate::datahub::{gen_synthetic, Dataset, SyntheticSpec};
use crate::diffcore::{grad_check, GradCheckReport, Var};
use crate::error::{Error, Result};
use crate::rng;

/// 4 users, 6 items, three attributes plus a residual chunk, chunk width 4,
/// raw features of size 8, two negatives per positive.
pub struct ToyProblem {
    pub dataset: Dataset,
    pub model: Model,
    pub batch: Batch,
}

pub fn toy_problem(seed: u64) -> Result<ToyProblem> {
    let spec = SyntheticSpec {
        n_users: 4,
        n_items: 6,
        value_counts: vec![2, 3, 4],
        d0_text: 8,
        d0_visual: 8,
        interactions_per_user: 3,
        noise: 0.1,
        affinity: 8.0,
        residual_chunk: true,
    };
    let dataset = gen_synthetic(&spec, seed)?;
    let mut config = ModelConfig {
        chunk_dim: 4,
        temperature: 0.2,
        alpha: 0.5,
        beta: 0.5,
        gamma: 0.5,
        lambda: 0.01,
        ..ModelConfig::default()
    };
    config.fit_to(&dataset);
    let model = Model::init(config, dataset.n_users(), dataset.n_items(), seed)?;
    let by_user = dataset.interactions.by_user();
    let mut batch = Batch {
        users: Vec::new(),
        pos: Vec::new(),
        neg: Vec::new(),
    };
    for (u, items) in by_user.iter().enumerate() {
        let mut r = rng::stream(seed, "toy.neg", u as u64, 0);
        let free = (0..dataset.n_items()).filter(|i| !items.contains(i));
        batch.users.push(u);
        batch.pos.push(items[0]);
        batch.neg.push(free.choose_multiple(&mut r, 2));
    }
    Ok(ToyProblem { dataset, model, batch })
}

/// Checks the tape gradients of every loss term and of the weighted total
/// against central differences over all parameter tensors.
pub fn gradcheck_toy(p: &ToyProblem, eps: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let params = p.model.params.tensors();
    let mut out = Vec::new();
    for name in ["bpr", "intra", "inter", "low", "total"] {
        let report = grad_check(&params, eps, |tape, vars: &[Var<'_>]| {
            let f = Forward::from_vars(tape, &p.model, vars)?;
            let t = batch_terms(&f, &p.dataset, &p.batch)?;
            let missing = || Error::Shape("loss term was pruned".into());
            match name {
                "bpr" => Ok(t.bpr),
                "intra" => t.intra.ok_or_else(missing),
                "inter" => t.inter.ok_or_else(missing),
                "low" => t.low.ok_or_else(missing),
                _ => total_loss(&f, &p.dataset, &p.batch).map(|(l, _)| l),
            }
        })?;
        out.push((name, report));
    }
    Ok(out)
}
