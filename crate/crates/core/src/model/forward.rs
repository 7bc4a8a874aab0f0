use std::collections::BTreeMap;

use super::{Activation, Model, ModelConfig};
use crate::datahub::{Dataset, Modality};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Parameters bound to a tape, plus the configuration they were built for.
pub struct Forward<'t> {
    pub tape: &'t Tape,
    pub config: ModelConfig,
    vars: BTreeMap<String, Var<'t>>,
    /// Leave zero-weighted loss terms out of the graph instead of scaling them by zero.
    pub prune_zero_weights: bool,
}

impl<'t> Forward<'t> {
    /// Binds every parameter as a trainable leaf.
    pub fn bind(tape: &'t Tape, model: &Model) -> Result<Self> {
        let vars = model.params.iter().map(|(k, t)| (k.to_string(), tape.param(t.clone()))).collect();
        Ok(Self::new(tape, model.config.clone(), vars))
    }

    /// Binds every parameter as a constant, for inference.
    pub fn constant(tape: &'t Tape, model: &Model) -> Result<Self> {
        let vars = model.params.iter().map(|(k, t)| (k.to_string(), tape.constant(t.clone()))).collect();
        Ok(Self::new(tape, model.config.clone(), vars))
    }

    /// Binds already-recorded variables, given in parameter-name order.
    pub fn from_vars(tape: &'t Tape, model: &Model, vars: &[Var<'t>]) -> Result<Self> {
        if vars.len() != model.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter variables, got {}",
                model.params.len(),
                vars.len()
            )));
        }
        let vars = model.params.names().map(String::from).zip(vars.iter().copied()).collect();
        Ok(Self::new(tape, model.config.clone(), vars))
    }

    fn new(tape: &'t Tape, config: ModelConfig, vars: BTreeMap<String, Var<'t>>) -> Self {
        Forward {
            tape,
            config,
            vars,
            prune_zero_weights: false,
        }
    }

    pub fn var(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Shape(format!("no parameter named `{name}`")))
    }

    /// Bound parameters in name order.
    pub fn vars(&self) -> impl Iterator<Item = (&str, Var<'t>)> + '_ {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Chunked ID, textual and visual representations of `items`.
    pub fn items(&self, ds: &Dataset, items: &[usize]) -> Result<ItemReps<'t>> {
        let id = self.var("item_emb")?.gather_rows(items)?;
        let text = project_batch(self, self.tape.constant(ds.text.rows(items)), Modality::Textual)?;
        let visual = project_batch(self, self.tape.constant(ds.visual.rows(items)), Modality::Visual)?;
        Ok(ItemReps { id, text, visual })
    }

    fn chunk_rows(&self, x: Var<'t>) -> Result<Var<'t>> {
        let n = x.shape()[0];
        x.reshape(&[n * self.config.n_chunks(), self.config.chunk_dim])
    }
}

/// Item-side representations, each `[N, d]`.
#[derive(Debug, Clone, Copy)]
pub struct ItemReps<'t> {
    pub id: Var<'t>,
    pub text: Var<'t>,
    pub visual: Var<'t>,
}

/// The four representation sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    User,
    Item,
    Textual,
    Visual,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::User, Source::Item, Source::Textual, Source::Visual];

    pub fn name(self) -> &'static str {
        match self {
            Source::User => "user",
            Source::Item => "item",
            Source::Textual => "textual",
            Source::Visual => "visual",
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" | "user_id" => Ok(Source::User),
            "item" | "item_id" => Ok(Source::Item),
            "textual" | "text" => Ok(Source::Textual),
            "visual" => Ok(Source::Visual),
            _ => Err(Error::Config(format!(
                "unknown source `{s}` (expected user_id, item_id, textual or visual)"
            ))),
        }
    }
}

/// `act(X Wᵀ + b)` for raw features `[N, d0] → [N, d]`.
pub fn project_batch<'t>(f: &Forward<'t>, x: Var<'t>, m: Modality) -> Result<Var<'t>> {
    let w = f.var(&format!("proj.{}.w", m.name()))?;
    let b = f.var(&format!("proj.{}.b", m.name()))?;
    let z = x.matmul_nt(w)?.add_row(b)?;
    Ok(match f.config.activation {
        Activation::Tanh => z.tanh(),
        Activation::Softplus => z.softplus(),
        Activation::Identity => z,
    })
}

/// Cross-entropy of each chunk against its own index, `[N, d] → [N·C]`.
pub fn intra_chunk_losses<'t>(f: &Forward<'t>, src: Source, x: Var<'t>) -> Result<Var<'t>> {
    let c = f.config.n_chunks();
    let w = f.var(&format!("intra.{}.w", src.name()))?;
    let b = f.var(&format!("intra.{}.b", src.name()))?;
    let rows = f.chunk_rows(x)?;
    let n = rows.shape()[0];
    let targets: Vec<usize> = (0..n).map(|r| r % c).collect();
    rows.matmul_nt(w)?.add_row(b)?.cross_entropy(&targets)
}

pub fn intra_modality_loss<'t>(f: &Forward<'t>, sources: &[(Source, Var<'t>)]) -> Result<Var<'t>> {
    let mut total: Option<Var<'t>> = None;
    for &(src, x) in sources {
        let l = intra_chunk_losses(f, src, x)?.sum();
        total = Some(match total {
            Some(t) => t.add(l)?,
            None => l,
        });
    }
    total.ok_or_else(|| Error::Shape("intra loss over no sources".into()))
}

/// Contrastive chunk alignment over the pairs (ID, textual), (ID, visual)
/// and (textual, visual), in both directions.
pub fn inter_modality_loss<'t>(f: &Forward<'t>, id: Var<'t>, text: Var<'t>, visual: Var<'t>) -> Result<Var<'t>> {
    let cfg = &f.config;
    if !(cfg.temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {}", cfg.temperature)));
    }
    let blocks = if cfg.residual_chunk && !cfg.inter_residual {
        cfg.n_attrs()
    } else {
        cfg.n_chunks()
    };
    if blocks == 0 {
        return Ok(f.tape.constant(Tensor::scalar(0.0)));
    }
    let prep = |x: Var<'t>| -> Result<Var<'t>> {
        let n = x.shape()[0];
        let x = if blocks < cfg.n_chunks() {
            x.slice(0..blocks * cfg.chunk_dim)?
        } else {
            x
        };
        if cfg.normalize_contrastive {
            x.reshape(&[n * blocks, cfg.chunk_dim])?.normalize_rows().reshape(&[n, blocks * cfg.chunk_dim])
        } else {
            Ok(x)
        }
    };
    let (i, t, v) = (prep(id)?, prep(text)?, prep(visual)?);
    let n = i.shape()[0];
    let targets: Vec<usize> = (0..n * blocks).map(|r| r % blocks).collect();
    let inv_tau = 1.0 / cfg.temperature;
    let mut terms = Vec::with_capacity(6);
    for (a, b) in [(i, t), (i, v), (t, v)] {
        terms.push(a.block_gram(b, blocks)?.scale(inv_tau).cross_entropy(&targets)?.sum());
        terms.push(b.block_gram(a, blocks)?.scale(inv_tau).cross_entropy(&targets)?.sum());
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = total.add(t)?;
    }
    Ok(total)
}

/// Attention fusion of the three item sources.
///
/// Returns the weights `[N·C, 3]` over (ID, textual, visual) and the fused
/// representation `[N, d]`.
pub fn attention_fuse<'t>(
    f: &Forward<'t>,
    id: Var<'t>,
    text: Var<'t>,
    visual: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let n = id.shape()[0];
    let (i, t, v) = (f.chunk_rows(id)?, f.chunk_rows(text)?, f.chunk_rows(visual)?);
    let s = i.add(t)?.add(v)?;
    let h = s.matmul_nt(f.var("attn.w1")?)?.add_row(f.var("attn.b")?)?.tanh();
    let a = h.matmul_nt(f.var("attn.w2")?)?.softmax_rows();
    let fused = i
        .row_scale(a.slice(0..1)?)?
        .add(t.row_scale(a.slice(1..2)?)?)?
        .add(v.row_scale(a.slice(2..3)?)?)?;
    Ok((a, fused.reshape(&[n, f.config.dim()])?))
}

/// Attribute-value classification of each named fused chunk.
/// `labels[r]` holds the `K` value indices of row `r`.
pub fn low_level_loss<'t>(f: &Forward<'t>, fused: Var<'t>, labels: &[&[usize]]) -> Result<Var<'t>> {
    let cfg = &f.config;
    let n = fused.shape()[0];
    if labels.len() != n {
        return Err(Error::Shape(format!("{} label rows for {n} items", labels.len())));
    }
    let mut total: Option<Var<'t>> = None;
    for (k, &a) in cfg.value_counts.iter().enumerate() {
        let mut tgt = Vec::with_capacity(n);
        for row in labels {
            let l = *row
                .get(k)
                .ok_or_else(|| Error::Shape(format!("label row has {} attributes, need {}", row.len(), k + 1)))?;
            if l >= a {
                return Err(Error::Index { index: l, size: a });
            }
            tgt.push(l);
        }
        let chunk = fused.slice(k * cfg.chunk_dim..(k + 1) * cfg.chunk_dim)?;
        let l = chunk
            .matmul_nt(f.var(&format!("low.{k}.w"))?)?
            .add_row(f.var(&format!("low.{k}.b"))?)?
            .cross_entropy(&tgt)?
            .sum();
        total = Some(match total {
            Some(t) => t.add(l)?,
            None => l,
        });
    }
    Ok(total.unwrap_or_else(|| f.tape.constant(Tensor::scalar(0.0))))
}

/// Per-chunk softplus scores `[N·C]` and their per-row totals `[N]`.
pub fn score_chunks<'t>(f: &Forward<'t>, user: Var<'t>, item: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let n = user.shape()[0];
    let parts = f.chunk_rows(user)?.rowdot(f.chunk_rows(item)?)?.softplus();
    let totals = parts.reshape(&[n, f.config.n_chunks()])?.sum_cols();
    Ok((parts, totals))
}

/// `−Σ log σ(s⁺ − s⁻) + λ·reg` over aligned triplet scores.
pub fn bpr_loss<'t>(pos: Var<'t>, neg: Var<'t>, reg: Option<Var<'t>>, lambda: f64) -> Result<Var<'t>> {
    let rank = pos.sub(neg)?.log_sigmoid().sum().scale(-1.0);
    match reg {
        Some(r) => rank.add(r.scale(lambda)),
        None => Ok(rank),
    }
}

/// A training batch: positives `(users[j], pos[j])`, each with its own negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub users: Vec<usize>,
    pub pos: Vec<usize>,
    pub neg: Vec<Vec<usize>>,
}

/// Weighted loss components of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub bpr: f64,
    pub intra: f64,
    pub inter: f64,
    pub low: f64,
}

impl std::ops::AddAssign for LossReport {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.bpr += o.bpr;
        self.intra += o.intra;
        self.inter += o.inter;
        self.low += o.low;
    }
}

/// Unweighted loss terms of one batch; a term is `None` when pruned.
#[derive(Debug, Clone, Copy)]
pub struct BatchTerms<'t> {
    pub bpr: Var<'t>,
    pub intra: Option<Var<'t>>,
    pub inter: Option<Var<'t>>,
    pub low: Option<Var<'t>>,
}

pub fn batch_terms<'t>(f: &Forward<'t>, ds: &Dataset, batch: &Batch) -> Result<BatchTerms<'t>> {
    let b = batch.users.len();
    if b == 0 || batch.pos.len() != b || batch.neg.len() != b {
        return Err(Error::Shape(format!(
            "batch has {} users, {} positives, {} negative lists",
            b,
            batch.pos.len(),
            batch.neg.len()
        )));
    }
    let n_neg = batch.neg[0].len();
    if n_neg == 0 || batch.neg.iter().any(|n| n.len() != n_neg) {
        return Err(Error::Shape("every positive needs the same non-zero number of negatives".into()));
    }
    let n_items = ds.n_items();
    for &i in batch.pos.iter().chain(batch.neg.iter().flatten()) {
        if i >= n_items {
            return Err(Error::Index { index: i, size: n_items });
        }
    }

    // Project each distinct item once, then gather.
    let mut uniq: Vec<usize> = batch.pos.iter().chain(batch.neg.iter().flatten()).copied().collect();
    uniq.sort_unstable();
    uniq.dedup();
    let slot = |i: usize| uniq.binary_search(&i).expect("item collected above");
    let pos_rows: Vec<usize> = batch.pos.iter().map(|&i| slot(i)).collect();
    let pos_rep: Vec<usize> = pos_rows.iter().flat_map(|&r| std::iter::repeat_n(r, n_neg)).collect();
    let neg_rows: Vec<usize> = batch.neg.iter().flatten().map(|&i| slot(i)).collect();
    let user_rep: Vec<usize> = batch.users.iter().flat_map(|&u| std::iter::repeat_n(u, n_neg)).collect();

    let reps = f.items(ds, &uniq)?;
    let (_, fused) = attention_fuse(f, reps.id, reps.text, reps.visual)?;
    let user_emb = f.var("user_emb")?;
    let users = user_emb.gather_rows(&batch.users)?;
    let users_rep = user_emb.gather_rows(&user_rep)?;
    let (_, s_pos) = score_chunks(f, users_rep, fused.gather_rows(&pos_rep)?)?;
    let (_, s_neg) = score_chunks(f, users_rep, fused.gather_rows(&neg_rows)?)?;

    // Squared norms of the ID rows, once per triplet.
    let id_pos = reps.id.gather_rows(&pos_rows)?;
    let reg = users
        .sum_squares()
        .add(id_pos.sum_squares())?
        .scale(n_neg as f64)
        .add(reps.id.gather_rows(&neg_rows)?.sum_squares())?;
    let bpr = bpr_loss(s_pos, s_neg, Some(reg), f.config.lambda)?;

    let cfg = &f.config;
    let keep = |w: f64| w != 0.0 || !f.prune_zero_weights;
    let (text_pos, visual_pos) = (reps.text.gather_rows(&pos_rows)?, reps.visual.gather_rows(&pos_rows)?);
    let intra = if keep(cfg.alpha) {
        Some(intra_modality_loss(
            f,
            &[
                (Source::User, users),
                (Source::Item, id_pos),
                (Source::Textual, text_pos),
                (Source::Visual, visual_pos),
            ],
        )?)
    } else {
        None
    };
    let inter = if keep(cfg.beta) {
        Some(inter_modality_loss(f, id_pos, text_pos, visual_pos)?)
    } else {
        None
    };
    let low = if keep(cfg.gamma) {
        let labels: Vec<&[usize]> = batch.pos.iter().map(|&i| ds.labels.item(i)).collect();
        Some(low_level_loss(f, fused.gather_rows(&pos_rows)?, &labels)?)
    } else {
        None
    };
    Ok(BatchTerms { bpr, intra, inter, low })
}

/// `L_BPR + α·intra + β·inter + γ·low`, the disentangling terms summed over
/// the batch's positive pairs. The report holds the weighted components.
pub fn total_loss<'t>(f: &Forward<'t>, ds: &Dataset, batch: &Batch) -> Result<(Var<'t>, LossReport)> {
    let terms = batch_terms(f, ds, batch)?;
    let cfg = &f.config;
    let mut total = terms.bpr;
    let mut report = LossReport {
        bpr: terms.bpr.item(),
        ..LossReport::default()
    };
    for (term, w, slot) in [
        (terms.intra, cfg.alpha, &mut report.intra),
        (terms.inter, cfg.beta, &mut report.inter),
        (terms.low, cfg.gamma, &mut report.low),
    ] {
        if let Some(t) = term {
            let l = t.scale(w);
            *slot = l.item();
            total = total.add(l)?;
        }
    }
    report.total = total.item();
    Ok((total, report))
}
