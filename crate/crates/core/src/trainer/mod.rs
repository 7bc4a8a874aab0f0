//! Mini-batch Adam training, checkpoints, ablations and grid search.

mod adam;
mod checkpoint;
mod experiments;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_TAG};
pub use experiments::{
    grid_search, run_ablation, AblationRow, GridResult, GridRow, GridSpec, Variant, WEIGHT_LADDER,
};

use crate::datahub::{sample_negatives, split_dataset, Dataset, DatasetSplit, Holdout};
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_model, metric, Scorer};
use crate::model::{is_bias, total_loss, Batch, Forward, LossReport, Model, ModelConfig, EMBEDDING_NAMES};
use crate::rng;

/// Optimisation and protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub n_neg: usize,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub seed: u64,
    /// L2 coefficient on dense weight matrices (not embeddings or biases).
    pub weight_decay: f64,
    /// Drop zero-weighted loss terms from the graph instead of scaling them by zero.
    pub prune_zero_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 1024,
            n_neg: 4,
            max_epochs: 300,
            eval_every: 5,
            patience: 50,
            seed: 0,
            weight_decay: 0.0,
            prune_zero_weights: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.n_neg == 0 {
            return bad("n_neg must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.patience < self.eval_every {
            return bad(format!(
                "patience ({}) must be at least eval_every ({})",
                self.patience, self.eval_every
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }
}

/// One epoch of the training history. Loss columns are empty for the
/// initial evaluation; validation columns are empty between evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: Option<LossReport>,
    pub val_recall20: Option<f64>,
    pub val_ndcg20: Option<f64>,
}

pub fn write_history_csv(path: &Path, history: &[HistoryRow]) -> Result<()> {
    use std::io::Write;
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "epoch,loss_total,loss_bpr,loss_intra,loss_inter,loss_low,val_recall20,val_ndcg20").map_err(io)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for h in history {
        let l = h.loss;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            h.epoch,
            opt(l.map(|l| l.total)),
            opt(l.map(|l| l.bpr)),
            opt(l.map(|l| l.intra)),
            opt(l.map(|l| l.inter)),
            opt(l.map(|l| l.low)),
            opt(h.val_recall20),
            opt(h.val_ndcg20)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The best-validation model.
    pub best: Checkpoint,
    pub history: Vec<HistoryRow>,
    /// Last epoch actually run.
    pub last_epoch: usize,
}

/// Validation Recall@20 and NDCG@20.
pub fn validate(model: &Model, ds: &Dataset, split: &DatasetSplit) -> Result<(f64, f64)> {
    let scorer = Scorer::new(model, ds)?;
    let rows = evaluate_model(&scorer, split, Holdout::Validation, &[20])?;
    Ok((
        metric(&rows, "recall", 20).unwrap_or(0.0),
        metric(&rows, "ndcg", 20).unwrap_or(0.0),
    ))
}

/// One optimisation step on `batch`. Returns the weighted loss report.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    ds: &Dataset,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let tape = Tape::new();
    let mut f = Forward::bind(&tape, model)?;
    f.prune_zero_weights = cfg.prune_zero_weights;
    let (loss, report) = total_loss(&f, ds, batch)?;
    if !report.total.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {}", report.total)));
    }
    let mut grads = tape.backward(loss)?;
    let mut g = model.params.zeros_like();
    for (name, var) in f.vars() {
        let mut t = grads.take(var);
        if cfg.weight_decay > 0.0 && !is_bias(name) && !EMBEDDING_NAMES.contains(&name) {
            let w = model.params.get(name);
            for (gi, wi) in t.data_mut().iter_mut().zip(w.data()) {
                *gi += 2.0 * cfg.weight_decay * wi;
            }
        }
        *g.get_mut(name).expect("same names") = t;
    }
    adam_step(&mut model.params, &g, adam, cfg.lr)?;
    Ok(report)
}

/// The batches of one epoch, negatives included.
pub fn epoch_batches(split: &DatasetSplit, cfg: &TrainConfig, epoch: usize) -> Result<Vec<Batch>> {
    let mut pairs = split.train_pairs();
    let n_train = pairs.len() as u64;
    pairs.shuffle(&mut rng::stream(cfg.seed, "shuffle", epoch as u64, 0));
    let mut batches = Vec::with_capacity(pairs.len().div_ceil(cfg.batch_size));
    for (b, chunk) in pairs.chunks(cfg.batch_size).enumerate() {
        let mut batch = Batch {
            users: Vec::with_capacity(chunk.len()),
            pos: Vec::with_capacity(chunk.len()),
            neg: Vec::with_capacity(chunk.len()),
        };
        for (j, &(u, i)) in chunk.iter().enumerate() {
            let step = epoch as u64 * n_train + (b * cfg.batch_size + j) as u64;
            batch.users.push(u);
            batch.pos.push(i);
            batch.neg.push(sample_negatives(split, u, cfg.n_neg, cfg.seed, step)?);
        }
        batches.push(batch);
    }
    Ok(batches)
}

pub fn train(ds: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(ds, model_cfg, cfg, |_| Ok(()))
}

/// Trains with the split derived from `cfg.seed`; `on_eval` receives the
/// current model at every evaluation.
pub fn train_with(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_eval: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut mcfg = model_cfg.clone();
    mcfg.fit_to(ds);
    let split = split_dataset(&ds.interactions, cfg.seed)?;
    if split.train.iter().all(Vec::is_empty) {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut model = Model::init(mcfg, ds.n_users(), ds.n_items(), cfg.seed)?;
    let mut adam = AdamState::new(&model.params);
    let n_train = split.train_pairs().len() as u64;

    let snapshot = |model: &Model, epoch: usize, history: &[HistoryRow], val: (f64, f64)| Checkpoint {
        model: model.clone(),
        train_config: cfg.clone(),
        epoch,
        history: history.to_vec(),
        val_recall20: val.0,
        val_ndcg20: val.1,
        rng: RngState {
            seed: cfg.seed,
            step: epoch as u64 * n_train,
        },
    };

    let val = validate(&model, ds, &split)?;
    let mut history = vec![HistoryRow {
        epoch: 0,
        loss: None,
        val_recall20: Some(val.0),
        val_ndcg20: Some(val.1),
    }];
    let mut best = snapshot(&model, 0, &history, val);
    on_eval(&best)?;
    let mut last_epoch = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut sum = LossReport::default();
        for batch in epoch_batches(&split, cfg, epoch)? {
            sum += train_step(&mut model, &mut adam, ds, &batch, cfg)?;
        }
        last_epoch = epoch;
        let mut row = HistoryRow {
            epoch,
            loss: Some(sum),
            val_recall20: None,
            val_ndcg20: None,
        };
        let is_eval = epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs;
        if is_eval {
            let val = validate(&model, ds, &split)?;
            row.val_recall20 = Some(val.0);
            row.val_ndcg20 = Some(val.1);
            history.push(row);
            let current = snapshot(&model, epoch, &history, val);
            on_eval(&current)?;
            if val.0 > best.val_recall20 {
                best = current;
            }
            if epoch - best.epoch >= cfg.patience {
                break;
            }
        } else {
            history.push(row);
        }
    }
    best.history = history.clone();
    Ok(TrainOutcome {
        best,
        history,
        last_epoch,
    })
}
