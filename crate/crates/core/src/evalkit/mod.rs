//! Ranking metrics, disentanglement probes and analysis reports.
//!
//! Everything here is read-only over a trained [`Model`] and deterministic.

mod probes;
mod reports;

pub use probes::{
    chunk_probe, crossmodal_retrieval, value_probe, ChunkProbe, CrossModalAccuracy, ProbeMode, ProbeReport,
};
pub use reports::{
    controllability_report, export_embeddings, interpretability_report, read_export, select_cohort,
    write_controllability_csv, write_interpretability_csv, write_metrics_csv, ControlRow, ExportKind, ExportRow,
    InterpRow,
};

use rand::Rng;

use crate::datahub::{Dataset, DatasetSplit, Holdout};
use crate::diffcore::softplus_scalar;
use crate::error::{Error, Result};
use crate::model::{dot, ItemTables, Model, ScoreBreakdown};
use crate::rng;

/// Inference view of a model: item tables computed once.
pub struct Scorer<'a> {
    pub model: &'a Model,
    pub tables: ItemTables,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a Model, ds: &Dataset) -> Result<Self> {
        Ok(Scorer {
            model,
            tables: model.item_tables(ds)?,
        })
    }

    pub fn n_items(&self) -> usize {
        self.tables.fused.rows()
    }

    fn user_row(&self, user: usize) -> Result<&[f64]> {
        let t = self.model.params.get("user_emb");
        if user >= t.rows() {
            return Err(Error::Index {
                index: user,
                size: t.rows(),
            });
        }
        Ok(t.row(user))
    }

    /// Per-chunk scores, `[I·C]` row-major.
    pub fn chunk_scores(&self, user: usize) -> Result<Vec<f64>> {
        let u = self.user_row(user)?;
        let cd = self.model.config.chunk_dim;
        let mut out = Vec::with_capacity(self.n_items() * self.model.config.n_chunks());
        for i in 0..self.n_items() {
            let y = self.tables.fused.row(i);
            out.extend(u.chunks(cd).zip(y.chunks(cd)).map(|(a, b)| softplus_scalar(dot(a, b))));
        }
        Ok(out)
    }

    /// Total scores of every item, summed chunk by chunk in index order.
    pub fn scores(&self, user: usize) -> Result<Vec<f64>> {
        let c = self.model.config.n_chunks();
        Ok(self.chunk_scores(user)?.chunks(c).map(|p| p.iter().sum()).collect())
    }

    pub fn breakdown(&self, user: usize, item: usize) -> Result<ScoreBreakdown> {
        if item >= self.n_items() {
            return Err(Error::Index {
                index: item,
                size: self.n_items(),
            });
        }
        let u = self.user_row(user)?;
        let cd = self.model.config.chunk_dim;
        let y = self.tables.fused.row(item);
        Ok(ScoreBreakdown::from_parts(
            u.chunks(cd).zip(y.chunks(cd)).map(|(a, b)| softplus_scalar(dot(a, b))).collect(),
        ))
    }
}

/// Top-`n` of a user's ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Indices of the `n` highest scores among candidates, ties to the lower index.
pub fn top_n(scores: &[f64], is_candidate: impl Fn(usize) -> bool, n: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len()).filter(|&i| is_candidate(i)).collect();
    let order = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if n < cand.len() {
        cand.select_nth_unstable_by(n, order);
        cand.truncate(n);
    }
    cand.sort_by(order);
    cand
}

/// Ranks all non-training items for `user` and keeps the top `n`.
pub fn rank_items(scorer: &Scorer, split: &DatasetSplit, user: usize, n: usize) -> Result<RankingResult> {
    if user >= split.n_users() {
        return Err(Error::Index {
            index: user,
            size: split.n_users(),
        });
    }
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let scores = scorer.scores(user)?;
    let items = top_n(&scores, |i| !split.is_train(user, i), n);
    let scores = items.iter().map(|&i| scores[i]).collect();
    Ok(RankingResult { user, items, scores })
}

/// `|top-n ∩ test| / |test|`; zero for an empty test set.
pub fn recall_at_n(ranking: &[usize], test: &[usize], n: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let hits = ranking.iter().take(n).filter(|i| test.contains(i)).count();
    hits as f64 / test.len() as f64
}

/// Binary-relevance NDCG with a `log2(rank + 1)` discount, normalised by the
/// best achievable DCG for `min(|test|, n)` hits.
pub fn ndcg_at_n(ranking: &[usize], test: &[usize], n: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranking
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| test.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..test.len().min(n)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / ideal
}

/// One line of a metric report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub n: usize,
    pub value: f64,
    pub users_counted: usize,
}

/// Mean Recall@n and NDCG@n over users with a non-empty holdout, for each `n`.
pub fn evaluate_with(
    mut scores: impl FnMut(usize) -> Result<Vec<f64>>,
    split: &DatasetSplit,
    holdout: Holdout,
    ns: &[usize],
) -> Result<Vec<MetricRow>> {
    let n_max = ns.iter().copied().max().unwrap_or(0);
    if n_max == 0 || ns.contains(&0) {
        return Err(Error::Config("metric cutoffs must be at least 1".into()));
    }
    let mut recall = vec![0.0; ns.len()];
    let mut ndcg = vec![0.0; ns.len()];
    let mut counted = 0;
    for (u, test) in split.holdout(holdout).iter().enumerate() {
        if test.is_empty() {
            continue;
        }
        let s = scores(u)?;
        let ranking = top_n(&s, |i| !split.is_train(u, i), n_max);
        for (j, &n) in ns.iter().enumerate() {
            recall[j] += recall_at_n(&ranking, test, n);
            ndcg[j] += ndcg_at_n(&ranking, test, n);
        }
        counted += 1;
    }
    let mean = |x: f64| if counted == 0 { 0.0 } else { x / counted as f64 };
    let mut rows = Vec::with_capacity(2 * ns.len());
    for (j, &n) in ns.iter().enumerate() {
        rows.push(MetricRow {
            metric: "recall".into(),
            n,
            value: mean(recall[j]),
            users_counted: counted,
        });
        rows.push(MetricRow {
            metric: "ndcg".into(),
            n,
            value: mean(ndcg[j]),
            users_counted: counted,
        });
    }
    Ok(rows)
}

pub fn evaluate_model(scorer: &Scorer, split: &DatasetSplit, holdout: Holdout, ns: &[usize]) -> Result<Vec<MetricRow>> {
    evaluate_with(|u| scorer.scores(u), split, holdout, ns)
}

/// Ranks by training interaction counts.
pub fn popularity_baseline(split: &DatasetSplit, holdout: Holdout, ns: &[usize]) -> Result<Vec<MetricRow>> {
    let counts: Vec<f64> = split.train_item_counts().iter().map(|&c| c as f64).collect();
    evaluate_with(|_| Ok(counts.clone()), split, holdout, ns)
}

/// Ranks by seeded uniform noise.
pub fn random_baseline(split: &DatasetSplit, holdout: Holdout, ns: &[usize], seed: u64) -> Result<Vec<MetricRow>> {
    let n = split.n_items();
    evaluate_with(
        |u| {
            let mut r = rng::stream(seed, "baseline.random", u as u64, 0);
            Ok((0..n).map(|_| r.random::<f64>()).collect())
        },
        split,
        holdout,
        ns,
    )
}

/// Looks up one metric value in a report.
pub fn metric(rows: &[MetricRow], name: &str, n: usize) -> Option<f64> {
    rows.iter().find(|r| r.metric == name && r.n == n).map(|r| r.value)
}
