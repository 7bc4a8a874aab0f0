use std::path::Path;

use super::{top_n, MetricRow, Scorer};
use crate::datahub::{Dataset, DatasetSplit};
use crate::error::{Error, Result};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn write_all<R>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()>
where
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_all(
        path,
        &["metric", "n", "value", "users_counted"],
        rows.iter()
            .map(|r| [r.metric.clone(), r.n.to_string(), r.value.to_string(), r.users_counted.to_string()]),
    )
}

/// One chunk's part of one user-item score.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpRow {
    pub user: usize,
    pub item: usize,
    pub chunk: usize,
    pub score: f64,
    pub share: f64,
}

/// Per-chunk scores and shares for every requested pair.
pub fn interpretability_report(scorer: &Scorer, users: &[usize], items: &[usize]) -> Result<Vec<InterpRow>> {
    let mut rows = Vec::with_capacity(users.len() * items.len() * scorer.model.config.n_chunks());
    for &u in users {
        for &i in items {
            let b = scorer.breakdown(u, i)?;
            for (k, (&score, share)) in b.parts.iter().zip(b.shares()).enumerate() {
                rows.push(InterpRow {
                    user: u,
                    item: i,
                    chunk: k,
                    score,
                    share,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_interpretability_csv(path: &Path, ds: &Dataset, rows: &[InterpRow]) -> Result<()> {
    let ints = &ds.interactions;
    write_all(
        path,
        &["user_token", "item_token", "attr_name", "score", "share"],
        rows.iter().map(|r| {
            [
                ints.users.token(r.user).to_string(),
                ints.items.token(r.item).to_string(),
                ds.schema.chunk_name(r.chunk).to_string(),
                r.score.to_string(),
                r.share.to_string(),
            ]
        }),
    )
}

/// The `size` users whose training items most often carry `value` of
/// attribute `attr` (by share, then count, then index).
pub fn select_cohort(split: &DatasetSplit, ds: &Dataset, attr: usize, value: usize, size: usize) -> Result<Vec<usize>> {
    if attr >= ds.schema.n_attrs() {
        return Err(Error::Index {
            index: attr,
            size: ds.schema.n_attrs(),
        });
    }
    let mut scored: Vec<(f64, usize, usize)> = split
        .train
        .iter()
        .enumerate()
        .filter(|(_, items)| !items.is_empty())
        .map(|(u, items)| {
            let hits = items.iter().filter(|&&i| ds.labels.get(i, attr) == value).count();
            (hits as f64 / items.len() as f64, hits, u)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    Ok(scored.into_iter().take(size).map(|(_, _, u)| u).collect())
}

/// Mean fraction of top-`n` items at one attribute level, for one `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRow {
    pub xi: f64,
    pub level: usize,
    pub fraction: f64,
}

/// Re-ranks every cohort user's candidates with attribute `attr` scaled by
/// each `xi`, and reports the cohort-averaged level distribution of the top `n`.
pub fn controllability_report(
    scorer: &Scorer,
    split: &DatasetSplit,
    ds: &Dataset,
    cohort: &[usize],
    attr: usize,
    xis: &[f64],
    n: usize,
) -> Result<Vec<ControlRow>> {
    let cfg = &scorer.model.config;
    if attr >= cfg.n_attrs() {
        return Err(Error::Index {
            index: attr,
            size: cfg.n_attrs(),
        });
    }
    if cohort.is_empty() || n == 0 {
        return Err(Error::Config("controllability needs a non-empty cohort and n ≥ 1".into()));
    }
    let (levels, c) = (cfg.value_counts[attr], cfg.n_chunks());
    let mut frac = vec![vec![0.0; levels]; xis.len()];
    for &u in cohort {
        let parts = scorer.chunk_scores(u)?;
        for (x, &xi) in xis.iter().enumerate() {
            let scores: Vec<f64> = parts
                .chunks(c)
                .map(|p| p.iter().enumerate().map(|(k, &s)| if k == attr { xi * s } else { s }).sum())
                .collect();
            let top = top_n(&scores, |i| !split.is_train(u, i), n);
            for &i in &top {
                frac[x][ds.labels.get(i, attr)] += 1.0 / top.len() as f64;
            }
        }
    }
    let mut rows = Vec::with_capacity(xis.len() * levels);
    for (x, &xi) in xis.iter().enumerate() {
        for (level, f) in frac[x].iter().enumerate() {
            rows.push(ControlRow {
                xi,
                level,
                fraction: f / cohort.len() as f64,
            });
        }
    }
    Ok(rows)
}

pub fn write_controllability_csv(path: &Path, ds: &Dataset, attr: usize, rows: &[ControlRow]) -> Result<()> {
    let values = &ds.schema.attributes[attr].values;
    write_all(
        path,
        &["xi", "level_name", "fraction"],
        rows.iter()
            .map(|r| [r.xi.to_string(), values[r.level].clone(), r.fraction.to_string()]),
    )
}

/// What [`export_embeddings`] writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    /// Every chunk of users and of the three item sources.
    ChunksBySource,
    /// The fused item chunks of the named attributes.
    FusedByAttribute,
}

impl std::str::FromStr for ExportKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chunks-by-source" => Ok(ExportKind::ChunksBySource),
            "fused-by-attribute" => Ok(ExportKind::FusedByAttribute),
            _ => Err(Error::Config(format!(
                "unknown export `{s}` (expected chunks-by-source or fused-by-attribute)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportRow {
    pub entity: String,
    pub source: String,
    pub chunk_index: usize,
    pub attr_name: String,
    pub value_name: String,
    pub values: Vec<f64>,
}

fn export_rows(scorer: &Scorer, ds: &Dataset, kind: ExportKind) -> Vec<ExportRow> {
    let cfg = &scorer.model.config;
    let (cd, k_named) = (cfg.chunk_dim, cfg.n_attrs());
    let schema = &ds.schema;
    let value_name = |item: usize, k: usize| {
        if k < k_named {
            schema.attributes[k].values[ds.labels.get(item, k)].clone()
        } else {
            String::new()
        }
    };
    let mut rows = Vec::new();
    let mut push = |entity: &str, source: &str, k: usize, value: String, v: &[f64]| {
        rows.push(ExportRow {
            entity: entity.to_string(),
            source: source.to_string(),
            chunk_index: k,
            attr_name: schema.chunk_name(k).to_string(),
            value_name: value,
            values: v.to_vec(),
        })
    };
    let ints = &ds.interactions;
    match kind {
        ExportKind::ChunksBySource => {
            let users = scorer.model.params.get("user_emb");
            for u in 0..users.rows() {
                for (k, ch) in users.row(u).chunks(cd).enumerate() {
                    push(ints.users.token(u), "user_id", k, String::new(), ch);
                }
            }
            let t = &scorer.tables;
            for (name, table) in [("item_id", &t.id), ("textual", &t.text), ("visual", &t.visual)] {
                for i in 0..table.rows() {
                    for (k, ch) in table.row(i).chunks(cd).enumerate() {
                        push(ints.items.token(i), name, k, value_name(i, k), ch);
                    }
                }
            }
        }
        ExportKind::FusedByAttribute => {
            let fused = &scorer.tables.fused;
            for i in 0..fused.rows() {
                for k in 0..k_named {
                    push(ints.items.token(i), "fused", k, value_name(i, k), &fused.row(i)[k * cd..(k + 1) * cd]);
                }
            }
        }
    }
    rows
}

/// Writes chunk vectors as CSV and returns the number of rows.
pub fn export_embeddings(scorer: &Scorer, ds: &Dataset, kind: ExportKind, path: &Path) -> Result<usize> {
    let rows = export_rows(scorer, ds, kind);
    let cd = scorer.model.config.chunk_dim;
    let mut header: Vec<String> = ["entity_token", "source", "chunk_index", "attr_name", "value_name"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=cd).map(|j| format!("f{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_all(
        path,
        &header,
        rows.iter().map(|r| {
            let mut rec = vec![
                r.entity.clone(),
                r.source.clone(),
                r.chunk_index.to_string(),
                r.attr_name.clone(),
                r.value_name.clone(),
            ];
            rec.extend(r.values.iter().map(f64::to_string));
            rec
        }),
    )?;
    Ok(rows.len())
}

pub fn read_export(path: &Path) -> Result<Vec<ExportRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() < 6 {
            return Err(Error::parse(path, line, "too few columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(path, line, e.to_string()));
        out.push(ExportRow {
            entity: rec[0].to_string(),
            source: rec[1].to_string(),
            chunk_index: rec[2].parse().map_err(|_| Error::parse(path, line, "bad chunk_index"))?,
            attr_name: rec[3].to_string(),
            value_name: rec[4].to_string(),
            values: rec.iter().skip(5).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}
