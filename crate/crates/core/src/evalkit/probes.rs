use super::Scorer;
use crate::datahub::Dataset;
use crate::diffcore::{Tape, Tensor};
use crate::error::Result;
use crate::model::{dot, Source};

/// Which classifier a probe uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbeMode {
    /// The model's own intra and attribute-value classifiers.
    #[default]
    Trained,
    /// A softmax regression fitted afresh on the probed vectors.
    Refit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkProbe {
    pub source: Source,
    pub accuracy: f64,
    pub per_chunk: Vec<f64>,
    pub n_vectors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossModalAccuracy {
    pub from: Source,
    pub to: Source,
    pub accuracy: f64,
}

/// All probes of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub chunks: Vec<ChunkProbe>,
    pub values: Vec<f64>,
    pub crossmodal: Vec<CrossModalAccuracy>,
}

impl ProbeReport {
    pub fn compute(scorer: &Scorer, ds: &Dataset, mode: ProbeMode) -> Result<Self> {
        Ok(ProbeReport {
            chunks: Source::ALL
                .iter()
                .map(|&s| chunk_probe(scorer, s, mode))
                .collect::<Result<_>>()?,
            values: value_probe(scorer, ds, mode)?,
            crossmodal: crossmodal_retrieval(scorer),
        })
    }
}

fn table<'s>(scorer: &'s Scorer, src: Source) -> &'s Tensor {
    match src {
        Source::User => scorer.model.params.get("user_emb"),
        Source::Item => &scorer.tables.id,
        Source::Textual => &scorer.tables.text,
        Source::Visual => &scorer.tables.visual,
    }
}

/// Index of the largest entry, ties to the lowest index.
fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

fn linear_argmax(w: &Tensor, b: &Tensor, x: &[f64]) -> usize {
    let logits: Vec<f64> = (0..w.rows()).map(|c| dot(w.row(c), x) + b.data()[c]).collect();
    argmax(&logits)
}

/// Fits `softmax(X Wᵀ + b)` by full-batch gradient descent on mean cross-entropy.
fn fit_softmax(x: &Tensor, y: &[usize], classes: usize) -> Result<(Tensor, Tensor)> {
    const STEPS: usize = 300;
    const LR: f64 = 0.5;
    let mut w = Tensor::zeros(&[classes, x.cols()]);
    let mut b = Tensor::zeros(&[classes]);
    let scale = 1.0 / y.len() as f64;
    for _ in 0..STEPS {
        let tape = Tape::new();
        let (wv, bv) = (tape.param(w.clone()), tape.param(b.clone()));
        let loss = tape
            .constant(x.clone())
            .matmul_nt(wv)?
            .add_row(bv)?
            .cross_entropy(y)?
            .sum()
            .scale(scale);
        let g = tape.backward(loss)?;
        for (p, gp) in [(&mut w, g.get(wv)), (&mut b, g.get(bv))] {
            for (a, d) in p.data_mut().iter_mut().zip(gp.data()) {
                *a -= LR * d;
            }
        }
    }
    Ok((w, b))
}

/// How often each chunk's content is classified as its own index.
pub fn chunk_probe(scorer: &Scorer, src: Source, mode: ProbeMode) -> Result<ChunkProbe> {
    let cfg = &scorer.model.config;
    let (c, cd) = (cfg.n_chunks(), cfg.chunk_dim);
    let t = table(scorer, src);
    let n = t.rows();
    let (w, b) = match mode {
        ProbeMode::Trained => (
            scorer.model.params.get(&format!("intra.{}.w", src.name())).clone(),
            scorer.model.params.get(&format!("intra.{}.b", src.name())).clone(),
        ),
        ProbeMode::Refit => {
            let x = Tensor::matrix(n * c, cd, t.data().to_vec())?;
            let y: Vec<usize> = (0..n * c).map(|r| r % c).collect();
            fit_softmax(&x, &y, c)?
        }
    };
    let mut hits = vec![0usize; c];
    for r in 0..n {
        for (k, chunk) in t.row(r).chunks(cd).enumerate() {
            if linear_argmax(&w, &b, chunk) == k {
                hits[k] += 1;
            }
        }
    }
    Ok(ChunkProbe {
        source: src,
        accuracy: hits.iter().sum::<usize>() as f64 / (n * c) as f64,
        per_chunk: hits.iter().map(|&h| h as f64 / n as f64).collect(),
        n_vectors: n,
    })
}

/// Attribute-value accuracy of the fused chunks, per attribute.
pub fn value_probe(scorer: &Scorer, ds: &Dataset, mode: ProbeMode) -> Result<Vec<f64>> {
    let cfg = &scorer.model.config;
    let cd = cfg.chunk_dim;
    let fused = &scorer.tables.fused;
    let n = fused.rows();
    let mut out = Vec::with_capacity(cfg.n_attrs());
    for (k, &a) in cfg.value_counts.iter().enumerate() {
        let chunk = |i: usize| &fused.row(i)[k * cd..(k + 1) * cd];
        let y: Vec<usize> = (0..n).map(|i| ds.labels.get(i, k)).collect();
        let (w, b) = match mode {
            ProbeMode::Trained => (
                scorer.model.params.get(&format!("low.{k}.w")).clone(),
                scorer.model.params.get(&format!("low.{k}.b")).clone(),
            ),
            ProbeMode::Refit => {
                let x = Tensor::matrix(n, cd, (0..n).flat_map(|i| chunk(i).to_vec()).collect())?;
                fit_softmax(&x, &y, a)?
            }
        };
        let hits = (0..n).filter(|&i| linear_argmax(&w, &b, chunk(i)) == y[i]).count();
        out.push(hits as f64 / n as f64);
    }
    Ok(out)
}

/// For each ordered pair of item sources, how often chunk `k` of the first
/// has its largest dot product with chunk `k` of the second (ties to the
/// lowest index).
pub fn crossmodal_retrieval(scorer: &Scorer) -> Vec<CrossModalAccuracy> {
    let cfg = &scorer.model.config;
    let (c, cd) = (cfg.n_chunks(), cfg.chunk_dim);
    let item_sources = [Source::Item, Source::Textual, Source::Visual];
    let mut out = Vec::with_capacity(6);
    for &from in &item_sources {
        for &to in &item_sources {
            if from == to {
                continue;
            }
            let (a, b) = (table(scorer, from), table(scorer, to));
            let mut hits = 0;
            for r in 0..a.rows() {
                let bc: Vec<&[f64]> = b.row(r).chunks(cd).collect();
                for (k, ak) in a.row(r).chunks(cd).enumerate() {
                    let sims: Vec<f64> = bc.iter().map(|x| dot(ak, x)).collect();
                    if argmax(&sims) == k {
                        hits += 1;
                    }
                }
            }
            out.push(CrossModalAccuracy {
                from,
                to,
                accuracy: hits as f64 / (a.rows() * c) as f64,
            });
        }
    }
    out
}
