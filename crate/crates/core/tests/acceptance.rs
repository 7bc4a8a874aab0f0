//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that the expensive planted-structure
//! model is trained once and shared by the criteria that need it.

use std::time::{Duration, Instant};

use addrl::datahub::{gen_synthetic, split_dataset, Dataset, Holdout, SyntheticSpec};
use addrl::diffcore::{Tape, DEFAULT_EPS};
use addrl::evalkit::{
    controllability_report, evaluate_model, metric, ndcg_at_n, popularity_baseline, rank_items, recall_at_n,
    select_cohort, ProbeMode, ProbeReport, Scorer,
};
use addrl::model::{
    batch_terms, gradcheck_toy, inter_modality_loss, intra_chunk_losses, score_chunks, toy_problem, total_loss,
    Forward, Model, ModelConfig, Source,
};
use addrl::trainer::{run_ablation, train, write_history_csv, Checkpoint, TrainOutcome, Variant};

type Outcome = Result<(bool, String), String>;

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, id: u32, name: &str, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            self.failed += 1;
        }
        println!(
            "criterion {id} {:<4} {name} ({:.1}s): {detail}",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
}

fn err(e: addrl::Error) -> String {
    e.to_string()
}

fn planted_dataset() -> Dataset {
    let spec = SyntheticSpec {
        n_users: 200,
        n_items: 300,
        value_counts: vec![4, 3, 5],
        d0_text: 32,
        d0_visual: 32,
        interactions_per_user: 20,
        noise: 0.1,
        ..SyntheticSpec::default()
    };
    gen_synthetic(&spec, 7).expect("fixture generates")
}

fn planted_train_config() -> addrl::trainer::TrainConfig {
    addrl::trainer::TrainConfig {
        lr: 1e-4,
        batch_size: 256,
        n_neg: 4,
        max_epochs: 300,
        patience: 50,
        seed: 7,
        ..Default::default()
    }
}

fn planted_model_config() -> ModelConfig {
    ModelConfig {
        alpha: 1.0,
        beta: 1.0,
        gamma: 1.0,
        temperature: 0.2,
        ..ModelConfig::default()
    }
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let p = toy_problem(1).map_err(err)?;
    let cfg = &p.model.config;
    if (cfg.n_attrs(), cfg.n_chunks(), cfg.chunk_dim, cfg.d0_text, p.batch.neg[0].len()) != (3, 4, 4, 8, 2) {
        return Err("toy problem does not have the required shape".into());
    }
    let reports = gradcheck_toy(&p, DEFAULT_EPS).map_err(err)?;
    let worst = reports.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    let elapsed = t.elapsed();
    let names: Vec<&str> = reports.iter().map(|(n, _)| *n).collect();
    let ok = worst < 1e-4 && names == ["bpr", "intra", "inter", "low", "total"] && elapsed < Duration::from_secs(10);
    Ok((ok, format!("max rel error {worst:.2e} over {names:?} in {elapsed:.2?}")))
}

fn permutations_of_subsets(universe: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..universe {
        let mut next = Vec::new();
        for p in &frontier {
            for i in 0..universe {
                if !p.contains(&i) {
                    let mut q: Vec<usize> = p.clone();
                    q.push(i);
                    next.push(q);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn metric_oracle() -> Outcome {
    let rankings = permutations_of_subsets(6);
    let tests: Vec<Vec<usize>> = (0u32..64)
        .filter(|m| m.count_ones() <= 3)
        .map(|m| (0..6).filter(|&i| m >> i & 1 == 1).collect())
        .collect();
    let mut cases = 0usize;
    let mut mismatches = 0usize;
    for r in &rankings {
        for t in &tests {
            for n in 1..=6 {
                let (want_r, want_n) = if t.is_empty() {
                    (0.0, 0.0)
                } else {
                    let mut hits = 0usize;
                    let mut dcg = 0.0;
                    for (pos, item) in r.iter().enumerate().take(n) {
                        if t.contains(item) {
                            hits += 1;
                            dcg += 1.0 / ((pos + 2) as f64).log2();
                        }
                    }
                    let mut idcg = 0.0;
                    for pos in 0..t.len().min(n) {
                        idcg += 1.0 / ((pos + 2) as f64).log2();
                    }
                    (hits as f64 / t.len() as f64, dcg / idcg)
                };
                if recall_at_n(r, t, n) != want_r || ndcg_at_n(r, t, n) != want_n {
                    mismatches += 1;
                }
                cases += 1;
            }
        }
    }
    let top = ndcg_at_n(&[3, 1], &[3], 20);
    let second = ndcg_at_n(&[1, 3], &[3], 20);
    let spot = top == 1.0 && (second - 1.0 / 3f64.log2()).abs() < 1e-12 && (second - 0.63093).abs() < 1e-5;
    Ok((
        mismatches == 0 && spot,
        format!("{cases} cases, {mismatches} mismatches; rank-1 {top}, rank-2 {second:.12}"),
    ))
}

fn closed_forms() -> Outcome {
    let p = toy_problem(1).map_err(err)?;
    let mut model: Model = p.model.clone();
    model.params = model.params.zeros_like();
    model.config.lambda = 0.0;
    let c = model.config.n_chunks() as f64;
    let ln_c = c.ln();
    let ln2 = std::f64::consts::LN_2;
    let ds = &p.dataset;
    let items: Vec<usize> = (0..ds.n_items()).collect();

    let tape = Tape::new();
    let f = Forward::bind(&tape, &model).map_err(err)?;
    let reps = f.items(ds, &items).map_err(err)?;
    let mut intra_dev: f64 = 0.0;
    for (src, x) in [(Source::Item, reps.id), (Source::Textual, reps.text), (Source::Visual, reps.visual)] {
        for &l in intra_chunk_losses(&f, src, x).map_err(err)?.value().data() {
            intra_dev = intra_dev.max((l - ln_c).abs());
        }
    }
    let inter = inter_modality_loss(&f, reps.id, reps.text, reps.visual).map_err(err)?.item();
    let terms = items.len() as f64 * 6.0 * c;
    let inter_dev = (inter / terms - ln_c).abs();

    let users = f.var("user_emb").map_err(err)?.gather_rows(&[0, 1]).map_err(err)?;
    let (parts, _) = score_chunks(&f, users, reps.id.slice_rows(0..2).map_err(err)?).map_err(err)?;
    let score_dev = parts.value().data().iter().map(|s| (s - ln2).abs()).fold(0.0, f64::max);

    let t = batch_terms(&f, ds, &p.batch).map_err(err)?;
    let triplets: usize = p.batch.neg.iter().map(Vec::len).sum();
    let bpr_dev = (t.bpr.item() / triplets as f64 - ln2).abs();

    let mut m0 = p.model.clone();
    m0.config.alpha = 0.0;
    m0.config.beta = 0.0;
    m0.config.gamma = 0.0;
    let tape = Tape::new();
    let f = Forward::bind(&tape, &m0).map_err(err)?;
    let (total, _) = total_loss(&f, ds, &p.batch).map_err(err)?;
    let bpr = batch_terms(&f, ds, &p.batch).map_err(err)?.bpr.item();
    let bitwise = total.item().to_bits() == bpr.to_bits();

    let ok = intra_dev < 1e-12 && inter_dev < 1e-12 && score_dev < 1e-12 && bpr_dev < 1e-12 && bitwise;
    Ok((
        ok,
        format!(
            "|intra−ln C| {intra_dev:.1e}, |inter−ln C| {inter_dev:.1e}, |score−ln 2| {score_dev:.1e}, \
             |bpr−ln 2| {bpr_dev:.1e}, total==bpr bitwise {bitwise}"
        ),
    ))
}

fn recovery(ds: &Dataset, out: &TrainOutcome, elapsed: Duration) -> Outcome {
    let scorer = Scorer::new(&out.best.model, ds).map_err(err)?;
    let probes = ProbeReport::compute(&scorer, ds, ProbeMode::Trained).map_err(err)?;
    let item_side: Vec<f64> = probes
        .chunks
        .iter()
        .filter(|c| c.source != Source::User)
        .map(|c| c.accuracy)
        .collect();
    let cross: Vec<f64> = probes.crossmodal.iter().map(|c| c.accuracy).collect();
    let split = split_dataset(&ds.interactions, out.best.train_config.seed).map_err(err)?;
    let rec = metric(&evaluate_model(&scorer, &split, Holdout::Test, &[20]).map_err(err)?, "recall", 20).unwrap_or(0.0);
    let pop = metric(&popularity_baseline(&split, Holdout::Test, &[20]).map_err(err)?, "recall", 20).unwrap_or(0.0);
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let ok = item_side.len() == 3
        && min(&item_side) >= 0.95
        && probes.values.len() == 3
        && min(&probes.values) >= 0.90
        && cross.len() == 6
        && min(&cross) >= 0.90
        && rec >= 2.0 * pop
        && elapsed < Duration::from_secs(300);
    Ok((
        ok,
        format!(
            "chunk probes {:.3}, value probes {:?}, retrieval min {:.3}, Recall@20 {rec:.4} vs popularity {pop:.4}, \
             best epoch {} of {}, trained in {elapsed:.1?}",
            min(&item_side),
            probes.values.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            min(&cross),
            out.best.epoch,
            out.last_epoch
        ),
    ))
}

fn controllability(ds: &Dataset, out: &TrainOutcome) -> Outcome {
    let model = &out.best.model;
    let scorer = Scorer::new(model, ds).map_err(err)?;
    let split = split_dataset(&ds.interactions, out.best.train_config.seed).map_err(err)?;
    let cohort = select_cohort(&split, ds, 0, 0, 50).map_err(err)?;
    let xis = [-1.0, 0.0, 0.5, 1.0, 2.0];
    let rows = controllability_report(&scorer, &split, ds, &cohort, 0, &xis, 20).map_err(err)?;
    let levels = model.config.value_counts[0];
    let at = |x: usize, level: usize| rows[x * levels + level].fraction;
    let target: Vec<f64> = (0..xis.len()).map(|x| at(x, 0)).collect();
    let monotone = target.windows(2).all(|w| w[0] <= w[1]);

    let mut base = vec![0.0; levels];
    for &u in &cohort {
        let top = rank_items(&scorer, &split, u, 20).map_err(err)?;
        for &i in &top.items {
            base[ds.labels.get(i, 0)] += 1.0 / top.items.len() as f64;
        }
    }
    let identity = (0..levels).all(|l| (base[l] / cohort.len() as f64).to_bits() == at(3, l).to_bits());
    Ok((
        cohort.len() == 50 && monotone && identity,
        format!(
            "value-0 share over xi {xis:?}: {:?}; xi=1 equals base exactly: {identity}",
            target.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    ))
}

/// Ablations share the planted dataset but a shorter schedule; the criterion
/// concerns completeness and exact zeros, not converged quality.
const ABLATION_EPOCHS: usize = 40;

fn ablations(ds: &Dataset) -> Outcome {
    let cfg = addrl::trainer::TrainConfig {
        max_epochs: ABLATION_EPOCHS,
        ..planted_train_config()
    };
    let base = planted_model_config();
    let mut summary = Vec::new();
    let mut ok = true;
    for v in Variant::ALL {
        let row = run_ablation(ds, &base, &cfg, v).map_err(err)?;
        let mut m = base.clone();
        v.apply(&mut m);
        let losses: Vec<_> = row.history.iter().filter_map(|h| h.loss).collect();
        let complete = losses.len() == ABLATION_EPOCHS
            && row.recall20.is_finite()
            && (0.0..=1.0).contains(&row.recall20)
            && (0.0..=1.0).contains(&row.ndcg20);
        let zeros = losses.iter().all(|l| {
            (m.alpha != 0.0 || l.intra == 0.0) && (m.beta != 0.0 || l.inter == 0.0) && (m.gamma != 0.0 || l.low == 0.0)
        });
        let live = losses.iter().all(|l| {
            (m.alpha == 0.0 || l.intra > 0.0) && (m.beta == 0.0 || l.inter > 0.0) && (m.gamma == 0.0 || l.low > 0.0)
        });
        ok &= complete && zeros && live;
        summary.push(format!("{v} R@20 {:.4} N@20 {:.4}", row.recall20, row.ndcg20));
    }
    Ok((ok, format!("{ABLATION_EPOCHS} epochs each; {}", summary.join("; "))))
}

fn determinism(ds: &Dataset) -> Outcome {
    let cfg = addrl::trainer::TrainConfig {
        max_epochs: 10,
        ..planted_train_config()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut csvs = Vec::new();
    let mut outs = Vec::new();
    for run in 0..2 {
        let out = train(ds, &planted_model_config(), &cfg).map_err(err)?;
        let path = dir.path().join(format!("history{run}.csv"));
        write_history_csv(&path, &out.history).map_err(err)?;
        csvs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        outs.push(out);
    }
    let same_history = csvs[0] == csvs[1];
    let ck_path = dir.path().join("model.ckpt");
    outs[0].best.save(&ck_path).map_err(err)?;
    let back = Checkpoint::load(&ck_path).map_err(err)?;
    let split = split_dataset(&ds.interactions, back.train_config.seed).map_err(err)?;
    let scorer = Scorer::new(&back.model, ds).map_err(err)?;
    let rows = evaluate_model(&scorer, &split, Holdout::Validation, &[20]).map_err(err)?;
    let reloaded = metric(&rows, "recall", 20).unwrap_or(f64::NAN);
    let bitwise = reloaded.to_bits() == outs[0].best.val_recall20.to_bits();
    Ok((
        same_history && bitwise && back == outs[0].best,
        format!(
            "history CSVs identical: {same_history} ({} bytes); reloaded val Recall@20 {reloaded} vs {} bitwise: {bitwise}",
            csvs[0].len(),
            outs[0].best.val_recall20
        ),
    ))
}

fn full_scale_config() -> Outcome {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let text = std::fs::read_to_string(root.join("configs/full_scale.toml")).map_err(|e| e.to_string())?;
    let t: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let get = |s: &str, k: &str| t.get(s).and_then(|v| v.get(k)).cloned();
    let ladder: Vec<toml::Value> = [1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1, 1.0, 5.0, 10.0]
        .into_iter()
        .map(toml::Value::Float)
        .collect();
    let ok = get("train", "lr") == Some(toml::Value::Float(1e-4))
        && get("train", "batch_size") == Some(toml::Value::Integer(1024))
        && get("model", "chunk_dim") == Some(toml::Value::Integer(32))
        && ["alpha", "beta", "gamma"]
            .iter()
            .all(|k| get("grid", k) == Some(toml::Value::Array(ladder.clone())));
    let readme = std::fs::read_to_string(root.join("README.md")).map_err(|e| e.to_string())?;
    let documented = readme.contains("0.0968") && readme.contains("0.0588");
    Ok((
        ok && documented,
        "full-run config present and gap documented; Amazon-scale figures are not reproduced here".into(),
    ))
}

fn main() {
    let mut r = Report { failed: 0 };
    r.check(1, "gradient correctness", gradients);
    r.check(3, "metric oracle equivalence", metric_oracle);
    r.check(6, "closed-form loss identities", closed_forms);

    let ds = planted_dataset();
    let t = Instant::now();
    let trained = train(&ds, &planted_model_config(), &planted_train_config());
    let elapsed = t.elapsed();
    match &trained {
        Ok(out) => {
            r.check(2, "planted-structure recovery", || recovery(&ds, out, elapsed));
            r.check(4, "controllability monotonicity", || controllability(&ds, out));
        }
        Err(e) => {
            r.check(2, "planted-structure recovery", || Err(e.to_string()));
            r.check(4, "controllability monotonicity", || Err("no trained model".into()));
        }
    }
    r.check(5, "ablation harness completeness", || ablations(&ds));
    r.check(7, "determinism and checkpoint round trip", || determinism(&ds));
    r.check(8, "full-scale configuration and documented gap", full_scale_config);

    println!("{} of 8 criteria failed", r.failed);
    if r.failed > 0 {
        std::process::exit(1);
    }
}
