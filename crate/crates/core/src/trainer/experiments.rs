use serde::{Deserialize, Serialize};

use super::{train, HistoryRow, TrainConfig};
use crate::datahub::{split_dataset, Dataset, Holdout};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_model, metric, Scorer};
use crate::model::ModelConfig;

/// The searched values for each loss weight: 1e-3 to 1e+1 in 1-5 steps.
pub const WEIGHT_LADDER: [f64; 9] = [1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1, 1.0, 5.0, 10.0];

/// Ablation variants, each zeroing some loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    WithoutDisentangling,
    WithoutIntra,
    WithoutInter,
    WithoutHigh,
    WithoutLow,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::WithoutDisentangling,
        Variant::WithoutIntra,
        Variant::WithoutInter,
        Variant::WithoutHigh,
        Variant::WithoutLow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutDisentangling => "w/o_disentangling",
            Variant::WithoutIntra => "w/o_intra",
            Variant::WithoutInter => "w/o_inter",
            Variant::WithoutHigh => "w/o_high",
            Variant::WithoutLow => "w/o_low",
        }
    }

    /// Zeroes (α, β, γ) as the variant requires.
    pub fn apply(self, cfg: &mut ModelConfig) {
        let (a, b, g) = match self {
            Variant::Full => (false, false, false),
            Variant::WithoutDisentangling => (true, true, true),
            Variant::WithoutIntra => (true, false, false),
            Variant::WithoutInter => (false, true, false),
            Variant::WithoutHigh => (true, true, false),
            Variant::WithoutLow => (false, false, true),
        };
        if a {
            cfg.alpha = 0.0;
        }
        if b {
            cfg.beta = 0.0;
        }
        if g {
            cfg.gamma = 0.0;
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
            Error::Config(format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// Test metrics of one ablation run.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub recall20: f64,
    pub ndcg20: f64,
    pub best_epoch: usize,
    pub history: Vec<HistoryRow>,
}

pub fn run_ablation(ds: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig, variant: Variant) -> Result<AblationRow> {
    let mut mcfg = model_cfg.clone();
    variant.apply(&mut mcfg);
    let out = train(ds, &mcfg, cfg)?;
    let split = split_dataset(&ds.interactions, cfg.seed)?;
    let scorer = Scorer::new(&out.best.model, ds)?;
    let rows = evaluate_model(&scorer, &split, Holdout::Test, &[20])?;
    Ok(AblationRow {
        variant,
        recall20: metric(&rows, "recall", 20).unwrap_or(0.0),
        ndcg20: metric(&rows, "ndcg", 20).unwrap_or(0.0),
        best_epoch: out.best.epoch,
        history: out.history,
    })
}

/// Values to try per hyperparameter; an empty list keeps the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub temperature: Vec<f64>,
}

impl GridSpec {
    /// The full-scale grid: every loss weight over [`WEIGHT_LADDER`].
    pub fn ladder() -> Self {
        GridSpec {
            alpha: WEIGHT_LADDER.to_vec(),
            beta: WEIGHT_LADDER.to_vec(),
            gamma: WEIGHT_LADDER.to_vec(),
            lambda: Vec::new(),
            temperature: Vec::new(),
        }
    }

    /// Every combination, in lexicographic order of (α, β, γ, λ, τ) list positions.
    pub fn expand(&self, base: &ModelConfig) -> Vec<ModelConfig> {
        let or_base = |v: &[f64], b: f64| if v.is_empty() { vec![b] } else { v.to_vec() };
        let mut out = Vec::new();
        for &a in &or_base(&self.alpha, base.alpha) {
            for &b in &or_base(&self.beta, base.beta) {
                for &g in &or_base(&self.gamma, base.gamma) {
                    for &l in &or_base(&self.lambda, base.lambda) {
                        for &t in &or_base(&self.temperature, base.temperature) {
                            out.push(ModelConfig {
                                alpha: a,
                                beta: b,
                                gamma: g,
                                lambda: l,
                                temperature: t,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub config: ModelConfig,
    pub val_recall20: f64,
    pub val_ndcg20: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub best: usize,
}

/// Trains every grid point with the same seed, up to `jobs` at a time, and
/// picks the best validation Recall@20 (then NDCG@20, then grid order).
pub fn grid_search(
    ds: &Dataset,
    base: &ModelConfig,
    cfg: &TrainConfig,
    grid: &GridSpec,
    jobs: usize,
) -> Result<GridResult> {
    let configs = grid.expand(base);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<GridRow>>> = (0..configs.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(configs.len()) {
            s.spawn(|| loop {
                let j = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(mc) = configs.get(j) else { break };
                let row = train(ds, mc, cfg).map(|out| GridRow {
                    config: mc.clone(),
                    val_recall20: out.best.val_recall20,
                    val_ndcg20: out.best.val_ndcg20,
                });
                results.lock().expect("no panics while holding the lock")[j] = Some(row);
            });
        }
    });
    let rows: Vec<GridRow> = slots
        .into_iter()
        .map(|r| r.expect("every grid point ran"))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (j, r) in rows.iter().enumerate().skip(1) {
        let b = &rows[best];
        if r.val_recall20 > b.val_recall20 || (r.val_recall20 == b.val_recall20 && r.val_ndcg20 > b.val_ndcg20) {
            best = j;
        }
    }
    Ok(GridResult { rows, best })
}
