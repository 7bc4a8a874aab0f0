//! Run configuration: a TOML file, `--set` overrides, then command flags.

use std::path::{Path, PathBuf};

use addrl::datahub::{DataOptions, Holdout, SyntheticSpec};
use addrl::model::{Activation, ModelConfig};
use addrl::trainer::{GridSpec, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub synthetic: SyntheticSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: PathBuf,
    pub kcore: usize,
    pub popularity_levels: usize,
    pub residual_chunk: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        let o = DataOptions::default();
        DataSection {
            dir: PathBuf::from("data"),
            kcore: o.kcore,
            popularity_levels: o.popularity_levels,
            residual_chunk: o.residual_chunk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub value_counts: Vec<usize>,
    pub d0_text: usize,
    pub d0_visual: usize,
    pub interactions_per_user: usize,
    pub noise: f64,
    pub affinity: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        SyntheticSection {
            seed: 7,
            n_users: s.n_users,
            n_items: s.n_items,
            value_counts: s.value_counts,
            d0_text: s.d0_text,
            d0_visual: s.d0_visual,
            interactions_per_user: s.interactions_per_user,
            noise: s.noise,
            affinity: s.affinity,
        }
    }
}

/// Hyperparameters only; the attribute structure and feature sizes come
/// from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub chunk_dim: usize,
    pub temperature: f64,
    pub activation: Activation,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub normalize_contrastive: bool,
    pub inter_residual: bool,
    pub attention_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            chunk_dim: m.chunk_dim,
            temperature: m.temperature,
            activation: m.activation,
            alpha: m.alpha,
            beta: m.beta,
            gamma: m.gamma,
            lambda: m.lambda,
            normalize_contrastive: m.normalize_contrastive,
            inter_residual: m.inter_residual,
            attention_hidden: m.attention_hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HoldoutName {
    Validation,
    #[default]
    Test,
}

impl From<HoldoutName> for Holdout {
    fn from(h: HoldoutName) -> Self {
        match h {
            HoldoutName::Validation => Holdout::Validation,
            HoldoutName::Test => Holdout::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub cutoffs: Vec<usize>,
    pub holdout: HoldoutName,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            cutoffs: vec![10, 20],
            holdout: HoldoutName::Test,
        }
    }
}

impl RunConfig {
    pub fn data_options(&self) -> DataOptions {
        DataOptions {
            kcore: self.data.kcore,
            popularity_levels: self.data.popularity_levels,
            residual_chunk: self.data.residual_chunk,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let s = &self.synthetic;
        SyntheticSpec {
            n_users: s.n_users,
            n_items: s.n_items,
            value_counts: s.value_counts.clone(),
            d0_text: s.d0_text,
            d0_visual: s.d0_visual,
            interactions_per_user: s.interactions_per_user,
            noise: s.noise,
            affinity: s.affinity,
            residual_chunk: self.data.residual_chunk,
        }
    }

    /// Model config without dataset structure; `fit_to` fills that in.
    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            chunk_dim: m.chunk_dim,
            temperature: m.temperature,
            activation: m.activation,
            alpha: m.alpha,
            beta: m.beta,
            gamma: m.gamma,
            lambda: m.lambda,
            normalize_contrastive: m.normalize_contrastive,
            inter_residual: m.inter_residual,
            attention_hidden: m.attention_hidden,
            residual_chunk: self.data.residual_chunk,
            ..ModelConfig::default()
        }
    }

    /// Reads `path` (if any) and applies `key=value` overrides, where the key
    /// is `section.field` and the value is TOML (bare words are strings).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, String> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                // typed parse first so errors carry line and column
                toml::from_str::<RunConfig>(&text).map_err(|e| format!("{}: {}", p.display(), one_line(&e.to_string())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| format!("{}: {}", p.display(), one_line(&e.to_string())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            set_key(&mut table, o)?;
        }
        let origin = path.map(|p| p.display().to_string()).unwrap_or_else(|| "--set".into());
        RunConfig::deserialize(toml::Value::Table(table))
            .map_err(|e| format!("{origin}: {}", one_line(&e.to_string())))
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn set_key(table: &mut toml::Table, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("--set {assignment:?}: expected `section.key=value`"))?;
    let (key, raw) = (key.trim(), raw.trim());
    let (section, field) = key
        .split_once('.')
        .ok_or_else(|| format!("--set {key:?}: expected `section.key`"))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let sec = table
        .entry(section)
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(sec) = sec else {
        return Err(format!("--set {key:?}: `{section}` is not a section"));
    };
    sec.insert(field.to_string(), value);
    Ok(())
}

const KEY_DOCS: &[(&str, &str)] = &[
    ("data.dir", "dataset directory"),
    ("data.kcore", "minimum interactions per user and item; 0 disables"),
    ("data.popularity_levels", "append a popularity attribute with this many levels; 0 disables"),
    ("data.residual_chunk", "add an extra chunk for unexplained preference"),
    ("synthetic.seed", "generator seed"),
    ("synthetic.n_users", "users"),
    ("synthetic.n_items", "items"),
    ("synthetic.value_counts", "values per planted attribute"),
    ("synthetic.d0_text", "textual feature size"),
    ("synthetic.d0_visual", "visual feature size"),
    ("synthetic.interactions_per_user", "distinct items per user"),
    ("synthetic.noise", "feature noise std and uniform-draw probability"),
    ("synthetic.affinity", "weight multiplier per preferred value"),
    ("model.chunk_dim", "width of each attribute chunk"),
    ("model.temperature", "contrastive temperature"),
    ("model.activation", "projection nonlinearity: tanh, softplus or identity"),
    ("model.alpha", "intra-modality loss weight"),
    ("model.beta", "inter-modality loss weight"),
    ("model.gamma", "attribute-value loss weight"),
    ("model.lambda", "L2 weight on embeddings in the ranking loss"),
    ("model.normalize_contrastive", "L2-normalise chunks before contrastive similarities"),
    ("model.inter_residual", "include the residual chunk in contrastive alignment"),
    ("model.attention_hidden", "attention network hidden width"),
    ("train.lr", "Adam learning rate"),
    ("train.batch_size", "positive pairs per batch"),
    ("train.n_neg", "negatives per positive"),
    ("train.max_epochs", "epoch limit"),
    ("train.eval_every", "validation interval in epochs"),
    ("train.patience", "epochs without improvement before stopping"),
    ("train.seed", "split, initialisation and sampling seed"),
    ("train.weight_decay", "L2 on dense weight matrices"),
    ("train.prune_zero_weights", "drop zero-weighted loss terms from the graph"),
    ("eval.cutoffs", "ranking cutoffs n"),
    ("eval.holdout", "evaluation holdout: test or validation"),
    ("grid.alpha", "alpha values to search; empty keeps model.alpha"),
    ("grid.beta", "beta values to search"),
    ("grid.gamma", "gamma values to search"),
    ("grid.lambda", "lambda values to search"),
    ("grid.temperature", "temperature values to search"),
];

/// Every config key with its default, one per line.
pub fn keys_help() -> String {
    let defaults = flat_defaults();
    let width = defaults.iter().map(|(k, v)| k.len() + v.len() + 3).max().unwrap_or(0);
    let mut out = String::from("Config keys (TOML sections; override with --set section.key=value):\n");
    for (key, value) in defaults {
        let doc = KEY_DOCS.iter().find(|(k, _)| *k == key).map(|(_, d)| *d).unwrap_or("");
        let kv = format!("{key} = {value}");
        out.push_str(&format!("  {kv:<width$}  {doc}\n"));
    }
    out
}

/// `(section.key, default)` pairs in declaration order.
pub fn flat_defaults() -> Vec<(String, String)> {
    let v = toml::Value::try_from(RunConfig::default()).expect("defaults serialise");
    let mut out = Vec::new();
    if let toml::Value::Table(t) = v {
        for (section, body) in t {
            if let toml::Value::Table(fields) = body {
                for (k, v) in fields {
                    out.push((format!("{section}.{k}"), v.to_string()));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_is_documented() {
        let keys: Vec<String> = flat_defaults().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys.len(), KEY_DOCS.len());
        for (k, _) in KEY_DOCS {
            assert!(keys.iter().any(|x| x == k), "{k}");
        }
    }

    #[test]
    fn overrides_and_rejections() {
        let c = RunConfig::load(None, &["train.lr=0.5".into(), "model.activation=softplus".into()]).unwrap();
        assert_eq!(c.train.lr, 0.5);
        assert_eq!(c.model.activation, Activation::Softplus);
        let c = RunConfig::load(None, &["grid.alpha=[0.0, 1e-2]".into()]).unwrap();
        assert_eq!(c.grid.alpha, vec![0.0, 1e-2]);
        assert!(RunConfig::load(None, &["train.lrr=1".into()]).unwrap_err().contains("lrr"));
        assert!(RunConfig::load(None, &["bogus.x=1".into()]).is_err());
        assert!(RunConfig::load(None, &["nodot=1".into()]).is_err());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        assert_eq!(RunConfig::load(Some(f.path()), &[]).unwrap(), RunConfig::default());
    }
}
