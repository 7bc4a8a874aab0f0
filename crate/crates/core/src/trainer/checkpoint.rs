use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HistoryRow, TrainConfig};
use crate::error::{Error, Result};
use crate::model::Model;

/// First line of every checkpoint file.
pub const CHECKPOINT_TAG: &str = "ADDRL-CKPT-1";

/// Where the sampling streams stood: every draw is keyed by `(seed, step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

/// A model snapshot with everything needed to evaluate or explain it.
///
/// On disk: the tag line, then one JSON document. Floats are written in
/// shortest round-trip form, so reloading is bitwise exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: Model,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub history: Vec<HistoryRow>,
    pub val_recall20: f64,
    pub val_ndcg20: f64,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(w, "{CHECKPOINT_TAG}").map_err(io)?;
        serde_json::to_writer(&mut w, self).map_err(|e| Error::io(path, e.into()))?;
        writeln!(w).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = std::io::BufReader::new(f);
        let mut tag = String::new();
        r.read_line(&mut tag).map_err(|e| Error::io(path, e))?;
        if tag.trim_end() != CHECKPOINT_TAG {
            return Err(Error::parse(
                path,
                1,
                format!("expected format tag `{CHECKPOINT_TAG}`, found `{}`", tag.trim_end()),
            ));
        }
        let ck: Checkpoint = serde_json::from_reader(r).map_err(|e| Error::parse(path, e.line() + 1, e.to_string()))?;
        let m = &ck.model;
        let rows = |name| m.params.try_get(name).map(|t| t.rows());
        match (rows("user_emb"), rows("item_emb")) {
            (Some(u), Some(i)) => m.params.check(&m.config, u, i)?,
            _ => return Err(Error::Data(format!("{}: embedding tables missing", path.display()))),
        }
        Ok(ck)
    }
}
