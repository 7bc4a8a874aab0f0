use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{read_lines, Vocab};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Textual,
    Visual,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Textual, Modality::Visual];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Textual => "textual",
            Modality::Visual => "visual",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textual" | "text" => Ok(Modality::Textual),
            "visual" | "image" => Ok(Modality::Visual),
            _ => Err(Error::Config(format!("unknown modality {s:?}"))),
        }
    }
}

/// One pre-extracted raw feature vector per item.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub modality: Modality,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureTable {
    pub fn new(modality: Modality, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Data(format!(
                "{modality} features: {} values do not tile rows of width {dim}",
                data.len()
            )));
        }
        if let Some(p) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data(format!(
                "{modality} features: non-finite value for item {}",
                p / dim
            )));
        }
        Ok(FeatureTable { modality, dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_items(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, item: usize) -> &[f64] {
        &self.data[item * self.dim..(item + 1) * self.dim]
    }

    /// Rows for `items`, stacked into a `[len, dim]` tensor.
    pub fn rows(&self, items: &[usize]) -> Tensor {
        let mut d = Vec::with_capacity(items.len() * self.dim);
        for &i in items {
            d.extend_from_slice(self.row(i));
        }
        Tensor::matrix(items.len(), self.dim, d).expect("non-empty item list")
    }

    pub fn save(&self, path: &Path, items: &Vocab) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(w, "item_token {}", self.dim).map_err(io)?;
        for i in 0..self.n_items() {
            let vals: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}\t{}", items.token(i), vals.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a feature file and aligns it to `items`. Rows for tokens outside
    /// the vocabulary are ignored; every vocabulary item must have a row.
    pub fn load(path: &Path, modality: Modality, items: &Vocab) -> Result<Self> {
        let mut lines = read_lines(path)?.into_iter();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Data(format!("{}: empty feature file", path.display())))?;
        let mut h = header.split_whitespace();
        let dim: usize = match (h.next(), h.next().map(str::parse)) {
            (Some("item_token"), Some(Ok(d))) if d > 0 => d,
            _ => return Err(Error::parse(path, 1, "expected header `item_token <d0>`")),
        };
        let mut data = vec![f64::NAN; items.len() * dim];
        let mut seen = vec![false; items.len()];
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (tok, vals) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno, "expected `item<TAB>f1,...`"))?;
            let Some(i) = items.get(tok.trim()) else { continue };
            let parsed: std::result::Result<Vec<f64>, _> =
                vals.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let parsed = parsed.map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            if parsed.len() != dim {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {dim} values, got {}", parsed.len()),
                ));
            }
            if parsed.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(path, lineno, "non-finite feature value"));
            }
            data[i * dim..(i + 1) * dim].copy_from_slice(&parsed);
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!(
                "{}: no features for item {:?}",
                path.display(),
                items.token(missing)
            )));
        }
        FeatureTable::new(modality, dim, data)
    }
}
