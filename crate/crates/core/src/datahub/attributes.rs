use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_lines, Vocab};
use crate::error::{Error, Result};

/// Name used for the value assigned to items with no recorded value.
pub const UNKNOWN_VALUE: &str = "unknown";

/// Name of the residual chunk in reports and exports.
pub const RESIDUAL_NAME: &str = "others";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub values: Vec<String>,
}

impl Attribute {
    pub fn value_index(&self, v: &str) -> Option<usize> {
        self.values.iter().position(|x| x == v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub attributes: Vec<Attribute>,
    /// Whether representations carry an extra "others" chunk.
    pub residual_chunk: bool,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>, residual_chunk: bool) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Data("schema needs at least one attribute".into()));
        }
        for a in &attributes {
            if a.values.is_empty() {
                return Err(Error::Data(format!("attribute {:?} has no values", a.name)));
            }
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = a.values.iter().find(|v| !seen.insert(v.as_str())) {
                return Err(Error::Data(format!(
                    "attribute {:?}: duplicate value {dup:?}",
                    a.name
                )));
            }
        }
        Ok(AttributeSchema {
            attributes,
            residual_chunk,
        })
    }

    pub fn n_attrs(&self) -> usize {
        self.attributes.len()
    }

    /// Chunks per representation: K, plus one for the residual.
    pub fn n_chunks(&self) -> usize {
        self.n_attrs() + usize::from(self.residual_chunk)
    }

    pub fn value_counts(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.values.len()).collect()
    }

    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Attribute name for chunk `k`, `others` for the residual.
    pub fn chunk_name(&self, k: usize) -> &str {
        self.attributes
            .get(k)
            .map(|a| a.name.as_str())
            .unwrap_or(RESIDUAL_NAME)
    }
}

/// One value index per attribute for every item.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeLabels {
    n_attrs: usize,
    labels: Vec<usize>,
}

impl AttributeLabels {
    pub fn new(n_attrs: usize, labels: Vec<usize>, schema: &AttributeSchema) -> Result<Self> {
        if n_attrs != schema.n_attrs() || !labels.len().is_multiple_of(n_attrs.max(1)) {
            return Err(Error::Data("label matrix does not match schema".into()));
        }
        for (j, &l) in labels.iter().enumerate() {
            let k = j % n_attrs;
            let size = schema.attributes[k].values.len();
            if l >= size {
                return Err(Error::Index { index: l, size });
            }
        }
        Ok(AttributeLabels { n_attrs, labels })
    }

    pub fn n_items(&self) -> usize {
        self.labels.len() / self.n_attrs
    }

    pub fn n_attrs(&self) -> usize {
        self.n_attrs
    }

    pub fn get(&self, item: usize, attr: usize) -> usize {
        self.labels[item * self.n_attrs + attr]
    }

    pub fn item(&self, item: usize) -> &[usize] {
        &self.labels[item * self.n_attrs..(item + 1) * self.n_attrs]
    }
}

/// Parses `item<TAB>attr=value;attr=value` lines.
///
/// The schema is inferred in first-appearance order unless `fixed` is given.
/// Items without a value for some attribute get `unknown`, which is appended
/// to that attribute's values on demand.
pub fn load_attributes(
    path: &Path,
    items: &Vocab,
    fixed: Option<AttributeSchema>,
    residual_chunk: bool,
) -> Result<(AttributeSchema, AttributeLabels)> {
    let frozen = fixed.is_some();
    let mut attrs: Vec<Attribute> = fixed.map(|s| s.attributes).unwrap_or_default();
    let mut raw: Vec<Vec<(usize, usize)>> = vec![Vec::new(); items.len()];
    for (lineno, line) in read_lines(path)? {
        if line.trim().is_empty() {
            continue;
        }
        let (tok, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected `item<TAB>attr=value;...`"))?;
        let Some(item) = items.get(tok.trim()) else { continue };
        for kv in rest.split(';').filter(|s| !s.trim().is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::parse(path, lineno, format!("bad pair {kv:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let ai = match attrs.iter().position(|a| a.name == k) {
                Some(a) => a,
                None if !frozen => {
                    attrs.push(Attribute {
                        name: k.to_string(),
                        values: Vec::new(),
                    });
                    attrs.len() - 1
                }
                None => return Err(Error::parse(path, lineno, format!("unknown attribute {k:?}"))),
            };
            let vi = match attrs[ai].value_index(v) {
                Some(x) => x,
                None if !frozen => {
                    attrs[ai].values.push(v.to_string());
                    attrs[ai].values.len() - 1
                }
                None => return Err(Error::parse(path, lineno, format!("unknown value {v:?} for {k:?}"))),
            };
            raw[item].retain(|&(a, _)| a != ai);
            raw[item].push((ai, vi));
        }
    }
    if attrs.is_empty() {
        return Err(Error::Data(format!("{}: no attributes", path.display())));
    }
    let k = attrs.len();
    let mut labels = vec![usize::MAX; items.len() * k];
    for (item, pairs) in raw.iter().enumerate() {
        for &(a, v) in pairs {
            labels[item * k + a] = v;
        }
    }
    for (j, l) in labels.iter_mut().enumerate() {
        if *l == usize::MAX {
            let a = &mut attrs[j % k];
            *l = match a.value_index(UNKNOWN_VALUE) {
                Some(x) => x,
                None => {
                    a.values.push(UNKNOWN_VALUE.to_string());
                    a.values.len() - 1
                }
            };
        }
    }
    let schema = AttributeSchema::new(attrs, residual_chunk)?;
    let labels = AttributeLabels::new(k, labels, &schema)?;
    Ok((schema, labels))
}

pub fn save_attributes(path: &Path, items: &Vocab, schema: &AttributeSchema, labels: &AttributeLabels) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for i in 0..labels.n_items() {
        let kv: Vec<String> = schema
            .attributes
            .iter()
            .enumerate()
            .map(|(k, a)| format!("{}={}", a.name, a.values[labels.get(i, k)]))
            .collect();
        writeln!(w, "{}\t{}", items.token(i), kv.join(";")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Sidecar fixing value order: `attr<TAB>index<TAB>value`.
pub fn save_schema(path: &Path, schema: &AttributeSchema) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for a in &schema.attributes {
        for (j, v) in a.values.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}", a.name, j, v).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_schema(path: &Path, residual_chunk: bool) -> Result<AttributeSchema> {
    let mut attrs: Vec<Attribute> = Vec::new();
    for (lineno, line) in read_lines(path)? {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let [name, idx, value] = f[..] else {
            return Err(Error::parse(path, lineno, "expected `attr<TAB>index<TAB>value`"));
        };
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::parse(path, lineno, "bad value index"))?;
        let a = match attrs.iter().position(|a| a.name == name) {
            Some(a) => a,
            None => {
                attrs.push(Attribute {
                    name: name.to_string(),
                    values: Vec::new(),
                });
                attrs.len() - 1
            }
        };
        if idx != attrs[a].values.len() {
            return Err(Error::parse(path, lineno, "value indices must be consecutive"));
        }
        attrs[a].values.push(value.to_string());
    }
    AttributeSchema::new(attrs, residual_chunk)
}
