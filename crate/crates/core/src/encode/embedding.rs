use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rule for combining unit vectors (lines, methods) into one sample vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    Mean,
    /// Exactly one vector per sample is expected.
    Single,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut table = EmbeddingTable {
            dim,
            ids: Vec::with_capacity(rows.len()),
            vectors: Vec::with_capacity(rows.len()),
            index: HashMap::with_capacity(rows.len()),
        };
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::Format(format!(
                    "embedding `{id}` has {} values, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("embedding `{id}` has a non-finite value")));
            }
            if table.index.insert(id.clone(), table.ids.len()).is_some() {
                return Err(Error::Format(format!("duplicate embedding id `{id}`")));
            }
            table.ids.push(id);
            table.vectors.push(v);
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }

    /// Groups unit rows by the id prefix before the first `#` and combines
    /// each group. Output ids are sorted.
    pub fn aggregate(&self, rule: Aggregation) -> Result<EmbeddingTable> {
        let mut groups: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            let key = id.split('#').next().unwrap_or(id);
            groups.entry(key).or_default().push(v);
        }
        let rows = groups
            .into_iter()
            .map(|(id, vs)| {
                let v = match rule {
                    Aggregation::Sum => aggregate_sum(&vs)?,
                    Aggregation::Mean => aggregate_mean(&vs)?,
                    Aggregation::Single if vs.len() == 1 => vs[0].to_vec(),
                    Aggregation::Single => {
                        return Err(Error::Format(format!(
                            "sample `{id}` has {} vectors, expected one",
                            vs.len()
                        )))
                    }
                };
                Ok((id.to_string(), v))
            })
            .collect::<Result<Vec<_>>>()?;
        EmbeddingTable::new(self.dim, rows)
    }
}

fn check_units<V: AsRef<[f64]>>(units: &[V]) -> Result<usize> {
    let first = units
        .first()
        .ok_or_else(|| Error::Data("cannot aggregate an empty list of vectors".into()))?;
    let dim = first.as_ref().len();
    if units.iter().any(|u| u.as_ref().len() != dim) {
        return Err(Error::Shape("aggregated vectors differ in length".into()));
    }
    Ok(dim)
}

pub fn aggregate_sum<V: AsRef<[f64]>>(units: &[V]) -> Result<Vec<f64>> {
    let dim = check_units(units)?;
    let mut out = vec![0.0; dim];
    for u in units {
        for (o, x) in out.iter_mut().zip(u.as_ref()) {
            *o += x;
        }
    }
    Ok(out)
}

pub fn aggregate_mean<V: AsRef<[f64]>>(units: &[V]) -> Result<Vec<f64>> {
    let n = units.len() as f64;
    let mut out = aggregate_sum(units)?;
    out.iter_mut().for_each(|x| *x /= n);
    Ok(out)
}

pub fn load_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embedding_csv(file)
}

/// Headerless CSV: unit id, then `dim` floats.
pub fn read_embedding_csv<R: std::io::Read>(reader: R) -> Result<EmbeddingTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    let mut dim = None;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let id = rec.get(0).unwrap_or("").to_string();
        let values = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    message: format!("`{f}` is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Format(format!(
                    "row {row} has {} values, earlier rows have {d}",
                    values.len()
                )))
            }
            _ => {}
        }
        rows.push((id, values));
    }
    if rows.is_empty() {
        log::warn!("embedding file is empty");
    }
    EmbeddingTable::new(dim.unwrap_or(0), rows)
}
