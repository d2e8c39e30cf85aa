//! CK metric tables and the structural preprocessing pipeline.
//!
//! Stage order is fixed: label-encode categoricals, prune constant columns,
//! prune sparse columns, kNN-impute the remaining gaps, then z-score. Every
//! stage is fit on training rows only and replayed on other rows through
//! [`MetricsState`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Class,
    Method,
}

/// Class-level metrics recognized in a CK `class.csv`.
pub const CLASS_METRICS: &[&str] = &[
    "cbo",
    "dit",
    "wmc",
    "tcc",
    "lcc",
    "lcom",
    "loc",
    "nosi",
    "rfc",
    "abstractMethodsQty",
    "anonymousClassesQty",
    "assignmentsQty",
    "comparisonsQty",
    "defaultFieldsQty",
    "defaultMethodsQty",
    "finalFieldsQty",
    "finalMethodsQty",
    "innerClassesQty",
    "lambdasQty",
    "logStatementsQty",
    "loopQty",
    "mathOperationsQty",
    "maxNestedBlocksQty",
    "modifiers",
    "privateFieldsQty",
    "privateMethodsQty",
    "protectedFieldsQty",
    "protectedMethodsQty",
    "publicFieldsQty",
    "publicMethodsQty",
    "returnQty",
    "staticFieldsQty",
    "staticMethodsQty",
    "stringLiteralsQty",
    "synchronizedFieldsQty",
    "synchronizedMethodsQty",
    "totalFieldsQty",
    "totalMethodsQty",
    "tryCatchQty",
    "visibleFieldsQty",
    "numbersQty",
    "parenthesizedExpsQty",
    "uniqueWordsQty",
    "variablesQty",
];

/// Method-level metrics recognized in a CK `method.csv`.
pub const METHOD_METRICS: &[&str] = &[
    "loc",
    "cbo",
    "wmc",
    "rfc",
    "modifiers",
    "constructor",
    "logStatementsQty",
    "returnsQty",
    "variablesQty",
    "parametersQty",
    "methodsInvokedQty",
    "methodsInvokedLocalQty",
    "methodsInvokedIndirectLocalQty",
    "loopQty",
    "comparisonsQty",
    "tryCatchQty",
    "parenthesizedExpsQty",
    "stringLiteralsQty",
    "numbersQty",
    "assignmentsQty",
    "mathOperationsQty",
    "maxNestedBlocksQty",
    "anonymousClassesQty",
    "innerClassesQty",
    "lambdasQty",
    "uniqueWordsQty",
];

const CATEGORICAL: &[&str] = &["modifiers", "constructor"];

impl Level {
    pub fn known_metrics(self) -> &'static [&'static str] {
        match self {
            Level::Class => CLASS_METRICS,
            Level::Method => METHOD_METRICS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(String),
    Missing,
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawMetricTable {
    pub level: Level,
    pub columns: Vec<Column>,
    pub sample_ids: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Header names that were not recognized metrics.
    pub ignored_columns: Vec<String>,
}

impl RawMetricTable {
    pub fn new(level: Level, columns: Vec<Column>, sample_ids: Vec<String>, rows: Vec<Vec<Cell>>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for c in &columns {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        if sample_ids.len() != rows.len() {
            return Err(Error::Schema(format!(
                "{} sample ids for {} rows",
                sample_ids.len(),
                rows.len()
            )));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != columns.len()) {
            return Err(Error::Schema(format!(
                "row {i} has {} cells, expected {}",
                r.len(),
                columns.len()
            )));
        }
        Ok(Self {
            level,
            columns,
            sample_ids,
            rows,
            ignored_columns: Vec::new(),
        })
    }

    /// Builds an all-numeric table; `None` marks a missing cell.
    pub fn from_numeric(level: Level, names: &[&str], sample_ids: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let columns = names
            .iter()
            .map(|n| Column {
                name: n.to_string(),
                kind: ColumnKind::Numeric,
            })
            .collect();
        let rows = rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.map_or(Cell::Missing, Cell::Num)).collect())
            .collect();
        Self::new(level, columns, sample_ids, rows)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn select_rows(&self, idx: &[usize]) -> RawMetricTable {
        RawMetricTable {
            level: self.level,
            columns: self.columns.clone(),
            sample_ids: idx.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            ignored_columns: self.ignored_columns.clone(),
        }
    }

    /// Keeps only the named columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<RawMetricTable> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| Error::MissingColumn(n.clone())))
            .collect::<Result<_>>()?;
        Ok(RawMetricTable {
            level: self.level,
            columns: idx.iter().map(|&i| self.columns[i].clone()).collect(),
            sample_ids: self.sample_ids.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
                .collect(),
            ignored_columns: self.ignored_columns.clone(),
        })
    }

    fn without_columns(&self, drop: &BTreeSet<usize>) -> RawMetricTable {
        let keep: Vec<usize> = (0..self.columns.len()).filter(|i| !drop.contains(i)).collect();
        RawMetricTable {
            level: self.level,
            columns: keep.iter().map(|&i| self.columns[i].clone()).collect(),
            sample_ids: self.sample_ids.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| keep.iter().map(|&i| r[i].clone()).collect())
                .collect(),
            ignored_columns: self.ignored_columns.clone(),
        }
    }

    /// Numeric view; fails if a categorical cell is still present.
    pub fn numeric_rows(&self) -> Result<Vec<Vec<Option<f64>>>> {
        self.rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, c)| match c {
                        Cell::Num(v) => Ok(Some(*v)),
                        Cell::Missing => Ok(None),
                        Cell::Cat(_) => Err(Error::Contract(format!(
                            "column `{}` is still categorical; encode it first",
                            self.columns[j].name
                        ))),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn missing_fraction(&self, col: usize) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let missing = self.rows.iter().filter(|r| r[col].is_missing()).count();
        missing as f64 / self.rows.len() as f64
    }
}

fn is_missing_token(s: &str) -> bool {
    matches!(s, "" | "NaN" | "nan" | "NA" | "N/A" | "null")
}

pub fn load_ck_csv(path: impl AsRef<Path>, level: Level) -> Result<RawMetricTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ck_csv(file, level)
}

/// Reads a CK export. The sample id comes from a `sample_id` column when
/// present, otherwise from `file::class` (plus `::method` at method level).
pub fn read_ck_csv<R: std::io::Read>(reader: R, level: Level) -> Result<RawMetricTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let lookup = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));

    let id_cols: Vec<usize> = if let Some(i) = lookup("sample_id") {
        vec![i]
    } else {
        let mut needed = vec!["file", "class"];
        if level == Level::Method {
            needed.push("method");
        }
        needed
            .iter()
            .map(|n| lookup(n).ok_or_else(|| Error::MissingColumn(n.to_string())))
            .collect::<Result<_>>()?
    };

    let known = level.known_metrics();
    let mut columns = Vec::new();
    let mut positions = Vec::new();
    let mut ignored = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if id_cols.contains(&i) {
            continue;
        }
        match known.iter().find(|k| k.eq_ignore_ascii_case(h)) {
            Some(k) if columns.iter().any(|c: &Column| c.name == *k) => {
                return Err(Error::Schema(format!("column `{h}` appears twice")));
            }
            Some(k) => {
                let kind = if CATEGORICAL.contains(k) {
                    ColumnKind::Categorical
                } else {
                    ColumnKind::Numeric
                };
                columns.push(Column {
                    name: k.to_string(),
                    kind,
                });
                positions.push(i);
            }
            None => ignored.push(h.to_string()),
        }
    }
    if columns.is_empty() {
        return Err(Error::Format(format!(
            "no recognized {level:?}-level metric columns in header"
        )));
    }
    for name in &ignored {
        if !matches!(name.to_ascii_lowercase().as_str(), "file" | "class" | "method") {
            log::warn!("ignoring unknown CK column `{name}`");
        }
    }

    let mut sample_ids = Vec::new();
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = r + 2;
        let id: Vec<&str> = id_cols.iter().map(|&i| rec.get(i).unwrap_or("")).collect();
        sample_ids.push(id.join("::"));
        let mut cells = Vec::with_capacity(columns.len());
        for (col, &pos) in columns.iter().zip(&positions) {
            let raw = rec.get(pos).unwrap_or("");
            let cell = if is_missing_token(raw) {
                Cell::Missing
            } else {
                match col.kind {
                    ColumnKind::Categorical => Cell::Cat(raw.to_string()),
                    ColumnKind::Numeric => {
                        let v: f64 = raw.parse().map_err(|_| Error::Parse {
                            row: row_no,
                            message: format!("column `{}`: `{raw}` is not a number", col.name),
                        })?;
                        if v.is_finite() {
                            Cell::Num(v)
                        } else {
                            Cell::Missing
                        }
                    }
                }
            };
            cells.push(cell);
        }
        rows.push(cells);
    }
    let mut table = RawMetricTable::new(level, columns, sample_ids, rows)?;
    table.ignored_columns = ignored;
    Ok(table)
}

/// Per-column label encoders: sorted distinct values get codes `0..n`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoricalEncoder {
    pub maps: BTreeMap<String, BTreeMap<String, usize>>,
}

impl CategoricalEncoder {
    pub fn fit(table: &RawMetricTable) -> Self {
        let mut maps = BTreeMap::new();
        for (j, col) in table.columns.iter().enumerate() {
            if col.kind != ColumnKind::Categorical {
                continue;
            }
            let values: BTreeSet<&str> = table
                .rows
                .iter()
                .filter_map(|r| match &r[j] {
                    Cell::Cat(s) => Some(s.as_str()),
                    // Numeric cells in a categorical column encode by their text.
                    _ => None,
                })
                .collect();
            let map = values
                .into_iter()
                .enumerate()
                .map(|(code, v)| (v.to_string(), code))
                .collect();
            maps.insert(col.name.clone(), map);
        }
        Self { maps }
    }

    pub fn apply(&self, table: &RawMetricTable) -> Result<RawMetricTable> {
        let mut out = table.clone();
        for (j, col) in table.columns.iter().enumerate() {
            if col.kind != ColumnKind::Categorical {
                continue;
            }
            let map = self.maps.get(&col.name).ok_or_else(|| {
                Error::Schema(format!("no encoder fitted for column `{}`", col.name))
            })?;
            for row in out.rows.iter_mut() {
                let encoded = match &row[j] {
                    Cell::Cat(s) => match map.get(s) {
                        Some(&code) => Cell::Num(code as f64),
                        None => {
                            return Err(Error::UnseenCategory {
                                column: col.name.clone(),
                                value: s.clone(),
                            })
                        }
                    },
                    other => other.clone(),
                };
                row[j] = encoded;
            }
            out.columns[j].kind = ColumnKind::Numeric;
        }
        Ok(out)
    }
}

pub fn encode_categoricals(table: &RawMetricTable) -> Result<(RawMetricTable, CategoricalEncoder)> {
    let enc = CategoricalEncoder::fit(table);
    let out = enc.apply(table)?;
    Ok((out, enc))
}

/// Removes columns whose observed values are all identical. Returns the
/// pruned table and the removed column names.
pub fn drop_constant_columns(table: &RawMetricTable) -> Result<(RawMetricTable, Vec<String>)> {
    let mut drop = BTreeSet::new();
    for j in 0..table.columns.len() {
        let mut observed = table.rows.iter().map(|r| &r[j]).filter(|c| !c.is_missing());
        let constant = match observed.next() {
            None => true,
            Some(first) => observed.all(|c| c == first),
        };
        if constant {
            drop.insert(j);
        }
    }
    finish_drop(table, drop, "constant-column pruning")
}

/// Removes columns whose missing fraction strictly exceeds `threshold`.
pub fn drop_sparse_columns(table: &RawMetricTable, threshold: f64) -> Result<(RawMetricTable, Vec<String>)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "sparsity threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let drop = (0..table.columns.len())
        .filter(|&j| table.missing_fraction(j) > threshold)
        .collect();
    finish_drop(table, drop, "sparse-column pruning")
}

fn finish_drop(table: &RawMetricTable, drop: BTreeSet<usize>, stage: &str) -> Result<(RawMetricTable, Vec<String>)> {
    let removed = drop.iter().map(|&j| table.columns[j].name.clone()).collect();
    let out = table.without_columns(&drop);
    if out.columns.is_empty() {
        return Err(Error::EmptyFeatures(stage.into()));
    }
    Ok((out, removed))
}

/// Nan-aware Euclidean distance: squared differences over coordinates
/// observed in both rows, rescaled by `total / observed`. `None` if the rows
/// share no observed coordinate.
pub fn nan_euclidean(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let mut sum = 0.0;
    let mut common = 0usize;
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            sum += (x - y) * (x - y);
            common += 1;
        }
    }
    (common > 0).then(|| (sum * a.len() as f64 / common as f64).sqrt())
}

/// kNN imputer with uniform weights. The donor pool is the fit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnImputer {
    pub k: usize,
    pub feature_names: Vec<String>,
    pub pool: Vec<Vec<Option<f64>>>,
}

impl KnnImputer {
    pub fn fit(table: &RawMetricTable, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("kNN imputation needs k >= 1".into()));
        }
        Ok(Self {
            k,
            feature_names: table.column_names(),
            pool: table.numeric_rows()?,
        })
    }

    fn impute_row(&self, row: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
        let missing: Vec<usize> = (0..row.len()).filter(|&j| row[j].is_none()).collect();
        if missing.is_empty() {
            return Ok(row.to_vec());
        }
        let dists: Vec<Option<f64>> = self.pool.iter().map(|p| nan_euclidean(row, p)).collect();
        let mut out = row.to_vec();
        for j in missing {
            let mut donors: Vec<(f64, usize)> = self
                .pool
                .iter()
                .enumerate()
                .filter_map(|(i, p)| match (p[j], dists[i]) {
                    (Some(_), Some(d)) => Some((d, i)),
                    _ => None,
                })
                .collect();
            if donors.len() < self.k {
                return Err(Error::Imputation(format!(
                    "column `{}` has {} candidate neighbors, need {}",
                    self.feature_names[j],
                    donors.len(),
                    self.k
                )));
            }
            donors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let sum: f64 = donors[..self.k]
                .iter()
                .map(|&(_, i)| self.pool[i][j].expect("donor observed"))
                .sum();
            out[j] = Some(sum / self.k as f64);
        }
        Ok(out)
    }

    pub fn transform(&self, table: &RawMetricTable, exec: Execution) -> Result<RawMetricTable> {
        if table.column_names() != self.feature_names {
            return Err(Error::Schema(
                "imputer applied to a table with a different feature set".into(),
            ));
        }
        let rows = table.numeric_rows()?;
        let imputed: Vec<Vec<Option<f64>>> = exec::map(exec, &rows, |r| self.impute_row(r))
            .into_iter()
            .collect::<Result<_>>()?;
        let mut out = table.clone();
        out.rows = imputed
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.map_or(Cell::Missing, Cell::Num)).collect())
            .collect();
        Ok(out)
    }
}

pub fn impute_knn(table: &RawMetricTable, k: usize) -> Result<RawMetricTable> {
    KnnImputer::fit(table, k)?.transform(table, Execution::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix {
    pub sample_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl MetricMatrix {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["sample_id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.sample_ids.iter().zip(&self.values) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<metrics>", e))?;
        Ok(())
    }
}

fn complete_rows(table: &RawMetricTable) -> Result<Vec<Vec<f64>>> {
    table
        .numeric_rows()?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.into_iter()
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::Data(format!("row `{}` still has missing cells", table.sample_ids[i])))
        })
        .collect()
}

pub fn fit_standardizer(train: &RawMetricTable) -> Result<ScalerState> {
    let rows = complete_rows(train)?;
    if rows.is_empty() {
        return Err(Error::Contract("cannot fit a scaler on zero rows".into()));
    }
    let n = rows.len() as f64;
    let d = train.columns.len();
    let mut mean = vec![0.0; d];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in &rows {
        for j in 0..d {
            var[j] += (r[j] - mean[j]).powi(2);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
    if let Some(j) = std.iter().position(|&s| s.is_nan() || s <= 0.0) {
        return Err(Error::Contract(format!(
            "column `{}` has zero variance; prune constant columns first",
            train.columns[j].name
        )));
    }
    Ok(ScalerState {
        feature_names: train.column_names(),
        mean,
        std,
    })
}

pub fn apply_standardizer(state: &ScalerState, table: &RawMetricTable) -> Result<MetricMatrix> {
    if table.column_names() != state.feature_names {
        return Err(Error::Schema(
            "standardizer applied to a table with a different feature set".into(),
        ));
    }
    let rows = complete_rows(table)?;
    let values: Vec<Vec<f64>> = rows
        .into_iter()
        .map(|r| {
            r.iter()
                .zip(state.mean.iter().zip(&state.std))
                .map(|(v, (m, s))| (v - m) / s)
                .collect()
        })
        .collect();
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("standardized metrics contain non-finite values".into()));
    }
    Ok(MetricMatrix {
        sample_ids: table.sample_ids.clone(),
        feature_names: state.feature_names.clone(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub sparsity_threshold: f64,
    pub knn_k: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            sparsity_threshold: 0.05,
            knn_k: 5,
        }
    }
}

/// Every fitted stage of the structural pipeline. Serializes to the JSON
/// sidecar written next to a metric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsState {
    pub level: Level,
    pub input_columns: Vec<String>,
    pub options: PipelineOptions,
    pub encoder: CategoricalEncoder,
    pub dropped_constant: Vec<String>,
    pub dropped_sparse: Vec<String>,
    pub imputer: KnnImputer,
    pub scaler: ScalerState,
}

impl MetricsState {
    pub fn fit(train: &RawMetricTable, options: PipelineOptions) -> Result<(Self, MetricMatrix)> {
        Self::fit_with(train, options, Execution::default())
    }

    pub fn fit_with(train: &RawMetricTable, options: PipelineOptions, exec: Execution) -> Result<(Self, MetricMatrix)> {
        let (encoded, encoder) = encode_categoricals(train)?;
        let (pruned, dropped_constant) = drop_constant_columns(&encoded)?;
        let (pruned, dropped_sparse) = drop_sparse_columns(&pruned, options.sparsity_threshold)?;
        let imputer = KnnImputer::fit(&pruned, options.knn_k)?;
        let filled = imputer.transform(&pruned, exec)?;
        let scaler = fit_standardizer(&filled)?;
        let matrix = apply_standardizer(&scaler, &filled)?;
        Ok((
            Self {
                level: train.level,
                input_columns: train.column_names(),
                options,
                encoder,
                dropped_constant,
                dropped_sparse,
                imputer,
                scaler,
            },
            matrix,
        ))
    }

    pub fn feature_names(&self) -> &[String] {
        &self.scaler.feature_names
    }

    pub fn transform(&self, table: &RawMetricTable, exec: Execution) -> Result<MetricMatrix> {
        let encoded = self.encoder.apply(table)?;
        let selected = encoded.select_columns(&self.imputer.feature_names)?;
        let filled = self.imputer.transform(&selected, exec)?;
        apply_standardizer(&self.scaler, &filled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx_eq(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    fn numeric(names: &[&str], rows: Vec<Vec<Option<f64>>>) -> RawMetricTable {
        let n = rows.len();
        RawMetricTable::from_numeric(Level::Class, names, ids(n), rows).unwrap()
    }

    fn column(values: &[Option<f64>]) -> RawMetricTable {
        numeric(&["x"], values.iter().map(|v| vec![*v]).collect())
    }

    #[test]
    fn metric_inventories() {
        assert_eq!(CLASS_METRICS.len(), 44);
        assert_eq!(METHOD_METRICS.len(), 26);
        let set: BTreeSet<_> = CLASS_METRICS.iter().collect();
        assert_eq!(set.len(), 44);
    }

    #[test]
    fn loads_full_class_export() {
        let mut header = vec!["file", "class", "type"];
        header.extend_from_slice(CLASS_METRICS);
        let values: Vec<String> = (0..CLASS_METRICS.len())
            .map(|i| if CLASS_METRICS[i] == "modifiers" { "public".into() } else { i.to_string() })
            .collect();
        let csv = format!(
            "{}\nA.java,pkg.A,class,{}\n",
            header.join(","),
            values.join(",")
        );
        let t = read_ck_csv(csv.as_bytes(), Level::Class).unwrap();
        assert_eq!(t.columns.len(), 44);
        assert_eq!(t.sample_ids, vec!["A.java::pkg.A"]);
        assert_eq!(t.ignored_columns, vec!["type"]);
        let m = t.column_index("modifiers").unwrap();
        assert_eq!(t.columns[m].kind, ColumnKind::Categorical);
    }

    #[test]
    fn loads_method_export_and_ignores_extras() {
        let csv = "file,class,method,constructor,line,LOC,wmc,commitHash,tcc\n\
                   A.java,A,run/0,false,10,12,3,abc123,\n\
                   A.java,A,<init>/0,true,2,4,,def456,\n";
        let t = read_ck_csv(csv.as_bytes(), Level::Method).unwrap();
        assert_eq!(t.column_names(), vec!["constructor", "loc", "wmc"]);
        assert!(t.ignored_columns.contains(&"commitHash".to_string()));
        assert!(t.ignored_columns.contains(&"tcc".to_string()));
        assert_eq!(t.sample_ids[1], "A.java::A::<init>/0");
        assert_eq!(t.rows[1][2], Cell::Missing);
        assert!(t.columns.len() <= 27);
    }

    #[test]
    fn load_rejects_unrecognized_header() {
        let csv = "sample_id,foo,bar\nx,1,2\n";
        assert!(matches!(read_ck_csv(csv.as_bytes(), Level::Class), Err(Error::Format(_))));
        let csv = "sample_id,loc\nx,abc\n";
        assert!(matches!(read_ck_csv(csv.as_bytes(), Level::Class), Err(Error::Parse { row: 2, .. })));
    }

    fn cat_table(values: &[&str]) -> RawMetricTable {
        RawMetricTable::new(
            Level::Method,
            vec![Column {
                name: "modifiers".into(),
                kind: ColumnKind::Categorical,
            }],
            ids(values.len()),
            values.iter().map(|v| vec![Cell::Cat(v.to_string())]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn label_encoding_uses_sorted_order() {
        let (t, enc) = encode_categoricals(&cat_table(&["public", "private", "public"])).unwrap();
        let codes: Vec<_> = t.rows.iter().map(|r| r[0].as_num().unwrap()).collect();
        assert_eq!(codes, vec![1.0, 0.0, 1.0]);
        let (t, _) = encode_categoricals(&cat_table(&["true", "false"])).unwrap();
        assert_eq!(t.rows[0][0], Cell::Num(1.0));
        assert_eq!(t.rows[1][0], Cell::Num(0.0));
        match enc.apply(&cat_table(&["protected"])) {
            Err(Error::UnseenCategory { value, .. }) => assert_eq!(value, "protected"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_category_becomes_constant_and_is_pruned() {
        let mut t = cat_table(&["public", "public"]);
        t.columns.push(Column {
            name: "loc".into(),
            kind: ColumnKind::Numeric,
        });
        t.rows[0].push(Cell::Num(1.0));
        t.rows[1].push(Cell::Num(2.0));
        let (encoded, _) = encode_categoricals(&t).unwrap();
        assert_eq!(encoded.rows[0][0], Cell::Num(0.0));
        let (pruned, removed) = drop_constant_columns(&encoded).unwrap();
        assert_eq!(removed, vec!["modifiers"]);
        assert_eq!(pruned.column_names(), vec!["loc"]);
    }

    #[test]
    fn constant_column_rules() {
        let t = numeric(
            &["a", "b", "c", "d"],
            vec![
                vec![Some(3.0), Some(3.0), Some(5.0), Some(1.0)],
                vec![Some(3.0), Some(3.0), None, Some(2.0)],
                vec![Some(3.0), Some(4.0), Some(5.0), Some(3.0)],
            ],
        );
        let (out, removed) = drop_constant_columns(&t).unwrap();
        assert_eq!(removed, vec!["a", "c"]);
        assert_eq!(out.column_names(), vec!["b", "d"]);
        assert!(matches!(
            drop_constant_columns(&column(&[Some(1.0), Some(1.0)])),
            Err(Error::EmptyFeatures(_))
        ));
    }

    #[test]
    fn sparse_column_threshold_is_strict() {
        let mk = |missing: usize| -> Vec<Option<f64>> {
            (0..100).map(|i| if i < missing { None } else { Some(i as f64) }).collect()
        };
        let six = mk(6);
        let five = mk(5);
        let rows: Vec<Vec<Option<f64>>> = (0..100)
            .map(|i| vec![six[i], five[i], Some(i as f64)])
            .collect();
        let t = numeric(&["six", "five", "full"], rows);
        let (out, removed) = drop_sparse_columns(&t, 0.05).unwrap();
        assert_eq!(removed, vec!["six"]);
        assert_eq!(out.column_names(), vec!["five", "full"]);
        let (same, none) = drop_sparse_columns(&out.select_columns(&["full".into()]).unwrap(), 0.05).unwrap();
        assert!(none.is_empty());
        assert_eq!(same.n_rows(), 100);
    }

    #[test]
    fn knn_small_examples() {
        let t = numeric(
            &["x", "y"],
            vec![
                vec![Some(1.0), Some(2.0)],
                vec![Some(3.0), Some(2.0)],
                vec![None, Some(2.0)],
            ],
        );
        let out = impute_knn(&t, 2).unwrap();
        assert_eq!(out.rows[2], vec![Cell::Num(2.0), Cell::Num(2.0)]);
        // k = 1 with equidistant donors picks the earlier row
        let out = impute_knn(&t, 1).unwrap();
        assert_eq!(out.rows[2][0], Cell::Num(1.0));
        assert!(matches!(impute_knn(&t, 3), Err(Error::Imputation(_))));
        let full = numeric(&["x"], vec![vec![Some(1.0)], vec![Some(2.0)]]);
        assert_eq!(impute_knn(&full, 5).unwrap(), full);
    }

    #[test]
    fn nan_euclidean_rescales() {
        let d = nan_euclidean(&[Some(0.0), None, Some(0.0)], &[Some(3.0), Some(1.0), Some(4.0)]).unwrap();
        assert!(approx_eq(d, (25.0f64 * 1.5).sqrt(), 1e-12));
        assert_eq!(nan_euclidean(&[None, Some(1.0)], &[Some(1.0), None]), None);
    }

    #[test]
    fn standardizer_closed_form() {
        let t = column(&[Some(2.0), Some(4.0), Some(6.0)]);
        let s = fit_standardizer(&t).unwrap();
        assert!(approx_eq(s.mean[0], 4.0, 1e-15));
        assert!(approx_eq(s.std[0], (8.0f64 / 3.0).sqrt(), 1e-12));
        assert!(approx_eq(s.std[0], 1.63299, 1e-5));
        let m = apply_standardizer(&s, &t).unwrap();
        let z: Vec<f64> = m.values.iter().map(|r| r[0]).collect();
        for (got, want) in z.iter().zip([-1.22474, 0.0, 1.22474]) {
            assert!(approx_eq(*got, want, 1e-5));
        }
        let test = column(&[Some(4.0)]);
        assert_eq!(apply_standardizer(&s, &test).unwrap().values[0][0], 0.0);
        assert!(matches!(fit_standardizer(&column(&[Some(1.0), Some(1.0)])), Err(Error::Contract(_))));
        let other = numeric(&["y"], vec![vec![Some(1.0)]]);
        assert!(matches!(apply_standardizer(&s, &other), Err(Error::Schema(_))));
    }

    fn random_table(seed: u64, n: usize, d: usize, missing_every: usize) -> RawMetricTable {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..d).map(|j| format!("m{j}")).collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut k = 0;
        let rows = (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        k += 1;
                        if missing_every > 0 && k % missing_every == 0 {
                            None
                        } else {
                            Some(rng.gen_range(-5.0..20.0))
                        }
                    })
                    .collect()
            })
            .collect();
        numeric(&name_refs, rows)
    }

    #[test]
    fn pipeline_output_is_clean_and_stable() {
        let t = random_table(3, 200, 6, 97);
        let (state, m) = MetricsState::fit(&t, PipelineOptions::default()).unwrap();
        assert!(m.values.iter().flatten().all(|v| v.is_finite()));
        let again = state.transform(&t, Execution::Sequential).unwrap();
        assert_eq!(again, m);
        // Fitting a fresh pipeline on the output reproduces it.
        let names: Vec<&str> = m.feature_names.iter().map(String::as_str).collect();
        let back = numeric(&names, m.values.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect());
        let (state2, m2) = MetricsState::fit(&back, PipelineOptions::default()).unwrap();
        assert!(state2.dropped_constant.is_empty() && state2.dropped_sparse.is_empty());
        for (a, b) in m.values.iter().flatten().zip(m2.values.iter().flatten()) {
            assert!(approx_eq(*a, *b, 1e-9));
        }
        let json = serde_json::to_string(&state).unwrap();
        let restored: MetricsState = serde_json::from_str(&json).unwrap();
        assert_eq!(restored, state);
    }

    proptest! {
        #[test]
        fn imputation_keeps_observed_cells(seed in any::<u64>(), n in 8usize..40, d in 1usize..6) {
            let t = random_table(seed, n, d, 7);
            if let Ok(out) = impute_knn(&t, 5) {
                for (r0, r1) in t.rows.iter().zip(&out.rows) {
                    for (a, b) in r0.iter().zip(r1) {
                        if !a.is_missing() {
                            prop_assert_eq!(a, b);
                        }
                        prop_assert!(!b.is_missing());
                    }
                }
            }
        }

        #[test]
        fn pipeline_is_scale_invariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let t = random_table(seed, 120, 4, 131);
            let mut scaled = t.clone();
            for r in scaled.rows.iter_mut() {
                for c in r.iter_mut() {
                    if let Cell::Num(v) = c {
                        *v *= scale;
                    }
                }
            }
            let (_, a) = MetricsState::fit(&t, PipelineOptions::default()).unwrap();
            let (_, b) = MetricsState::fit(&scaled, PipelineOptions::default()).unwrap();
            for (x, y) in a.values.iter().flatten().zip(b.values.iter().flatten()) {
                prop_assert!(approx_eq(*x, *y, 1e-9));
            }
        }
    }
}
