//! Confusion-matrix scores, stratified k-fold and hold-out protocols, and
//! report rendering.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{stratified_split_indices, Smell};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::metrics::PipelineOptions;
use crate::model::{build_model, EnsembleModel, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(pred: &[u8], truth: &[u8]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "confusion needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1, each 0 when undefined.
pub fn precision_recall_f1(cm: &ConfusionMatrix) -> (f64, f64, f64) {
    let p = ratio(cm.tp, cm.tp + cm.fp);
    let r = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(cm: &ConfusionMatrix) -> f64 {
    let (tp, fp, fn_, tn) = (cm.tp as i128, cm.fp as i128, cm.fn_ as i128, cm.tn as i128);
    let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if factors.contains(&0) {
        return 0.0;
    }
    let num = (tp * tn - fp * fn_) as f64;
    let half = |a: i128, b: i128| a.checked_mul(b).map_or((a as f64) * (b as f64), |p| p as f64).sqrt();
    num / (half(factors[0], factors[1]) * half(factors[2], factors[3]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
}

impl Scores {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let (precision, recall, f1) = precision_recall_f1(cm);
        Self {
            precision,
            recall,
            f1,
            mcc: mcc(cm),
        }
    }

    pub fn mean(all: &[Scores]) -> Option<Scores> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        let avg = |f: fn(&Scores) -> f64| all.iter().map(f).sum::<f64>() / n;
        Some(Scores {
            precision: avg(|s| s.precision),
            recall: avg(|s| s.recall),
            f1: avg(|s| s.f1),
            mcc: avg(|s| s.mcc),
        })
    }
}

/// Per-class shuffle, then round-robin assignment; the negative class
/// continues the fold offset where the positives stopped.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 0).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    for (name, class) in [("positive", &pos), ("negative", &neg)] {
        if class.len() < k {
            return Err(Error::Stratification(format!(
                "{name} class has {} samples, fewer than {k} folds",
                class.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (j, &i) in pos.iter().chain(&neg).enumerate() {
        folds[j % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "split80_20")]
    Split8020,
    #[default]
    #[serde(rename = "cv5")]
    Cv5,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Split8020 => "split80_20",
            Protocol::Cv5 => "cv5",
        })
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "split80_20" | "holdout" => Ok(Protocol::Split8020),
            "cv5" | "cv" => Ok(Protocol::Cv5),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    /// Set when the fold failed to train or evaluate.
    pub error: Option<String>,
    pub confusion: Option<ConfusionMatrix>,
    pub scores: Option<Scores>,
    pub test_ids: Vec<String>,
    pub truth: Vec<u8>,
    pub predictions: Vec<u8>,
    pub probabilities: Vec<f64>,
    pub train_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub smell: Smell,
    pub run: String,
    pub protocol: Protocol,
    /// How `aggregate` combines folds.
    pub aggregation: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub folds: Vec<FoldResult>,
    pub aggregate: Option<Scores>,
}

impl FoldReport {
    pub fn completed(&self) -> impl Iterator<Item = &FoldResult> {
        self.folds.iter().filter(|f| f.error.is_none())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub folds: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub pipeline: PipelineOptions,
    pub exec: Execution,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            test_fraction: 0.2,
            seed: 0,
            pipeline: PipelineOptions::default(),
            exec: Execution::default(),
        }
    }
}

fn run_fold(
    data: &Dataset,
    config: &ModelConfig,
    fold: usize,
    train: &[usize],
    test: &[usize],
    opts: &EvalOptions,
) -> (FoldResult, Option<EnsembleModel>) {
    let seed = config.seed.wrapping_add(fold as u64);
    let mut result = FoldResult {
        fold,
        seed,
        error: None,
        confusion: None,
        scores: None,
        test_ids: test.iter().map(|&i| data.ids[i].clone()).collect(),
        truth: test.iter().map(|&i| data.labels[i]).collect(),
        predictions: Vec::new(),
        probabilities: Vec::new(),
        train_loss: Vec::new(),
    };
    let attempt = || -> Result<(Vec<f64>, Vec<f64>, EnsembleModel)> {
        let (states, tr, te) = data.prepare(train, test, opts.pipeline, opts.exec)?;
        let cfg = ModelConfig { seed, ..config.clone() };
        let mut model = build_model(&cfg, tr.semantic_len(), tr.n_metrics())?;
        model.preprocessing = Some(states);
        let history = model.train(&tr)?;
        Ok((model.predict_proba(&te, opts.exec)?, history.epoch_loss, model))
    };
    let mut trained = None;
    match attempt() {
        Ok((probs, loss, model)) => {
            trained = Some(model);
            result.predictions = crate::model::apply_threshold(&probs, config.decision_threshold);
            result.probabilities = probs;
            result.train_loss = loss;
            match confusion(&result.predictions, &result.truth) {
                Ok(cm) => {
                    result.scores = Some(Scores::from_confusion(&cm));
                    result.confusion = Some(cm);
                }
                Err(e) => result.error = Some(e.to_string()),
            }
        }
        Err(e) => {
            log::warn!("fold {fold} failed: {e}");
            result.error = Some(e.to_string());
        }
    }
    (result, trained)
}

fn assemble(data: &Dataset, config: &ModelConfig, run: &str, protocol: Protocol, folds: Vec<FoldResult>) -> FoldReport {
    let done: Vec<Scores> = folds.iter().filter_map(|f| f.scores).collect();
    if done.len() < folds.len() {
        log::warn!("aggregating {} of {} folds", done.len(), folds.len());
    }
    FoldReport {
        smell: data.smell,
        run: run.to_string(),
        protocol,
        aggregation: "mean_over_folds".into(),
        config_hash: config.hash(),
        seed: config.seed,
        config: config.clone(),
        folds,
        aggregate: Scores::mean(&done),
    }
}

/// Stratified k-fold: preprocessing and model are fit per fold on that
/// fold's training portion. Folds run concurrently under `opts.exec`.
pub fn cross_validate(data: &Dataset, config: &ModelConfig, run: &str, opts: &EvalOptions) -> Result<FoldReport> {
    config.validate()?;
    let folds = stratified_kfold(&data.labels, opts.folds, opts.seed)?;
    let results = exec::map_range(opts.exec, folds.len(), |f| {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        run_fold(data, config, f, &train, &folds[f], opts).0
    });
    Ok(assemble(data, config, run, Protocol::Cv5, results))
}

/// Single stratified train/test split.
pub fn holdout(data: &Dataset, config: &ModelConfig, run: &str, opts: &EvalOptions) -> Result<FoldReport> {
    Ok(holdout_with_model(data, config, run, opts)?.0)
}

/// [`holdout`], also returning the trained model unless training failed.
pub fn holdout_with_model(
    data: &Dataset,
    config: &ModelConfig,
    run: &str,
    opts: &EvalOptions,
) -> Result<(FoldReport, Option<EnsembleModel>)> {
    config.validate()?;
    let (train, test) = stratified_split_indices(&data.labels, opts.test_fraction, opts.seed)?;
    let (result, model) = run_fold(data, config, 0, &train, &test, opts);
    Ok((assemble(data, config, run, Protocol::Split8020, vec![result]), model))
}

pub fn evaluate(data: &Dataset, config: &ModelConfig, run: &str, protocol: Protocol, opts: &EvalOptions) -> Result<FoldReport> {
    match protocol {
        Protocol::Cv5 => cross_validate(data, config, run, opts),
        Protocol::Split8020 => holdout(data, config, run, opts),
    }
}

pub const CSV_HEADER: [&str; 11] = ["smell", "run", "fold", "P", "R", "F1", "MCC", "TP", "FP", "FN", "TN"];

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub text: String,
    pub csv: String,
}

fn fixed4(v: f64) -> String {
    format!("{v:.4}")
}

/// Aligned text table, one row per report, plus a CSV with per-fold rows
/// and a `mean` row per report.
pub fn render_report(reports: &[FoldReport]) -> Result<RenderedReport> {
    if reports.is_empty() {
        return Err(Error::Contract("nothing to report".into()));
    }
    let head = ["smell", "run", "protocol", "folds", "P", "R", "F1", "MCC"];
    let mut rows: Vec<Vec<String>> = Vec::new();
    for r in reports {
        let done = r.completed().count();
        let cells = match r.aggregate {
            Some(s) => [s.precision, s.recall, s.f1, s.mcc].map(fixed4).to_vec(),
            None => vec!["-".to_string(); 4],
        };
        let mut row = vec![r.smell.to_string(), r.run.clone(), r.protocol.to_string(), format!("{done}/{}", r.folds.len())];
        row.extend(cells);
        rows.push(row);
    }
    let widths: Vec<usize> = (0..head.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([head[c].len()]).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    let line = |cells: Vec<&str>, text: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, &w))| if c < 4 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(text, "{}", parts.join("  ").trim_end());
    };
    line(head.to_vec(), &mut text);
    for r in &rows {
        line(r.iter().map(String::as_str).collect(), &mut text);
    }
    let _ = writeln!(text, "aggregate: arithmetic mean over completed folds");

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in reports {
        let smell = r.smell.to_string();
        for f in &r.folds {
            let mut rec = vec![smell.clone(), r.run.clone(), f.fold.to_string()];
            match (f.scores, f.confusion) {
                (Some(s), Some(cm)) => {
                    rec.extend([s.precision, s.recall, s.f1, s.mcc].map(fixed4));
                    rec.extend([cm.tp, cm.fp, cm.fn_, cm.tn].map(|c| c.to_string()));
                }
                _ => rec.extend(std::iter::repeat_n(String::new(), 8)),
            }
            w.write_record(&rec)?;
        }
        let mut rec = vec![smell, r.run.clone(), "mean".to_string()];
        match r.aggregate {
            Some(s) => rec.extend([s.precision, s.recall, s.f1, s.mcc].map(fixed4)),
            None => rec.extend(std::iter::repeat_n(String::new(), 4)),
        }
        rec.extend(std::iter::repeat_n(String::new(), 4));
        w.write_record(&rec)?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::io("<report>", e.into_error()))?)
        .expect("csv output is utf-8");
    Ok(RenderedReport { text, csv })
}
