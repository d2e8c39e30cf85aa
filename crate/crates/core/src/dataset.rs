//! Joins labels with both feature sources and turns index splits into
//! model-ready [`Samples`], fitting every preprocessing state on the
//! training indices only.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledCorpus, Smell};
use crate::encode::TokenState;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{MetricsState, PipelineOptions, RawMetricTable};
use crate::model::Samples;

/// Semantic features keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub enum SemanticSource {
    /// Lexed tokens; indexing and padding are fit per split.
    Tokens(BTreeMap<String, Vec<String>>),
    /// Aggregated embedding vectors, used as-is.
    Vectors(BTreeMap<String, Vec<f64>>),
}

/// Preprocessing fitted on one training split.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FittedStates {
    pub metrics: Option<MetricsState>,
    pub tokens: Option<TokenState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub smell: Smell,
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub tokens: Option<Vec<Vec<String>>>,
    pub vectors: Option<Vec<Vec<f64>>>,
    /// Raw metric rows aligned with `ids`.
    pub metrics: Option<RawMetricTable>,
}

impl Dataset {
    /// Keeps the labeled samples present in every supplied source, in
    /// corpus order.
    pub fn assemble(corpus: &LabeledCorpus, semantic: Option<&SemanticSource>, metrics: Option<&RawMetricTable>) -> Result<Self> {
        if semantic.is_none() && metrics.is_none() {
            return Err(Error::Config("a dataset needs at least one feature source".into()));
        }
        let metric_rows: Option<HashMap<&str, usize>> = metrics.map(|t| {
            t.sample_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
        });
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut tokens = Vec::new();
        let mut vectors = Vec::new();
        let mut rows = Vec::new();
        let mut missing = 0usize;
        for s in &corpus.samples {
            let id = s.sample_id.as_str();
            let sem_ok = match semantic {
                Some(SemanticSource::Tokens(m)) => m.contains_key(id),
                Some(SemanticSource::Vectors(m)) => m.contains_key(id),
                None => true,
            };
            let row = metric_rows.as_ref().map(|m| m.get(id).copied());
            if !sem_ok || row == Some(None) {
                missing += 1;
                continue;
            }
            match semantic {
                Some(SemanticSource::Tokens(m)) => tokens.push(m[id].clone()),
                Some(SemanticSource::Vectors(m)) => vectors.push(m[id].clone()),
                None => {}
            }
            if let Some(Some(r)) = row {
                rows.push(r);
            }
            ids.push(s.sample_id.clone());
            labels.push(s.label);
        }
        if missing > 0 {
            log::warn!("{missing} labeled samples lack features and were skipped");
        }
        if ids.is_empty() {
            return Err(Error::EmptyCorpus("no labeled sample has all requested features".into()));
        }
        if let Some(SemanticSource::Vectors(_)) = semantic {
            let d = vectors[0].len();
            if vectors.iter().any(|v| v.len() != d) {
                return Err(Error::Format("embedding vectors differ in length".into()));
            }
        }
        let metrics = metrics.map(|t| {
            let mut sel = t.select_rows(&rows);
            sel.sample_ids = ids.clone();
            sel
        });
        Ok(Dataset {
            smell: corpus.smell,
            ids,
            labels,
            tokens: matches!(semantic, Some(SemanticSource::Tokens(_))).then_some(tokens),
            vectors: matches!(semantic, Some(SemanticSource::Vectors(_))).then_some(vectors),
            metrics,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn has_semantic(&self) -> bool {
        self.tokens.is_some() || self.vectors.is_some()
    }

    pub fn fit_states(&self, train: &[usize], options: PipelineOptions, exec: Execution) -> Result<FittedStates> {
        let metrics = match &self.metrics {
            Some(t) => Some(MetricsState::fit_with(&t.select_rows(train), options, exec)?.0),
            None => None,
        };
        let tokens = match &self.tokens {
            Some(all) => {
                let lists: Vec<Vec<String>> = train.iter().map(|&i| all[i].clone()).collect();
                Some(TokenState::fit(&lists)?)
            }
            None => None,
        };
        Ok(FittedStates { metrics, tokens })
    }

    /// Transforms the rows at `idx` with already-fitted states.
    pub fn samples(&self, idx: &[usize], states: &FittedStates, exec: Execution) -> Result<Samples> {
        let semantic = match (&self.tokens, &self.vectors, &states.tokens) {
            (Some(all), _, Some(ts)) => idx
                .iter()
                .map(|&i| Ok(ts.encode(&self.ids[i], &all[i])?.indices.iter().map(|&t| f64::from(t)).collect()))
                .collect::<Result<Vec<Vec<f64>>>>()?,
            (Some(_), _, None) => return Err(Error::Contract("token features need a fitted token state".into())),
            (None, Some(all), _) => idx.iter().map(|&i| all[i].clone()).collect(),
            (None, None, _) => vec![Vec::new(); idx.len()],
        };
        let structural = match (&self.metrics, &states.metrics) {
            (Some(t), Some(ms)) => ms.transform(&t.select_rows(idx), exec)?.values,
            (Some(_), None) => return Err(Error::Contract("metric features need a fitted metrics state".into())),
            (None, _) => vec![Vec::new(); idx.len()],
        };
        Ok(Samples {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            semantic,
            structural,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// Fits on `train`, then transforms both portions.
    pub fn prepare(
        &self,
        train: &[usize],
        test: &[usize],
        options: PipelineOptions,
        exec: Execution,
    ) -> Result<(FittedStates, Samples, Samples)> {
        let states = self.fit_states(train, options, exec)?;
        let tr = self.samples(train, &states, exec)?;
        let te = self.samples(test, &states, exec)?;
        Ok((states, tr, te))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabeledSample;
    use crate::metrics::Level;

    fn corpus(n: usize) -> LabeledCorpus {
        let samples = (0..n)
            .map(|i| LabeledSample {
                sample_id: format!("s{i:02}"),
                smell: Smell::GodClass,
                label: u8::from(i % 3 == 0),
                source_ref: None,
            })
            .collect();
        LabeledCorpus::new(Smell::GodClass, samples).unwrap()
    }

    fn table(n: usize) -> RawMetricTable {
        let rows = (0..n)
            .map(|i| vec![Some(i as f64), Some((i * i % 7) as f64), if i == 4 { None } else { Some(1.0 + (i % 2) as f64) }])
            .collect();
        let ids = (0..n).map(|i| format!("s{i:02}")).collect();
        RawMetricTable::from_numeric(Level::Class, &["loc", "wmc", "cbo"], ids, rows).unwrap()
    }

    fn tokens(n: usize) -> SemanticSource {
        SemanticSource::Tokens(
            (0..n)
                .map(|i| (format!("s{i:02}"), (0..(3 + i % 4)).map(|t| format!("t{}", (i + t) % 6)).collect()))
                .collect(),
        )
    }

    #[test]
    fn assemble_joins_and_skips_missing() {
        let mut t = table(20);
        t.sample_ids[5] = "elsewhere".into();
        let d = Dataset::assemble(&corpus(20), Some(&tokens(20)), Some(&t)).unwrap();
        assert_eq!(d.len(), 19);
        assert!(!d.ids.contains(&"s05".to_string()));
        assert_eq!(d.metrics.as_ref().unwrap().sample_ids, d.ids);
        assert_eq!(d.metrics.as_ref().unwrap().rows[5][0].as_num(), Some(6.0));
        assert!(Dataset::assemble(&corpus(5), None, None).is_err());
    }

    #[test]
    fn fold_fit_ignores_held_out_rows() {
        let d = Dataset::assemble(&corpus(30), Some(&tokens(30)), Some(&table(30))).unwrap();
        let train: Vec<usize> = (0..30).filter(|i| i % 5 != 0).collect();
        let test: Vec<usize> = (0..30).filter(|i| i % 5 == 0).collect();
        let before = d.fit_states(&train, PipelineOptions::default(), Execution::Sequential).unwrap();

        let mut perturbed = d.clone();
        for &i in &test {
            perturbed.tokens.as_mut().unwrap()[i] = vec!["never_seen".into(); 40];
            let row = &mut perturbed.metrics.as_mut().unwrap().rows[i];
            row[0] = crate::metrics::Cell::Num(1e6);
            row[2] = crate::metrics::Cell::Missing;
        }
        let after = perturbed.fit_states(&train, PipelineOptions::default(), Execution::Sequential).unwrap();
        assert_eq!(before, after);

        let (_, tr, te) = d.prepare(&train, &test, PipelineOptions::default(), Execution::Sequential).unwrap();
        assert_eq!((tr.len(), te.len()), (train.len(), test.len()));
        let len = before.tokens.as_ref().unwrap().padded_length;
        assert!(tr.semantic.iter().chain(&te.semantic).all(|r| r.len() == len));
        assert!(te.structural.iter().all(|r| r.len() == tr.n_metrics()));
    }

    #[test]
    fn single_source_datasets() {
        let d = Dataset::assemble(&corpus(12), None, Some(&table(12))).unwrap();
        assert!(!d.has_semantic());
        let idx: Vec<usize> = (0..12).collect();
        let states = d.fit_states(&idx, PipelineOptions::default(), Execution::Sequential).unwrap();
        let s = d.samples(&idx, &states, Execution::Sequential).unwrap();
        assert!(s.semantic.iter().all(Vec::is_empty));

        let v = SemanticSource::Vectors((0..12).map(|i| (format!("s{i:02}"), vec![i as f64; 4])).collect());
        let d = Dataset::assemble(&corpus(12), Some(&v), None).unwrap();
        let s = d.samples(&idx, &FittedStates::default(), Execution::Sequential).unwrap();
        assert_eq!(s.semantic[3], vec![3.0; 4]);
    }
}
