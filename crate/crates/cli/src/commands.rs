use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use smellfuse::corpus::{build_corpus, load_reviews, read_corpus, write_corpus, LabeledCorpus, ReviewSchema, Smell};
use smellfuse::dataset::{Dataset, SemanticSource};
use smellfuse::encode::{
    load_embedding_file, tokenize_java, write_token_csv, Aggregation, EmbeddingTable, Encoder, TokenState,
};
use smellfuse::eval::{cross_validate, holdout_with_model, render_report, FoldReport};
use smellfuse::fsutil::write_atomic;
use smellfuse::metrics::{load_ck_csv, Level, MetricsState, PipelineOptions};
use smellfuse::model::{grad_check_model, Ablation, ModelConfig};
use smellfuse::nn::gradcheck::layer_suite;
use smellfuse::{Error, Result};

use crate::config::{default_run_name, RunConfig};
use crate::ConfigArgs;

pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const MODEL_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";

const LAYER_TOLERANCE: f64 = 1e-4;
const MODEL_TOLERANCE: f64 = 1e-3;

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T> {
    s.parse().map_err(Error::Config)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_csv_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn label(reviews: &Path, smell: &str, out: &Path, schema: &ReviewSchema) -> Result<()> {
    let smell: Smell = parse(smell)?;
    let records = load_reviews(reviews, schema)?;
    let corpus = build_corpus(&records, smell)?;
    write_csv_with(out, |buf| write_corpus(&corpus, buf))?;
    let (neg, pos) = corpus.counts();
    println!("{smell}: negative={neg} positive={pos} dropped_ties={}", corpus.dropped_ties);
    Ok(())
}

fn level_for(s: &str) -> Result<Level> {
    match s.trim().to_ascii_lowercase().as_str() {
        "class" => Ok(Level::Class),
        "method" => Ok(Level::Method),
        other => Err(Error::Config(format!("unknown metric level `{other}`"))),
    }
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}

pub fn prep_metrics(ck: &Path, level: &str, out: &Path, sparsity: f64, knn_k: usize) -> Result<()> {
    let table = load_ck_csv(ck, level_for(level)?)?;
    let options = PipelineOptions {
        sparsity_threshold: sparsity,
        knn_k,
    };
    let (state, matrix) = MetricsState::fit(&table, options)?;
    write_csv_with(out, |buf| matrix.write_csv(buf))?;
    write_json(&sidecar(out, ".state.json"), &state)?;
    println!(
        "{} rows, {} features kept ({} constant, {} sparse dropped)",
        matrix.values.len(),
        matrix.n_features(),
        state.dropped_constant.len(),
        state.dropped_sparse.len()
    );
    Ok(())
}

/// Lexes every `<sample_id>.java` directly under `dir`.
fn load_sources(dir: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("java") {
            continue;
        }
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let tokens = tokenize_java(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        out.insert(id, tokens);
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus(format!("no .java files in {}", dir.display())));
    }
    Ok(out)
}

fn load_vectors(path: &Path, rule: Aggregation) -> Result<EmbeddingTable> {
    let table = load_embedding_file(path)?;
    if table.is_empty() {
        return Err(Error::EmptyCorpus(format!("{} has no embeddings", path.display())));
    }
    table.aggregate(rule)
}

pub fn encode(encoder: &str, sources: Option<&Path>, embeddings: Option<&Path>, out: &Path) -> Result<()> {
    let encoder: Encoder = parse(encoder)?;
    match encoder.aggregation() {
        None => {
            let dir = sources.ok_or_else(|| Error::Config("token_index needs --sources".into()))?;
            let lexed = load_sources(dir)?;
            let lists: Vec<Vec<String>> = lexed.values().cloned().collect();
            let state = TokenState::fit(&lists)?;
            let seqs = lexed
                .iter()
                .map(|(id, toks)| state.encode(id, toks))
                .collect::<Result<Vec<_>>>()?;
            write_csv_with(out, |buf| write_token_csv(&seqs, buf))?;
            write_json(&sidecar(out, ".vocab.json"), &state)?;
            println!(
                "{} samples, vocabulary {}, padded length {}",
                seqs.len(),
                state.vocab.len(),
                state.padded_length
            );
        }
        Some(rule) => {
            let path = embeddings.ok_or_else(|| Error::Config(format!("{encoder:?} needs --embeddings")))?;
            let table = load_vectors(path, rule)?;
            write_csv_with(out, |buf| {
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(buf);
                for (id, v) in table.ids.iter().zip(&table.vectors) {
                    let mut rec = vec![id.clone()];
                    rec.extend(v.iter().map(f64::to_string));
                    w.write_record(&rec)?;
                }
                w.flush().map_err(|e| Error::io("<embeddings>", e))?;
                Ok(())
            })?;
            println!("{} samples of dimension {}", table.len(), table.dim);
        }
    }
    Ok(())
}

fn load_corpus(cfg: &RunConfig) -> Result<LabeledCorpus> {
    match (&cfg.reviews, &cfg.corpus) {
        (Some(r), _) => build_corpus(&load_reviews(r, &ReviewSchema::default())?, cfg.smell),
        (None, Some(c)) => read_corpus(c, cfg.smell),
        (None, None) => Err(Error::Config("set either `reviews` or `corpus`".into())),
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let corpus = load_corpus(cfg)?;
    let ablation = cfg.model.effective_ablation();
    let semantic = if ablation.uses_semantic() {
        Some(match cfg.encoder.aggregation() {
            None => SemanticSource::Tokens(load_sources(cfg.sources.as_deref().expect("validated"))?),
            Some(rule) => {
                let t = load_vectors(cfg.embeddings.as_deref().expect("validated"), rule)?;
                SemanticSource::Vectors(t.ids.into_iter().zip(t.vectors).collect())
            }
        })
    } else {
        None
    };
    let metrics = if ablation.uses_structural() {
        let level = if cfg.smell.is_method_level() { Level::Method } else { Level::Class };
        Some(load_ck_csv(cfg.ck_csv.as_deref().expect("validated"), level)?)
    } else {
        None
    };
    Dataset::assemble(&corpus, semantic.as_ref(), metrics.as_ref())
}

fn write_report_files(dir: &Path, report: &FoldReport) -> Result<()> {
    write_json(&dir.join(REPORT_JSON), report)?;
    let rendered = render_report(std::slice::from_ref(report))?;
    write_atomic(&dir.join(REPORT_CSV), rendered.csv.as_bytes())?;
    write_atomic(&dir.join(REPORT_TXT), rendered.text.as_bytes())
}

fn finish(report: &FoldReport) -> Result<()> {
    if report.aggregate.is_none() {
        let cause = report.folds.iter().find_map(|f| f.error.clone()).unwrap_or_default();
        return Err(Error::Numeric(format!("no fold completed: {cause}")));
    }
    Ok(())
}

fn run_train(cfg: &RunConfig, data: &Dataset) -> Result<PathBuf> {
    let dir = cfg.output_dir.join(cfg.run_name());
    create_dir(&dir)?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let (report, model) = holdout_with_model(data, &cfg.model, &cfg.run_name(), &cfg.eval_options())?;
    if let Some(model) = model {
        model.save(dir.join(MODEL_FILE))?;
        let history = smellfuse::model::History {
            epoch_loss: report.folds[0].train_loss.clone(),
        };
        write_csv_with(&dir.join(HISTORY_FILE), |buf| history.write_csv(buf))?;
    }
    write_report_files(&dir, &report)?;
    print!("{}", render_report(std::slice::from_ref(&report))?.text);
    finish(&report)?;
    Ok(dir)
}

pub fn train(args: &ConfigArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    let data = load_dataset(&cfg)?;
    run_train(&cfg, &data).map(|_| ())
}

fn run_cv(cfg: &RunConfig, data: &Dataset) -> Result<FoldReport> {
    let dir = cfg.output_dir.join(cfg.run_name());
    create_dir(&dir)?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let report = cross_validate(data, &cfg.model, &cfg.run_name(), &cfg.eval_options())?;
    write_report_files(&dir, &report)?;
    Ok(report)
}

pub fn cv(args: &ConfigArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    let data = load_dataset(&cfg)?;
    let report = run_cv(&cfg, &data)?;
    print!("{}", render_report(std::slice::from_ref(&report))?.text);
    finish(&report)
}

pub fn report(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let reports = runs
        .iter()
        .map(|dir| {
            let path = dir.join(REPORT_JSON);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str::<FoldReport>(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let rendered = render_report(&reports)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_atomic(&dir.join(REPORT_TXT), rendered.text.as_bytes())?;
        write_atomic(&dir.join(REPORT_CSV), rendered.csv.as_bytes())?;
    }
    print!("{}", rendered.text);
    Ok(())
}

pub fn gradcheck(seeds: u64) -> Result<()> {
    let seeds: Vec<u64> = (0..seeds.max(1)).collect();
    let mut failed = Vec::new();
    for r in layer_suite(&seeds)? {
        let ok = r.max_rel_err < LAYER_TOLERANCE;
        println!("{:<20} {:.3e}  {}", r.name, r.max_rel_err, if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(r.name);
        }
    }
    for ablation in Ablation::ALL {
        let err = seeds[..seeds.len().min(2)]
            .iter()
            .map(|&s| grad_check_model(s, ablation))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let ok = err < MODEL_TOLERANCE;
        let name = format!("model_{ablation}");
        println!("{name:<20} {err:.3e}  {}", if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn sweep(args: &ConfigArgs, kernels: &[usize], betas: &[f64], workers: Option<usize>) -> Result<()> {
    let base = RunConfig::load(&args.config, &args.overrides)?;
    let data = load_dataset(&base)?;
    let points: Vec<RunConfig> = kernels
        .iter()
        .flat_map(|&k| betas.iter().map(move |&b| (k, b)))
        .map(|(kernel_size, beta)| {
            let model = ModelConfig {
                kernel_size,
                beta,
                ..base.model.clone()
            };
            let run_name = Some(match &base.run_name {
                Some(prefix) => format!("{prefix}_{}", default_run_name(&base.smell, &model)),
                None => default_run_name(&base.smell, &model),
            });
            let cfg = RunConfig {
                model,
                run_name,
                ..base.clone()
            };
            cfg.validate().map(|_| cfg)
        })
        .collect::<Result<_>>()?;
    let threads = workers.unwrap_or(base.workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} workers: {e}")))?;
    let results: Vec<Result<FoldReport>> = pool.install(|| {
        use rayon::prelude::*;
        points
            .par_iter()
            .map(|cfg| match cfg.protocol {
                smellfuse::eval::Protocol::Cv5 => run_cv(cfg, &data),
                smellfuse::eval::Protocol::Split8020 => {
                    let dir = run_train(cfg, &data)?;
                    let text = std::fs::read_to_string(dir.join(REPORT_JSON)).map_err(|e| Error::io(&dir, e))?;
                    Ok(serde_json::from_str(&text)?)
                }
            })
            .collect()
    });
    let mut reports = Vec::new();
    for (cfg, r) in points.iter().zip(results) {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => eprintln!("{}: {e}", cfg.run_name()),
        }
    }
    if reports.is_empty() {
        return Err(Error::Numeric("every grid point failed".into()));
    }
    let rendered = render_report(&reports)?;
    write_atomic(&base.output_dir.join(REPORT_TXT), rendered.text.as_bytes())?;
    write_atomic(&base.output_dir.join(REPORT_CSV), rendered.csv.as_bytes())?;
    print!("{}", rendered.text);
    if reports.len() < points.len() {
        return Err(Error::Numeric(format!("{} of {} grid points failed", points.len() - reports.len(), points.len())));
    }
    Ok(())
}
