//! Review ingestion and majority-vote labeling.
//!
//! A review set holds one severity judgement per (sample, smell, reviewer).
//! Each sample's binary label is the majority over its reviews: any severity
//! other than `None` counts as a smelly vote. Samples with a tied vote are
//! dropped and counted.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smell {
    LongMethod,
    FeatureEnvy,
    GodClass,
    DataClass,
}

impl Smell {
    pub const ALL: [Smell; 4] = [
        Smell::LongMethod,
        Smell::FeatureEnvy,
        Smell::GodClass,
        Smell::DataClass,
    ];

    pub fn alias(self) -> &'static str {
        match self {
            Smell::LongMethod => "LM",
            Smell::FeatureEnvy => "FE",
            Smell::GodClass => "GC",
            Smell::DataClass => "DC",
        }
    }

    /// Method-level smells are measured on method metrics, the rest on class metrics.
    pub fn is_method_level(self) -> bool {
        matches!(self, Smell::LongMethod | Smell::FeatureEnvy)
    }
}

impl fmt::Display for Smell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Smell::LongMethod => "long_method",
            Smell::FeatureEnvy => "feature_envy",
            Smell::GodClass => "god_class",
            Smell::DataClass => "data_class",
        };
        f.write_str(s)
    }
}

impl FromStr for Smell {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "longmethod" | "lm" => Ok(Smell::LongMethod),
            "featureenvy" | "fe" => Ok(Smell::FeatureEnvy),
            // MLCQ calls God Class "blob".
            "godclass" | "blob" | "gc" => Ok(Smell::GodClass),
            "dataclass" | "dc" => Ok(Smell::DataClass),
            _ => Err(format!("unknown smell `{}`", s.trim())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Severity {
    None,
    Minor,
    Major,
    Critical,
}

impl Severity {
    pub fn is_smelly(self) -> bool {
        self != Severity::None
    }
}

impl FromStr for Severity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Severity::None),
            "minor" => Ok(Severity::Minor),
            "major" => Ok(Severity::Major),
            "critical" => Ok(Severity::Critical),
            "" => Err("missing severity".to_string()),
            other => Err(format!("unknown severity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewRecord {
    pub sample_id: String,
    pub smell: Smell,
    pub severity: Severity,
    pub reviewer_id: String,
}

/// Physical column names for the four logical review columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReviewSchema {
    pub sample_id: String,
    pub smell: String,
    pub severity: String,
    pub reviewer_id: String,
}

impl Default for ReviewSchema {
    fn default() -> Self {
        Self {
            sample_id: "sample_id".into(),
            smell: "smell".into(),
            severity: "severity".into(),
            reviewer_id: "reviewer_id".into(),
        }
    }
}

pub fn load_reviews(path: impl AsRef<Path>, schema: &ReviewSchema) -> Result<Vec<ReviewRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_reviews(file, schema)
}

pub fn read_reviews<R: std::io::Read>(reader: R, schema: &ReviewSchema) -> Result<Vec<ReviewRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = find(&schema.sample_id)?;
    let smell_col = find(&schema.smell)?;
    let sev_col = find(&schema.severity)?;
    let reviewer_col = find(&schema.reviewer_id)?;

    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        // Header is row 1.
        let row = record.position().map_or(i + 2, |p| p.line() as usize);
        let field = |col: usize| record.get(col).unwrap_or("");
        let smell = field(smell_col)
            .parse()
            .map_err(|message| Error::Parse { row, message })?;
        let severity = field(sev_col)
            .parse()
            .map_err(|message| Error::Parse { row, message })?;
        out.push(ReviewRecord {
            sample_id: field(id_col).to_string(),
            smell,
            severity,
            reviewer_id: field(reviewer_col).to_string(),
        });
    }
    Ok(out)
}

/// Majority label over one sample's reviews; `None` on a tie.
pub fn majority_vote(reviews: &[ReviewRecord]) -> Result<Option<u8>> {
    let first = reviews
        .first()
        .ok_or_else(|| Error::Contract("majority vote over an empty review list".into()))?;
    if reviews
        .iter()
        .any(|r| r.sample_id != first.sample_id || r.smell != first.smell)
    {
        return Err(Error::Contract(
            "majority vote over reviews of different samples or smells".into(),
        ));
    }
    let smelly = reviews.iter().filter(|r| r.severity.is_smelly()).count();
    let clean = reviews.len() - smelly;
    Ok(match smelly.cmp(&clean) {
        std::cmp::Ordering::Greater => Some(1),
        std::cmp::Ordering::Less => Some(0),
        std::cmp::Ordering::Equal => None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample_id: String,
    pub smell: Smell,
    pub label: u8,
    pub source_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledCorpus {
    pub smell: Smell,
    pub samples: Vec<LabeledSample>,
    /// Samples dropped by a tied vote when the corpus was built.
    pub dropped_ties: usize,
}

impl LabeledCorpus {
    pub fn new(smell: Smell, samples: Vec<LabeledSample>) -> Result<Self> {
        if let Some(bad) = samples.iter().find(|s| s.label > 1) {
            return Err(Error::Data(format!(
                "sample `{}` has non-binary label {}",
                bad.sample_id, bad.label
            )));
        }
        Ok(Self {
            smell,
            samples,
            dropped_ties: 0,
        })
    }

    /// `(n_negative, n_positive)`.
    pub fn counts(&self) -> (usize, usize) {
        let pos = self.samples.iter().filter(|s| s.label == 1).count();
        (self.samples.len() - pos, pos)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Rejects corpora missing either class.
    pub fn ensure_trainable(&self) -> Result<()> {
        let (neg, pos) = self.counts();
        if neg == 0 || pos == 0 {
            return Err(Error::EmptyCorpus(format!(
                "{} corpus needs both classes, has {neg} negative and {pos} positive",
                self.smell
            )));
        }
        Ok(())
    }

    fn subset(&self, idx: &[usize]) -> LabeledCorpus {
        let mut samples: Vec<_> = idx.iter().map(|&i| self.samples[i].clone()).collect();
        samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        LabeledCorpus {
            smell: self.smell,
            samples,
            dropped_ties: 0,
        }
    }
}

pub fn build_corpus(reviews: &[ReviewRecord], smell: Smell) -> Result<LabeledCorpus> {
    let mut groups: BTreeMap<&str, Vec<&ReviewRecord>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for r in reviews.iter().filter(|r| r.smell == smell) {
        if !seen.insert((r.sample_id.as_str(), r.reviewer_id.as_str())) {
            return Err(Error::DuplicateReview {
                sample_id: r.sample_id.clone(),
                reviewer_id: r.reviewer_id.clone(),
            });
        }
        groups.entry(&r.sample_id).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(Error::EmptyCorpus(format!("no reviews for {smell}")));
    }

    let mut samples = Vec::with_capacity(groups.len());
    let mut ties = 0;
    for (id, group) in &groups {
        let owned: Vec<ReviewRecord> = group.iter().map(|r| (*r).clone()).collect();
        match majority_vote(&owned)? {
            Some(label) => samples.push(LabeledSample {
                sample_id: id.to_string(),
                smell,
                label,
                source_ref: None,
            }),
            None => ties += 1,
        }
    }
    log::info!(
        "{smell}: {} distinct samples, {} labeled, {ties} dropped as ties",
        groups.len(),
        samples.len()
    );
    if samples.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "all {ties} {smell} samples tied"
        )));
    }
    Ok(LabeledCorpus {
        smell,
        samples,
        dropped_ties: ties,
    })
}

/// Per-class test size: `round(n * fraction)`, halves rounded up.
pub fn class_test_size(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction + 0.5).floor() as usize
}

/// Stratified split of indices into `(train, test)`, both sorted ascending.
///
/// Positives are shuffled first, then negatives, from one generator seeded
/// by `seed`.
pub fn stratified_split_indices(labels: &[u8], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [1u8, 0u8] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::Stratification(format!(
                "class {class} has {} samples, need at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n_test = class_test_size(members.len(), test_fraction);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_train_test(
    corpus: &LabeledCorpus,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledCorpus, LabeledCorpus)> {
    // Shuffle from lexicographic order so the split does not depend on input order.
    let mut sorted = corpus.clone();
    sorted.samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let (train, test) = stratified_split_indices(&sorted.labels(), test_fraction, seed)?;
    Ok((sorted.subset(&train), sorted.subset(&test)))
}

/// Writes `sample_id,label`.
pub fn write_corpus<W: std::io::Write>(corpus: &LabeledCorpus, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sample_id", "label"])?;
    for s in &corpus.samples {
        w.write_record([s.sample_id.as_str(), if s.label == 1 { "1" } else { "0" }])?;
    }
    w.flush().map_err(|e| Error::io("<corpus>", e))?;
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>, smell: Smell) -> Result<LabeledCorpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "sample_id")
        .ok_or_else(|| Error::MissingColumn("sample_id".into()))?;
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::MissingColumn("label".into()))?;
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let label = match rec.get(label_col).unwrap_or("") {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    row: i + 2,
                    message: format!("label must be 0 or 1, got `{other}`"),
                })
            }
        };
        samples.push(LabeledSample {
            sample_id: rec.get(id_col).unwrap_or("").to_string(),
            smell,
            label,
            source_ref: None,
        });
    }
    LabeledCorpus::new(smell, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn review(id: &str, sev: Severity, reviewer: &str) -> ReviewRecord {
        ReviewRecord {
            sample_id: id.into(),
            smell: Smell::LongMethod,
            severity: sev,
            reviewer_id: reviewer.into(),
        }
    }

    fn votes(sevs: &[Severity]) -> Vec<ReviewRecord> {
        sevs.iter()
            .enumerate()
            .map(|(i, &s)| review("m1", s, &format!("r{i}")))
            .collect()
    }

    #[test]
    fn parses_mlcq_style_row() {
        let csv = "sample_id,smell,severity,reviewer_id\nm17,long method,major,r3\n";
        let got = read_reviews(csv.as_bytes(), &ReviewSchema::default()).unwrap();
        assert_eq!(
            got,
            vec![ReviewRecord {
                sample_id: "m17".into(),
                smell: Smell::LongMethod,
                severity: Severity::Major,
                reviewer_id: "r3".into(),
            }]
        );
    }

    #[test]
    fn header_only_is_empty() {
        let csv = "sample_id,smell,severity,reviewer_id\n";
        assert!(read_reviews(csv.as_bytes(), &ReviewSchema::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn severity_is_case_insensitive() {
        let csv = "sample_id,smell,severity,reviewer_id\nx, blob , CRITICAL ,r\n";
        let got = read_reviews(csv.as_bytes(), &ReviewSchema::default()).unwrap();
        assert_eq!(got[0].severity, Severity::Critical);
        assert_eq!(got[0].smell, Smell::GodClass);
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "sample_id,smell,reviewer_id\nm,lm,r\n";
        match read_reviews(csv.as_bytes(), &ReviewSchema::default()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "severity"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn custom_schema_maps_columns() {
        let schema = ReviewSchema {
            sample_id: "id".into(),
            smell: "kind".into(),
            severity: "sev".into(),
            reviewer_id: "who".into(),
        };
        let csv = "who,sev,kind,id\nr1,minor,data class,c9\n";
        let got = read_reviews(csv.as_bytes(), &schema).unwrap();
        assert_eq!(got[0].sample_id, "c9");
        assert_eq!(got[0].smell, Smell::DataClass);
    }

    #[test]
    fn bad_and_missing_severity_report_row() {
        let csv = "sample_id,smell,severity,reviewer_id\na,lm,none,r\nb,lm,huge,r\n";
        match read_reviews(csv.as_bytes(), &ReviewSchema::default()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let csv = "sample_id,smell,severity,reviewer_id\na,lm,,r\n";
        assert!(matches!(
            read_reviews(csv.as_bytes(), &ReviewSchema::default()),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn majority_vote_examples() {
        use Severity::*;
        assert_eq!(majority_vote(&votes(&[None, Minor, Major])).unwrap(), Some(1));
        assert_eq!(majority_vote(&votes(&[None, None, Critical])).unwrap(), Some(0));
        assert_eq!(majority_vote(&votes(&[Minor, None])).unwrap(), Option::None);
        assert!(matches!(majority_vote(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn build_corpus_drops_ties_and_sorts() {
        use Severity::*;
        let reviews = vec![
            review("b", Minor, "r1"),
            review("b", None, "r2"),
            review("a", Major, "r1"),
            review("a", Critical, "r2"),
            review("a", None, "r3"),
        ];
        let c = build_corpus(&reviews, Smell::LongMethod).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.samples[0].sample_id, "a");
        assert_eq!(c.counts(), (0, 1));
        assert_eq!(c.dropped_ties, 1);
    }

    #[test]
    fn build_corpus_rejects_all_tied_and_duplicates() {
        use Severity::*;
        let tied = vec![review("a", Minor, "r1"), review("a", None, "r2")];
        assert!(matches!(
            build_corpus(&tied, Smell::LongMethod),
            Err(Error::EmptyCorpus(_))
        ));
        assert!(matches!(
            build_corpus(&tied, Smell::DataClass),
            Err(Error::EmptyCorpus(_))
        ));
        let dup = vec![review("a", Minor, "r1"), review("a", None, "r1")];
        assert!(matches!(
            build_corpus(&dup, Smell::LongMethod),
            Err(Error::DuplicateReview { .. })
        ));
    }

    fn corpus_with(n: usize, n_pos: usize) -> LabeledCorpus {
        let samples = (0..n)
            .map(|i| LabeledSample {
                sample_id: format!("s{i:04}"),
                smell: Smell::LongMethod,
                label: u8::from(i < n_pos),
                source_ref: None,
            })
            .collect();
        LabeledCorpus::new(Smell::LongMethod, samples).unwrap()
    }

    #[test]
    fn split_exact_stratification() {
        let c = corpus_with(100, 10);
        for seed in 0..5 {
            let (train, test) = split_train_test(&c, 0.2, seed).unwrap();
            assert_eq!(test.len(), 20);
            assert_eq!(test.counts().1, 2);
            assert_eq!(train.len(), 80);
        }
    }

    #[test]
    fn split_table3_long_method_positives() {
        // 243 * 0.2 = 48.6 rounds to 49
        let c = corpus_with(1993 + 243, 243);
        let (_, test) = split_train_test(&c, 0.2, 7).unwrap();
        assert_eq!(test.counts().1, 49);
        assert_eq!(class_test_size(243, 0.2), 49);
        assert_eq!(class_test_size(5, 0.5), 3);
    }

    #[test]
    fn split_is_deterministic_and_validates() {
        let c = corpus_with(50, 9);
        assert_eq!(split_train_test(&c, 0.3, 11).unwrap(), split_train_test(&c, 0.3, 11).unwrap());
        assert!(matches!(split_train_test(&c, 0.0, 1), Err(Error::Config(_))));
        assert!(matches!(
            split_train_test(&corpus_with(10, 1), 0.2, 1),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn corpus_file_roundtrip() {
        let c = corpus_with(6, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        write_corpus(&c, std::fs::File::create(&path).unwrap()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sample_id,label\ns0000,1\n"));
        assert_eq!(read_corpus(&path, Smell::LongMethod).unwrap().samples, c.samples);
    }

    fn severity() -> impl Strategy<Value = Severity> {
        prop_oneof![
            Just(Severity::None),
            Just(Severity::Minor),
            Just(Severity::Major),
            Just(Severity::Critical)
        ]
    }

    proptest! {
        #[test]
        fn vote_is_permutation_invariant(sevs in prop::collection::vec(severity(), 1..12), seed in any::<u64>()) {
            let mut shuffled = sevs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(majority_vote(&votes(&sevs)).unwrap(), majority_vote(&votes(&shuffled)).unwrap());
        }

        #[test]
        fn vote_ignores_smelly_grade(sevs in prop::collection::vec(severity(), 1..12), grades in prop::collection::vec(0u8..3, 12)) {
            let regraded: Vec<Severity> = sevs.iter().zip(&grades).map(|(s, g)| match (s, g) {
                (Severity::None, _) => Severity::None,
                (_, 0) => Severity::Minor,
                (_, 1) => Severity::Major,
                _ => Severity::Critical,
            }).collect();
            prop_assert_eq!(majority_vote(&votes(&sevs)).unwrap(), majority_vote(&votes(&regraded)).unwrap());
        }

        #[test]
        fn corpus_counts_cover_all_samples(raw in prop::collection::vec((0usize..20, severity()), 1..80)) {
            let reviews: Vec<ReviewRecord> = raw.iter().enumerate()
                .map(|(i, (id, s))| review(&format!("s{id}"), *s, &format!("r{i}")))
                .collect();
            let distinct: HashSet<_> = raw.iter().map(|(id, _)| *id).collect();
            match build_corpus(&reviews, Smell::LongMethod) {
                Ok(c) => {
                    let (neg, pos) = c.counts();
                    prop_assert_eq!(neg + pos + c.dropped_ties, distinct.len());
                }
                Err(Error::EmptyCorpus(_)) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn split_proportions_close(n_pos in 2usize..60, n_neg in 2usize..200, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let c = corpus_with(n_pos + n_neg, n_pos);
            let (train, test) = split_train_test(&c, frac, seed).unwrap();
            let (tn, tp) = test.counts();
            prop_assert!(((tp as f64 / n_pos as f64) - frac).abs() < 1.0 / n_pos as f64);
            prop_assert!(((tn as f64 / n_neg as f64) - frac).abs() < 1.0 / n_neg as f64);
            let mut all: Vec<_> = train.samples.iter().chain(&test.samples).map(|s| s.sample_id.clone()).collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), c.len());
        }
    }
}
