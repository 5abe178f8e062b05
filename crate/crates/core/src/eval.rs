//! Span- and token-level scoring plus the dictionary-coverage sweep.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{subset_dictionary, write_file, ClassId, Corpus, Dictionary, TokenTable};
use crate::distant_label::annotate;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureTable, Featurizer};
use crate::pipeline::{predict, train_two_step, TrainConfig, TrainingSet};
use crate::prior::{estimate_priors_induction, oracle_priors, InductionConfig};
use crate::risk::RiskKind;

const MODULE: &str = "eval";

/// Half-open token range `[start, end)` labeled with a positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Span {
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
    pub class_id: ClassId,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when there were no predictions, so precision is reported as 0.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub precision_undefined: bool,
    /// Set when there was nothing to find, so recall is reported as 0.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub recall_undefined: bool,
}

impl Metrics {
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            precision_undefined: predicted == 0,
            recall_undefined: gold == 0,
        }
    }
}

fn check_alignment(labels: &TokenTable<ClassId>, corpus: &Corpus) -> Result<()> {
    corpus
        .check_table(labels, "label")
        .map_err(|e| Error::invalid(MODULE, e.to_string()))
}

/// Maximal runs of consecutive tokens sharing a positive class.
pub fn decode_spans(labels: &TokenTable<ClassId>, corpus: &Corpus) -> Result<Vec<Span>> {
    check_alignment(labels, corpus)?;
    Ok(decode_table(labels))
}

pub(crate) fn decode_table(labels: &TokenTable<ClassId>) -> Vec<Span> {
    let mut spans = Vec::new();
    for (si, row) in labels.iter().enumerate() {
        let mut p = 0;
        while p < row.len() {
            let c = row[p];
            if c == 0 {
                p += 1;
                continue;
            }
            let start = p;
            while p < row.len() && row[p] == c {
                p += 1;
            }
            spans.push(Span {
                sentence_index: si,
                start,
                end: p,
                class_id: c,
            });
        }
    }
    spans
}

/// Renders spans back to a label table with the given sentence lengths.
pub fn spans_to_labels(spans: &[Span], lengths: &[usize]) -> TokenTable<ClassId> {
    let mut out: TokenTable<ClassId> = lengths.iter().map(|n| vec![0; *n]).collect();
    for s in spans {
        for l in &mut out[s.sentence_index][s.start..s.end] {
            *l = s.class_id;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpanReport {
    pub overall: Metrics,
    pub per_class: BTreeMap<ClassId, Metrics>,
}

/// Exact-match span scoring: a predicted span is correct iff sentence,
/// boundaries and class all agree with a gold span.
pub fn span_prf(pred: &[Span], gold: &[Span]) -> SpanReport {
    let gold_set: HashSet<&Span> = gold.iter().collect();
    let classes: std::collections::BTreeSet<ClassId> =
        pred.iter().chain(gold).map(|s| s.class_id).collect();
    let correct: Vec<&Span> = pred.iter().filter(|s| gold_set.contains(s)).collect();
    let per_class = classes
        .into_iter()
        .map(|c| {
            let n = |v: &mut dyn Iterator<Item = &Span>| v.filter(|s| s.class_id == c).count();
            (
                c,
                Metrics::from_counts(
                    n(&mut correct.iter().copied()),
                    n(&mut pred.iter()),
                    n(&mut gold.iter()),
                ),
            )
        })
        .collect();
    SpanReport {
        overall: Metrics::from_counts(correct.len(), pred.len(), gold.len()),
        per_class,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TokenReport {
    /// Micro-average over positive classes.
    pub overall: Metrics,
    pub per_class: BTreeMap<ClassId, Metrics>,
}

/// Token-level precision/recall/F1 for each positive class `1..=k`.
pub fn token_prf(pred: &TokenTable<ClassId>, gold: &TokenTable<ClassId>, k: usize) -> Result<TokenReport> {
    let aligned = pred.len() == gold.len() && pred.iter().zip(gold).all(|(a, b)| a.len() == b.len());
    if !aligned {
        return Err(Error::invalid(MODULE, "prediction and gold tables are not aligned"));
    }
    let mut correct = vec![0usize; k + 1];
    let mut predicted = vec![0usize; k + 1];
    let mut actual = vec![0usize; k + 1];
    for (p, g) in pred.iter().flatten().zip(gold.iter().flatten()) {
        if *p > k || *g > k {
            return Err(Error::invalid(MODULE, format!("label out of range 0..={k}")));
        }
        predicted[*p] += 1;
        actual[*g] += 1;
        if p == g {
            correct[*p] += 1;
        }
    }
    let per_class = (1..=k)
        .map(|c| (c, Metrics::from_counts(correct[c], predicted[c], actual[c])))
        .collect();
    let sum = |v: &[usize]| v[1..].iter().sum::<usize>();
    Ok(TokenReport {
        overall: Metrics::from_counts(sum(&correct), sum(&predicted), sum(&actual)),
        per_class,
    })
}

/// Thresholds confidence scores into entity (1) / non-entity (0) labels.
pub fn threshold_labels(scores: &TokenTable<f64>, threshold: f64) -> TokenTable<ClassId> {
    scores
        .iter()
        .map(|row| row.iter().map(|s| usize::from(*s > threshold)).collect())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorSource {
    /// Gold token fractions of the training split.
    Oracle,
    /// Induction from the distant labels of each coverage level.
    Induction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    pub kinds: Vec<RiskKind>,
    pub seeds: Vec<u64>,
    pub priors: PriorSource,
    pub induction: InductionConfig,
    /// Trailing share of sentences held out for scoring.
    pub holdout: f64,
    /// Worker threads; 0 lets the thread pool decide.
    pub jobs: usize,
    pub train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            kinds: vec![RiskKind::Mpn, RiskKind::Mpu, RiskKind::ConfMpu],
            seeds: vec![0, 1, 2, 3, 4],
            priors: PriorSource::Induction,
            induction: InductionConfig::default(),
            holdout: 0.2,
            jobs: 1,
            train: TrainConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.kinds.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid(MODULE, "fractions, kinds and seeds must be non-empty"));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::invalid(MODULE, format!("coverage fraction {f} is outside (0, 1]")));
        }
        if let Some(k) = self.kinds.iter().find(|k| k.is_binary()) {
            return Err(Error::invalid(MODULE, format!("{k} cannot train a multi-class model")));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(Error::invalid(MODULE, "holdout must be in (0, 1)"));
        }
        self.train.validate()?;
        self.induction.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub coverage: f64,
    pub kind: RiskKind,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["coverage", "kind", "seed", "precision", "recall", "f1"])?;
        for r in &self.rows {
            w.write_record([
                r.coverage.to_string(),
                r.kind.to_string(),
                r.seed.to_string(),
                r.metrics.precision.to_string(),
                r.metrics.recall.to_string(),
                r.metrics.f1.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(MODULE, e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_csv()?)
    }

    /// Mean metrics over seeds for one `(coverage, kind)` cell.
    pub fn mean(&self, coverage: f64, kind: RiskKind) -> Option<Metrics> {
        let rows: Vec<&SweepRow> = self
            .rows
            .iter()
            .filter(|r| r.kind == kind && (r.coverage - coverage).abs() < 1e-12)
            .collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
        Some(Metrics {
            precision: avg(|m| m.precision),
            recall: avg(|m| m.recall),
            f1: avg(|m| m.f1),
            precision_undefined: false,
            recall_undefined: false,
        })
    }
}

/// Everything about one coverage level that does not depend on the risk
/// kind or the seed.
struct CoverageData {
    coverage: f64,
    train: TrainingSet,
    test_features: FeatureTable,
    priors: Vec<f64>,
}

fn featurizer(
    cfg: &FeatureConfig,
    embeddings: &HashMap<String, Vec<f64>>,
    fallback_seed: u64,
    d: &Dictionary,
) -> Featurizer {
    Featurizer::with_table(cfg.clone(), embeddings.clone(), fallback_seed, d)
}

/// Train on distant labels from growing dictionary prefixes and score spans
/// on a fixed held-out tail of the corpus.
///
/// `embeddings` and `fallback_seed` are the resolved embedding source of
/// `cfg.train.features`; see [`crate::features::resolve_embeddings`].
pub fn coverage_sweep(
    corpus: &Corpus,
    dictionary: &Dictionary,
    cfg: &SweepConfig,
    embeddings: &HashMap<String, Vec<f64>>,
    fallback_seed: u64,
) -> Result<SweepReport> {
    cfg.validate()?;
    let n = corpus.sentences().len();
    let cut = n - ((n as f64 * cfg.holdout).round() as usize).clamp(1, n - 1);
    let (train, test) = corpus.split_at(cut)?;
    let test_gold = test
        .gold_ids()
        .ok_or_else(|| Error::invalid(MODULE, "the sweep corpus needs gold labels for scoring"))?;
    let gold_spans = decode_table(&test_gold);
    let features_cfg = &cfg.train.features;

    let levels = cfg
        .fractions
        .iter()
        .map(|&coverage| -> Result<CoverageData> {
            let d = subset_dictionary(dictionary, coverage)?;
            let annotated = annotate(&train.clone().without_gold(), &d, features_cfg.case_sensitive)?;
            let fz = featurizer(features_cfg, embeddings, fallback_seed, &d);
            let priors = match cfg.priors {
                PriorSource::Oracle => oracle_priors(&train)?.values,
                PriorSource::Induction => {
                    let plain = FeatureConfig {
                        use_lexicon: false,
                        ..features_cfg.clone()
                    };
                    let f = featurizer(&plain, embeddings, fallback_seed, &d).featurize(&annotated);
                    estimate_priors_induction(&annotated, &f, &cfg.induction)?.values
                }
            };
            log::info!("sweep: coverage {coverage} priors {priors:?}");
            Ok(CoverageData {
                coverage,
                train: TrainingSet::from_distant(&annotated, fz.featurize(&annotated))?,
                test_features: fz.featurize(&test),
                priors,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for level in &levels {
        for kind in &cfg.kinds {
            for seed in &cfg.seeds {
                cells.push((level, *kind, *seed));
            }
        }
    }
    let run = |(level, kind, seed): &(&CoverageData, RiskKind, u64)| -> Result<SweepRow> {
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = *seed;
        train_cfg.risk.kind = *kind;
        train_cfg.risk.priors = level.priors.clone();
        let trained = train_two_step(&level.train, &train_cfg)?;
        let pred = predict(&trained.model, &level.test_features)?;
        let metrics = span_prf(&decode_table(&pred), &gold_spans).overall;
        log::info!(
            "sweep: coverage {} {} seed {} f1 {:.4}",
            level.coverage,
            kind,
            seed,
            metrics.f1
        );
        Ok(SweepRow {
            coverage: level.coverage,
            kind: *kind,
            seed: *seed,
            metrics,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::invalid(MODULE, e.to_string()))?;
    let mut rows = pool.install(|| cells.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    rows.sort_by(|a, b| {
        a.coverage
            .total_cmp(&b.coverage)
            .then(a.kind.cmp(&b.kind))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(SweepReport { rows })
}
