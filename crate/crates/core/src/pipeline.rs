//! Two-step training: a binary PU confidence scorer, then the multi-class
//! token classifier under the configured risk.
//!
//! Training never sees gold labels. [`TrainingSet`] is built from the
//! distant table and features alone, and every training entry point takes a
//! `TrainingSet`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_file, ClassId, Corpus, DistantLabel, TokenTable};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureTable, FeatureVector};
use crate::model::{grad, Adam, Head, ModelParams, Sgd};
use crate::risk::{Batch, RiskConfig, RiskEvaluator, RiskKind, Sample};

const MODULE: &str = "pipeline";

/// Confidence scores are kept this far inside `(0, 1)`.
const CONF_MARGIN: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Passes over the data for the classifier.
    pub epochs: usize,
    /// Passes over the data for the confidence scorer.
    pub conf_epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Heavy-ball momentum, used by `sgd` only.
    pub momentum: f64,
    /// Sentences per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub risk: RiskConfig,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            conf_epochs: 100,
            lr: 0.01,
            optimizer: OptimizerKind::Adam,
            momentum: 0.0,
            batch_size: 64,
            seed: 0,
            hidden: vec![16],
            risk: RiskConfig::new(RiskKind::ConfMpu, Vec::new()),
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(MODULE, format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid(MODULE, "batch_size must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid(MODULE, "hidden layer sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(MODULE, "momentum must be in [0, 1)"));
        }
        self.features.validate()
    }
}

/// Features and distant labels of a training corpus, plus optional
/// confidence scores.
pub struct TrainingSet {
    features: FeatureTable,
    labels: TokenTable<DistantLabel>,
    num_classes: usize,
}

impl TrainingSet {
    pub fn from_distant(c: &Corpus, features: FeatureTable) -> Result<Self> {
        let labels = c
            .distant()
            .ok_or_else(|| Error::invalid(MODULE, "training corpus has no distant labels"))?
            .clone();
        c.check_table(&features, "feature")?;
        Ok(Self {
            features,
            labels,
            num_classes: c.num_classes(),
        })
    }

    pub fn features(&self) -> &FeatureTable {
        &self.features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn labeled_count(&self) -> usize {
        self.labels.iter().flatten().filter(|l| l.class().is_some()).count()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub empirical_risk: f64,
    pub wall_ms: u128,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,empirical_risk,wall_ms\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.empirical_risk, r.wall_ms);
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_csv())
    }
}

enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    fn new(cfg: &TrainConfig) -> Result<Self> {
        Ok(match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(cfg.lr, cfg.momentum)?),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(cfg.lr)?),
        })
    }

    fn step(&mut self, p: &mut ModelParams, g: &[f64]) {
        match self {
            Optimizer::Sgd(o) => o.step(p, g),
            Optimizer::Adam(o) => o.step(p, g),
        }
    }
}

/// How the labeled tokens of a sentence are grouped into a batch.
#[derive(Clone, Copy)]
enum Grouping {
    /// All positive classes merged into one.
    Binary,
    PerClass,
}

fn build_batch(
    set: &TrainingSet,
    sentences: &[usize],
    grouping: Grouping,
    scores: Option<&TokenTable<f64>>,
) -> Batch<FeatureVector> {
    let k = match grouping {
        Grouping::Binary => 1,
        Grouping::PerClass => set.num_classes,
    };
    let mut batch = Batch::new(k);
    for &si in sentences {
        for (p, (x, label)) in set.features[si].iter().zip(&set.labels[si]).enumerate() {
            let sample = match scores {
                Some(s) => Sample::with_conf(x.clone(), s[si][p]),
                None => Sample::new(x.clone()),
            };
            match (label.class(), grouping) {
                (Some(_), Grouping::Binary) => batch.positives[0].push(sample),
                (Some(c), Grouping::PerClass) => batch.positives[c - 1].push(sample),
                (None, _) => batch.unlabeled.push(sample),
            }
        }
    }
    batch
}

fn fit(
    set: &TrainingSet,
    mut params: ModelParams,
    risk: RiskConfig,
    grouping: Grouping,
    scores: Option<&TokenTable<f64>>,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    let evaluator = RiskEvaluator::new(risk)?;
    let mut optimizer = Optimizer::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..set.features.len()).collect();
    let mut log = TrainLog::default();
    let start = Instant::now();
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut used = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = build_batch(set, chunk, grouping, scores);
            if batch.positives.iter().all(Vec::is_empty) || batch.unlabeled.is_empty() {
                log::debug!("pipeline: epoch {epoch}: skipping a batch without positives or unlabeled tokens");
                continue;
            }
            let (value, g) = grad(&params, &batch, &evaluator)?;
            optimizer.step(&mut params, &g);
            total += value;
            used += 1;
        }
        if used == 0 {
            return Err(Error::invalid(
                MODULE,
                "no mini-batch holds both labeled and unlabeled tokens; increase batch_size",
            ));
        }
        let empirical_risk = total / used as f64;
        log.epochs.push(EpochRecord {
            epoch,
            empirical_risk,
            wall_ms: start.elapsed().as_millis(),
        });
        log::debug!("pipeline: epoch {epoch} risk {empirical_risk:.6}");
    }
    Ok((params, log))
}

/// Trains the sigmoid-head entity/non-entity scorer with the binary PU risk
/// at prior `sum_i pi_i`.
pub fn train_confidence(set: &TrainingSet, cfg: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    cfg.risk.validate()?;
    if set.labeled_count() == 0 {
        return Err(Error::invalid(MODULE, "confidence training needs labeled positives"));
    }
    let total: f64 = cfg.risk.priors.iter().sum();
    let risk = RiskConfig {
        kind: RiskKind::Bpu,
        priors: vec![total],
        ..cfg.risk.clone()
    };
    let params = ModelParams::init(cfg.features.dim(), &cfg.hidden, Head::Sigmoid, 1, cfg.seed)?;
    fit(set, params, risk, Grouping::Binary, None, cfg.conf_epochs, cfg)
}

/// One `lambda` per token, strictly inside `(0, 1)`.
pub fn score_confidence(m: &ModelParams, features: &FeatureTable) -> Result<TokenTable<f64>> {
    if m.head() != Head::Sigmoid {
        return Err(Error::invalid(MODULE, "confidence scoring needs a sigmoid-head model"));
    }
    features
        .iter()
        .map(|row| {
            row.iter()
                .map(|x| Ok(m.forward(x)?.probs[0].clamp(CONF_MARGIN, 1.0 - CONF_MARGIN)))
                .collect()
        })
        .collect()
}

/// Trains the softmax-head classifier under `cfg.risk`.
pub fn train_ner(
    set: &TrainingSet,
    scores: Option<&TokenTable<f64>>,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    cfg.risk.validate()?;
    let kind = cfg.risk.kind;
    if kind.is_binary() {
        return Err(Error::invalid(
            MODULE,
            format!("{kind} is binary; the classifier needs mpn, mpu or conf-mpu"),
        ));
    }
    if cfg.risk.priors.len() != set.num_classes {
        return Err(Error::invalid(
            MODULE,
            format!("{} priors for {} classes", cfg.risk.priors.len(), set.num_classes),
        ));
    }
    let scores = match (kind, scores) {
        (RiskKind::ConfMpu, None) => {
            return Err(Error::invalid(MODULE, "conf-mpu training needs confidence scores"));
        }
        (RiskKind::ConfMpu, Some(s)) => {
            if s.len() != set.features.len() || s.iter().zip(&set.features).any(|(a, b)| a.len() != b.len()) {
                return Err(Error::invalid(MODULE, "confidence scores are not aligned with the corpus"));
            }
            Some(s)
        }
        _ => None,
    };
    if set.labeled_count() == 0 {
        return Err(Error::invalid(MODULE, "training needs labeled positives"));
    }
    let params = ModelParams::init(cfg.features.dim(), &cfg.hidden, Head::Softmax, set.num_classes, cfg.seed)?;
    fit(set, params, cfg.risk.clone(), Grouping::PerClass, scores, cfg.epochs, cfg)
}

/// Arg-max class id per token.
pub fn predict(m: &ModelParams, features: &FeatureTable) -> Result<TokenTable<ClassId>> {
    if m.head() != Head::Softmax {
        return Err(Error::invalid(MODULE, "prediction needs a softmax-head model"));
    }
    features
        .iter()
        .map(|row| row.iter().map(|x| Ok(m.forward(x)?.argmax())).collect())
        .collect()
}

/// Result of the full two-step procedure.
pub struct Trained {
    pub model: ModelParams,
    pub log: TrainLog,
    pub confidence: Option<(ModelParams, TokenTable<f64>)>,
}

/// Runs the confidence step when the risk needs it, then trains the
/// classifier.
pub fn train_two_step(set: &TrainingSet, cfg: &TrainConfig) -> Result<Trained> {
    let confidence = if cfg.risk.kind == RiskKind::ConfMpu {
        let (m, _) = train_confidence(set, cfg)?;
        let scores = score_confidence(&m, set.features())?;
        Some((m, scores))
    } else {
        None
    };
    let (model, log) = train_ner(set, confidence.as_ref().map(|(_, s)| s), cfg)?;
    Ok(Trained {
        model,
        log,
        confidence,
    })
}
