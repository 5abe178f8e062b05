//! Command-line surface. Every subcommand reads an optional JSON
//! [`RunConfig`], applies flag overrides, echoes the resolved config and
//! seed on stderr and writes only the outputs named by its flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{
    load_corpus, load_dictionary, load_token_values, read_file, subset_dictionary, write_file,
    write_token_values, ClassSet, Corpus, Dictionary, GoldLabel, TokenTable,
};
use crate::distant_label::{annotate, label_quality};
use crate::error::{Error, Result};
use crate::eval::{coverage_sweep, decode_spans, span_prf, token_prf, Metrics, PriorSource, SweepConfig};
use crate::features::{embeddings_to_text, resolve_embeddings, FeatureConfig, FeatureTable, Featurizer};
use crate::model::ModelParams;
use crate::pipeline::{predict, score_confidence, train_confidence, train_ner, TrainConfig, TrainingSet};
use crate::prior::{estimate_priors_induction, load_priors, oracle_priors, InductionConfig, PriorEstimate};
use crate::risk::RiskKind;
use crate::synth::{generate, SynthSpec};

const MODULE: &str = "cli";

/// Settings for the `sweep` command other than training and induction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepPlan {
    pub fractions: Vec<f64>,
    pub kinds: Vec<RiskKind>,
    pub seeds: Vec<u64>,
    pub priors: PriorSource,
    pub holdout: f64,
}

impl Default for SweepPlan {
    fn default() -> Self {
        let d = SweepConfig::default();
        Self {
            fractions: d.fractions,
            kinds: d.kinds,
            seeds: d.seeds,
            priors: d.priors,
            holdout: d.holdout,
        }
    }
}

/// The JSON config file accepted by every subcommand. Missing sections and
/// fields take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub induction: InductionConfig,
    pub sweep: SweepPlan,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(MODULE, path.display().to_string(), e.line(), e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.train.risk.validate_settings()?;
        self.induction.validate()?;
        self.sweep_config(1).validate()
    }

    pub fn sweep_config(&self, jobs: usize) -> SweepConfig {
        SweepConfig {
            fractions: self.sweep.fractions.clone(),
            kinds: self.sweep.kinds.clone(),
            seeds: self.sweep.seeds.clone(),
            priors: self.sweep.priors,
            induction: self.induction.clone(),
            holdout: self.sweep.holdout,
            jobs,
            train: self.train.clone(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "confmpu", version, about = "Distantly supervised token classification with confidence-weighted PU risks")]
pub struct Cli {
    /// JSON run config; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the command (`train.seed`, or `synth.seed` for synth).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Level {
    Span,
    Token,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with known priors and confidence values.
    Synth {
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `synth.coverage`.
        #[arg(long)]
        coverage: Option<f64>,
    },
    /// Attach dictionary labels to a corpus.
    Annotate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Label-quality report against the gold column, as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        case_insensitive: bool,
    },
    /// Keep the first share of a dictionary's entries.
    DictSubset {
        #[arg(long)]
        dict: PathBuf,
        /// Any corpus using the same classes; only its header is read.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate class priors of a distantly labeled corpus.
    EstimatePrior {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        /// `induction` or `oracle` (needs gold labels).
        #[arg(long, default_value = "induction")]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the entity/non-entity confidence scorer.
    TrainConf {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        /// A priors JSON file, `oracle` or `induction`.
        #[arg(long)]
        priors: String,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch training log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score every token with a trained confidence model.
    ScoreConf {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the token classifier.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        /// A priors JSON file, `oracle` or `induction`.
        #[arg(long)]
        priors: String,
        /// Overrides `train.risk.kind`: mpn, mpu or conf-mpu.
        #[arg(long)]
        risk: Option<String>,
        /// Confidence scores from `score-conf`; required by conf-mpu.
        #[arg(long)]
        conf_scores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Label a corpus with a trained classifier.
    Predict {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted labels against gold labels; prints JSON.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value = "span")]
        level: Level,
        #[arg(long)]
        per_class: bool,
    },
    /// Train every risk at several dictionary coverages and score each run.
    Sweep {
        /// Gold-labeled corpus; its tail is held out for scoring.
        #[arg(long)]
        corpus: PathBuf,
        /// Full dictionary; coverage levels take prefixes of it.
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn echo<T: Serialize>(cfg: &T, seed: u64) -> Result<()> {
    eprintln!("config: {}", serde_json::to_string(cfg)?);
    eprintln!("seed: {seed}");
    Ok(())
}

fn classes_of(corpus: &Path) -> Result<ClassSet> {
    Ok(load_corpus(corpus)?.classes().clone())
}

fn featurize(c: &Corpus, d: &Dictionary, cfg: &FeatureConfig) -> Result<FeatureTable> {
    Ok(Featurizer::new(cfg, d)?.featurize(c))
}

fn training_set(corpus: &Path, dict: &Path, cfg: &TrainConfig) -> Result<(Corpus, Dictionary, TrainingSet)> {
    let c = load_corpus(corpus)?;
    let d = load_dictionary(dict, c.classes())?;
    let set = TrainingSet::from_distant(&c, featurize(&c, &d, &cfg.features)?)?;
    Ok((c, d, set))
}

fn induced_priors(c: &Corpus, d: &Dictionary, cfg: &RunConfig) -> Result<PriorEstimate> {
    let plain = FeatureConfig {
        use_lexicon: false,
        ..cfg.train.features.clone()
    };
    estimate_priors_induction(c, &featurize(c, d, &plain)?, &cfg.induction)
}

fn resolve_priors(arg: &str, c: &Corpus, d: &Dictionary, cfg: &RunConfig) -> Result<PriorEstimate> {
    let p = match arg {
        "oracle" => oracle_priors(c)?,
        "induction" => induced_priors(c, d, cfg)?,
        path => load_priors(path, c.classes())?,
    };
    log::info!("priors ({:?}): {:?}", p.method, p.values);
    Ok(p)
}

fn check_input_dim(m: &ModelParams, cfg: &FeatureConfig) -> Result<()> {
    if m.input_dim() != cfg.dim() {
        return Err(Error::invalid(
            MODULE,
            format!(
                "model expects {} features but the config produces {}",
                m.input_dim(),
                cfg.dim()
            ),
        ));
    }
    Ok(())
}

fn labeled_corpus(c: &Corpus, labels: TokenTable<usize>) -> Result<Corpus> {
    let texts = c
        .sentences()
        .iter()
        .map(|s| s.texts().into_iter().map(String::from).collect())
        .collect();
    let gold = labels
        .into_iter()
        .map(|row| row.into_iter().map(GoldLabel::from_class_id).collect())
        .collect();
    Corpus::new(c.classes().clone(), texts)?.with_gold(gold)
}

fn gold_table(c: &Corpus, path: &Path) -> Result<TokenTable<usize>> {
    c.gold_ids()
        .ok_or_else(|| Error::invalid(MODULE, format!("{} has no label column", path.display())))
}

fn metrics_json(m: &Metrics, per_class: Option<BTreeMap<String, &Metrics>>) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(m)?;
    if let (Some(per), Some(obj)) = (per_class, v.as_object_mut()) {
        obj.insert("per_class".into(), serde_json::to_value(per)?);
    }
    Ok(v)
}

fn eval(pred_path: &Path, gold_path: &Path, level: Level, per_class: bool) -> Result<serde_json::Value> {
    let pred = load_corpus(pred_path)?;
    let gold = load_corpus(gold_path)?;
    if pred.classes() != gold.classes() {
        return Err(Error::invalid(MODULE, "prediction and gold files declare different classes"));
    }
    let same_tokens = pred.sentences().len() == gold.sentences().len()
        && pred
            .sentences()
            .iter()
            .zip(gold.sentences())
            .all(|(a, b)| a.texts() == b.texts());
    if !same_tokens {
        return Err(Error::invalid(MODULE, "prediction and gold files hold different tokens"));
    }
    let p = gold_table(&pred, pred_path)?;
    let g = gold_table(&gold, gold_path)?;
    let (overall, classes) = match level {
        Level::Span => {
            let r = span_prf(&decode_spans(&p, &pred)?, &decode_spans(&g, &gold)?);
            (r.overall, r.per_class)
        }
        Level::Token => {
            let r = token_prf(&p, &g, gold.num_classes())?;
            (r.overall, r.per_class)
        }
    };
    let per = per_class.then(|| {
        classes
            .iter()
            .map(|(id, m)| (gold.classes().name(*id).unwrap_or("?").to_string(), m))
            .collect()
    });
    metrics_json(&overall, per)
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::Synth { .. } => cfg.synth.seed = seed,
            _ => cfg.train.seed = seed,
        }
    }
    if let Command::Train { risk: Some(r), .. } = &cli.command {
        cfg.train.risk.kind = r.parse()?;
    }
    if let Command::Synth { coverage: Some(c), .. } = &cli.command {
        cfg.synth.coverage = *c;
    }
    cfg.validate()?;

    match cli.command {
        Command::Synth { out, .. } => {
            echo(&cfg.synth, cfg.synth.seed)?;
            let s = generate(&cfg.synth)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            s.corpus.write(out.join("corpus.tsv"))?;
            s.dictionary.write(out.join("dictionary.tsv"))?;
            s.full_dictionary.write(out.join("full_dictionary.tsv"))?;
            write_token_values(out.join("lambda.txt"), &s.lambda)?;
            write_file(&out.join("embeddings.txt"), &embeddings_to_text(&s.embeddings, cfg.synth.embed_dim))?;
            let mut bk = s.bookkeeping;
            bk.lambda_path = Some("lambda.txt".into());
            write_file(&out.join("bookkeeping.json"), &(serde_json::to_string_pretty(&bk)? + "\n"))?;
        }
        Command::Annotate {
            corpus,
            dict,
            out,
            report,
            case_insensitive,
        } => {
            echo(&serde_json::json!({ "case_sensitive": !case_insensitive }), cfg.train.seed)?;
            let c = load_corpus(&corpus)?;
            let d = load_dictionary(&dict, c.classes())?;
            let annotated = annotate(&c, &d, !case_insensitive)?;
            annotated.write(&out)?;
            if let Some(path) = report {
                let q = label_quality(&annotated, &c)?;
                write_file(&path, &(serde_json::to_string_pretty(&q.to_json(&c))? + "\n"))?;
            }
        }
        Command::DictSubset {
            dict,
            corpus,
            fraction,
            out,
        } => {
            echo(&serde_json::json!({ "fraction": fraction }), cfg.train.seed)?;
            let d = load_dictionary(&dict, &classes_of(&corpus)?)?;
            subset_dictionary(&d, fraction)?.write(&out)?;
        }
        Command::EstimatePrior {
            corpus,
            dict,
            method,
            out,
        } => {
            echo(&cfg, cfg.train.seed)?;
            let c = load_corpus(&corpus)?;
            let d = load_dictionary(&dict, c.classes())?;
            let p = match method.as_str() {
                "induction" => induced_priors(&c, &d, &cfg)?,
                "oracle" => oracle_priors(&c)?,
                other => {
                    return Err(Error::invalid(
                        MODULE,
                        format!("unknown prior method {other:?}; expected induction or oracle"),
                    ))
                }
            };
            p.write(&out, c.classes())?;
        }
        Command::TrainConf {
            corpus,
            dict,
            priors,
            out,
            log,
        } => {
            echo(&cfg, cfg.train.seed)?;
            let (c, d, set) = training_set(&corpus, &dict, &cfg.train)?;
            let mut train = cfg.train.clone();
            train.risk.priors = resolve_priors(&priors, &c, &d, &cfg)?.values;
            let (m, train_log) = train_confidence(&set, &train)?;
            m.save(&out)?;
            if let Some(path) = log {
                train_log.write(path)?;
            }
        }
        Command::ScoreConf {
            corpus,
            dict,
            model,
            out,
        } => {
            echo(&cfg, cfg.train.seed)?;
            let c = load_corpus(&corpus)?;
            let d = load_dictionary(&dict, c.classes())?;
            let m = ModelParams::load(&model)?;
            check_input_dim(&m, &cfg.train.features)?;
            let scores = score_confidence(&m, &featurize(&c, &d, &cfg.train.features)?)?;
            write_token_values(&out, &scores)?;
        }
        Command::Train {
            corpus,
            dict,
            priors,
            conf_scores,
            out,
            log,
            ..
        } => {
            echo(&cfg, cfg.train.seed)?;
            if cfg.train.risk.kind == RiskKind::ConfMpu && conf_scores.is_none() {
                return Err(Error::invalid(MODULE, "conf-mpu training needs --conf-scores (output of score-conf)"));
            }
            let (c, d, set) = training_set(&corpus, &dict, &cfg.train)?;
            let mut train = cfg.train.clone();
            train.risk.priors = resolve_priors(&priors, &c, &d, &cfg)?.values;
            let scores = match (&conf_scores, train.risk.kind) {
                (Some(path), RiskKind::ConfMpu) => Some(load_token_values(path, &c)?),
                (Some(_), kind) => {
                    log::warn!("--conf-scores is ignored by {kind}");
                    None
                }
                (None, _) => None,
            };
            let (m, train_log) = train_ner(&set, scores.as_ref(), &train)?;
            m.save(&out)?;
            if let Some(path) = log {
                train_log.write(path)?;
            }
        }
        Command::Predict {
            corpus,
            dict,
            model,
            out,
        } => {
            echo(&cfg, cfg.train.seed)?;
            let c = load_corpus(&corpus)?;
            let d = load_dictionary(&dict, c.classes())?;
            let m = ModelParams::load(&model)?;
            check_input_dim(&m, &cfg.train.features)?;
            let labels = predict(&m, &featurize(&c, &d, &cfg.train.features)?)?;
            labeled_corpus(&c, labels)?.write(&out)?;
        }
        Command::Eval {
            pred,
            gold,
            level,
            per_class,
        } => {
            echo(&serde_json::json!({ "level": format!("{level:?}").to_lowercase(), "per_class": per_class }), cfg.train.seed)?;
            println!("{}", serde_json::to_string(&eval(&pred, &gold, level, per_class)?)?);
        }
        Command::Sweep {
            corpus,
            dict,
            out,
            jobs,
        } => {
            let sweep = cfg.sweep_config(jobs);
            echo(&sweep, cfg.train.seed)?;
            let c = load_corpus(&corpus)?;
            let d = load_dictionary(&dict, c.classes())?;
            let (table, fallback_seed) = resolve_embeddings(&cfg.train.features)?;
            coverage_sweep(&c, &d, &sweep, &table, fallback_seed)?.write(&out)?;
        }
    }
    Ok(())
}
