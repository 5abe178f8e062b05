//! Empirical risk estimators for positive/unlabeled token classification.
//!
//! Every estimator consumes a [`Batch`]: labeled positives grouped by class
//! `1..=k` and a pool of unlabeled samples. The estimators themselves work on
//! per-sample loss vectors; the prediction-level entry points fill those with
//! the bounded mean absolute error from [`crate::model::mae_loss`].
//!
//! Notation used below: `n_i` positives of class `i`, `n_u` unlabeled
//! samples, priors `pi_i`, class weight `gamma`, threshold `tau`,
//! `l(x, c)` the loss of predicting `x` against class `c`.
//!
//! * `pn`: `gamma pi mean_P l(x, 1) + (1 - pi) mean_U l(x, 0)` with `k = 1`
//! * `bpu`: `gamma pi mean_P l(x, 1) + max{0, mean_U l(x, 0) - pi mean_P l(x, 0)}`
//! * `mpn`: `gamma sum_i pi_i mean_Pi l(x, i) + (1 - sum_i pi_i) mean_U l(x, 0)`
//! * `mpu`: `gamma sum_i pi_i mean_Pi l(x, i) + max{0, mean_U l(x, 0) - sum_i pi_i mean_Pi l(x, 0)}`
//! * `conf-mpu`: `gamma sum_i pi_i mean_Pi max{0, A + B - C} + mean_U D` where
//!   `A = l(x, i)`, `B = [conf > tau] l(x, 0) / conf`, `C = l(x, 0)` and
//!   `D = [conf <= tau] l(x, 0)`.
//!
//! `gamma` scales only the positive-class terms. A clamped term contributes a
//! zero subgradient.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::model::{mae_from_probs, mae_grad_into, Prediction};

const MODULE: &str = "risk";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskKind {
    Pn,
    Bpu,
    Mpn,
    Mpu,
    ConfMpu,
}

impl RiskKind {
    pub const ALL: [RiskKind; 5] = [
        RiskKind::Pn,
        RiskKind::Bpu,
        RiskKind::Mpn,
        RiskKind::Mpu,
        RiskKind::ConfMpu,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskKind::Pn => "pn",
            RiskKind::Bpu => "bpu",
            RiskKind::Mpn => "mpn",
            RiskKind::Mpu => "mpu",
            RiskKind::ConfMpu => "conf-mpu",
        }
    }

    /// Binary-only estimators.
    pub fn is_binary(self) -> bool {
        matches!(self, RiskKind::Pn | RiskKind::Bpu)
    }
}

impl fmt::Display for RiskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RiskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(MODULE, format!("unknown risk {s:?}; expected pn|bpu|mpn|mpu|conf-mpu"))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub kind: RiskKind,
    /// `pi_i` for classes `1..=k`.
    #[serde(default)]
    pub priors: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_gamma() -> f64 {
    1.0
}

fn default_tau() -> f64 {
    0.5
}

impl RiskConfig {
    pub fn new(kind: RiskKind, priors: Vec<f64>) -> Self {
        Self {
            kind,
            priors,
            gamma: default_gamma(),
            tau: default_tau(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_settings()?;
        if self.priors.is_empty() {
            return Err(Error::invalid(MODULE, "class priors are not set"));
        }
        if let Some(p) = self.priors.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::invalid(MODULE, format!("prior {p} is outside (0, 1)")));
        }
        let total: f64 = self.priors.iter().sum();
        if total >= 1.0 {
            return Err(Error::invalid(MODULE, format!("priors sum to {total}, must be < 1")));
        }
        if self.kind.is_binary() && self.priors.len() != 1 {
            return Err(Error::invalid(
                MODULE,
                format!("{} is a binary estimator and needs exactly one prior", self.kind),
            ));
        }
        Ok(())
    }

    /// Checks `gamma` and `tau` only, for configs whose priors are filled in later.
    pub fn validate_settings(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(MODULE, format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid(MODULE, format!("tau must be in (0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub x: T,
    /// Confidence score, required by `conf-mpu` only.
    pub conf: Option<f64>,
}

impl<T> Sample<T> {
    pub fn new(x: T) -> Self {
        Self { x, conf: None }
    }

    pub fn with_conf(x: T, conf: f64) -> Self {
        Self { x, conf: Some(conf) }
    }
}

/// Labeled positives per class (index `i - 1` holds class `i`) and unlabeled samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub positives: Vec<Vec<Sample<T>>>,
    pub unlabeled: Vec<Sample<T>>,
}

impl<T> Batch<T> {
    pub fn new(num_classes: usize) -> Self {
        Self {
            positives: (0..num_classes).map(|_| Vec::new()).collect(),
            unlabeled: Vec::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.positives.len()
    }

    pub fn len(&self) -> usize {
        self.positives.iter().map(Vec::len).sum::<usize>() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Batch<U> {
        let mut conv = |s: &Sample<T>| Sample {
            x: f(&s.x),
            conf: s.conf,
        };
        Batch {
            positives: self
                .positives
                .iter()
                .map(|v| v.iter().map(&mut conv).collect())
                .collect(),
            unlabeled: self.unlabeled.iter().map(&mut conv).collect(),
        }
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(&T) -> std::result::Result<U, E>) -> std::result::Result<Batch<U>, E> {
        let mut positives = Vec::with_capacity(self.positives.len());
        for v in &self.positives {
            let mut out = Vec::with_capacity(v.len());
            for s in v {
                out.push(Sample {
                    x: f(&s.x)?,
                    conf: s.conf,
                });
            }
            positives.push(out);
        }
        let mut unlabeled = Vec::with_capacity(self.unlabeled.len());
        for s in &self.unlabeled {
            unlabeled.push(Sample {
                x: f(&s.x)?,
                conf: s.conf,
            });
        }
        Ok(Batch {
            positives,
            unlabeled,
        })
    }

    /// Samples in a fixed order: positives class by class, then unlabeled.
    pub fn iter_x(&self) -> impl Iterator<Item = &T> {
        self.positives
            .iter()
            .flatten()
            .chain(&self.unlabeled)
            .map(|s| &s.x)
    }
}

/// Evaluates the estimator selected by `RiskConfig::kind`.
#[derive(Clone, Debug)]
pub struct RiskEvaluator {
    cfg: RiskConfig,
}

impl RiskEvaluator {
    pub fn new(cfg: RiskConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &RiskConfig {
        &self.cfg
    }

    pub fn value(&self, batch: &Batch<Prediction>) -> Result<f64> {
        risk(self.cfg.kind, batch, &self.cfg)
    }

    /// Risk value plus its derivative with respect to every sample's class
    /// distribution, laid out like the batch.
    pub fn value_and_grad(&self, batch: &Batch<Prediction>) -> Result<(f64, Batch<Vec<f64>>)> {
        check_predictions(batch, self.cfg.priors.len())?;
        let losses = mae_losses(batch);
        let (value, dloss) = evaluate(self.cfg.kind, &self.cfg, &losses, true)?;
        let dloss = dloss.expect("gradient requested");
        // chain through the loss: d l(p, c) / d p_m = (m == c ? -1 : 1) / (k + 1)
        let dprobs = dloss.map(|dl| {
            let outcomes = dl.len();
            let mut out = vec![0.0; outcomes];
            for (c, g) in dl.iter().enumerate() {
                if *g != 0.0 {
                    mae_grad_into(outcomes, c, *g, &mut out);
                }
            }
            out
        });
        Ok((value, dprobs))
    }
}

/// Per-sample loss vectors `l(f(x), c)` for `c = 0..=k` under the MAE loss.
pub fn mae_losses(batch: &Batch<Prediction>) -> Batch<Vec<f64>> {
    batch.map(|p| {
        let probs = p.class_probs();
        (0..probs.len()).map(|c| mae_from_probs(&probs, c)).collect()
    })
}

fn check_predictions(batch: &Batch<Prediction>, k: usize) -> Result<()> {
    if let Some(s) = batch.iter_x().find(|p| p.num_outcomes() != k + 1) {
        return Err(Error::invalid(
            MODULE,
            format!("prediction has {} outcomes, expected {}", s.num_outcomes(), k + 1),
        ));
    }
    Ok(())
}

pub fn risk_pn(batch: &Batch<Prediction>, cfg: &RiskConfig) -> Result<f64> {
    risk(RiskKind::Pn, batch, cfg)
}

pub fn risk_bpu(batch: &Batch<Prediction>, cfg: &RiskConfig) -> Result<f64> {
    risk(RiskKind::Bpu, batch, cfg)
}

pub fn risk_mpn(batch: &Batch<Prediction>, cfg: &RiskConfig) -> Result<f64> {
    risk(RiskKind::Mpn, batch, cfg)
}

pub fn risk_mpu(batch: &Batch<Prediction>, cfg: &RiskConfig) -> Result<f64> {
    risk(RiskKind::Mpu, batch, cfg)
}

pub fn risk_conf_mpu(batch: &Batch<Prediction>, cfg: &RiskConfig) -> Result<f64> {
    risk(RiskKind::ConfMpu, batch, cfg)
}

/// Runs `kind` with `cfg`'s priors, gamma and tau on MAE losses of `batch`.
pub fn risk(kind: RiskKind, batch: &Batch<Prediction>, cfg: &RiskConfig) -> Result<f64> {
    check_predictions(batch, cfg.priors.len())?;
    risk_from_losses(kind, &mae_losses(batch), cfg)
}

/// Runs `kind` on precomputed per-sample loss vectors (`x[c] = l(f(x), c)`).
pub fn risk_from_losses(kind: RiskKind, losses: &Batch<Vec<f64>>, cfg: &RiskConfig) -> Result<f64> {
    Ok(evaluate(kind, cfg, losses, false)?.0)
}

fn check_inputs(kind: RiskKind, cfg: &RiskConfig, batch: &Batch<Vec<f64>>) -> Result<usize> {
    let check_cfg = RiskConfig { kind, ..cfg.clone() };
    check_cfg.validate()?;
    let k = cfg.priors.len();
    if batch.num_classes() != k {
        return Err(Error::invalid(
            MODULE,
            format!("batch has {} positive classes, config has {k} priors", batch.num_classes()),
        ));
    }
    if batch.positives.iter().all(Vec::is_empty) {
        return Err(Error::invalid(MODULE, "batch has no labeled positives"));
    }
    if batch.unlabeled.is_empty() {
        return Err(Error::invalid(MODULE, "batch has no unlabeled samples"));
    }
    for (i, class) in batch.positives.iter().enumerate() {
        if class.is_empty() {
            log::debug!("risk: class {} has no positives in this batch; its terms are 0", i + 1);
        }
    }
    if batch.iter_x().any(|l| l.len() != k + 1) {
        return Err(Error::invalid(MODULE, format!("loss vectors must have {} entries", k + 1)));
    }
    if kind == RiskKind::ConfMpu {
        let all = batch.positives.iter().flatten().chain(&batch.unlabeled);
        for s in all {
            match s.conf {
                None => return Err(Error::invalid(MODULE, "conf-mpu needs a confidence score on every sample")),
                Some(c) if !(c > 0.0 && c <= 1.0) => {
                    return Err(Error::invalid(MODULE, format!("confidence score {c} is outside (0, 1]")))
                }
                _ => {}
            }
        }
    }
    Ok(k)
}

/// Shared evaluation path over loss vectors. Returns the derivative of the
/// risk with respect to every loss entry when `want_grad` is set.
fn evaluate(
    kind: RiskKind,
    cfg: &RiskConfig,
    batch: &Batch<Vec<f64>>,
    want_grad: bool,
) -> Result<(f64, Option<Batch<Vec<f64>>>)> {
    let k = check_inputs(kind, cfg, batch)?;
    let gamma = cfg.gamma;
    let tau = cfg.tau;
    let prior_sum: f64 = cfg.priors.iter().sum();
    let mut grads = want_grad.then(|| batch.map(|_| vec![0.0; k + 1]));

    let n_u = batch.unlabeled.len() as f64;
    let mean_u_neg = batch.unlabeled.iter().map(|s| s.x[0]).sum::<f64>() / n_u;

    let mut value = 0.0;
    match kind {
        RiskKind::Pn | RiskKind::Mpn => {
            for (i, class) in batch.positives.iter().enumerate() {
                if class.is_empty() {
                    continue;
                }
                let w = cfg.priors[i] / class.len() as f64;
                let sum: f64 = class.iter().map(|s| s.x[i + 1]).sum();
                value += gamma * w * sum;
                if let Some(g) = grads.as_mut() {
                    for gs in &mut g.positives[i] {
                        gs.x[i + 1] += gamma * w;
                    }
                }
            }
            value += (1.0 - prior_sum) * mean_u_neg;
            if let Some(g) = grads.as_mut() {
                for gs in &mut g.unlabeled {
                    gs.x[0] += (1.0 - prior_sum) / n_u;
                }
            }
        }
        RiskKind::Bpu | RiskKind::Mpu => {
            let mut correction = 0.0;
            for (i, class) in batch.positives.iter().enumerate() {
                if class.is_empty() {
                    continue;
                }
                let w = cfg.priors[i] / class.len() as f64;
                let pos: f64 = class.iter().map(|s| s.x[i + 1]).sum();
                let neg: f64 = class.iter().map(|s| s.x[0]).sum();
                value += gamma * w * pos;
                correction += w * neg;
                if let Some(g) = grads.as_mut() {
                    for gs in &mut g.positives[i] {
                        gs.x[i + 1] += gamma * w;
                    }
                }
            }
            let negative_risk = mean_u_neg - correction;
            if negative_risk > 0.0 {
                value += negative_risk;
                if let Some(g) = grads.as_mut() {
                    for gs in &mut g.unlabeled {
                        gs.x[0] += 1.0 / n_u;
                    }
                    for (i, class) in g.positives.iter_mut().enumerate() {
                        if class.is_empty() {
                            continue;
                        }
                        let w = cfg.priors[i] / class.len() as f64;
                        for gs in class {
                            gs.x[0] -= w;
                        }
                    }
                }
            }
        }
        RiskKind::ConfMpu => {
            for (i, class) in batch.positives.iter().enumerate() {
                if class.is_empty() {
                    continue;
                }
                let w = cfg.priors[i] / class.len() as f64;
                let mut sum = 0.0;
                for (j, s) in class.iter().enumerate() {
                    let conf = s.conf.expect("checked");
                    let t = positive_terms(&s.x, i + 1, conf, tau).clamped();
                    sum += t;
                    if t > 0.0 {
                        if let Some(g) = grads.as_mut() {
                            let gx = &mut g.positives[i][j].x;
                            let b_coef = if conf > tau { 1.0 / conf } else { 0.0 };
                            gx[i + 1] += gamma * w;
                            gx[0] += gamma * w * (b_coef - 1.0);
                        }
                    }
                }
                value += gamma * w * sum;
            }
            let mut sum_d = 0.0;
            for (j, s) in batch.unlabeled.iter().enumerate() {
                if s.conf.expect("checked") <= tau {
                    sum_d += s.x[0];
                    if let Some(g) = grads.as_mut() {
                        g.unlabeled[j].x[0] += 1.0 / n_u;
                    }
                }
            }
            value += sum_d / n_u;
        }
    }
    Ok((value, grads))
}

#[derive(Clone, Copy, Debug)]
struct PositiveTerms {
    a: f64,
    b: f64,
    c: f64,
}

impl PositiveTerms {
    /// `max{0, A + (B - C)}`; grouping `B - C` keeps the `conf = 1` case
    /// exactly equal to `A`.
    fn clamped(self) -> f64 {
        (self.a + (self.b - self.c)).max(0.0)
    }
}

fn positive_terms(losses: &[f64], class: ClassId, conf: f64, tau: f64) -> PositiveTerms {
    let a = losses[class];
    let c = losses[0];
    let b = if conf > tau { c / conf } else { 0.0 };
    PositiveTerms { a, b, c }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleGroup {
    Positive(ClassId),
    Unlabeled,
}

/// One sample's share of the conf-mpu risk.
#[derive(Clone, Debug, PartialEq)]
pub struct LossCaseRow {
    pub group: SampleGroup,
    pub index: usize,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// Per-sample term: `max{0, A + B - C}` for positives, `D` for unlabeled.
    pub term: f64,
    /// Multiplier applied to `term` in the estimator.
    pub weight: f64,
}

impl LossCaseRow {
    pub fn contribution(&self) -> f64 {
        self.weight * self.term
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossCases {
    pub rows: Vec<LossCaseRow>,
}

impl LossCases {
    pub fn total(&self) -> f64 {
        self.rows.iter().map(LossCaseRow::contribution).sum()
    }
}

/// Per-sample breakdown of the conf-mpu risk into its `A`, `B`, `C`, `D` terms.
pub fn loss_cases(batch: &Batch<Prediction>, cfg: &RiskConfig) -> Result<LossCases> {
    check_predictions(batch, cfg.priors.len())?;
    loss_cases_from_losses(&mae_losses(batch), cfg)
}

pub fn loss_cases_from_losses(batch: &Batch<Vec<f64>>, cfg: &RiskConfig) -> Result<LossCases> {
    check_inputs(RiskKind::ConfMpu, cfg, batch)?;
    let mut rows = Vec::with_capacity(batch.len());
    for (i, class) in batch.positives.iter().enumerate() {
        let weight = cfg.gamma * cfg.priors[i] / class.len().max(1) as f64;
        for (j, s) in class.iter().enumerate() {
            let t = positive_terms(&s.x, i + 1, s.conf.expect("checked"), cfg.tau);
            rows.push(LossCaseRow {
                group: SampleGroup::Positive(i + 1),
                index: j,
                a: t.a,
                b: t.b,
                c: t.c,
                d: 0.0,
                term: t.clamped(),
                weight,
            });
        }
    }
    let weight = 1.0 / batch.unlabeled.len() as f64;
    for (j, s) in batch.unlabeled.iter().enumerate() {
        let d = if s.conf.expect("checked") <= cfg.tau { s.x[0] } else { 0.0 };
        rows.push(LossCaseRow {
            group: SampleGroup::Unlabeled,
            index: j,
            a: 0.0,
            b: 0.0,
            c: 0.0,
            d,
            term: d,
            weight,
        });
    }
    Ok(LossCases { rows })
}

fn mae_loss_of(p: &Prediction, y: usize) -> f64 {
    mae_from_probs(&p.class_probs(), y)
}

/// A distribution with known class-conditionals and priors, used to check
/// the threshold decomposition of the unlabeled negative risk by sampling.
pub trait Population {
    type Point;

    /// Number of positive classes `k`.
    fn num_classes(&self) -> usize;
    fn prior(&self, class: ClassId) -> f64;
    fn sample_marginal(&self, rng: &mut ChaCha8Rng) -> Self::Point;
    fn sample_class(&self, class: ClassId, rng: &mut ChaCha8Rng) -> Self::Point;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecompositionCheck {
    /// `E_p[l(f(x), 0)]`.
    pub lhs: f64,
    /// `sum_i pi_i E_{p_i}[[lambda > tau] l(f(x), 0) / lambda] + E_p[[lambda <= tau] l(f(x), 0)]`.
    pub rhs: f64,
    pub gap: f64,
}

/// Monte-Carlo estimates of both sides of the decomposition with `n` draws
/// per expectation. Fails if `lambda(x) <= 0` is encountered.
pub fn mc_decomposition_check<P: Population>(
    population: &P,
    f: impl Fn(&P::Point) -> Prediction,
    lambda: impl Fn(&P::Point) -> f64,
    tau: f64,
    n: usize,
    seed: u64,
) -> Result<DecompositionCheck> {
    if n == 0 {
        return Err(Error::invalid(MODULE, "need at least one draw"));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(MODULE, format!("tau must be in (0, 1], got {tau}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checked_lambda = |x: &P::Point| -> Result<f64> {
        let l = lambda(x);
        if !(l > 0.0 && l <= 1.0) {
            return Err(Error::invalid(
                MODULE,
                format!("confidence {l} encountered; the decomposition requires lambda(x) in (0, 1]"),
            ));
        }
        Ok(l)
    };
    let neg_loss = |x: &P::Point| mae_loss_of(&f(x), 0);

    let mut lhs = 0.0;
    for _ in 0..n {
        lhs += neg_loss(&population.sample_marginal(&mut rng));
    }
    lhs /= n as f64;

    let mut rhs = 0.0;
    for class in 1..=population.num_classes() {
        let mut acc = 0.0;
        for _ in 0..n {
            let x = population.sample_class(class, &mut rng);
            let l = checked_lambda(&x)?;
            if l > tau {
                acc += neg_loss(&x) / l;
            }
        }
        rhs += population.prior(class) * acc / n as f64;
    }
    let mut acc = 0.0;
    for _ in 0..n {
        let x = population.sample_marginal(&mut rng);
        if checked_lambda(&x)? <= tau {
            acc += neg_loss(&x);
        }
    }
    rhs += acc / n as f64;

    Ok(DecompositionCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}
