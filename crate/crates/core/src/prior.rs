//! Class-prior estimation.
//!
//! The induction estimator follows the tree-induced label-frequency idea:
//! if some region of feature space holds only class-`i` tokens, the share of
//! them that carry a distant label estimates the label frequency `c_i`, and
//! `pi_i = labeled_fraction_i / c_i`. Regions are found by greedy
//! axis-aligned splits; each candidate cell's frequency is discounted by a
//! one-sided Hoeffding bound and the best discounted value is kept.
//!
//! Lexicon bits should be masked from the features handed to the estimator:
//! they are derived from the same dictionary as the labels, so a cell
//! defined by them is trivially fully labeled.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{read_file, write_file, ClassId, ClassSet, Corpus, DistantLabel, GoldLabel};
use crate::error::{Error, Result};
use crate::features::FeatureTable;

const MODULE: &str = "prior";

pub const PRIOR_FLOOR: f64 = 1e-4;
pub const PRIOR_CEIL: f64 = 0.5;
/// Estimated priors whose sum reaches 1 are rescaled to this total.
const MAX_TOTAL: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMethod {
    Induction,
    Oracle,
    Configured,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorEstimate {
    /// `values[i - 1]` is the prior of class `i`.
    pub values: Vec<f64>,
    pub method: PriorMethod,
}

impl PriorEstimate {
    pub fn new(values: Vec<f64>, method: PriorMethod) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid(MODULE, "no priors"));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::invalid(MODULE, format!("prior {v} is outside (0, 1)")));
        }
        let total: f64 = values.iter().sum();
        if total >= 1.0 {
            return Err(Error::invalid(MODULE, format!("priors sum to {total}, must be below 1")));
        }
        Ok(Self { values, method })
    }

    /// JSON object `{class_name: value}`.
    pub fn to_json(&self, classes: &ClassSet) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = classes
            .names()
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), serde_json::json!(v)))
            .collect();
        serde_json::Value::Object(map)
    }

    pub fn write(&self, path: impl AsRef<Path>, classes: &ClassSet) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json(classes))? + "\n";
        write_file(path.as_ref(), &text)
    }
}

/// Reads `{class_name: value}` and orders it by class id.
pub fn parse_priors(text: &str, classes: &ClassSet) -> Result<PriorEstimate> {
    let map: BTreeMap<String, f64> = serde_json::from_str(text)?;
    if let Some(extra) = map.keys().find(|k| classes.id(k).is_none()) {
        return Err(Error::invalid(MODULE, format!("unknown class {extra:?} in priors")));
    }
    let values = classes
        .names()
        .iter()
        .map(|n| {
            map.get(n)
                .copied()
                .ok_or_else(|| Error::invalid(MODULE, format!("no prior given for class {n:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    PriorEstimate::new(values, PriorMethod::Configured)
}

pub fn load_priors(path: impl AsRef<Path>, classes: &ClassSet) -> Result<PriorEstimate> {
    parse_priors(&read_file(path.as_ref())?, classes)
}

/// Exact gold token fraction of every class.
pub fn oracle_priors(c: &Corpus) -> Result<PriorEstimate> {
    let gold = c
        .gold()
        .ok_or_else(|| Error::invalid(MODULE, "oracle priors need gold labels"))?;
    let mut counts = vec![0usize; c.num_classes() + 1];
    for l in gold.iter().flatten() {
        if let GoldLabel::Positive(id) = l {
            counts[*id] += 1;
        }
    }
    let n = c.num_tokens() as f64;
    for (id, count) in counts.iter().enumerate().skip(1) {
        if *count == 0 {
            return Err(Error::invalid(
                MODULE,
                format!("class {:?} has no gold tokens; priors must be positive", name(c.classes(), id)),
            ));
        }
    }
    PriorEstimate::new(counts[1..].iter().map(|k| *k as f64 / n).collect(), PriorMethod::Oracle)
}

fn name(classes: &ClassSet, id: ClassId) -> &str {
    classes.name(id).unwrap_or("?")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InductionConfig {
    /// Failure probability of the one-sided bound on each cell's frequency.
    pub delta: f64,
    pub max_depth: usize,
    /// Smallest cell that may be created by a split.
    pub min_cell: usize,
    /// Candidate thresholds per feature, placed at evenly spaced quantiles.
    pub thresholds: usize,
}

impl Default for InductionConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            max_depth: 8,
            min_cell: 50,
            thresholds: 16,
        }
    }
}

impl InductionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(MODULE, format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if self.min_cell == 0 || self.thresholds == 0 {
            return Err(Error::invalid(MODULE, "min_cell and thresholds must be positive"));
        }
        Ok(())
    }
}

struct Cells<'a> {
    points: Vec<&'a [f64]>,
    labeled: Vec<bool>,
    slack: f64,
    cfg: &'a InductionConfig,
}

impl Cells<'_> {
    /// Discounted label frequency of a cell.
    fn bound(&self, cell: &[usize]) -> f64 {
        let n = cell.len() as f64;
        let hits = cell.iter().filter(|i| self.labeled[**i]).count() as f64;
        hits / n - (self.slack / (2.0 * n)).sqrt()
    }

    /// Best single split of `cell`, scored by the better child's bound.
    fn split(&self, cell: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        let dim = self.points[cell[0]].len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut values: Vec<f64> = Vec::with_capacity(cell.len());
        for f in 0..dim {
            values.clear();
            values.extend(cell.iter().map(|i| self.points[*i][f]));
            values.sort_by(f64::total_cmp);
            values.dedup();
            if values.len() < 2 {
                continue;
            }
            for q in 1..=self.cfg.thresholds {
                let at = q * (values.len() - 1) / (self.cfg.thresholds + 1);
                let t = values[at];
                let (mut n_lo, mut hit_lo, mut n_hi, mut hit_hi) = (0usize, 0usize, 0usize, 0usize);
                for i in cell {
                    if self.points[*i][f] <= t {
                        n_lo += 1;
                        hit_lo += usize::from(self.labeled[*i]);
                    } else {
                        n_hi += 1;
                        hit_hi += usize::from(self.labeled[*i]);
                    }
                }
                if n_lo < self.cfg.min_cell || n_hi < self.cfg.min_cell {
                    continue;
                }
                let b = |hits: usize, n: usize| hits as f64 / n as f64 - (self.slack / (2.0 * n as f64)).sqrt();
                let score = b(hit_lo, n_lo).max(b(hit_hi, n_hi));
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, f, t));
                }
            }
        }
        let (_, f, t) = best?;
        let (lo, hi): (Vec<usize>, Vec<usize>) = cell.iter().partition(|i| self.points[**i][f] <= t);
        Some((lo, hi))
    }

    /// Largest discounted label frequency over all visited cells.
    fn label_frequency(&self) -> f64 {
        let root: Vec<usize> = (0..self.points.len()).collect();
        let mut best = self.bound(&root);
        let mut frontier = vec![root];
        for _ in 0..self.cfg.max_depth {
            let mut next = Vec::new();
            for cell in &frontier {
                if cell.len() < 2 * self.cfg.min_cell {
                    continue;
                }
                if let Some((lo, hi)) = self.split(cell) {
                    best = best.max(self.bound(&lo)).max(self.bound(&hi));
                    next.push(lo);
                    next.push(hi);
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        best
    }
}

/// Estimates priors from distant labels and per-token features.
pub fn estimate_priors_induction(c: &Corpus, features: &FeatureTable, cfg: &InductionConfig) -> Result<PriorEstimate> {
    cfg.validate()?;
    let distant = c
        .distant()
        .ok_or_else(|| Error::invalid(MODULE, "prior induction needs distant labels"))?;
    c.check_table(features, "feature")?;
    let labels: Vec<DistantLabel> = distant.iter().flatten().copied().collect();
    let points: Vec<&[f64]> = features.iter().flatten().map(|v| &v[..]).collect();
    let n = points.len() as f64;
    let mut values = Vec::with_capacity(c.num_classes());
    for id in 1..=c.num_classes() {
        let labeled: Vec<bool> = labels.iter().map(|l| l.class() == Some(id)).collect();
        let count = labeled.iter().filter(|b| **b).count();
        if count == 0 {
            return Err(Error::invalid(
                MODULE,
                format!("class {:?} has no labeled tokens", name(c.classes(), id)),
            ));
        }
        let cells = Cells {
            points: points.clone(),
            labeled,
            slack: (1.0 / cfg.delta).ln(),
            cfg,
        };
        let freq = cells.label_frequency();
        let fraction = count as f64 / n;
        let pi = if freq > 0.0 { fraction / freq } else { PRIOR_CEIL };
        log::debug!("prior: class {id} labeled fraction {fraction:.5}, label frequency {freq:.4}");
        values.push(pi.clamp(PRIOR_FLOOR, PRIOR_CEIL));
    }
    let total: f64 = values.iter().sum();
    if total >= 1.0 {
        log::warn!("prior: estimated priors sum to {total:.3}; rescaling to {MAX_TOTAL}");
        values.iter_mut().for_each(|v| *v *= MAX_TOTAL / total);
    }
    PriorEstimate::new(values, PriorMethod::Induction)
}
