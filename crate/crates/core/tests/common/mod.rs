//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the estimators under test.

#![allow(dead_code)]

use confmpu::features::FeatureVector;
use confmpu::model::{Head, ModelParams, Prediction};
use confmpu::risk::{Batch, RiskConfig, RiskKind, Sample};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Class distribution of a prediction, written out without library helpers.
pub fn dist(p: &Prediction) -> Vec<f64> {
    if p.probs.len() == 1 {
        vec![1.0 - p.probs[0], p.probs[0]]
    } else {
        p.probs.clone()
    }
}

/// `(1 / (k + 1)) * sum_c |onehot(y)_c - p_c|`.
pub fn naive_mae(p: &Prediction, y: usize) -> f64 {
    let d = dist(p);
    let mut total = 0.0;
    for (c, v) in d.iter().enumerate() {
        let target = if c == y { 1.0 } else { 0.0 };
        total += (target - v).abs();
    }
    total / d.len() as f64
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Mean of `l(x, y)` over a sample set; an empty set contributes 0.
fn mean_loss(samples: &[Sample<Prediction>], y: usize) -> f64 {
    mean(&samples.iter().map(|s| naive_mae(&s.x, y)).collect::<Vec<_>>())
}

/// Direct transcription of every estimator's defining sum.
pub fn naive_risk(kind: RiskKind, b: &Batch<Prediction>, cfg: &RiskConfig) -> f64 {
    let pi = &cfg.priors;
    let g = cfg.gamma;
    let pi_sum: f64 = pi.iter().sum();
    let positive_part: f64 = (0..pi.len()).map(|i| g * pi[i] * mean_loss(&b.positives[i], i + 1)).sum();
    let u_neg = mean_loss(&b.unlabeled, 0);
    match kind {
        RiskKind::Pn => g * pi[0] * mean_loss(&b.positives[0], 1) + (1.0 - pi[0]) * u_neg,
        RiskKind::Bpu => {
            let p_neg = pi[0] * mean_loss(&b.positives[0], 0);
            g * pi[0] * mean_loss(&b.positives[0], 1) + f64::max(0.0, u_neg - p_neg)
        }
        RiskKind::Mpn => positive_part + (1.0 - pi_sum) * u_neg,
        RiskKind::Mpu => {
            let correction: f64 = (0..pi.len()).map(|i| pi[i] * mean_loss(&b.positives[i], 0)).sum();
            positive_part + f64::max(0.0, u_neg - correction)
        }
        RiskKind::ConfMpu => {
            let mut total = 0.0;
            for (i, class) in b.positives.iter().enumerate() {
                let terms: Vec<f64> = class
                    .iter()
                    .map(|s| {
                        let lam = s.conf.unwrap();
                        let a = naive_mae(&s.x, i + 1);
                        let c = naive_mae(&s.x, 0);
                        let bterm = if lam > cfg.tau { c / lam } else { 0.0 };
                        f64::max(0.0, a + (bterm - c))
                    })
                    .collect();
                total += g * pi[i] * mean(&terms);
            }
            let d: Vec<f64> = b
                .unlabeled
                .iter()
                .map(|s| if s.conf.unwrap() <= cfg.tau { naive_mae(&s.x, 0) } else { 0.0 })
                .collect();
            total + mean(&d)
        }
    }
}

/// Smallest distance of any clamped quantity from its kink; infinite when
/// the estimator has no clamp.
pub fn kink_margin(kind: RiskKind, b: &Batch<Prediction>, cfg: &RiskConfig) -> f64 {
    let pi = &cfg.priors;
    match kind {
        RiskKind::Bpu | RiskKind::Mpu => {
            let correction: f64 = (0..pi.len()).map(|i| pi[i] * mean_loss(&b.positives[i], 0)).sum();
            (mean_loss(&b.unlabeled, 0) - correction).abs()
        }
        RiskKind::ConfMpu => b
            .positives
            .iter()
            .enumerate()
            .flat_map(|(i, class)| {
                class.iter().map(move |s| {
                    let lam = s.conf.unwrap();
                    let c = naive_mae(&s.x, 0);
                    let bterm = if lam > cfg.tau { c / lam } else { 0.0 };
                    (naive_mae(&s.x, i + 1) + bterm - c).abs()
                })
            })
            .fold(f64::INFINITY, f64::min),
        RiskKind::Pn | RiskKind::Mpn => f64::INFINITY,
    }
}

/// Estimators defined for `k` positive classes.
pub fn kinds_for(k: usize) -> Vec<RiskKind> {
    if k == 1 {
        RiskKind::ALL.to_vec()
    } else {
        vec![RiskKind::Mpn, RiskKind::Mpu, RiskKind::ConfMpu]
    }
}

pub fn random_priors(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(0.02..0.9 / k as f64)).collect()
}

/// Confidence draw that hits `tau` and `1` exactly now and then.
pub fn random_conf(rng: &mut ChaCha8Rng, tau: f64) -> f64 {
    match rng.random_range(0..10) {
        0 => tau,
        1 => 1.0,
        _ => rng.random_range(0.01..=1.0),
    }
}

pub fn random_prediction(rng: &mut ChaCha8Rng, k: usize, head: Head) -> Prediction {
    match head {
        Head::Sigmoid => {
            let z: f64 = 2.0 * rng.sample::<f64, _>(StandardNormal);
            Prediction::new(vec![1.0 / (1.0 + (-z).exp())])
        }
        Head::Softmax => {
            let z: Vec<f64> = (0..=k).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            Prediction::new(e.iter().map(|v| v / s).collect())
        }
    }
}

/// Random batch shape with at least one positive and one unlabeled sample.
/// Some classes may be empty.
pub fn random_shape(rng: &mut ChaCha8Rng, k: usize) -> (Vec<usize>, usize) {
    loop {
        let pos: Vec<usize> = (0..k).map(|_| rng.random_range(0..6)).collect();
        if pos.iter().sum::<usize>() > 0 {
            return (pos, rng.random_range(1..12));
        }
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, k: usize, head: Head, tau: f64) -> Batch<Prediction> {
    let (pos, n_u) = random_shape(rng, k);
    let mut b = Batch::new(k);
    for (i, n) in pos.iter().enumerate() {
        for _ in 0..*n {
            let p = random_prediction(rng, k, head);
            b.positives[i].push(Sample::with_conf(p, random_conf(rng, tau)));
        }
    }
    for _ in 0..n_u {
        let p = random_prediction(rng, k, head);
        b.unlabeled.push(Sample::with_conf(p, random_conf(rng, tau)));
    }
    b
}

pub fn random_feature_batch(rng: &mut ChaCha8Rng, k: usize, dim: usize, tau: f64) -> Batch<FeatureVector> {
    let (pos, n_u) = random_shape(rng, k);
    let draw = |rng: &mut ChaCha8Rng| {
        let x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        Sample::with_conf(FeatureVector(x), random_conf(rng, tau))
    };
    let mut b = Batch::new(k);
    for (i, n) in pos.iter().enumerate() {
        for _ in 0..*n {
            let s = draw(rng);
            b.positives[i].push(s);
        }
    }
    for _ in 0..n_u {
        let s = draw(rng);
        b.unlabeled.push(s);
    }
    b
}

pub fn forward_batch(p: &ModelParams, b: &Batch<FeatureVector>) -> Batch<Prediction> {
    b.map(|x| p.forward(x).unwrap())
}

/// Central differences of `risk(params)` in every coordinate.
pub fn finite_difference(
    p: &ModelParams,
    b: &Batch<FeatureVector>,
    risk: impl Fn(&Batch<Prediction>) -> f64,
    step: f64,
) -> Vec<f64> {
    let mut q = p.clone();
    (0..p.num_params())
        .map(|i| {
            let orig = q.values()[i];
            q.values_mut()[i] = orig + step;
            let up = risk(&forward_batch(&q, b));
            q.values_mut()[i] = orig - step;
            let down = risk(&forward_batch(&q, b));
            q.values_mut()[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn config(kind: RiskKind, priors: Vec<f64>, gamma: f64, tau: f64) -> RiskConfig {
    RiskConfig {
        kind,
        priors,
        gamma,
        tau,
    }
}

pub struct GradientCase {
    pub kind: RiskKind,
    pub head: Head,
    pub k: usize,
    pub rel_error: f64,
}

/// Analytic vs central-difference gradients for every estimator and head
/// valid at configuration `index`. Draws are repeated until every clamp is
/// at least `1e-4` away from its kink.
pub fn gradient_cases(index: u64, step: f64) -> Vec<GradientCase> {
    use confmpu::model::grad;
    use confmpu::risk::RiskEvaluator;
    use rand::SeedableRng;

    let k = [1, 2, 4][index as usize % 3];
    let dim = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + index);
    let gamma = [1.0, 15.0, 28.0][rng.random_range(0..3)];
    let tau = [0.3, 0.5, 0.7][rng.random_range(0..3)];
    let heads: &[Head] = if k == 1 { &[Head::Softmax, Head::Sigmoid] } else { &[Head::Softmax] };
    let mut out = Vec::new();
    for kind in kinds_for(k) {
        for &head in heads {
            let (p, b, eval) = loop {
                let priors = random_priors(&mut rng, k);
                let eval = RiskEvaluator::new(config(kind, priors, gamma, tau)).unwrap();
                let p = ModelParams::init(dim, &[4], head, k, rng.random()).unwrap();
                let b = random_feature_batch(&mut rng, k, dim, tau);
                if kink_margin(kind, &forward_batch(&p, &b), eval.config()) > 1e-4 {
                    break (p, b, eval);
                }
            };
            let (_, analytic) = grad(&p, &b, &eval).unwrap();
            let numeric = finite_difference(&p, &b, |preds| eval.value(preds).unwrap(), step);
            out.push(GradientCase {
                kind,
                head,
                k,
                rel_error: relative_error(&analytic, &numeric),
            });
        }
    }
    out
}
