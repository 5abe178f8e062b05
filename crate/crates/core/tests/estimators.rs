mod common;

use common::*;
use confmpu::features::FeatureVector;
use confmpu::model::{grad, mae_loss, Head, ModelParams, Prediction};
use confmpu::risk::{
    loss_cases, risk, risk_conf_mpu, Batch, RiskConfig, RiskEvaluator, RiskKind, Sample, SampleGroup,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_estimator_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for round in 0..300 {
        let k = [1, 2, 4][round % 3];
        let head = if k == 1 && round % 2 == 0 { Head::Sigmoid } else { Head::Softmax };
        let tau = [0.3, 0.5, 0.7][(round / 3) % 3];
        let gamma = [1.0, 15.0, 28.0][(round / 9) % 3];
        let priors = random_priors(&mut rng, k);
        let b = random_batch(&mut rng, k, head, tau);
        for kind in kinds_for(k) {
            let cfg = config(kind, priors.clone(), gamma, tau);
            let got = risk(kind, &b, &cfg).unwrap();
            let want = naive_risk(kind, &b, &cfg);
            assert!((got - want).abs() <= 1e-12, "{kind} round {round}: {got} vs {want}");
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    for index in 0..6 {
        for case in gradient_cases(index, 1e-5) {
            assert!(
                case.rel_error < 1e-4,
                "{} {:?} k={}: relative error {}",
                case.kind,
                case.head,
                case.k,
                case.rel_error
            );
        }
    }
}

#[test]
fn ten_token_batch_gradients() {
    for kind in RiskKind::ALL {
        for head in [Head::Softmax, Head::Sigmoid] {
            let p = ModelParams::init(4, &[3], head, 1, 11).unwrap();
            let mut b = Batch::new(1);
            for i in 0..10 {
                let x = FeatureVector((0..4).map(|j| ((i * 7 + j * 3) % 5) as f64 / 2.0 - 1.0).collect());
                let conf = [0.9, 0.2, 0.75, 0.4, 0.6][i % 5];
                let s = Sample::with_conf(x, conf);
                if i < 3 {
                    b.positives[0].push(s);
                } else {
                    b.unlabeled.push(s);
                }
            }
            let eval = RiskEvaluator::new(config(kind, vec![0.2], 1.5, 0.5)).unwrap();
            assert!(kink_margin(kind, &forward_batch(&p, &b), eval.config()) > 1e-4);
            let (_, analytic) = grad(&p, &b, &eval).unwrap();
            let numeric = finite_difference(&p, &b, |preds| eval.value(preds).unwrap(), 1e-5);
            let err = relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "{kind} {head:?}: {err}");
        }
    }
}

#[test]
fn saturated_correct_predictions_give_zero_gradient() {
    // single linear layer whose logits are 60 * x, fed one-hot inputs
    let mut p = ModelParams::zeros(3, &[], Head::Softmax, 2).unwrap();
    for c in 0..3 {
        p.values_mut()[c * 3 + c] = 60.0;
    }
    let onehot = |c: usize| FeatureVector((0..3).map(|j| f64::from(u8::from(j == c))).collect());
    let mut b = Batch::new(2);
    b.positives[0].push(Sample::with_conf(onehot(1), 1.0));
    b.positives[1].push(Sample::with_conf(onehot(2), 1.0));
    b.unlabeled.push(Sample::with_conf(onehot(0), 0.1));
    for kind in [RiskKind::Mpn, RiskKind::Mpu, RiskKind::ConfMpu] {
        let eval = RiskEvaluator::new(config(kind, vec![0.1, 0.2], 1.0, 0.5)).unwrap();
        let (value, g) = grad(&p, &b, &eval).unwrap();
        assert!(value.abs() < 1e-20, "{kind}: {value}");
        assert!(g.iter().all(|v| v.abs() < 1e-20), "{kind}: {g:?}");
    }
}

#[test]
fn clamped_positive_term_has_zero_gradient() {
    // predicted as its own class with low confidence: A - C < 0, B = 0
    let mut b = Batch::new(1);
    b.positives[0].push(Sample::with_conf(Prediction::new(vec![0.3, 0.7]), 0.2));
    b.positives[0].push(Sample::with_conf(Prediction::new(vec![0.6, 0.4]), 0.9));
    b.unlabeled.push(Sample::with_conf(Prediction::new(vec![0.8, 0.2]), 0.1));
    let eval = RiskEvaluator::new(config(RiskKind::ConfMpu, vec![0.3], 1.0, 0.5)).unwrap();
    let (_, d) = eval.value_and_grad(&b).unwrap();
    assert_eq!(d.positives[0][0].x, vec![0.0, 0.0]);
    assert!(d.positives[0][1].x.iter().any(|v| *v != 0.0));
}

fn case_batch() -> (Batch<Prediction>, RiskConfig) {
    let p = |v: &[f64]| Prediction::new(v.to_vec());
    let mut b = Batch::new(2);
    b.positives[0].push(Sample::with_conf(p(&[0.2, 0.7, 0.1]), 1.0));
    b.positives[0].push(Sample::with_conf(p(&[0.5, 0.3, 0.2]), 0.8));
    b.positives[1].push(Sample::with_conf(p(&[0.1, 0.1, 0.8]), 0.4));
    b.unlabeled.push(Sample::with_conf(p(&[0.6, 0.3, 0.1]), 0.3));
    b.unlabeled.push(Sample::with_conf(p(&[0.2, 0.2, 0.6]), 0.9));
    b.unlabeled.push(Sample::with_conf(p(&[0.7, 0.2, 0.1]), 0.5));
    (b, config(RiskKind::ConfMpu, vec![0.1, 0.15], 2.0, 0.5))
}

#[test]
fn loss_case_rows_follow_the_threshold_cases() {
    let (b, cfg) = case_batch();
    let cases = loss_cases(&b, &cfg).unwrap();
    assert!((cases.total() - risk_conf_mpu(&b, &cfg).unwrap()).abs() < 1e-12);

    let first = &cases.rows[0];
    assert_eq!(first.group, SampleGroup::Positive(1));
    assert_eq!(first.term, first.a);
    assert_eq!(first.a, mae_loss(&b.positives[0][0].x, 1));

    for row in cases.rows.iter().filter(|r| r.group == SampleGroup::Unlabeled) {
        assert_eq!((row.a, row.b, row.c), (0.0, 0.0, 0.0));
        let conf = b.unlabeled[row.index].conf.unwrap();
        if conf > cfg.tau {
            assert_eq!((row.d, row.term), (0.0, 0.0));
        } else {
            assert_eq!(row.d, mae_loss(&b.unlabeled[row.index].x, 0));
            assert_ne!(row.d, 0.0);
        }
    }
}

proptest! {
    #[test]
    fn estimators_are_non_negative(seed in any::<u64>(), k_index in 0usize..3) {
        let k = [1, 2, 4][k_index];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_batch(&mut rng, k, Head::Softmax, 0.5);
        let priors = random_priors(&mut rng, k);
        for kind in kinds_for(k) {
            let v = risk(kind, &b, &config(kind, priors.clone(), 1.0, 0.5)).unwrap();
            prop_assert!(v >= 0.0 && v.is_finite());
        }
    }

    #[test]
    fn full_confidence_reduces_conf_mpu_to_its_positive_term(seed in any::<u64>(), tau in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = random_batch(&mut rng, 2, Head::Softmax, tau);
        for s in b.positives.iter_mut().flatten().chain(b.unlabeled.iter_mut()) {
            s.conf = Some(1.0);
        }
        let priors = random_priors(&mut rng, 2);
        let conf = risk(RiskKind::ConfMpu, &b, &config(RiskKind::ConfMpu, priors.clone(), 3.0, tau)).unwrap();
        let mut positive = 0.0;
        for (i, class) in b.positives.iter().enumerate() {
            if !class.is_empty() {
                let m: f64 = class.iter().map(|s| naive_mae(&s.x, i + 1)).sum::<f64>() / class.len() as f64;
                positive += 3.0 * priors[i] * m;
            }
        }
        prop_assert!((conf - positive).abs() < 1e-12);
    }

    #[test]
    fn gamma_scales_only_positive_terms_of_mpn(seed in any::<u64>(), gamma in 1.0f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_batch(&mut rng, 2, Head::Softmax, 0.5);
        let priors = random_priors(&mut rng, 2);
        let at = |g: f64| risk(RiskKind::Mpn, &b, &config(RiskKind::Mpn, priors.clone(), g, 0.5)).unwrap();
        let neg = at(1e-300);
        let pos = at(1.0) - neg;
        prop_assert!((at(gamma) - (neg + gamma * pos)).abs() < 1e-10);
    }
}
