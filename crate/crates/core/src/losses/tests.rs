use super::*;
use crate::tensor::rng::Rng;
use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape, v.to_vec()).unwrap()
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

#[test]
fn equal_logits_give_log_of_one_plus_negatives() {
    // 3 reservoirs × 4 samples, identical embeddings: 3 positives' peers and 8 negatives available
    let v = t(&[12, 4], &[0.3; 48]);
    let ids: Vec<usize> = (0..12).map(|i| i / 4).collect();
    let loss = contrastive_loss(&v, &ids, 0.1, 8, &mut Rng::new(1)).unwrap();
    assert!((loss.item() - 9f64.ln()).abs() < 1e-9, "{}", loss.item());
}

#[test]
fn hand_example_one_negative() {
    // sim+ = 1, sim- = -1, tau = 1
    let v = t(&[3, 2], &[1.0, 0.0, 1.0, 0.0, -1.0, 0.0]);
    let pairs = ContrastivePairs { anchors: vec![0], positives: vec![1], negatives: vec![vec![2]] };
    let loss = contrastive_loss_with(&v, &pairs, 1.0).unwrap().item();
    let expected = -(1f64.exp() / (1f64.exp() + (-1f64).exp())).ln();
    assert!((loss - expected).abs() < 1e-7);
    assert!((loss - 0.1269).abs() < 1e-4);
}

#[test]
fn single_reservoir_has_zero_loss() {
    let mut rng = Rng::new(5);
    let v = random(&mut rng, &[4, 3]);
    let loss = contrastive_loss(&v, &[7, 7, 7, 7], 0.1, 8, &mut rng).unwrap();
    assert!(loss.item().abs() < 1e-12);
}

#[test]
fn no_positive_returns_zero() {
    let v = random(&mut Rng::new(2), &[3, 3]);
    let loss = contrastive_loss(&v, &[0, 1, 2], 0.1, 8, &mut Rng::new(0)).unwrap();
    assert_eq!(loss.item(), 0.0);
}

#[test]
fn pair_sampling_respects_reservoirs() {
    let ids = [0, 0, 1, 1, 2, 3, 3, 3];
    let pairs = sample_pairs(&ids, 3, &mut Rng::new(11));
    assert!(!pairs.anchors.contains(&4));
    for ((&a, &p), negs) in pairs.anchors.iter().zip(&pairs.positives).zip(&pairs.negatives) {
        assert!(a != p && ids[a] == ids[p]);
        assert!(negs.len() <= 3 && negs.iter().all(|&n| ids[n] != ids[a]));
    }
}

#[test]
fn contrastive_monotone_in_positive_similarity() {
    // anchor along x; negative fixed at 60 degrees; positive rotates toward the anchor
    let loss_at = |angle: f64| {
        let v = t(&[3, 2], &[1.0, 0.0, angle.cos(), angle.sin(), 0.5, 3f64.sqrt() / 2.0]);
        let pairs = ContrastivePairs { anchors: vec![0], positives: vec![1], negatives: vec![vec![2]] };
        contrastive_loss_with(&v, &pairs, 0.5).unwrap().item()
    };
    let angles = [2.5, 2.0, 1.5, 1.0, 0.5, 0.0];
    for w in angles.windows(2) {
        assert!(loss_at(w[1]) < loss_at(w[0]));
    }
}

proptest! {
    #[test]
    fn contrastive_scale_invariant(seed in 0u64..1000, c in 1.0f64..100.0) {
        // rows are kept well away from zero norm so the 1e-8 guard in the
        // cosine denominator stays below the tolerance
        let mut rng = Rng::new(seed);
        let v = random(&mut rng, &[10, 5]).scale(10.0);
        let ids: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let pairs = sample_pairs(&ids, 8, &mut rng);
        let a = contrastive_loss_with(&v, &pairs, 0.1).unwrap().item();
        let b = contrastive_loss_with(&v.scale(c), &pairs, 0.1).unwrap().item();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn adversarial_nonnegative_and_zero_only_at_match(seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        let d = random(&mut rng, &[4, 6]);
        let v = random(&mut rng, &[4, 6]);
        prop_assert!(adversarial_loss(&d, &v).unwrap().item() > 0.0);
        prop_assert_eq!(adversarial_loss(&d, &d).unwrap().item(), 0.0);
    }

    #[test]
    fn nse_at_most_one(seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        let y: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        let p: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        prop_assert!(nse(&p, &y).unwrap() <= 1.0);
        let mean = y.iter().sum::<f64>() / 20.0;
        prop_assert!(nse(&[mean; 20], &y).unwrap().abs() < 1e-12);
    }

    #[test]
    fn total_loss_linear_in_coefficients(l_con in 0.0f64..5.0, l_adv in 0.0f64..5.0, l_sup in 0.0f64..5.0, lc in 0.0f64..2.0, la in 0.0f64..2.0) {
        let w = LossWeights { lambda_con: lc, lambda_adv: la, ..Default::default() };
        let eval = |w: &LossWeights| total_loss(&Tensor::scalar(l_con), &Tensor::scalar(l_adv), &Tensor::scalar(l_sup), w, Phase::Adversarial).unwrap().item();
        let h = 1e-3;
        let d_con = (eval(&LossWeights { lambda_con: lc + h, ..w }) - eval(&LossWeights { lambda_con: lc - h, ..w })) / (2.0 * h);
        let d_adv = (eval(&LossWeights { lambda_adv: la + h, ..w }) - eval(&LossWeights { lambda_adv: la - h, ..w })) / (2.0 * h);
        prop_assert!((d_con - l_con).abs() < 1e-9);
        prop_assert!((d_adv - l_adv).abs() < 1e-9);
    }
}

#[test]
fn adversarial_examples() {
    let zeros = t(&[2, 32], &[0.0; 64]);
    let ones = t(&[2, 32], &[1.0; 64]);
    assert_eq!(adversarial_loss(&ones, &zeros).unwrap().item(), 32.0);
    let twos = t(&[2, 32], &[2.0; 64]);
    assert_eq!(adversarial_loss(&twos, &zeros).unwrap().item(), 4.0 * 32.0);
    assert!(adversarial_loss(&ones, &t(&[2, 31], &[0.0; 62])).is_err());
}

#[test]
fn adversarial_target_is_detached() {
    let d = Tensor::param(&[1, 2], vec![1.0, 2.0]).unwrap();
    let v = Tensor::param(&[1, 2], vec![0.0, 0.0]).unwrap();
    adversarial_loss(&d, &v).unwrap().backward().unwrap();
    assert_eq!(d.grad().unwrap(), vec![2.0, 4.0]);
    assert!(v.grad().is_none());
}

#[test]
fn supervised_examples() {
    let y = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(supervised_loss(&y, &y).unwrap().item(), 0.0);
    let shifted = y.add(&Tensor::scalar(2.0)).unwrap();
    assert_eq!(supervised_loss(&shifted, &y).unwrap().item(), 4.0);
    assert_eq!(supervised_loss(&t(&[1, 2], &[1.0, 2.0]), &t(&[1, 2], &[0.0, 0.0])).unwrap().item(), 2.5);
    assert!(supervised_loss(&y, &t(&[3, 2], &[0.0; 6])).is_err());
}

#[test]
fn total_loss_phases() {
    let w = LossWeights::default();
    let (c, a, s) = (Tensor::scalar(1.0), Tensor::scalar(3.0), Tensor::scalar(2.0));
    let warm = total_loss(&c, &a, &s, &w, Phase::Warmup).unwrap().item();
    assert!((warm - 2.1).abs() < 1e-12);
    let adv = total_loss(&c, &a, &s, &w, Phase::Adversarial).unwrap().item();
    assert_eq!(adv, warm + 0.1 * 3.0);
    let zero = LossWeights { lambda_con: 0.0, lambda_adv: 0.0, lambda_sup: 0.0, ..w };
    assert_eq!(total_loss(&c, &a, &s, &zero, Phase::Adversarial).unwrap().item(), 0.0);
    assert_eq!(total_value(1.0, 3.0, 2.0, &w, Phase::Adversarial), adv);
    assert_eq!(Phase::at(9, 10), Phase::Warmup);
    assert_eq!(Phase::at(10, 10), Phase::Adversarial);
}

#[test]
fn cross_entropy_uniform_logits() {
    let logits = t(&[4, 27], &[0.7; 108]);
    let ce = cross_entropy(&logits, &[0, 5, 26, 13]).unwrap().item();
    assert!((ce - 27f64.ln()).abs() < 1e-12);
    assert!(cross_entropy(&logits, &[0, 1, 2, 27]).is_err());
}

#[test]
fn nse_examples() {
    let y = [1.0, 2.0, 3.0];
    assert_eq!(nse(&y, &y), Some(1.0));
    assert!(nse(&[2.0, 2.0, 2.0], &y).unwrap().abs() < 1e-12);
    assert!((nse(&[1.0, 2.0, 4.0], &y).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(nse(&[1.0, 2.0], &[3.0, 3.0]), None);
    assert_eq!(nse(&[1.0], &[3.0]), None);
}

#[test]
fn overall_is_mean_of_days() {
    assert!((overall(&[Some(0.7); 7]).unwrap() - 0.7).abs() < 1e-15);
    let days = [Some(1.0), Some(1.0), Some(1.0), Some(1.0), Some(1.0), Some(1.0), Some(0.0)];
    assert!((overall(&days).unwrap() - 6.0 / 7.0).abs() < 1e-15);
    assert_eq!(overall(&[Some(1.0), None]), None);
}

#[test]
fn report_perfect_and_macro() {
    let obs = |off: f64| (0..10).map(|i| (0..7).map(|k| off + (i * 7 + k) as f64).collect()).collect::<Vec<Vec<f64>>>();
    let perfect = ReservoirForecasts { id: "A".into(), predictions: obs(0.0), observations: obs(0.0) };
    let report = nse_report(&[perfect.clone()], 7);
    assert_eq!(report.overall, Some(1.0));
    assert_eq!(report.pooled_overall, Some(1.0));

    let constant = ReservoirForecasts {
        id: "C".into(),
        predictions: vec![vec![1.0; 7]; 5],
        observations: vec![vec![2.0; 7]; 5],
    };
    let report = nse_report(&[perfect, constant], 7);
    assert_eq!(report.reservoirs[1].overall, None);
    // the undefined reservoir is excluded from the macro average
    assert_eq!(report.overall, Some(1.0));
}
