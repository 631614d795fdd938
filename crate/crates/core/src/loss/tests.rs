use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::data::{build_latent_dictionary, square_loss_failure_model, ModelConfig, UniqueFeatureSampler};
use crate::rng::SampleRng;
use crate::score::{completeness_weights, BayesSquareEncoder};

fn hand_scores() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])
}

#[test]
fn single_sample_batch_has_zero_loss() {
    let s = DMatrix::from_element(1, 1, 3.7);
    assert_eq!(contrastive_loss_from_scores(&s, 0.1).unwrap().value, 0.0);
}

#[test]
fn equal_scores_give_two_log_b() {
    for b in [2usize, 5, 16] {
        let s = DMatrix::from_element(b, b, 0.4);
        let l = contrastive_loss_from_scores(&s, 0.07).unwrap().value;
        assert_abs_diff_eq!(l, 2.0 * (b as f64).ln(), epsilon = 1e-12);
    }
}

#[test]
fn two_by_two_hand_case() {
    let l = contrastive_loss_from_scores(&hand_scores(), 1.0).unwrap();
    assert_abs_diff_eq!(l.value, 2.0 * (1.0 + (-1.0f64).exp()).ln(), epsilon = 1e-12);
    assert_abs_diff_eq!(l.value, 0.62652, epsilon = 1e-5);
    let terms = l.per_sample_terms.unwrap();
    assert_abs_diff_eq!(terms.iter().sum::<f64>() / 2.0, l.value, epsilon = 1e-12);
}

#[test]
fn regularized_hand_case() {
    let l = regularized_loss_from_scores(&hand_scores(), 1.0, 0.1, RegKind::Positive).unwrap();
    assert_abs_diff_eq!(l.value, 0.52652, epsilon = 1e-5);
    for kind in [RegKind::None, RegKind::Positive, RegKind::Negative] {
        let z = regularized_loss_from_scores(&hand_scores(), 1.0, 0.0, kind).unwrap();
        assert_eq!(z.value, contrastive_loss_from_scores(&hand_scores(), 1.0).unwrap().value);
    }
    assert!(regularized_loss_from_scores(&hand_scores(), 1.0, -0.1, RegKind::Positive).is_err());
}

#[test]
fn regularizer_arithmetic() {
    let s = DMatrix::from_row_slice(2, 2, &[0.3, 0.5, 0.5, 0.7]);
    assert_abs_diff_eq!(positive_regularizer_from_scores(&s).unwrap().value, -0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(negative_regularizer_from_scores(&s, 0.05).unwrap().value, 0.05, epsilon = 1e-15);
    let ones = DMatrix::from_element(3, 3, 1.0);
    assert_eq!(positive_regularizer_from_scores(&ones).unwrap().value, -1.0);
    let diag = DMatrix::<f64>::identity(3, 3);
    assert_eq!(negative_regularizer_from_scores(&diag, 0.3).unwrap().value, 0.0);
    assert!(matches!(
        negative_regularizer_from_scores(&DMatrix::from_element(1, 1, 1.0), 0.1),
        Err(Error::DegenerateInput(_))
    ));
    assert_abs_diff_eq!(default_negative_lambda(16), 0.1 / 240.0, epsilon = 1e-18);
}

#[test]
fn negative_regularizer_is_order_invariant() {
    let m = ModelConfig::default().build().unwrap();
    let b = m.sample_batch(6, &mut SampleRng::new(5)).unwrap();
    let model = LinearScoreModel::inner(DMatrix::identity(16, 16), 1.0).unwrap();
    let a = negative_pair_regularizer(&model, &b, 0.2).unwrap().value;
    let r = negative_pair_regularizer(&model, &b.reversed(), 0.2).unwrap().value;
    assert_abs_diff_eq!(a, r, epsilon = 1e-12);
}

#[test]
fn positive_regularizer_is_half_squared_distance_for_unit_embeddings() {
    // Orthogonal W keeps unit x unit, so ‖Wx‖ = ‖y‖ = 1.
    let d = 5;
    let mut rng = crate::rng::stream(3, "t", 0);
    let w = crate::linalg::random_orthogonal(d, &mut rng);
    let model = LinearScoreModel::inner(w.clone(), 0.5).unwrap();
    let unit = |seed: u64| {
        let v = DVector::from_fn(d, |i, _| ((i as f64 + 1.0) * (seed as f64 + 0.3)).sin());
        v.normalize()
    };
    let samples = (0..7)
        .map(|i| crate::data::PairedSample {
            x: unit(i),
            y: unit(100 + i),
            latent_index: 0,
            xi: DVector::zeros(0),
            zeta: DVector::zeros(0),
        })
        .collect();
    let batch = BatchData::new(samples).unwrap();
    let r = positive_pair_regularizer(&model, &batch).unwrap().value;
    let l2: f64 = batch
        .samples
        .iter()
        .map(|s| (&w * &s.x - &s.y).norm_squared())
        .sum::<f64>()
        / (2.0 * 7.0)
        - 1.0;
    assert_abs_diff_eq!(r, l2, epsilon = 1e-12);
}

#[test]
fn extreme_scores_stay_finite() {
    let tau = 0.01;
    let big = 1e4 / tau;
    let s = DMatrix::from_row_slice(3, 3, &[big, -big, big, -big, -big, big, big, big, -big]);
    let l = contrastive_loss_from_scores(&s, tau).unwrap().value;
    assert!(l.is_finite() && l > 0.0);
    let sep = DMatrix::from_fn(3, 3, |i, j| if i == j { big } else { -big });
    let l = contrastive_loss_from_scores(&sep, tau).unwrap().value;
    assert!(l.is_finite() && l >= 0.0);
}

#[test]
fn non_finite_scores_rejected() {
    let mut s = DMatrix::from_element(2, 2, 0.0);
    s[(0, 1)] = f64::NAN;
    assert!(matches!(contrastive_loss_from_scores(&s, 1.0), Err(Error::NonFiniteScore(_))));
    assert!(matches!(
        contrastive_loss_from_scores(&DMatrix::zeros(0, 0), 1.0),
        Err(Error::EmptyBatch)
    ));
}

#[test]
fn loss_decreases_in_each_diagonal_score() {
    let mut rng = crate::rng::stream(9, "t", 0);
    use rand::Rng;
    let s = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
    for kind in [RegKind::None, RegKind::Positive] {
        for i in 0..5 {
            let mut up = s.clone();
            up[(i, i)] += 1e-4;
            let a = regularized_loss_from_scores(&s, 0.2, 0.1, kind).unwrap().value;
            let b = regularized_loss_from_scores(&up, 0.2, 0.1, kind).unwrap().value;
            assert!(b <= a, "diag {i}: {b} > {a}");
        }
    }
}

#[test]
fn stated_upper_bound_fails_for_flat_scores() {
    // With all scores equal, M = 0 makes 4M·log B/τ vanish, yet the loss is
    // 2·log B. The corrected bound 2·log B + 4M/τ is tight here.
    let s = DMatrix::from_element(4, 4, 0.0);
    let l = contrastive_loss_from_scores(&s, 0.1).unwrap().value;
    assert!(l > 0.0);
    assert_abs_diff_eq!(l, 2.0 * 4f64.ln(), epsilon = 1e-12);
}

#[test]
fn expected_log_count_matches_enumeration() {
    // Brute force over all K^B latent assignments.
    fn brute(probs: &[f64], b: usize) -> f64 {
        let k = probs.len();
        let mut total = 0.0;
        let mut idx = vec![0usize; b];
        loop {
            let p: f64 = idx.iter().map(|&i| probs[i]).product();
            let count = idx.iter().filter(|&&i| i == idx[0]).count();
            total += p * (count as f64).ln();
            let mut pos = 0;
            loop {
                if pos == b {
                    return total;
                }
                idx[pos] += 1;
                if idx[pos] < k {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }
    for (probs, b) in [
        (vec![0.5, 0.5], 1usize),
        (vec![0.25; 4], 4),
        (vec![0.1, 0.2, 0.3, 0.4], 5),
        (vec![0.125; 8], 5),
        (vec![0.7, 0.3], 7),
    ] {
        let closed = expected_log_positive_count(&probs, b);
        assert_abs_diff_eq!(closed, brute(&probs, b), epsilon = 1e-12);
    }
}

#[test]
fn population_estimate_is_reproducible_and_scales() {
    let gen = ModelConfig::default().build().unwrap();
    let w = completeness_weights(&gen).unwrap();
    let model = LinearScoreModel::inner(w, 0.1).unwrap();
    let a = population_loss_estimate(&model, &gen, 8, 1000, 17).unwrap();
    let b = population_loss_estimate(&model, &gen, 8, 1000, 17).unwrap();
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    let c = population_loss_estimate(&model, &gen, 8, 4000, 18).unwrap();
    let ratio = c.standard_error / a.standard_error;
    assert!((0.4..0.6).contains(&ratio), "ratio {ratio}");
    assert!(population_loss_estimate(&model, &gen, 8, 1, 0).is_err());
}

#[test]
fn completeness_weights_meet_positive_count_bound() {
    let latent = build_latent_dictionary(8, 9, 0.5, None).unwrap();
    let gen = GenerativeModel::identity(
        latent,
        UniqueFeatureSampler::zero(0),
        UniqueFeatureSampler::zero(0),
    )
    .unwrap();
    let w = completeness_weights(&gen).unwrap();
    let tau = 0.01;
    let model = LinearScoreModel::inner(w, tau).unwrap();
    for b in [2usize, 4, 8] {
        let est = population_loss_estimate(&model, &gen, b, 4000, 3).unwrap();
        let bound = positive_count_bound(gen.latent().probs(), b, 0.5, tau);
        assert!(est.mean <= bound + 3.0 * est.standard_error, "B={b}: {} > {bound}", est.mean);
        let lower = 2.0 * expected_log_positive_count(gen.latent().probs(), b);
        assert!(est.mean >= lower - 3.0 * est.standard_error);
    }
}

#[test]
fn bayes_encoder_square_loss_on_failure_model() {
    let gen = square_loss_failure_model(4, 0.2).unwrap();
    let enc = BayesSquareEncoder::new(&gen).unwrap();
    let batch = gen.sample_batch(20_000, &mut SampleRng::new(6)).unwrap();
    let l = square_loss(|x| enc.encode(x), &batch).unwrap().value;
    // ‖ζ − m‖² is 8/9 w.p. 1/3 and 2/9 w.p. 2/3.
    let want = (1.0 / 3.0) * (8.0 / 9.0) + (2.0 / 3.0) * (2.0 / 9.0);
    assert_abs_diff_eq!(want, 4.0 / 9.0, epsilon = 1e-15);
    assert!((l - want).abs() < 0.01, "{l}");
    let oracle = square_loss(|x| Ok(gen.h() * crate::linalg::concat(x, &DVector::zeros(2))), &batch);
    assert!(oracle.is_ok());
}

#[test]
fn square_loss_zero_for_exact_oracle() {
    let latent = build_latent_dictionary(3, 4, 0.5, None).unwrap();
    let gen = GenerativeModel::identity(
        latent,
        UniqueFeatureSampler::zero(0),
        UniqueFeatureSampler::zero(0),
    )
    .unwrap();
    let batch = gen.sample_batch(50, &mut SampleRng::new(1)).unwrap();
    assert_eq!(square_loss(|x| Ok(x.clone()), &batch).unwrap().value, 0.0);
    assert!(square_loss(|_| Ok(DVector::zeros(2)), &batch).is_err());
}

#[test]
fn oracle_regularizer_on_completeness_weights() {
    let latent = build_latent_dictionary(4, 5, 0.4, None).unwrap();
    let gen = GenerativeModel::identity(
        latent,
        UniqueFeatureSampler::zero(0),
        UniqueFeatureSampler::zero(0),
    )
    .unwrap();
    let model = LinearScoreModel::inner(completeness_weights(&gen).unwrap(), 1.0).unwrap();
    let batch = gen.sample_batch(12, &mut SampleRng::new(2)).unwrap();
    let r = oracle_pair_regularizer(&model, &batch).unwrap().value;
    // Same-latent scores are 1, cross-latent scores are 1 − γ.
    assert_abs_diff_eq!(r, -0.4, epsilon = 1e-12);
}

fn score_matrix_strategy() -> impl Strategy<Value = (DMatrix<f64>, f64)> {
    (2usize..12, -4.0f64..-1.0).prop_flat_map(|(b, log_tau)| {
        (
            proptest::collection::vec(-3.0f64..3.0, b * b)
                .prop_map(move |v| DMatrix::from_vec(b, b, v)),
            Just(10f64.powf(log_tau)),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lipschitz_in_scores((s, tau) in score_matrix_strategy(), seed in any::<u64>(), delta in 1e-6f64..0.5) {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, "lip", 0);
        let p = s.map(|v| v + delta * rng.random_range(-1.0..=1.0));
        let a = contrastive_loss_from_scores(&s, tau).unwrap().value;
        let b = contrastive_loss_from_scores(&p, tau).unwrap().value;
        let sup = (&p - &s).abs().max();
        prop_assert!((a - b).abs() <= 4.0 * sup / tau * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn corrected_upper_bound((s, tau) in score_matrix_strategy()) {
        let b = s.nrows() as f64;
        let m = s.abs().max();
        let l = contrastive_loss_from_scores(&s, tau).unwrap().value;
        // Strictly positive in exact arithmetic; exp underflow can round
        // very separated batches to 0.
        prop_assert!(l >= 0.0);
        prop_assert!(l <= 2.0 * b.ln() + 4.0 * m / tau + 1e-9);
    }

    #[test]
    fn loss_value_is_mean_of_terms((s, tau) in score_matrix_strategy()) {
        let l = contrastive_loss_from_scores(&s, tau).unwrap();
        let terms = l.per_sample_terms.unwrap();
        let mean = terms.iter().sum::<f64>() / terms.len() as f64;
        prop_assert!((mean - l.value).abs() <= 1e-12 * l.value.abs().max(1.0));
    }
}
