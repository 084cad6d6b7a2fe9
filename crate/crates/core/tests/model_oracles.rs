mod common;

use std::sync::Arc;

use approx::assert_abs_diff_eq;
use mixlogit::esbda;
use mixlogit::model::{
    choice_probabilities, panel_likelihood, panel_log_likelihood, simulated_chosen_probabilities,
    systematic_utility, transform_latent, unconditional_choice_probability,
};
use mixlogit::rng::RngStream;
use mixlogit::synth::{generate_synthetic, AttributeLaw, GroundTruth};
use mixlogit::{ChoiceSituation, CoefficientKind, Dataset, Individual, ModelParams, UtilitySpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use common::*;

#[test]
fn transform_examples() {
    use CoefficientKind::*;
    assert_eq!(transform_latent(&[0.5], &[RandomNormal]).unwrap(), vec![0.5]);
    assert_eq!(transform_latent(&[0.0], &[RandomLognormalNegative]).unwrap(), vec![-1.0]);
    assert_abs_diff_eq!(
        transform_latent(&[2f64.ln()], &[RandomLognormalPositive]).unwrap()[0],
        2.0,
        epsilon = 1e-15
    );
    assert!(transform_latent(&[0.0, 1.0], &[RandomNormal]).is_err());
}

#[test]
fn constants_only_utility() {
    let spec = UtilitySpec::new(
        vec!["car".into(), "bus".into(), "cycle".into(), "walk".into()],
        vec!["cost".into()],
        vec![
            coef("cost", CoefficientKind::Fixed, Some("cost"), None),
            coef("c_walk", CoefficientKind::Fixed, None, Some(&["walk"])),
        ],
    )
    .unwrap();
    let s = ChoiceSituation::all_available(&spec, vec![0.0; 4], 0).unwrap();
    let v = systematic_utility(&spec, &[-0.3, 3.5], &[], &s).unwrap();
    assert_eq!(v, vec![0.0, 0.0, 0.0, 3.5]);
}

#[test]
fn generic_cost_utility() {
    let spec = UtilitySpec::new(
        vec!["a".into(), "b".into()],
        vec!["cost".into()],
        vec![coef("cost", CoefficientKind::RandomNormal, Some("cost"), None)],
    )
    .unwrap();
    let s = ChoiceSituation::all_available(&spec, vec![10.0, 5.0], 0).unwrap();
    let v = systematic_utility(&spec, &[], &[-0.16], &s).unwrap();
    assert_abs_diff_eq!(v[0], -1.6, epsilon = 1e-12);
    assert_abs_diff_eq!(v[1], -0.8, epsilon = 1e-12);
}

#[test]
fn vehicle_utility_matches_dot_product() {
    let spec = vehicle();
    let n_attr = spec.n_attributes();
    // Rows per alternative: price, opcost, range, electric, hybrid, high, midhigh.
    let rows = [
        [4.2, 3.1, 1.5, 1.0, 0.0, 0.0, 1.0],
        [3.6, 5.0, 0.0, 0.0, 1.0, 1.0, 1.0],
        [2.9, 7.4, 0.0, 0.0, 0.0, 0.0, 0.0],
    ];
    let values: Vec<f64> = rows.iter().flatten().copied().collect();
    let s = ChoiceSituation::all_available(&spec, values, 1).unwrap();
    let latent = [-0.08, -3.7, -0.69, -1.6, 0.8];
    let alpha = [0.1025, 0.5729];
    let c = transform_latent(&latent, spec.random_kinds()).unwrap();
    assert!(c[0] < 0.0 && c[1] < 0.0 && c[2] > 0.0);
    let v = systematic_utility(&spec, &alpha, &c, &s).unwrap();
    let all = [c[0], c[1], c[2], c[3], c[4], alpha[0], alpha[1]];
    for (j, row) in rows.iter().enumerate() {
        let oracle: f64 = row.iter().zip(&all).map(|(x, b)| x * b).sum();
        assert_abs_diff_eq!(v[j], oracle, epsilon = 1e-12);
        assert_eq!(s.value(j, 0, n_attr), row[0]);
    }
}

#[test]
fn softmax_examples() {
    let all = [true; 3];
    for p in choice_probabilities(&[1.0, 1.0, 1.0], &all).unwrap() {
        assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
    }
    let p = choice_probabilities(&[0.0, 2f64.ln(), 3f64.ln()], &all).unwrap();
    for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
        assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
    }
    assert_eq!(
        choice_probabilities(&[5.0, 5.0, 5.0], &all).unwrap(),
        choice_probabilities(&[0.0, 0.0, 0.0], &all).unwrap()
    );
    let p = choice_probabilities(&[700.0, -700.0, 0.0], &all).unwrap();
    assert!(p.iter().all(|x| x.is_finite()));
    assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    let p = choice_probabilities(&[1.0, f64::NEG_INFINITY, 1.0], &[true, false, true]).unwrap();
    assert_eq!(p[1], 0.0);
    assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
    assert!(choice_probabilities(&[0.0, 0.0], &[false, false]).is_err());
}

fn two_alt_individual(spec: &UtilitySpec, xs: &[(f64, usize)]) -> Individual {
    Individual {
        id: "i".into(),
        group: "i".into(),
        situations: xs
            .iter()
            .map(|&(x, chosen)| ChoiceSituation::all_available(spec, vec![x, 0.0], chosen).unwrap())
            .collect(),
    }
}

#[test]
fn panel_likelihood_products() {
    let spec = single_random();
    // beta = 1: x = 0 gives 1/2 each; x = ln 4 gives P(b) = 1/5.
    let one = two_alt_individual(&spec, &[(0.0, 0)]);
    assert_abs_diff_eq!(panel_likelihood(&spec, &one, &[], &[1.0]).unwrap(), 0.5, epsilon = 1e-12);
    let two = two_alt_individual(&spec, &[(0.0, 0), (4f64.ln(), 1)]);
    assert_abs_diff_eq!(panel_likelihood(&spec, &two, &[], &[1.0]).unwrap(), 0.1, epsilon = 1e-12);

    let spec3 = one_random_one_fixed();
    let ind = Individual {
        id: "i".into(),
        group: "i".into(),
        situations: vec![ChoiceSituation::all_available(&spec3, vec![0.0; 6], 2).unwrap()],
    };
    assert_abs_diff_eq!(panel_likelihood(&spec3, &ind, &[0.3], &[0.7]).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn fifteen_situation_panel_matches_log_sum_oracle() {
    let spec = vehicle();
    let mut rng = RngStream::new(7, 3).rng();
    let situations: Vec<ChoiceSituation> = (0..15)
        .map(|t| {
            let values: Vec<f64> = (0..21).map(|_| rng.random_range(-2.0..2.0)).collect();
            ChoiceSituation::all_available(&spec, values, t % 3).unwrap()
        })
        .collect();
    let ind = Individual {
        id: "r".into(),
        group: "r".into(),
        situations: situations.clone(),
    };
    let latent = [0.3, -1.2, 0.1, -0.4, 0.9];
    let alpha = [0.2, -0.5];
    let c = transform_latent(&latent, spec.random_kinds()).unwrap();
    let all = [c[0], c[1], c[2], c[3], c[4], alpha[0], alpha[1]];
    let oracle: f64 = situations
        .iter()
        .map(|s| {
            let v: Vec<f64> = (0..3)
                .map(|j| (0..7).map(|a| s.value(j, a, 7) * all[a]).sum())
                .collect();
            let lse = v.iter().map(|x| x.exp()).sum::<f64>().ln();
            v[s.chosen()] - lse
        })
        .sum();
    let got = panel_log_likelihood(&spec, &ind, &alpha, &latent).unwrap();
    assert!(((got - oracle) / oracle).abs() < 1e-12, "{got} vs {oracle}");
    let direct = panel_likelihood(&spec, &ind, &alpha, &latent).unwrap();
    assert!(((direct.ln() - oracle) / oracle).abs() < 1e-12);
}

#[test]
fn degenerate_mixture_is_point_logit() {
    let spec = one_random_one_fixed();
    let s = ChoiceSituation::all_available(&spec, vec![1.0, 0.2, -0.5, 0.3, 2.0, 0.0], 0).unwrap();
    let zeta = 0.8;
    let alpha = 0.4;
    let point = choice_probabilities(&systematic_utility(&spec, &[alpha], &[zeta], &s).unwrap(), &[true; 3]).unwrap();
    let params = ModelParams::new(DVector::from_vec(vec![alpha]), DVector::from_vec(vec![zeta]), DMatrix::zeros(1, 1));
    let mut rng = RngStream::new(1, 1).rng();
    let p = unconditional_choice_probability(&params, &spec, &s, 50, &mut rng).unwrap();
    for (a, b) in p.iter().zip(&point) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
    }
    // Vanishing variance converges to the point model.
    let tiny = ModelParams::new(params.alpha.clone(), params.zeta.clone(), DMatrix::from_element(1, 1, 1e-12));
    let p = unconditional_choice_probability(&tiny, &spec, &s, 50, &mut rng).unwrap();
    for (a, b) in p.iter().zip(&point) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-5);
    }
}

#[test]
fn simulated_probability_matches_gauss_hermite() {
    let spec = single_random();
    let s = ChoiceSituation::all_available(&spec, vec![1.0, 0.0], 0).unwrap();
    let (mean, var) = (0.5, 2.0);
    let params = ModelParams::new(DVector::zeros(0), DVector::from_vec(vec![mean]), DMatrix::from_element(1, 1, var));
    let mut rng = RngStream::new(11, 0).rng();
    let p = unconditional_choice_probability(&params, &spec, &s, 200_000, &mut rng).unwrap();
    let nodes = gauss_hermite(60);
    let oracle = normal_expectation(mean, var, &nodes, |b| 1.0 / (1.0 + (-b).exp()));
    assert!((p[0] - oracle).abs() < 0.005, "{} vs {oracle}", p[0]);
    assert_abs_diff_eq!(p[0] + p[1], 1.0, epsilon = 1e-12);
}

#[test]
fn gauss_hermite_integrates_normal_moments() {
    let nodes = gauss_hermite(30);
    assert_abs_diff_eq!(normal_expectation(1.5, 2.0, &nodes, |_| 1.0), 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(normal_expectation(1.5, 2.0, &nodes, |b| b), 1.5, epsilon = 1e-12);
    assert_abs_diff_eq!(normal_expectation(1.5, 2.0, &nodes, |b| (b - 1.5).powi(2)), 2.0, epsilon = 1e-10);
}

#[test]
fn simulation_is_reproducible() {
    let spec = one_random_one_fixed();
    let s = ChoiceSituation::all_available(&spec, vec![1.0, 0.2, -0.5, 0.3, 2.0, 0.0], 2).unwrap();
    let params = ModelParams::new(DVector::from_vec(vec![0.1]), DVector::from_vec(vec![0.3]), DMatrix::from_element(1, 1, 0.7));
    let a = unconditional_choice_probability(&params, &spec, &s, 100, &mut RngStream::new(5, 9).rng()).unwrap();
    let b = unconditional_choice_probability(&params, &spec, &s, 100, &mut RngStream::new(5, 9).rng()).unwrap();
    assert_eq!(a, b);
    let bad = ModelParams::new(DVector::from_vec(vec![0.1]), DVector::from_vec(vec![0.3]), DMatrix::from_element(1, 1, -1.0));
    assert!(unconditional_choice_probability(&bad, &spec, &s, 10, &mut RngStream::new(5, 9).rng()).is_err());
}

#[test]
fn uniform_model_evaluates_to_log_j() {
    let spec = one_random_one_fixed();
    let truth = GroundTruth {
        spec: Arc::clone(&spec),
        params: ModelParams::new(DVector::from_vec(vec![0.5]), DVector::from_vec(vec![1.0]), DMatrix::from_element(1, 1, 0.2)),
        seed: 3,
    };
    let data = generate_synthetic(&truth, 20, 5, AttributeLaw::StandardNormal).unwrap();
    let zero = ModelParams::new(DVector::zeros(1), DVector::zeros(1), DMatrix::zeros(1, 1));
    let m = esbda::evaluate_params(&zero, &data, 10, 0).unwrap();
    assert_abs_diff_eq!(m.cel, 3f64.ln(), epsilon = 1e-12);
    assert_abs_diff_eq!(m.gmpca, 1.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn dominant_alternative_is_chosen() {
    let spec = Arc::new(
        UtilitySpec::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["x".into()],
            vec![
                coef("b_x", CoefficientKind::RandomNormal, Some("x"), None),
                coef("asc_a", CoefficientKind::Fixed, None, Some(&["a"])),
            ],
        )
        .unwrap(),
    );
    let truth = GroundTruth {
        spec,
        params: ModelParams::new(DVector::from_vec(vec![20.0]), DVector::from_vec(vec![0.5]), DMatrix::zeros(1, 1)),
        seed: 17,
    };
    let data = generate_synthetic(&truth, 500, 20, AttributeLaw::StandardNormal).unwrap();
    let total = data.n_situations();
    let hits = data.situations().filter(|s| s.chosen() == 0).count();
    assert!(hits as f64 / total as f64 > 0.999, "{hits}/{total}");
}

#[test]
fn truth_cel_matches_entropy() {
    let spec = single_random();
    let (mean, var) = (1.0, 0.25);
    let truth = GroundTruth {
        spec: Arc::clone(&spec),
        params: ModelParams::new(DVector::zeros(0), DVector::from_vec(vec![mean]), DMatrix::from_element(1, 1, var)),
        seed: 23,
    };
    let data: Dataset = generate_synthetic(&truth, 5000, 10, AttributeLaw::StandardNormal).unwrap();
    let cel = esbda::evaluate_params(&truth.params, &data, 200, 1).unwrap().cel;

    // Entropy of the mixed probability over 10^6 attribute draws; the
    // mixing integral itself by quadrature.
    let nodes = gauss_hermite(20);
    let mut rng = RngStream::new(99, 0).rng();
    let n = 1_000_000;
    let mut h = 0.0;
    for _ in 0..n {
        let dx: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) - rng.sample::<f64, _>(rand_distr::StandardNormal);
        let p = normal_expectation(mean, var, &nodes, |b| 1.0 / (1.0 + (-b * dx).exp()));
        h -= p * p.ln() + (1.0 - p) * (1.0 - p).ln();
    }
    h /= n as f64;
    assert!((cel - h).abs() < 0.01, "CEL {cel} vs entropy {h}");

    let mut rng = RngStream::new(1, 0).rng();
    let probs = simulated_chosen_probabilities(&truth.params, &data, 10, &mut rng).unwrap();
    assert_eq!(probs.len(), data.n_situations());
    assert!(probs.iter().all(|p| *p > 0.0 && *p <= 1.0));
}
