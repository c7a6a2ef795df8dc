use std::collections::HashMap;

use rand::{Rng as _, SeedableRng};

use super::*;
use crate::diffcore::{finite_diff_check, relative_error};

fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

fn toy_config(obs_dim: usize, actions: usize, d: usize) -> ModelConfig {
    ModelConfig {
        obs_dim,
        action_count: actions,
        latent_dim: d,
        hidden: vec![4],
        recog_hidden: vec![4],
        value_head: false,
        recognition: true,
    }
}

fn randomize(model: &mut PolicyModel, scale: f64, r: &mut Rng) {
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for n in names {
        for v in model.params.get_mut(&n).unwrap().data_mut() {
            *v = r.random_range(-scale..scale);
        }
    }
}

fn random_obs(dim: usize, r: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()
}

#[test]
fn prior_entropy_is_analytic() {
    let p = LatentPrior::new(8);
    assert!((p.entropy() - 4.0 * (2.0 * PI * E).ln()).abs() < 1e-12);
}

#[test]
fn latent_draws_have_zero_mean() {
    let p = LatentPrior::new(8);
    let mut r = rng(3);
    let n = 100_000;
    let mut sum = vec![0.0; 8];
    for _ in 0..n {
        for (s, v) in sum.iter_mut().zip(p.sample(&mut r)) {
            *s += v;
        }
    }
    for s in sum {
        assert!((s / n as f64).abs() < 3.0 / (n as f64).sqrt());
    }
    assert_eq!(p.sample(&mut rng(1)), p.sample(&mut rng(1)));
}

#[test]
fn fresh_model_is_uniform() {
    let model = PolicyModel::new(ModelConfig::new(16, 4), &mut rng(0));
    let d = model.policy_forward(&[0.5; 16], &[1.0; 8]).unwrap();
    assert_eq!(d.probs, vec![0.25; 4]);
}

#[test]
fn probabilities_sum_to_one() {
    let mut r = rng(5);
    let mut model = PolicyModel::new(toy_config(6, 4, 3), &mut r);
    randomize(&mut model, 2.0, &mut r);
    for _ in 0..1000 {
        let d = model
            .policy_forward(&random_obs(6, &mut r), &random_obs(3, &mut r))
            .unwrap();
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let model = PolicyModel::new(toy_config(6, 4, 3), &mut rng(0));
    assert!(matches!(
        model.policy_forward(&[0.0; 5], &[0.0; 3]),
        Err(PolicyError::Dim {
            expected: 6,
            got: 5,
            ..
        })
    ));
}

#[test]
fn init_order_keeps_prediction_weights_shared() {
    let mut plain = toy_config(6, 4, 3);
    plain.recognition = false;
    let mut full = plain.clone();
    full.recognition = true;
    full.value_head = true;
    let a = PolicyModel::new(plain, &mut rng(9));
    let b = PolicyModel::new(full, &mut rng(9));
    for (name, t) in a.params.iter() {
        assert_eq!(b.params.get(name), Some(t), "{name}");
    }
}

#[test]
fn layout_matches_initialised_params() {
    let mut cfg = toy_config(6, 4, 3);
    cfg.value_head = true;
    cfg.hidden = vec![5, 4];
    let model = PolicyModel::new(cfg.clone(), &mut rng(2));
    let got: Vec<(String, Vec<usize>)> = model
        .params
        .iter()
        .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
        .collect();
    assert_eq!(PolicyModel::layout(&cfg), got);
    let rebuilt = PolicyModel::from_params(cfg.clone(), model.params.clone()).unwrap();
    assert_eq!(rebuilt, model);
    let mut missing = model.params.clone();
    missing.remove("v.out.b");
    assert!(matches!(
        PolicyModel::from_params(cfg.clone(), missing),
        Err(PolicyError::Layout(_))
    ));
    let mut misshapen = model.params.clone();
    misshapen.insert("pi.out.b", Tensor::zeros(&[3]));
    assert!(PolicyModel::from_params(cfg, misshapen).is_err());
}

#[test]
fn partial_function_sampling() {
    let mut r = rng(1);
    let model = PolicyModel::new(ModelConfig::new(5, 4), &mut r);
    let space: Vec<Vec<f64>> = (0..5)
        .map(|i| (0..5).map(|j| (i == j) as u8 as f64).collect())
        .collect();
    let sampler = InputSampler::Uniform(space);
    let z = model.prior().sample(&mut r);
    let f = model.sample_partial_function(&z, &sampler, 32, &mut rng(2)).unwrap();
    assert_eq!(f.pairs.len(), 32);
    let g = model.sample_partial_function(&z, &sampler, 32, &mut rng(2)).unwrap();
    assert_eq!(f, g);
}

#[test]
fn near_deterministic_policy_labels_are_greedy() {
    let mut r = rng(4);
    let mut model = PolicyModel::new(toy_config(3, 2, 2), &mut r);
    randomize(&mut model, 1.0, &mut r);
    for v in model.params.get_mut("pi.out.w").unwrap().data_mut() {
        *v *= 1e4;
    }
    let space: Vec<Vec<f64>> = (0..3).map(|_| random_obs(3, &mut r)).collect();
    let z = vec![0.3, -0.2];
    let f = model
        .sample_partial_function(&z, &InputSampler::Uniform(space), 50, &mut r)
        .unwrap();
    for (x, y) in &f.pairs {
        assert_eq!(*y, model.policy_forward(x, &z).unwrap().greedy());
    }
}

fn summed_ce(model: &PolicyModel, f: &PartialFunction, z: &[f64]) -> f64 {
    f.pairs
        .iter()
        .map(|(x, y)| -model.policy_forward(x, z).unwrap().log_probs[*y])
        .sum()
}

#[test]
fn encoding_feature_matches_finite_differences() {
    let mut r = rng(11);
    for _ in 0..10 {
        let mut model = PolicyModel::new(toy_config(5, 3, 4), &mut r);
        randomize(&mut model, 1.0, &mut r);
        let pairs = (0..6).map(|_| (random_obs(5, &mut r), r.random_range(0..3))).collect();
        let f = PartialFunction { pairs };
        let enc = model.encode_function(&f).unwrap();
        let h = 1e-5;
        for j in 0..4 {
            let mut plus = vec![0.0; 4];
            let mut minus = vec![0.0; 4];
            plus[j] = h;
            minus[j] = -h;
            let fd = (summed_ce(&model, &f, &plus) - summed_ce(&model, &f, &minus)) / (2.0 * h);
            assert!(relative_error(enc.feature[j], fd) < 1e-6, "{} vs {fd}", enc.feature[j]);
        }
    }
}

#[test]
fn confident_correct_labels_give_zero_feature() {
    let mut r = rng(12);
    let mut model = PolicyModel::new(toy_config(3, 2, 2), &mut r);
    randomize(&mut model, 1.0, &mut r);
    for v in model.params.get_mut("pi.out.w").unwrap().data_mut() {
        *v *= 1e4;
    }
    let pairs = (0..4)
        .map(|_| {
            let x = random_obs(3, &mut r);
            let y = model.policy_forward(&x, &[0.0, 0.0]).unwrap().greedy();
            (x, y)
        })
        .collect();
    let enc = model.encode_function(&PartialFunction { pairs }).unwrap();
    assert!(enc.feature.iter().all(|g| g.abs() < 1e-9), "{:?}", enc.feature);
}

#[test]
fn sigma_is_positive_and_encoding_is_permutation_invariant() {
    let mut r = rng(13);
    let mut model = PolicyModel::new(toy_config(4, 3, 2), &mut r);
    randomize(&mut model, 3.0, &mut r);
    for _ in 0..1000 {
        let pairs: Vec<_> = (0..3).map(|_| (random_obs(4, &mut r), r.random_range(0..3))).collect();
        let f = PartialFunction { pairs };
        let enc = model.encode_function(&f).unwrap();
        assert!(enc.sigma().iter().all(|s| *s > 0.0));
    }
    let pairs: Vec<_> = (0..5).map(|_| (random_obs(4, &mut r), r.random_range(0..3))).collect();
    let mut rev = pairs.clone();
    rev.reverse();
    let a = model.encode_function(&PartialFunction { pairs }).unwrap();
    let b = model.encode_function(&PartialFunction { pairs: rev }).unwrap();
    for (x, y) in a.mu.iter().zip(&b.mu) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn empty_function_is_rejected() {
    let model = PolicyModel::new(toy_config(4, 3, 2), &mut rng(0));
    assert_eq!(
        model.encode_function(&PartialFunction { pairs: vec![] }),
        Err(PolicyError::EmptyFunction)
    );
}

#[test]
fn log_q_analytic_and_quadrature() {
    assert!((log_q(&[0.3, -1.0], &[0.0, 0.0], &[0.3, -1.0]) + (2.0 * PI).ln()).abs() < 1e-12);
    assert!(log_q(&[0.0], &[-1.0], &[0.0]) > log_q(&[0.0], &[0.0], &[0.0]));
    // density integrates to one; midpoint rule over +-12 sigma
    let (mu, ls) = (0.7, -0.4_f64);
    let n = 200_000;
    let (lo, hi) = (mu - 12.0 * ls.exp(), mu + 12.0 * ls.exp());
    let dz = (hi - lo) / n as f64;
    let total: f64 = (0..n)
        .map(|i| log_q(&[mu], &[ls], &[lo + (i as f64 + 0.5) * dz]).exp() * dz)
        .sum();
    assert!((total - 1.0).abs() < 1e-6, "{total}");
    // Gaussian-graph composite agrees with the closed form
    let mut g = Graph::new();
    let z = g.constant(Tensor::from_rows(&[vec![0.2, 0.9]]));
    let m = g.constant(Tensor::from_rows(&[vec![-0.1, 0.5]]));
    let s = g.constant(Tensor::from_rows(&[vec![0.3, -0.7]]));
    let lp = g.gaussian_log_density(z, m, s).unwrap();
    let v = g.evaluate(&ParamSet::new(), &HashMap::new()).unwrap();
    let expect = log_q(&[-0.1, 0.5], &[0.3, -0.7], &[0.2, 0.9]);
    assert!((v.get(lp).data()[0] - expect).abs() < 1e-12);
}

fn one_hot_space(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect())
        .collect()
}

#[test]
fn uniform_policy_conditional_entropy() {
    let mut cfg = ModelConfig::new(6, 4);
    cfg.recognition = true;
    let model = PolicyModel::new(cfg, &mut rng(0));
    let est = model
        .entropy_bound(&InputSampler::Uniform(one_hot_space(6)), 10, 4, &mut rng(1))
        .unwrap();
    assert!((est.h_f_given_z - 10.0 * 4f64.ln()).abs() < 1e-9);
    assert!((est.h_z - LatentPrior::new(8).entropy()).abs() < 1e-12);
    assert!((est.bound - (est.h_z + est.cross_term + est.h_f_given_z)).abs() < 1e-9);
}

#[test]
fn conditional_entropy_stays_in_range() {
    let mut r = rng(21);
    for _ in 0..20 {
        let mut model = PolicyModel::new(toy_config(4, 3, 2), &mut r);
        randomize(&mut model, 2.0, &mut r);
        let space: Vec<Vec<f64>> = (0..5).map(|_| random_obs(4, &mut r)).collect();
        let est = model
            .entropy_bound(&InputSampler::Uniform(space), 7, 3, &mut r)
            .unwrap();
        assert!(est.h_f_given_z >= 0.0 && est.h_f_given_z <= 7.0 * 3f64.ln() + 1e-12);
        assert!(est.std_error >= 0.0);
    }
}

#[test]
fn z_blind_model_with_prior_recognition_cancels_latent_entropy() {
    let mut r = rng(31);
    let mut model = PolicyModel::new(toy_config(4, 3, 2), &mut r);
    randomize(&mut model, 1.0, &mut r);
    // zero the latent rows of the first layer and the recognition heads
    let w = model.params.get_mut("pi.h0.w").unwrap();
    let cols = w.cols();
    for v in &mut w.data_mut()[4 * cols..] {
        *v = 0.0;
    }
    for name in ["rq.mu.w", "rq.mu.b", "rq.ls.w", "rq.ls.b"] {
        for v in model.params.get_mut(name).unwrap().data_mut() {
            *v = 0.0;
        }
    }
    let space: Vec<Vec<f64>> = (0..3).map(|_| random_obs(4, &mut r)).collect();
    let est = model
        .entropy_bound(&InputSampler::Uniform(space), 4, 4000, &mut r)
        .unwrap();
    assert!((est.cross_term + est.h_z).abs() < 4.0 * est.std_error);
    assert!((est.bound - est.h_f_given_z).abs() < 4.0 * est.std_error);
}

#[test]
fn too_few_latents() {
    let model = PolicyModel::new(toy_config(4, 3, 2), &mut rng(0));
    let s = InputSampler::Uniform(one_hot_space(4));
    assert_eq!(
        model.entropy_bound(&s, 3, 1, &mut rng(0)),
        Err(PolicyError::TooFewSamples { min: 2, got: 1 })
    );
}

#[test]
fn bound_gradient_through_encoding_matches_finite_differences() {
    let mut r = rng(41);
    for _ in 0..5 {
        let mut model = PolicyModel::new(toy_config(3, 3, 2), &mut r);
        randomize(&mut model, 1.0, &mut r);
        let space: Vec<Vec<f64>> = (0..4).map(|_| random_obs(3, &mut r)).collect();
        let batch = model
            .sample_bound_batch(&InputSampler::Uniform(space), 3, 4, &mut r)
            .unwrap();
        let mut g = Graph::new();
        let nodes = build_entropy_bound(&mut g, &model.config, &batch).unwrap();
        g.mark_output("bound", nodes.bound);
        let report = finite_diff_check(&g, &model.params, &HashMap::new(), "bound", 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.checked > 0);
    }
}

#[test]
fn surrogate_is_zero_valued_and_carries_score_gradient() {
    let mut r = rng(51);
    let mut model = PolicyModel::new(toy_config(3, 3, 2), &mut r);
    randomize(&mut model, 1.0, &mut r);
    let space: Vec<Vec<f64>> = (0..4).map(|_| random_obs(3, &mut r)).collect();
    let batch = model
        .sample_bound_batch(&InputSampler::Uniform(space), 3, 5, &mut r)
        .unwrap();
    let mut g = Graph::new();
    let nodes = build_entropy_bound(&mut g, &model.config, &batch).unwrap();
    g.mark_output("surrogate", nodes.surrogate);
    let grads = crate::diffcore::backward(&g, &model.params, &HashMap::new(), "surrogate", &[]).unwrap();
    assert_eq!(grads.output, 0.0);
    assert!(grads.params["pi.out.w"].sq_norm() > 0.0);
    assert_eq!(grads.params["rq.mu.w"].sq_norm(), 0.0);
}
