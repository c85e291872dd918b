use linksched::channel::{
    sigma_bar, ChannelDistribution, ChannelSample, CsiNoiseSpec, GainMatrix, GainVarianceSpec, SquareMatrix,
};
use linksched::neural::{init_params, MlpArchitecture, Standardizer};
use linksched::rate::{
    exhaustive_best, relaxed_sum_rate_with_grad, sum_rate, PowerDecision, RateParams, RelaxedDecision,
};
use linksched::seed;
use linksched::training::{
    joint_objective_and_grads, pretrained_policies, DecisionSource, Policy, PolicySet, TrainConfig,
};
use proptest::prelude::*;

fn gains_strategy() -> impl Strategy<Value = GainMatrix> {
    (1usize..=4).prop_flat_map(|k| {
        prop::collection::vec(0.0f64..10.0, k * k)
            .prop_map(move |v| GainMatrix::new(SquareMatrix::from_row_major(k, v).unwrap()).unwrap())
    })
}

fn powers_for(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, k)
}

proptest! {
    #[test]
    fn sum_rate_is_nonnegative_and_finite(
        (g, p) in gains_strategy().prop_flat_map(|g| { let k = g.k_users(); (Just(g), powers_for(k)) }),
        noise in 0.01f64..5.0,
    ) {
        let r = sum_rate(&g, &p, noise).unwrap();
        prop_assert!(r.is_finite() && r >= 0.0);
    }

    #[test]
    fn removing_interference_never_lowers_rate(
        (g, p) in gains_strategy().prop_flat_map(|g| { let k = g.k_users(); (Just(g), powers_for(k)) }),
    ) {
        let k = g.k_users();
        let mut m = g.matrix().clone();
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    m.set(i, j, 0.0);
                }
            }
        }
        let diag = GainMatrix::new(m).unwrap();
        prop_assert!(sum_rate(&diag, &p, 1.0).unwrap() >= sum_rate(&g, &p, 1.0).unwrap() - 1e-12);
    }

    #[test]
    fn exhaustive_dominates_every_decision(g in gains_strategy(), noise in 0.1f64..3.0) {
        let params = RateParams::new(1.0, noise).unwrap();
        let k = g.k_users();
        let best = exhaustive_best(&g, params).unwrap();
        let best_rate = sum_rate(&g, &best.levels(1.0), noise).unwrap();
        for index in 0..(1u64 << k) {
            let d = PowerDecision::from_index(index, k);
            prop_assert!(best_rate >= sum_rate(&g, &d.levels(1.0), noise).unwrap());
        }
    }

    #[test]
    fn relaxed_rate_matches_binary_at_vertices(g in gains_strategy(), index in 0u64..16) {
        let k = g.k_users();
        let d = PowerDecision::from_index(index % (1 << k), k);
        let fractions: Vec<f64> = d.active().iter().map(|&a| f64::from(u8::from(a))).collect();
        let params = RateParams::default();
        let (relaxed, _) = relaxed_sum_rate_with_grad(&g, &RelaxedDecision::new(fractions).unwrap(), params).unwrap();
        let binary = sum_rate(&g, &d.levels(1.0), 1.0).unwrap();
        prop_assert!((relaxed - binary).abs() <= 1e-12 * binary.max(1.0));
    }

    #[test]
    fn sigma_bar_completes_unit_circle(k in 1usize..=4, v in prop::collection::vec(0.0f64..=1.0, 16)) {
        let s = SquareMatrix::from_row_major(k, v[..k * k].to_vec()).unwrap();
        let sb = sigma_bar(&s).unwrap();
        for (a, b) in s.as_slice().iter().zip(sb.as_slice()) {
            prop_assert!((a * a + b * b - 1.0).abs() < 1e-12);
            prop_assert!(*b >= 0.0);
        }
    }

    #[test]
    fn samples_are_pure_functions_of_seed_and_index(seed in any::<u64>(), index in any::<u64>(), sigma in 0.0f64..=1.0) {
        let dist = distribution(3, sigma);
        prop_assert_eq!(dist.sample(seed, index), dist.sample(seed, index));
    }

    #[test]
    fn exact_estimates_at_zero_sigma(seed in any::<u64>()) {
        let s = distribution(3, 0.0).sample(seed, 0);
        for e in &s.estimates {
            prop_assert_eq!(e, &s.gains);
        }
    }
}

fn distribution(k: usize, sigma: f64) -> ChannelDistribution {
    ChannelDistribution::new(
        GainVarianceSpec::unit(k),
        CsiNoiseSpec::new(vec![SquareMatrix::filled(k, sigma); k]).unwrap(),
    )
    .unwrap()
}

fn random_policies(k: usize, seed: u64) -> PolicySet {
    let arch = MlpArchitecture::with_hidden(k * k, &[6, 5], 1, 0.0).unwrap();
    let policies = (0..k)
        .map(|j| {
            let mut params = init_params(&arch, &mut seed::stream(seed, &[j as u64]));
            for (i, b) in params.values_mut().enumerate() {
                *b += 0.01 * ((i % 7) as f64 - 3.0);
            }
            Policy { arch: arch.clone(), params, standardizer: Standardizer::identity(k * k), threshold: 0.5 }
        })
        .collect();
    PolicySet { policies }
}

#[test]
fn joint_gradient_routes_through_every_network() {
    let k = 3;
    let samples = distribution(k, 0.4).sample_batch(10, 11).unwrap();
    let set = random_policies(k, 2);
    let rate = RateParams::default();
    let (_, grads) = joint_objective_and_grads(&set, &samples, rate).unwrap();
    for tx in 0..k {
        let numeric = linksched::neural::finite_diff_grad(
            |p| {
                let mut perturbed = set.clone();
                perturbed.policies[tx].params = p.clone();
                joint_objective_and_grads(&perturbed, &samples, rate).unwrap().0
            },
            &set.policies[tx].params,
            1e-6,
        );
        let diff: f64 = grads[tx].values().zip(numeric.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = numeric.values().map(|a| a * a).sum::<f64>().sqrt();
        assert!(norm > 0.0, "TX {tx} receives no gradient");
        assert!(diff / norm < 1e-3, "TX {tx}: relative error {}", diff / norm);
    }
}

#[test]
fn each_tx_decides_from_its_own_estimate_only() {
    let k = 3;
    let samples = distribution(k, 0.7).sample_batch(200, 4).unwrap();
    let set = random_policies(k, 9);
    let base = set.decide(&samples).unwrap();
    for tx in 0..k {
        // Replace every estimate except TX `tx`'s with unrelated draws.
        let other = distribution(k, 1.0).sample_batch(200, 99).unwrap();
        let mixed: Vec<ChannelSample> = samples
            .iter()
            .zip(&other)
            .map(|(s, o)| ChannelSample {
                gains: o.gains.clone(),
                estimates: (0..k).map(|j| if j == tx { s.estimates[j].clone() } else { o.estimates[j].clone() }).collect(),
            })
            .collect();
        let swapped = set.decide(&mixed).unwrap();
        for (a, b) in base.iter().zip(&swapped) {
            assert_eq!(a.is_active(tx), b.is_active(tx));
        }
    }
}

#[test]
fn pretraining_is_worker_count_independent() {
    let samples = distribution(2, 0.5).sample_batch(1200, 8).unwrap();
    let config = TrainConfig {
        n_train: 1200,
        batch_size: 600,
        pretrain_steps: 15,
        hidden_layers: vec![8, 8],
        ..TrainConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| pretrained_policies(&samples, &config, RateParams::default()).unwrap())
    };
    assert_eq!(run(1), run(3));
}
