use clip_core::autodiff::Tensor;
use clip_core::data::{split, Dataset, SplitSpec, Task};
use clip_core::lipreg::{self, PairSampler};
use clip_core::network::{Activation, Network};
use clip_core::robustness::{self, AttackConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn activation(i: u8) -> Activation {
    match i % 3 {
        0 => Activation::Sigmoid,
        1 => Activation::Relu,
        _ => Activation::Identity,
    }
}

fn net_strategy() -> impl Strategy<Value = Network> {
    (1usize..5, 1usize..7, 1usize..4, any::<u8>(), any::<u8>(), any::<u64>())
        .prop_map(|(i, h, o, a, b, seed)| Network::mlp(&[i, h, o], activation(a), activation(b), seed).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quotient_is_symmetric(net in net_strategy(), seed in any::<u64>()) {
        let sampler = PairSampler::interval(-2.0, 2.0, net.input_dim(), 0.5);
        let (pairs, _) = sampler.sample(4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for i in 0..pairs.len() {
            let (x, y) = pairs.pair(i);
            let a = lipreg::lipschitz_quotient(&net, x, y).unwrap();
            let b = lipreg::lipschitz_quotient(&net, y, x).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a >= 0.0);
        }
    }

    #[test]
    fn empirical_never_exceeds_layerwise_bound(net in net_strategy(), seed in any::<u64>()) {
        let sampler = PairSampler::interval(-3.0, 3.0, net.input_dim(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut pairs, _) = sampler.sample(16, &mut rng).unwrap();
        let bound = net.layerwise_lipschitz_bound();
        for _ in 0..5 {
            let emp = lipreg::empirical_lipschitz(&net, &pairs).unwrap().max;
            prop_assert!(emp <= bound + 1e-9, "{} > {}", emp, bound);
            lipreg::adversarial_update(&net, &mut pairs, 0.5, &sampler, &mut rng).unwrap();
        }
    }

    #[test]
    fn pgd_stays_in_ball_and_box(
        seed in any::<u64>(),
        epsilon in 0.0f64..3.0,
        step in 0.01f64..1.0,
        normalized in any::<bool>(),
    ) {
        let net = Network::mlp(&[6, 5, 3], Activation::Sigmoid, Activation::Identity, seed).unwrap();
        let x = Tensor::matrix(3, 6, (0..18).map(|i| ((i * 37 + seed as usize) % 101) as f64 / 100.0).collect()).unwrap();
        let mut y = Tensor::zeros(&[3, 3]);
        for r in 0..3 {
            y.row_mut(r)[r] = 1.0;
        }
        let cfg = AttackConfig {
            epsilon,
            step,
            iterations: 15,
            step_kind: if normalized { robustness::StepKind::L2Normalized } else { robustness::StepKind::Sign },
            ..Default::default()
        };
        for r in 0..3 {
            let (adv, trace) = robustness::pgd_attack_traced(&net, x.row(r), y.row(r), &cfg).unwrap();
            let dist = adv.iter().zip(x.row(r)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!(dist <= epsilon + 1e-9);
            prop_assert!(adv.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(trace.iter().all(|t| t.perturbation_norm <= epsilon + 1e-9));
        }
    }

    #[test]
    fn split_is_a_partition(n in 3usize..60, seed in any::<u64>(), a in 1usize..20, b in 1usize..20) {
        let x = Tensor::matrix(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let y = Tensor::matrix(n, 1, vec![0.0; n]).unwrap();
        let data = Dataset::new("idx", x, y, Task::Regression).unwrap();
        let eval = a.min(n / 3).max(1);
        let reserve = b.min(n / 3).max(1);
        let spec = SplitSpec { train: n - eval - reserve, eval, reserve, seed };
        let (tr, ev, rs) = split(&data, &spec).unwrap();
        let mut seen: Vec<usize> = [tr, ev, rs]
            .iter()
            .flat_map(|d| d.inputs().data().iter().map(|v| *v as usize).collect::<Vec<_>>())
            .collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }
}
