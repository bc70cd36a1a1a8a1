use clip_core::autodiff::Tensor;
use clip_core::data::{Dataset, Task};
use clip_core::lipreg::{self, PairSet};
use clip_core::network::{spectral_norm, Activation, Layer, Network};
use clip_core::robustness::{self, AttackConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_max_eigenvalue(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).fold(f64::MIN, f64::max)
}

#[test]
fn spectral_norm_matches_jacobi_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let w: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gram: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..5).map(|j| (0..5).map(|k| w[k * 5 + i] * w[k * 5 + j]).sum()).collect())
            .collect();
        let oracle = jacobi_max_eigenvalue(gram).sqrt();
        let got = spectral_norm(&Tensor::matrix(5, 5, w).unwrap());
        assert!((got - oracle).abs() <= 1e-8 * oracle, "{got} vs {oracle}");
    }
}

#[test]
fn rectangular_spectral_norm_matches_jacobi_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (r, c) = (3, 6);
    let w: Vec<f64> = (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect();
    let gram: Vec<Vec<f64>> = (0..c)
        .map(|i| (0..c).map(|j| (0..r).map(|k| w[k * c + i] * w[k * c + j]).sum()).collect())
        .collect();
    let oracle = jacobi_max_eigenvalue(gram).sqrt();
    let got = spectral_norm(&Tensor::matrix(r, c, w).unwrap());
    assert!((got - oracle).abs() <= 1e-8 * oracle);
}

/// Two-logit model whose logit difference is `w·x + b`.
fn logistic_net(w: f64, b: f64) -> Network {
    Network::new(vec![Layer::new(
        Tensor::matrix(2, 1, vec![w / 2.0, -w / 2.0]).unwrap(),
        Tensor::vector(vec![b / 2.0, -b / 2.0]),
        Activation::Identity,
    )
    .unwrap()])
    .unwrap()
}

#[test]
fn pgd_on_logistic_model_matches_grid_search() {
    let cases = [
        (3.0, -1.0, 0.4, [1.0, 0.0]),
        (-2.0, 0.5, 0.7, [1.0, 0.0]),
        (5.0, -2.0, 0.05, [0.0, 1.0]),
    ];
    for (w, b, x, y) in cases {
        let net = logistic_net(w, b);
        let cfg = AttackConfig {
            epsilon: 0.25,
            step: 0.05,
            iterations: 40,
            ..Default::default()
        };
        let adv = robustness::pgd_attack(&net, &[x], &y, &cfg).unwrap()[0];

        let (lo, hi) = (f64::max(x - cfg.epsilon, 0.0), f64::min(x + cfg.epsilon, 1.0));
        let points = 10_000;
        let spacing = (hi - lo) / (points - 1) as f64;
        let loss = |z: f64| {
            let out = net.forward(&[z]).unwrap();
            let m = out[0].max(out[1]);
            let lse = m + ((out[0] - m).exp() + (out[1] - m).exp()).ln();
            lse - (y[0] * out[0] + y[1] * out[1])
        };
        let best = (0..points)
            .map(|i| lo + i as f64 * spacing)
            .fold((f64::NAN, f64::MIN), |(bz, bl), z| {
                let l = loss(z);
                if l > bl {
                    (z, l)
                } else {
                    (bz, bl)
                }
            })
            .0;
        assert!((adv - best).abs() <= spacing + 1e-12, "adv {adv} vs grid {best}");
    }
}

#[test]
fn sign_step_ignores_gradient_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clean = Tensor::matrix(4, 6, (0..24).map(|_| rng.random::<f64>()).collect()).unwrap();
    let mut grad = Tensor::matrix(4, 6, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    grad.data_mut()[3] = 0.0;
    let cfg = AttackConfig {
        epsilon: 0.5,
        step: 0.2,
        ..Default::default()
    };
    for c in [1e-6, 0.37, 1.0, 12.5, 1e8] {
        let scaled = Tensor::matrix(4, 6, grad.data().iter().map(|g| c * g).collect()).unwrap();
        let mut a = clean.clone();
        let mut b = clean.clone();
        for _ in 0..3 {
            robustness::pgd_step(&mut a, &clean, &grad, &cfg);
            robustness::pgd_step(&mut b, &clean, &scaled, &cfg);
        }
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}

fn random_classification(n: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * dim).map(|_| rng.random()).collect();
    let mut y = vec![0.0; n * classes];
    for r in 0..n {
        y[r * classes + rng.random_range(0..classes)] = 1.0;
    }
    Dataset::new(
        "random",
        Tensor::matrix(n, dim, x).unwrap(),
        Tensor::matrix(n, classes, y).unwrap(),
        Task::Classification { classes },
    )
    .unwrap()
}

#[test]
fn robust_accuracy_is_monotone_in_radius() {
    let data = random_classification(60, 8, 3, 11);
    for seed in 0..3 {
        let net = Network::mlp(&[8, 16, 3], Activation::Sigmoid, Activation::Identity, seed).unwrap();
        let clean = robustness::accuracy(&net, &data).unwrap();
        let acc: Vec<f64> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&epsilon| {
                robustness::pgd_accuracy(
                    &net,
                    &data,
                    &AttackConfig {
                        epsilon,
                        iterations: 30,
                        ..Default::default()
                    },
                )
                .unwrap()
            })
            .collect();
        assert_eq!(acc[0], clean);
        assert!(acc[1] <= acc[0] && acc[2] <= acc[1], "{acc:?}");
    }
}

#[test]
fn abs_net_has_a_factor_two_gap() {
    let net = Network::new(vec![
        Layer::new(
            Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap(),
            Tensor::vector(vec![0.0, 0.0]),
            Activation::Relu,
        )
        .unwrap(),
        Layer::new(
            Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap(),
            Tensor::vector(vec![0.0]),
            Activation::Identity,
        )
        .unwrap(),
    ])
    .unwrap();
    let grid: Vec<f64> = (0..=200).map(|i| -1.0 + i as f64 * 0.01).collect();
    let mut pairs = Vec::new();
    for (i, &a) in grid.iter().enumerate() {
        for &b in &grid[i + 1..] {
            pairs.push((vec![a], vec![b]));
        }
    }
    let pairs = PairSet::from_pairs(&pairs, 1e-9).unwrap();
    let emp = lipreg::empirical_lipschitz(&net, &pairs).unwrap().max;
    assert!((0.999..=1.0 + 1e-12).contains(&emp), "{emp}");
    assert!((net.layerwise_lipschitz_bound() - 2.0).abs() < 1e-9);
}

#[test]
fn linear_quotient_matches_closed_form() {
    let net = Network::new(vec![Layer::new(
        Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap(),
        Tensor::vector(vec![0.0, 0.0]),
        Activation::Identity,
    )
    .unwrap()])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let xp: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (d0, d1) = (x[0] - xp[0], x[1] - xp[1]);
        let closed = ((4.0 * d0 * d0 + d1 * d1) / (d0 * d0 + d1 * d1)).sqrt();
        let got = lipreg::lipschitz_quotient(&net, &x, &xp).unwrap();
        assert!((got - closed).abs() < 1e-12);
    }
}

#[test]
fn weight_decay_gradient_matches_finite_differences() {
    let net = Network::mlp(&[3, 4, 2], Activation::Sigmoid, Activation::Identity, 5).unwrap();
    let flat_params: Vec<f64> = net.params().flat_map(|p| p.data().to_vec()).collect();
    let h = 1e-6;
    let mut k = 0;
    for (idx, p) in net.params().enumerate() {
        for j in 0..p.len() {
            let bump = |d: f64| {
                let mut n = net.clone();
                n.params_mut().nth(idx).unwrap().data_mut()[j] += d;
                n.weight_norm_sq()
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            let analytic = if idx % 2 == 0 { 2.0 * flat_params[k] } else { 0.0 };
            assert!(
                (numeric - analytic).abs() <= f64::max(1e-5 * analytic.abs(), 1e-8),
                "{numeric} vs {analytic}"
            );
            k += 1;
        }
    }
}
