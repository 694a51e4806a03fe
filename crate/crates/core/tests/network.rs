mod common;

use common::*;
use nmarl::neural::{softmax, Network};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smallest |pre-activation| over every block of `w` against the slabs of `x`.
fn min_preactivation(w: &[f64], x: &[f64], d: usize, m: usize) -> f64 {
    w.chunks_exact(d)
        .enumerate()
        .map(|(r, block)| {
            let j = r / m;
            block
                .iter()
                .zip(&x[j * d..(j + 1) * d])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .abs()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn q_grad_matches_directional_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    let mut checked = 0;
    for seed in 0..40 {
        let net = Network::new(net_cfg(8, 2, 6, 0.75, 5.0), seed).unwrap();
        let w = random_critic(&mut rng, &net, false);
        let x = [random_unit(&mut rng, 6), random_unit(&mut rng, 6)].concat();
        // a unit direction moves each pre-activation by at most h
        if min_preactivation(&w, &x, 6, 8) < 1e-4 {
            continue;
        }
        let u = random_unit(&mut rng, w.len());
        let shifted = |c: f64| -> Vec<f64> { w.iter().zip(&u).map(|(a, b)| a + c * b).collect() };
        let fd = (net.q_value(&shifted(h), &x).unwrap() - net.q_value(&shifted(-h), &x).unwrap())
            / (2.0 * h);
        let g = net.q_grad(&w, &x).unwrap();
        let analytic: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!(
            (fd - analytic).abs() <= 1e-6 * analytic.abs().max(1e-3),
            "seed {seed}: {fd} vs {analytic}"
        );
        checked += 1;
    }
    assert!(checked >= 30, "only {checked} kink-free samples");
}

#[test]
fn policy_probs_hand_example() {
    // two actions with logits 0.3 and 0.1
    let p = softmax(&[0.3, 0.1]);
    assert!((p[0] - 0.5498).abs() < 5e-5 && (p[1] - 0.4502).abs() < 5e-5);
}

#[test]
fn policy_is_uniform_for_zero_or_identical_inputs() {
    let net = Network::new(net_cfg(4, 2, 3, 0.75, 5.0), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let feats: Vec<f64> = (0..3).flat_map(|_| random_unit(&mut rng, 3)).collect();
    let p = net.policy_probs(0, &vec![0.0; 12], &feats).unwrap();
    assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    let x = random_unit(&mut rng, 3);
    let same = [x.clone(), x.clone(), x].concat();
    let theta = net.initial_policy(1).weights;
    let p = net.policy_probs(1, &theta, &same).unwrap();
    assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn init_second_moment_of_q0() {
    // w ~ N(0, I/d) and unit x give wᵀx ~ N(0, 1/d), so E[ReLU(wᵀx)²] = 1/(2d) and
    // E_init[Q̂₀(z)²] = (mN)^{1-2p} / (2d)
    let (m, n, d, p) = (8, 2, 4, 0.75);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = [random_unit(&mut rng, d), random_unit(&mut rng, d)].concat();
    let trials = 20_000;
    let samples: Vec<f64> = (0..trials)
        .map(|seed| {
            let net = Network::new(net_cfg(m, n, d, p, 5.0), seed).unwrap();
            net.q_value_init(&x).unwrap().powi(2)
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / trials as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let expected = ((m * n) as f64).powf(1.0 - 2.0 * p) / (2.0 * d as f64);
    let se = (var / trials as f64).sqrt();
    assert!(
        (mean - expected).abs() < 4.0 * se,
        "{mean} vs {expected} (se {se})"
    );
}

#[test]
fn linearization_error_shrinks_with_width() {
    // |Q̂(W) − Q̂₀(W)| = O(m^{1/2−2p}) on S^W_B; compare m = 256 with m = 4096
    let gap = |m: usize| -> f64 {
        let net = Network::new(net_cfg(m, 2, 8, 0.75, 1.0), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
        let w = random_critic(&mut rng, &net, true);
        (0..100)
            .map(|_| {
                let x = [random_unit(&mut rng, 8), random_unit(&mut rng, 8)].concat();
                (net.q_value(&w, &x).unwrap() - net.q_value_linearized(&w, &x).unwrap()).abs()
            })
            .sum::<f64>()
            / 100.0
    };
    let (small, large) = (gap(256), gap(4096));
    assert!(large < small, "m=4096: {large}, m=256: {small}");
}

#[test]
fn linearization_is_exact_at_init_and_linear() {
    let net = Network::new(net_cfg(6, 2, 5, 0.75, 5.0), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = [random_unit(&mut rng, 5), random_unit(&mut rng, 5)].concat();
    let w0 = net.init().weights().to_vec();
    let q0 = net.q_value(&w0, &x).unwrap();
    assert!((net.q_value_linearized(&w0, &x).unwrap() - q0).abs() < 1e-15);
    let doubled: Vec<f64> = w0.iter().map(|v| 2.0 * v).collect();
    assert!((net.q_value_linearized(&doubled, &x).unwrap() - 2.0 * q0).abs() < 1e-15);
}

#[test]
fn q0_bound_without_width_factor_fails_somewhere() {
    // Q̂₀² ≤ (mN)^{-2p} Σ‖W0_r‖² only holds on average; find a draw that breaks it
    let (m, n, d, p) = (64, 2, 2, 0.75);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let width = (m * n) as f64;
    let broken = (0..200u64).any(|seed| {
        let net = Network::new(net_cfg(m, n, d, p, 5.0), seed).unwrap();
        let x = [random_unit(&mut rng, d), random_unit(&mut rng, d)].concat();
        let q0 = net.q_value_init(&x).unwrap();
        let w0_sq: f64 = net.init().weights().iter().map(|v| v * v).sum();
        q0 * q0 > width.powf(-2.0 * p) * w0_sq
    });
    assert!(broken);
}

fn sample_config() -> impl Strategy<Value = (usize, usize, usize, f64, f64, u64)> {
    (
        prop::sample::select(vec![1usize, 4, 16, 64]),
        1usize..4,
        prop::sample::select(vec![2usize, 8, 16]),
        0.55f64..0.95,
        prop::sample::select(vec![0.5f64, 1.0, 5.0]),
        any::<u64>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn network_bounds_hold((m, n, d, p, radius, seed) in sample_config(), on_boundary in any::<bool>()) {
        let net = Network::new(net_cfg(m, n, d, p, radius), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let w = random_critic(&mut rng, &net, on_boundary);
        let x: Vec<f64> = (0..n).flat_map(|_| random_unit(&mut rng, d)).collect();
        let width = (m * n) as f64;
        let grad_bound = width.powf(0.5 - p) * (1.0 + 1e-12);
        let q0 = net.q_value_init(&x).unwrap();
        // Q̂₀² against the init weights, with the Cauchy-Schwarz factor mN
        let w0_sq: f64 = net.init().weights().iter().map(|v| v * v).sum();
        prop_assert!(q0 * q0 <= width.powf(1.0 - 2.0 * p) * w0_sq * (1.0 + 1e-12));
        // gradient of the linearization: frozen-indicator blocks
        let lin_grad_sq: f64 = net
            .init()
            .weights()
            .chunks_exact(d)
            .enumerate()
            .filter(|(r, block)| block.iter().zip(&x[(r / m) * d..(r / m + 1) * d]).map(|(a, b)| a * b).sum::<f64>() > 0.0)
            .map(|(r, _)| width.powf(-2.0 * p) * norm(&x[(r / m) * d..(r / m + 1) * d]).powi(2))
            .sum();
        prop_assert!(lin_grad_sq.sqrt() <= grad_bound);
        // gradient of Q̂
        prop_assert!(norm(&net.q_grad(&w, &x).unwrap()) <= grad_bound);
        // Q̂² against Q̂₀²
        let q = net.q_value(&w, &x).unwrap();
        prop_assert!(q * q <= (2.0 * q0 * q0 + 2.0 * radius * radius * width.powf(1.0 - 2.0 * p)) * (1.0 + 1e-12));
        // linearized Q̂², same (mN)^{1-2p} scale
        let ql = net.q_value_linearized(&w, &x).unwrap();
        prop_assert!(ql * ql <= (2.0 * q0 * q0 + 2.0 * radius * radius * width.powf(1.0 - 2.0 * p)) * (1.0 + 1e-12));
    }

    #[test]
    fn policy_probs_form_a_distribution(seed in any::<u64>(), actions in 1usize..6, shift in -3.0f64..3.0) {
        let net = Network::new(net_cfg(4, 2, 3, 0.75, 5.0), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats: Vec<f64> = (0..actions).flat_map(|_| random_unit(&mut rng, 3)).collect();
        let theta: Vec<f64> = net.initial_policy(0).weights.iter().map(|v| v + shift * rng.random::<f64>()).collect();
        let probs = net.policy_probs(0, &theta, &feats).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(probs.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn score_has_zero_mean_and_bounded_norm(seed in any::<u64>(), actions in 1usize..6) {
        let (m, n, d, p) = (4, 2, 3, 0.75);
        let net = Network::new(net_cfg(m, n, d, p, 5.0), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats: Vec<f64> = (0..actions).flat_map(|_| random_unit(&mut rng, d)).collect();
        let theta = net.initial_policy(1).weights;
        let probs = net.policy_probs(1, &theta, &feats).unwrap();
        let mut mean = vec![0.0; theta.len()];
        let bound = 2.0 * ((m * n) as f64).powf(0.5 - p) * (1.0 + 1e-12);
        for a in 0..actions {
            let g = net.log_policy_grad(1, &theta, &feats, a).unwrap();
            prop_assert!(norm(&g) <= bound);
            if actions == 1 {
                prop_assert!(g.iter().all(|&v| v == 0.0));
            }
            mean.iter_mut().zip(&g).for_each(|(acc, v)| *acc += probs[a] * v);
        }
        prop_assert!(mean.iter().all(|v| v.abs() < 1e-10));
    }
}
