#![allow(dead_code)]

use nmarl::comm::CommSchedule;
use nmarl::env::{build_path_env, EnvModel, PathNetworkSpec};
use nmarl::learner::Problem;
use nmarl::neural::{NetConfig, Network};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn net_cfg(m: usize, n: usize, d: usize, p: f64, radius: f64) -> NetConfig {
    NetConfig {
        m,
        p,
        radius,
        d,
        num_agents: n,
    }
}

pub fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v = gaussian(rng, d);
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// ‖a − b‖ / ‖b‖.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(f64::MIN_POSITIVE)
}

/// `center` plus a random deviation of length `radius · u`.
pub fn point_in_ball(rng: &mut ChaCha8Rng, center: &[f64], radius: f64, u: f64) -> Vec<f64> {
    let dir = random_unit(rng, center.len());
    center
        .iter()
        .zip(dir)
        .map(|(c, v)| c + radius * u * v)
        .collect()
}

/// A critic parameter in S^W_B: every slab moved by up to B/√N from W0.
pub fn random_critic(rng: &mut ChaCha8Rng, net: &Network, on_boundary: bool) -> Vec<f64> {
    let cfg = net.config();
    let r = cfg.ball_radius();
    (0..cfg.num_agents)
        .flat_map(|j| {
            let u = if on_boundary {
                1.0
            } else {
                rng.random::<f64>()
            };
            point_in_ball(rng, net.initial_slab(j), r, u)
        })
        .collect()
}

/// Random dense transitions and rewards in [−1, 1] on the given local spaces.
pub fn random_tabular(
    rng: &mut ChaCha8Rng,
    local_states: &[usize],
    local_actions: &[usize],
    gamma: f64,
) -> EnvModel {
    let ns: usize = local_states.iter().product();
    let na: usize = local_actions.iter().product();
    let n = local_states.len();
    let mut transitions = Vec::with_capacity(ns * na);
    let mut rewards = Vec::with_capacity(ns * na);
    for _ in 0..ns * na {
        let w: Vec<f64> = (0..ns).map(|_| rng.random::<f64>() + 0.05).collect();
        let z: f64 = w.iter().sum();
        transitions.push(w.iter().enumerate().map(|(k, v)| (k, v / z)).collect());
        rewards.push((0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect());
    }
    EnvModel::tabular(
        local_states.to_vec(),
        local_actions.to_vec(),
        gamma,
        vec![(0, 1.0)],
        transitions,
        rewards,
    )
    .unwrap()
}

/// Complete-graph schedule (a single round).
pub fn complete(n: usize) -> CommSchedule {
    let edges = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    CommSchedule::undirected(n, vec![edges], 1).unwrap()
}

/// Two agents on path network 1-1, both starting at b1.
pub fn two_agent_path(gamma: f64) -> EnvModel {
    let spec = PathNetworkSpec::layered("1-1", &["b1", "b1"], 0.5, 0.5).unwrap();
    build_path_env(&spec, 2, gamma).unwrap()
}

pub fn problem(env: EnvModel, net: NetConfig, seed: u64) -> Problem {
    let n = env.num_agents();
    Problem::new(env, complete(n), net, seed).unwrap()
}
