//! Exact evaluation on small finite problems: Q^π, J, visitation measures,
//! exact policy gradients and the centralized projected-ascent baseline.
//!
//! Values are solved on the |S| state-value unknowns,
//! V = (1−γ) r̄_π + γ P_π V, and Q is recovered from V in one backup. Joint
//! actions that differ only in aliased local actions are merged while building
//! P_π, which keeps J computable on environments whose |S|·|A| table would not
//! fit.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvModel, FeatureMap, JointIndex};
use crate::neural::{Network, NeuralError};
use crate::par;

/// Largest |S|·|A| for which Q tables, σ and exact gradients are computed.
pub const ORACLE_LIMIT: usize = 200_000;
/// Largest |S| for which state values (and hence J) are computed.
pub const STATE_LIMIT: usize = 1_000_000;
/// Below this many unknowns linear systems use a dense LU factorization.
pub const DENSE_LIMIT: usize = 2_000;
/// Stopping tolerance of the iterative solvers (max-norm change per sweep).
pub const SOLVE_TOL: f64 = 1e-13;

const MAX_SWEEPS: usize = 100_000;
const MAX_HALVINGS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("{what} has size {size}, above the oracle limit {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("function value is not finite at coordinate {0}")]
    NonFinite(usize),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("linear system is singular")]
    Singular,
    #[error("iterative solve did not converge")]
    NoConvergence,
    #[error("expected {expected} policy parameters, got {got}")]
    AgentCount { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Whether Q tables, σ and exact gradients are available for `env`.
pub fn is_feasible(env: &EnvModel) -> bool {
    check_feasible(env).is_ok()
}

pub fn check_feasible(env: &EnvModel) -> Result<()> {
    let size = env.num_states().saturating_mul(env.num_actions());
    if size > ORACLE_LIMIT {
        return Err(OracleError::TooLarge {
            what: "|S|·|A|",
            size,
            limit: ORACLE_LIMIT,
        });
    }
    Ok(())
}

fn check_states(env: &EnvModel) -> Result<()> {
    if env.num_states() > STATE_LIMIT {
        return Err(OracleError::TooLarge {
            what: "|S|",
            size: env.num_states(),
            limit: STATE_LIMIT,
        });
    }
    Ok(())
}

/// Product policy π(a|s) = Π_i π_i(a_i|s) stored as local probability rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    actions: JointIndex,
    num_states: usize,
    offsets: Vec<usize>,
    stride: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    /// Builds the table from `f(s, agent, out)`, which writes π_agent(·|s).
    pub fn from_fn<F>(env: &EnvModel, f: F) -> Self
    where
        F: Fn(usize, usize, &mut [f64]) + Sync,
    {
        let counts = env.actions().radices().to_vec();
        let mut offsets = Vec::with_capacity(counts.len());
        let mut stride = 0;
        for &c in &counts {
            offsets.push(stride);
            stride += c;
        }
        let rows = par::map_range(env.num_states(), |s| {
            let mut row = vec![0.0; stride];
            for (i, &c) in counts.iter().enumerate() {
                f(s, i, &mut row[offsets[i]..offsets[i] + c]);
            }
            row
        });
        Self {
            actions: env.actions().clone(),
            num_states: env.num_states(),
            offsets,
            stride,
            probs: rows.concat(),
        }
    }

    pub fn uniform(env: &EnvModel) -> Self {
        Self::from_fn(env, |_, _, out| {
            let p = 1.0 / out.len() as f64;
            out.fill(p);
        })
    }

    /// The softmax-ReLU actors θ_1 … θ_N evaluated on every state.
    pub fn from_actors(
        env: &EnvModel,
        net: &Network,
        features: &FeatureMap,
        thetas: &[Vec<f64>],
    ) -> Result<Self> {
        check_agents(env, thetas)?;
        let d = features.dim();
        for theta in thetas {
            if theta.len() != net.config().actor_len() {
                return Err(NeuralError::Dimension {
                    what: "policy parameter",
                    expected: net.config().actor_len(),
                    got: theta.len(),
                }
                .into());
            }
        }
        if d != net.config().d {
            return Err(NeuralError::Dimension {
                what: "feature dimension",
                expected: net.config().d,
                got: d,
            }
            .into());
        }
        Ok(Self::from_fn(env, |s, i, out| {
            actor_probs_into(env, net, features, thetas, s, i, out);
        }))
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// π_agent(·|s).
    pub fn local(&self, s: usize, agent: usize) -> &[f64] {
        let base = s * self.stride + self.offsets[agent];
        &self.probs[base..base + self.actions.radices()[agent]]
    }

    /// π(a|s) for a flat joint action `a`.
    pub fn joint_prob(&self, s: usize, a: usize) -> f64 {
        let mut rest = a;
        let mut p = 1.0;
        for (i, &c) in self.actions.radices().iter().enumerate() {
            p *= self.local(s, i)[rest % c];
            rest /= c;
        }
        p
    }

    /// Draws a ~ π(·|s) one agent at a time.
    pub fn sample_joint<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let mut digits = vec![0; self.actions.radices().len()];
        for (i, d) in digits.iter_mut().enumerate() {
            *d = sample_index(self.local(s, i), rng);
        }
        self.actions.encode(&digits)
    }
}

/// Writes π_agent(·|s; θ_agent) for the softmax-ReLU actor.
pub fn actor_probs_into(
    env: &EnvModel,
    net: &Network,
    features: &FeatureMap,
    thetas: &[Vec<f64>],
    s: usize,
    agent: usize,
    out: &mut [f64],
) {
    let mut feats = Vec::new();
    features.local_actions_into(agent, s, env.num_local_actions(agent), &mut feats);
    let p = net
        .policy_probs(agent, &thetas[agent], &feats)
        .expect("actor dimensions checked by caller");
    out.copy_from_slice(&p);
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

fn check_agents(env: &EnvModel, thetas: &[Vec<f64>]) -> Result<()> {
    if thetas.len() != env.num_agents() {
        return Err(OracleError::AgentCount {
            expected: env.num_agents(),
            got: thetas.len(),
        });
    }
    Ok(())
}

/// State-level view of (env, π): r̄_π(s) and the sparse rows of P_π.
struct StateKernel {
    reward: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl StateKernel {
    fn build(env: &EnvModel, policy: &PolicyTable) -> Self {
        let n = env.num_agents();
        let parts = par::map_range(env.num_states(), |s| {
            // (representative local action, class probability) per agent
            let classes: Vec<Vec<(usize, f64)>> = (0..n)
                .map(|i| {
                    let pi = policy.local(s, i);
                    env.local_action_classes(s, i)
                        .into_iter()
                        .map(|c| (c[0], c.iter().map(|&a| pi[a]).sum::<f64>()))
                        .filter(|&(_, p)| p > 0.0)
                        .collect()
                })
                .collect();
            let mut pos = vec![0usize; n];
            let mut digits = vec![0usize; n];
            let mut rewards = vec![0.0; n];
            let mut reward = 0.0;
            let mut row: Vec<(usize, f64)> = Vec::new();
            loop {
                let mut p = 1.0;
                for i in 0..n {
                    let (a, q) = classes[i][pos[i]];
                    digits[i] = a;
                    p *= q;
                }
                let a = env.actions().encode(&digits);
                env.rewards_into(s, a, &mut rewards);
                reward += p * rewards.iter().sum::<f64>() / n as f64;
                env.for_each_transition(s, a, |next, q| row.push((next, p * q)));
                // odometer over class choices
                let mut i = 0;
                while i < n {
                    pos[i] += 1;
                    if pos[i] < classes[i].len() {
                        break;
                    }
                    pos[i] = 0;
                    i += 1;
                }
                if i == n {
                    break;
                }
            }
            row.sort_unstable_by_key(|&(next, _)| next);
            row.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
            (reward, row)
        });
        let (reward, rows) = parts.into_iter().unzip();
        Self { reward, rows }
    }
}

fn dense_solve(matrix: DMatrix<f64>, rhs: DVector<f64>) -> Result<Vec<f64>> {
    matrix
        .lu()
        .solve(&rhs)
        .map(|v| v.iter().copied().collect())
        .ok_or(OracleError::Singular)
}

/// V^π(s) = E[Q^π(s, a)], a ~ π(·|s).
pub fn state_values(env: &EnvModel, policy: &PolicyTable) -> Result<Vec<f64>> {
    check_states(env)?;
    let kernel = StateKernel::build(env, policy);
    solve_values(env, &kernel)
}

fn solve_values(env: &EnvModel, kernel: &StateKernel) -> Result<Vec<f64>> {
    let ns = env.num_states();
    let g = env.gamma();
    if ns < DENSE_LIMIT {
        let mut m = DMatrix::<f64>::identity(ns, ns);
        for (s, row) in kernel.rows.iter().enumerate() {
            for &(next, p) in row {
                m[(s, next)] -= g * p;
            }
        }
        let rhs = DVector::from_iterator(ns, kernel.reward.iter().map(|r| (1.0 - g) * r));
        return dense_solve(m, rhs);
    }
    // Gauss-Seidel, sweeping from the highest index down; absorbing path
    // networks only move to higher indices, so this order converges in a
    // couple of sweeps there.
    let mut v = vec![0.0; ns];
    for _ in 0..MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for s in (0..ns).rev() {
            let mut acc = (1.0 - g) * kernel.reward[s];
            let mut diag = 0.0;
            for &(next, p) in &kernel.rows[s] {
                if next == s {
                    diag += p;
                } else {
                    acc += g * p * v[next];
                }
            }
            let new = acc / (1.0 - g * diag);
            change = change.max((new - v[s]).abs());
            v[s] = new;
        }
        if change < SOLVE_TOL {
            return Ok(v);
        }
    }
    Err(OracleError::NoConvergence)
}

/// Q^π as a flat |S|·|A| table (row s, column a).
pub fn exact_q(env: &EnvModel, policy: &PolicyTable) -> Result<Vec<f64>> {
    check_feasible(env)?;
    let v = state_values(env, policy)?;
    Ok(q_from_values(env, &v))
}

fn q_from_values(env: &EnvModel, v: &[f64]) -> Vec<f64> {
    let g = env.gamma();
    let na = env.num_actions();
    let rows = par::map_range(env.num_states(), |s| {
        (0..na)
            .map(|a| {
                let mut next = 0.0;
                env.for_each_transition(s, a, |sp, p| next += p * v[sp]);
                (1.0 - g) * env.mean_reward(s, a) + g * next
            })
            .collect::<Vec<f64>>()
    });
    rows.concat()
}

/// ‖Q − T^π Q‖_∞, evaluated by full joint-action enumeration.
pub fn bellman_residual(env: &EnvModel, policy: &PolicyTable, q: &[f64]) -> f64 {
    let g = env.gamma();
    let na = env.num_actions();
    let v: Vec<f64> = (0..env.num_states())
        .map(|s| {
            (0..na)
                .map(|a| policy.joint_prob(s, a) * q[s * na + a])
                .sum()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for s in 0..env.num_states() {
        for a in 0..na {
            let mut next = 0.0;
            env.for_each_transition(s, a, |sp, p| next += p * v[sp]);
            let t = (1.0 - g) * env.mean_reward(s, a) + g * next;
            worst = worst.max((q[s * na + a] - t).abs());
        }
    }
    worst
}

/// J(π) = Σ_s ζ(s) V^π(s).
pub fn exact_j(env: &EnvModel, policy: &PolicyTable) -> Result<f64> {
    let v = state_values(env, policy)?;
    Ok(env.init_dist().iter().map(|&(s, p)| p * v[s]).sum())
}

/// ν_π (over S) and σ_π = ν_π·π (flat |S|·|A|).
pub fn visitation(env: &EnvModel, policy: &PolicyTable) -> Result<(Vec<f64>, Vec<f64>)> {
    check_feasible(env)?;
    let kernel = StateKernel::build(env, policy);
    let nu = solve_visitation(env, &kernel)?;
    Ok((nu.clone(), sigma_from(env, policy, &nu)))
}

/// ν_π alone, without the |S|·|A| σ table.
pub fn state_visitation(env: &EnvModel, policy: &PolicyTable) -> Result<Vec<f64>> {
    check_states(env)?;
    let kernel = StateKernel::build(env, policy);
    solve_visitation(env, &kernel)
}

fn sigma_from(env: &EnvModel, policy: &PolicyTable, nu: &[f64]) -> Vec<f64> {
    let na = env.num_actions();
    let mut sigma = vec![0.0; env.num_states() * na];
    for (s, &w) in nu.iter().enumerate() {
        if w > 0.0 {
            for a in 0..na {
                sigma[s * na + a] = w * policy.joint_prob(s, a);
            }
        }
    }
    sigma
}

fn solve_visitation(env: &EnvModel, kernel: &StateKernel) -> Result<Vec<f64>> {
    let ns = env.num_states();
    let g = env.gamma();
    let mut zeta = vec![0.0; ns];
    for &(s, p) in env.init_dist() {
        zeta[s] += p;
    }
    if ns < DENSE_LIMIT {
        let mut m = DMatrix::<f64>::identity(ns, ns);
        for (s, row) in kernel.rows.iter().enumerate() {
            for &(next, p) in row {
                m[(next, s)] -= g * p;
            }
        }
        let rhs = DVector::from_iterator(ns, zeta.iter().map(|z| (1.0 - g) * z));
        let mut nu = dense_solve(m, rhs)?;
        // clip round-off negatives on unreachable states
        nu.iter_mut().for_each(|v| *v = v.max(0.0));
        return Ok(nu);
    }
    let mut nu: Vec<f64> = zeta.iter().map(|z| (1.0 - g) * z).collect();
    for _ in 0..MAX_SWEEPS {
        let mut next: Vec<f64> = zeta.iter().map(|z| (1.0 - g) * z).collect();
        for (s, row) in kernel.rows.iter().enumerate() {
            if nu[s] > 0.0 {
                for &(sp, p) in row {
                    next[sp] += g * p * nu[s];
                }
            }
        }
        let change = next
            .iter()
            .zip(&nu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        nu = next;
        if change < SOLVE_TOL {
            return Ok(nu);
        }
    }
    Err(OracleError::NoConvergence)
}

/// ‖ν − (1−γ)ζ − γ M_πᵀ ν‖_∞.
pub fn visitation_residual(env: &EnvModel, policy: &PolicyTable, nu: &[f64]) -> f64 {
    let g = env.gamma();
    let mut rhs = vec![0.0; env.num_states()];
    for &(s, p) in env.init_dist() {
        rhs[s] += (1.0 - g) * p;
    }
    for (s, &w) in nu.iter().enumerate() {
        for a in 0..env.num_actions() {
            let pa = policy.joint_prob(s, a);
            env.for_each_transition(s, a, |sp, p| rhs[sp] += g * w * pa * p);
        }
    }
    nu.iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Oracle tables for one joint policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub q_table: Vec<f64>,
    pub j_value: f64,
    pub nu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub grads: Vec<Vec<f64>>,
}

impl ExactSolution {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite solution serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Q^π, J, ν, σ and ∇_{θ_i}J for the softmax-ReLU actors `thetas`.
pub fn solve(
    env: &EnvModel,
    net: &Network,
    features: &FeatureMap,
    thetas: &[Vec<f64>],
) -> Result<ExactSolution> {
    check_feasible(env)?;
    let policy = PolicyTable::from_actors(env, net, features, thetas)?;
    let kernel = StateKernel::build(env, &policy);
    let v = solve_values(env, &kernel)?;
    let q_table = q_from_values(env, &v);
    let nu = solve_visitation(env, &kernel)?;
    let sigma = sigma_from(env, &policy, &nu);
    let j_value = env.init_dist().iter().map(|&(s, p)| p * v[s]).sum();
    let grads = gradient_from_tables(env, net, features, thetas, &policy, &q_table, &nu);
    Ok(ExactSolution {
        q_table,
        j_value,
        nu,
        sigma,
        grads,
    })
}

/// ∇_{θ_i}J for every agent.
///
/// With J, Q^π and ν all carrying the (1−γ) normalization, the derivative of
/// J is E_σ[Q^π(s,a) ψ̄_i(s,a_i; θ_i)] / (1−γ). The batch estimator of the
/// actor targets the expectation itself, i.e. (1−γ)·∇J; see
/// [`score_expectation`].
pub fn exact_policy_gradient(
    env: &EnvModel,
    net: &Network,
    features: &FeatureMap,
    thetas: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    Ok(solve(env, net, features, thetas)?.grads)
}

/// E_σ[Q^π(s,a) ψ̄_i(s,a_i; θ_i)] per agent: the mean of the batch
/// gradient estimator when Q̂ is replaced by Q^π.
pub fn score_expectation(
    env: &EnvModel,
    net: &Network,
    features: &FeatureMap,
    thetas: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let scale = 1.0 - env.gamma();
    Ok(exact_policy_gradient(env, net, features, thetas)?
        .into_iter()
        .map(|g| g.into_iter().map(|v| v * scale).collect())
        .collect())
}

/// The exact gradient ∇_{θ_i}J from precomputed Q^π and ν_π tables.
pub fn gradient_from_tables(
    env: &EnvModel,
    net: &Network,
    features: &FeatureMap,
    thetas: &[Vec<f64>],
    policy: &PolicyTable,
    q: &[f64],
    nu: &[f64],
) -> Vec<Vec<f64>> {
    let na = env.num_actions();
    let n = env.num_agents();
    let radices = env.actions().radices();
    par::map_range(n, |i| {
        let ai = radices[i];
        let mut grad = vec![0.0; net.config().actor_len()];
        let mut feats = Vec::new();
        let mut marginal = vec![0.0; ai];
        let mut digits = vec![0usize; n];
        for s in 0..env.num_states() {
            if nu[s] <= 0.0 {
                continue;
            }
            // Q̄_i(s, a_i) = Σ_{a_-i} π_-i(a_-i|s) Q(s, a)
            marginal.fill(0.0);
            for a in 0..na {
                env.actions().decode_into(a, &mut digits);
                let mut w = 1.0;
                for (j, &dj) in digits.iter().enumerate() {
                    if j != i {
                        w *= policy.local(s, j)[dj];
                    }
                }
                marginal[digits[i]] += w * q[s * na + a];
            }
            features.local_actions_into(i, s, ai, &mut feats);
            let probs = policy.local(s, i);
            for (a_i, (&p, &qbar)) in probs.iter().zip(&marginal).enumerate() {
                let coef = nu[s] * p * qbar / (1.0 - env.gamma());
                if coef != 0.0 {
                    net.add_log_policy_grad(i, &thetas[i], &feats, probs, a_i, coef, &mut grad);
                }
            }
        }
        grad
    })
}

/// Outcome of one centralized ascent step.
#[derive(Clone, Debug, PartialEq)]
pub struct CentralStep {
    pub thetas: Vec<Vec<f64>>,
    pub j_before: f64,
    pub j_after: f64,
    pub grad_norm: f64,
    /// Step size finally used; zero when no halving produced an increase.
    pub step: f64,
    pub halvings: usize,
}

/// θ' = P(θ + η ∇J) with every agent's exact gradient, halving η (at most 20
/// times) while J would decrease. If no halving helps, θ is kept.
pub fn centralized_step(
    env: &EnvModel,
    net: &Network,
    features: &FeatureMap,
    thetas: &[Vec<f64>],
    eta: f64,
) -> Result<CentralStep> {
    let sol = solve(env, net, features, thetas)?;
    let grad_norm = sol
        .grads
        .iter()
        .flatten()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    let j_before = sol.j_value;
    if grad_norm == 0.0 {
        return Ok(CentralStep {
            thetas: thetas.to_vec(),
            j_before,
            j_after: j_before,
            grad_norm,
            step: eta,
            halvings: 0,
        });
    }
    let mut step = eta;
    for halvings in 0..=MAX_HALVINGS {
        let candidate = ascend(net, thetas, &sol.grads, step);
        let policy = PolicyTable::from_actors(env, net, features, &candidate)?;
        let j_after = exact_j(env, &policy)?;
        if j_after >= j_before {
            return Ok(CentralStep {
                thetas: candidate,
                j_before,
                j_after,
                grad_norm,
                step,
                halvings,
            });
        }
        step *= 0.5;
    }
    Ok(CentralStep {
        thetas: thetas.to_vec(),
        j_before,
        j_after: j_before,
        grad_norm,
        step: 0.0,
        halvings: MAX_HALVINGS,
    })
}

/// P(θ_i + η g_i) for each agent.
pub fn ascend(net: &Network, thetas: &[Vec<f64>], grads: &[Vec<f64>], eta: f64) -> Vec<Vec<f64>> {
    thetas
        .iter()
        .zip(grads)
        .enumerate()
        .map(|(i, (theta, g))| {
            let mut next: Vec<f64> = theta.iter().zip(g).map(|(t, gi)| t + eta * gi).collect();
            net.project_actor(i, &mut next);
            next
        })
        .collect()
}

/// Central differences (f(x + h e_k) − f(x − h e_k)) / 2h per coordinate.
pub fn finite_diff<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(OracleError::InvalidStep(step));
    }
    let mut y = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        y[k] = x[k] + step;
        let hi = f(&y);
        y[k] = x[k] - step;
        let lo = f(&y);
        y[k] = x[k];
        if !hi.is_finite() || !lo.is_finite() {
            return Err(OracleError::NonFinite(k));
        }
        out.push((hi - lo) / (2.0 * step));
    }
    Ok(out)
}
