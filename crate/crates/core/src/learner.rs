//! The learner: the distributed critic, the decentralized actor step, the
//! visitation sampler, learning-rate schedules and per-iteration diagnostics.
//!
//! Sampling realizes ς_k = σ_k = ν_k·π_k. ν_k is the stationary law of the
//! (1−γ)-restart chain (restart to ζ with probability 1−γ, otherwise follow
//! P), which for absorbing path networks is the only non-degenerate choice.
//! Small problems draw i.i.d. from the exact ν_k; larger ones run the chain.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::comm::{CommError, CommSchedule};
use crate::env::{EnvModel, FeatureMap};
use crate::neural::{NetConfig, Network, NeuralError};
use crate::oracle::{self, OracleError, PolicyTable};
use crate::par;

/// Steps the restart chain runs before its first sample.
pub const BURN_IN: usize = 1000;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid learner config: {0}")]
    Config(String),
    #[error("non-finite {what} at k={k}{}", .t.map(|t| format!(", t={t}")).unwrap_or_default())]
    NonFinite {
        what: String,
        k: usize,
        t: Option<usize>,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("exact sampling requested but the environment exceeds the oracle limit")]
    ExactInfeasible,
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LearnerError>;

/// η_{c,t} = (1−γ)/(24√(t+1)).
pub fn critic_lr(t: usize, gamma: f64) -> f64 {
    (1.0 - gamma) / (24.0 * ((t + 1) as f64).sqrt())
}

/// Critic step-size rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CriticRate {
    /// [`critic_lr`] unscaled.
    Base,
    /// c·[`critic_lr`]: same 1/√(t+1) decay, larger constant.
    Scaled(f64),
    Constant(f64),
}

impl CriticRate {
    pub fn rate(&self, t: usize, gamma: f64) -> f64 {
        match *self {
            CriticRate::Base => critic_lr(t, gamma),
            CriticRate::Scaled(c) => c * critic_lr(t, gamma),
            CriticRate::Constant(v) => v,
        }
    }
}

impl fmt::Display for CriticRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CriticRate::Base => write!(f, "base"),
            CriticRate::Scaled(c) => write!(f, "scaled:{c}"),
            CriticRate::Constant(v) => write!(f, "constant:{v}"),
        }
    }
}

impl FromStr for CriticRate {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let positive = |v: &str| -> std::result::Result<f64, String> {
            match v.trim().parse::<f64>() {
                Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
                _ => Err(format!("expected a positive number, got '{v}'")),
            }
        };
        match s.trim().split_once(':') {
            None if s.trim() == "base" => Ok(CriticRate::Base),
            Some(("scaled", v)) => positive(v).map(CriticRate::Scaled),
            Some(("constant", v)) => positive(v).map(CriticRate::Constant),
            _ => Err(format!(
                "unknown critic rate '{s}' (expected base, scaled:<c> or constant:<v>)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerMode {
    /// Exact when |S|·|A| is within the oracle limit, restart chain otherwise.
    Auto,
    Exact,
    Chain,
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerMode::Auto => "auto",
            SamplerMode::Exact => "exact",
            SamplerMode::Chain => "chain",
        })
    }
}

impl FromStr for SamplerMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "auto" => Ok(SamplerMode::Auto),
            "exact" => Ok(SamplerMode::Exact),
            "chain" => Ok(SamplerMode::Chain),
            other => Err(format!(
                "unknown sampler '{other}' (expected auto, exact or chain)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerConfig {
    /// Critic iterations per policy iteration.
    pub t_c: usize,
    /// Policy iterations.
    pub k: usize,
    pub batch_size: usize,
    pub eta_a: f64,
    pub critic_rate: CriticRate,
    pub seed: u64,
    pub sampler: SamplerMode,
    /// Metrics rows are written at k = 0, every `metrics_every`, and k = K.
    pub metrics_every: usize,
    /// Forward-move probabilities are recorded at the same kind of cadence.
    pub snapshot_every: usize,
    /// Checkpoint cadence in k; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub record_wallclock: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            t_c: 20,
            k: 4000,
            batch_size: 8,
            eta_a: 0.5,
            critic_rate: CriticRate::Scaled(20000.0),
            seed: 0,
            sampler: SamplerMode::Auto,
            metrics_every: 100,
            snapshot_every: 100,
            checkpoint_every: 0,
            record_wallclock: false,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(LearnerError::Config(m.to_string()));
        if self.t_c == 0 {
            return fail("T_c must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if !(self.eta_a > 0.0 && self.eta_a.is_finite()) {
            return fail("eta_a must be positive");
        }
        if self.metrics_every == 0 || self.snapshot_every == 0 {
            return fail("metrics and snapshot cadences must be at least 1");
        }
        Ok(())
    }
}

/// Everything the learner runs on: environment, communication schedule,
/// networks and features.
#[derive(Clone, Debug)]
pub struct Problem {
    pub env: EnvModel,
    pub sched: CommSchedule,
    pub net: Network,
    pub features: FeatureMap,
}

/// Derives independent 64-bit seeds from one experiment seed (splitmix64).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const FEATURE_TAG: u64 = 1;
const NETWORK_TAG: u64 = 2;
const SAMPLING_TAG: u64 = 3;

const CRITIC_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const BURN_IN_STREAM: u64 = 3;

/// The random stream for policy iteration `k` and purpose `stream`.
pub fn stream_rng(seed: u64, k: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SAMPLING_TAG));
    rng.set_stream((stream << 56) | k as u64);
    rng
}

impl Problem {
    /// Networks and features are drawn from seeds derived from `seed`.
    pub fn new(
        env: EnvModel,
        sched: CommSchedule,
        mut net_cfg: NetConfig,
        seed: u64,
    ) -> Result<Self> {
        net_cfg.num_agents = env.num_agents();
        if sched.num_agents() != env.num_agents() {
            return Err(CommError::AgentCount {
                expected: env.num_agents(),
                got: sched.num_agents(),
            }
            .into());
        }
        let net = Network::new(net_cfg, derive_seed(seed, NETWORK_TAG))?;
        let features = FeatureMap::for_env(&env, net.config().d, derive_seed(seed, FEATURE_TAG));
        Ok(Self {
            env,
            sched,
            net,
            features,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.env.num_agents()
    }

    /// θ_i(0) for every agent.
    pub fn initial_thetas(&self) -> Vec<Vec<f64>> {
        (0..self.num_agents())
            .map(|i| self.net.initial_policy(i).weights)
            .collect()
    }

    /// Concatenated features x_1 … x_N of z = (s, a).
    pub fn joint_features_into(&self, s: usize, a: usize, out: &mut [f64]) {
        let digits = self.env.actions().decode(a);
        self.features.joint_into(s, &digits, out);
    }

    pub fn joint_features(&self, s: usize, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_agents() * self.features.dim()];
        self.joint_features_into(s, a, &mut out);
        out
    }

    /// Whether Q tables, σ and exact gradients are available.
    pub fn oracle_feasible(&self) -> bool {
        oracle::is_feasible(&self.env)
    }
}

/// The joint softmax-ReLU policy at fixed θ, tabulated on every state when
/// requested and evaluated on demand otherwise.
pub struct ActorPolicy<'a> {
    problem: &'a Problem,
    thetas: &'a [Vec<f64>],
    table: Option<PolicyTable>,
}

impl<'a> ActorPolicy<'a> {
    pub fn new(problem: &'a Problem, thetas: &'a [Vec<f64>], tabulate: bool) -> Result<Self> {
        let table = if tabulate {
            Some(PolicyTable::from_actors(
                &problem.env,
                &problem.net,
                &problem.features,
                thetas,
            )?)
        } else {
            None
        };
        Ok(Self {
            problem,
            thetas,
            table,
        })
    }

    pub fn table(&self) -> Option<&PolicyTable> {
        self.table.as_ref()
    }

    /// π_agent(·|s).
    pub fn local(&self, s: usize, agent: usize) -> Vec<f64> {
        match &self.table {
            Some(t) => t.local(s, agent).to_vec(),
            None => {
                let mut out = vec![0.0; self.problem.env.num_local_actions(agent)];
                oracle::actor_probs_into(
                    &self.problem.env,
                    &self.problem.net,
                    &self.problem.features,
                    self.thetas,
                    s,
                    agent,
                    &mut out,
                );
                out
            }
        }
    }

    pub fn sample_joint<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        if let Some(t) = &self.table {
            return t.sample_joint(s, rng);
        }
        let digits: Vec<usize> = (0..self.problem.num_agents())
            .map(|i| oracle::sample_index(&self.local(s, i), rng))
            .collect();
        self.problem.env.actions().encode(&digits)
    }
}

/// One sampled tuple (z, r(z), z') with z = (s, a), z' = (s', a').
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub rewards: Vec<f64>,
    pub s_next: usize,
    pub a_next: usize,
}

/// A state-action pair z_b drawn from σ_k.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchItem {
    pub s: usize,
    pub a: usize,
}

/// Draws from ς_k = σ_k = ν_k·π_k.
#[derive(Clone, Debug)]
pub struct Sampler {
    exact: bool,
    chain: Option<usize>,
    nu_cdf: Vec<f64>,
}

impl Sampler {
    pub fn new(env: &EnvModel, mode: SamplerMode) -> Result<Self> {
        let feasible = oracle::is_feasible(env);
        let exact = match mode {
            SamplerMode::Auto => feasible,
            SamplerMode::Exact if !feasible => return Err(LearnerError::ExactInfeasible),
            SamplerMode::Exact => true,
            SamplerMode::Chain => false,
        };
        Ok(Self {
            exact,
            chain: None,
            nu_cdf: Vec::new(),
        })
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// Current restart-chain state, if the chain has started.
    pub fn chain_state(&self) -> Option<usize> {
        self.chain
    }

    /// Readies the sampler for a new policy: exact mode solves for ν_π (the
    /// policy must be tabulated); chain mode burns in on first use.
    pub fn prepare<R: Rng + ?Sized>(
        &mut self,
        env: &EnvModel,
        policy: &ActorPolicy,
        rng: &mut R,
    ) -> Result<()> {
        if self.exact {
            let table = policy.table().ok_or_else(|| {
                LearnerError::Config("exact sampling needs a tabulated policy".into())
            })?;
            let nu = oracle::state_visitation(env, table)?;
            let mut acc = 0.0;
            self.nu_cdf = nu
                .iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect();
        } else if self.chain.is_none() {
            self.chain = Some(env.sample_initial(rng));
            for _ in 0..BURN_IN {
                self.chain_step(env, policy, rng);
            }
        }
        Ok(())
    }

    /// Returns (s, a, s') from the chain and advances it: to s' with
    /// probability γ, to a fresh draw from ζ otherwise.
    fn chain_step<R: Rng + ?Sized>(
        &mut self,
        env: &EnvModel,
        policy: &ActorPolicy,
        rng: &mut R,
    ) -> (usize, usize, usize) {
        let s = self.chain.expect("chain started");
        let a = policy.sample_joint(s, rng);
        let (next, _) = env.step(s, a, rng);
        let restart = rng.random::<f64>() < 1.0 - env.gamma();
        self.chain = Some(if restart {
            env.sample_initial(rng)
        } else {
            next
        });
        (s, a, next)
    }

    fn draw_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.nu_cdf.last().copied().unwrap_or(1.0);
        self.nu_cdf
            .partition_point(|&c| c <= u)
            .min(self.nu_cdf.len() - 1)
    }

    pub fn sample_pair<R: Rng + ?Sized>(
        &mut self,
        env: &EnvModel,
        policy: &ActorPolicy,
        rng: &mut R,
    ) -> Transition {
        let (s, a, s_next) = if self.exact {
            let s = self.draw_state(rng);
            let a = policy.sample_joint(s, rng);
            let (next, _) = env.step(s, a, rng);
            (s, a, next)
        } else {
            self.chain_step(env, policy, rng)
        };
        let a_next = policy.sample_joint(s_next, rng);
        Transition {
            s,
            a,
            rewards: env.rewards(s, a),
            s_next,
            a_next,
        }
    }

    pub fn sample_batch<R: Rng + ?Sized>(
        &mut self,
        env: &EnvModel,
        policy: &ActorPolicy,
        n: usize,
        rng: &mut R,
    ) -> Vec<BatchItem> {
        (0..n)
            .map(|_| {
                if self.exact {
                    let s = self.draw_state(rng);
                    BatchItem {
                        s,
                        a: policy.sample_joint(s, rng),
                    }
                } else {
                    let (s, a, _) = self.chain_step(env, policy, rng);
                    BatchItem { s, a }
                }
            })
            .collect()
    }
}

/// δ = Q̂(z; W) − (1−γ) r_i − γ Q̂(z'; W), from agent i's own reward only.
pub fn td_error(
    net: &Network,
    w: &[f64],
    x: &[f64],
    x_next: &[f64],
    r_i: f64,
    gamma: f64,
) -> Result<f64> {
    Ok(net.q_value(w, x)? - (1.0 - gamma) * r_i - gamma * net.q_value(w, x_next)?)
}

/// One synchronous critic round for every agent:
/// W_i ← P(Σ_j a_ij(t) W_j − η δ_i ∇Q̂(z; W_i)).
///
/// Agent i reads its neighbours' parameters under A(t) and `rewards[i]`.
/// Returns the new parameters and each agent's TD error.
#[allow(clippy::too_many_arguments)]
pub fn critic_round(
    net: &Network,
    sched: &CommSchedule,
    t: usize,
    critics: &[Vec<f64>],
    x: &[f64],
    x_next: &[f64],
    rewards: &[f64],
    gamma: f64,
    eta: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut out = vec![vec![0.0; net.config().critic_len()]; critics.len()];
    let deltas = critic_round_into(
        net, sched, t, critics, x, x_next, rewards, gamma, eta, &mut out,
    )?;
    Ok((out, deltas))
}

/// [`critic_round`] writing the new parameters into `out`.
#[allow(clippy::too_many_arguments)]
pub fn critic_round_into(
    net: &Network,
    sched: &CommSchedule,
    t: usize,
    critics: &[Vec<f64>],
    x: &[f64],
    x_next: &[f64],
    rewards: &[f64],
    gamma: f64,
    eta: f64,
    out: &mut [Vec<f64>],
) -> Result<Vec<f64>> {
    let n = sched.num_agents();
    for got in [critics.len(), rewards.len(), out.len()] {
        if got != n {
            return Err(CommError::AgentCount { expected: n, got }.into());
        }
    }
    let cfg = net.config();
    for w in critics.iter().chain(out.iter()) {
        if w.len() != cfg.critic_len() {
            return Err(NeuralError::Dimension {
                what: "critic parameter",
                expected: cfg.critic_len(),
                got: w.len(),
            }
            .into());
        }
    }
    for (what, v) in [("features", x), ("next features", x_next)] {
        if v.len() != cfg.num_agents * cfg.d {
            return Err(NeuralError::Dimension {
                what,
                expected: cfg.num_agents * cfg.d,
                got: v.len(),
            }
            .into());
        }
    }
    Ok(par::map_mut(out, |i, w| {
        let mut mask = vec![false; cfg.width()];
        let (q, q_next) = net.q_pair_masked(&critics[i], x, x_next, &mut mask);
        let delta = q - (1.0 - gamma) * rewards[i] - gamma * q_next;
        net.mix_step_project(sched.neighbors(t, i), critics, &mask, x, -eta * delta, w);
        delta
    }))
}

/// Result of the distributed critic at one policy iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticOutput {
    /// W_{i,out} = Σ_t η_t W_i(t) / Σ_t η_t over t = 0 … T_c−1.
    pub w_out: Vec<Vec<f64>>,
    /// Disagreement of W(t) for t = 0 … T_c−1.
    pub disagreement: Vec<f64>,
}

/// sums_i += weight · W_i for every agent; returns the disagreement of W.
/// Both are computed in one blocked pass over the parameters.
fn accumulate(sums: &mut [Vec<f64>], critics: &[Vec<f64>], weight: f64) -> f64 {
    const BLOCK: usize = 512;
    let n = critics.len() as f64;
    let len = critics.first().map_or(0, Vec::len);
    let mut mean = [0.0; BLOCK];
    let mut total = 0.0;
    for start in (0..len).step_by(BLOCK) {
        let end = (start + BLOCK).min(len);
        let mean = &mut mean[..end - start];
        mean.fill(0.0);
        for (sum, w) in sums.iter_mut().zip(critics) {
            let w = &w[start..end];
            for ((s, m), v) in sum[start..end].iter_mut().zip(mean.iter_mut()).zip(w) {
                *s += weight * v;
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for w in critics {
            total += crate::neural::sum4(&w[start..end], mean, |x, y| (x - y) * (x - y));
        }
    }
    total.sqrt()
}

/// Runs T_c critic iterations from W_i(0) = W'(0) under the given policy.
pub fn run_critic<R: Rng + ?Sized>(
    problem: &Problem,
    policy: &ActorPolicy,
    sampler: &mut Sampler,
    cfg: &LearnerConfig,
    k: usize,
    rng: &mut R,
) -> Result<CriticOutput> {
    let n = problem.num_agents();
    let gamma = problem.env.gamma();
    let len = problem.net.config().critic_len();
    let dim = n * problem.features.dim();
    let mut critics = vec![problem.net.init().weights().to_vec(); n];
    let mut spare = critics.clone();
    let mut sums = vec![vec![0.0; len]; n];
    let eta_sum: f64 = (0..cfg.t_c).map(|t| cfg.critic_rate.rate(t, gamma)).sum();
    let mut trace = Vec::with_capacity(cfg.t_c);
    let mut x = vec![0.0; dim];
    let mut x_next = vec![0.0; dim];
    for t in 0..cfg.t_c {
        let eta = cfg.critic_rate.rate(t, gamma);
        trace.push(accumulate(&mut sums, &critics, eta / eta_sum));
        if t + 1 == cfg.t_c {
            break;
        }
        let tr = sampler.sample_pair(&problem.env, policy, rng);
        problem.joint_features_into(tr.s, tr.a, &mut x);
        problem.joint_features_into(tr.s_next, tr.a_next, &mut x_next);
        let deltas = critic_round_into(
            &problem.net,
            &problem.sched,
            t,
            &critics,
            &x,
            &x_next,
            &tr.rewards,
            gamma,
            eta,
            &mut spare,
        )?;
        if deltas.iter().any(|d| !d.is_finite()) {
            return Err(LearnerError::NonFinite {
                what: "TD error".into(),
                k,
                t: Some(t),
            });
        }
        std::mem::swap(&mut critics, &mut spare);
    }
    Ok(CriticOutput {
        w_out: sums,
        disagreement: trace,
    })
}

/// Batch mean and per-component standard error of the score estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

/// (1/|𝓑|) Σ_b q(z_b) ∇_{θ_i} log π_i(a_{i,b}|s_b; θ_i) for an arbitrary
/// value function `q(item, joint features)`.
pub fn estimate_policy_gradient_with<F>(
    problem: &Problem,
    agent: usize,
    theta: &[f64],
    batch: &[BatchItem],
    q: F,
) -> Result<GradientEstimate>
where
    F: Fn(&BatchItem, &[f64]) -> f64,
{
    if batch.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    let net = &problem.net;
    let len = net.config().actor_len();
    let num_local = problem.env.num_local_actions(agent);
    let mut sum = vec![0.0; len];
    let mut sum_sq = vec![0.0; len];
    let mut term = vec![0.0; len];
    let mut feats = Vec::new();
    let mut x = vec![0.0; problem.num_agents() * problem.features.dim()];
    for item in batch {
        problem.joint_features_into(item.s, item.a, &mut x);
        let value = q(item, &x);
        problem
            .features
            .local_actions_into(agent, item.s, num_local, &mut feats);
        let probs = net.policy_probs(agent, theta, &feats)?;
        let a_i = problem.env.actions().digit(item.a, agent);
        term.fill(0.0);
        net.add_log_policy_grad(agent, theta, &feats, &probs, a_i, value, &mut term);
        for ((s, sq), v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(&term) {
            *s += v;
            *sq += v * v;
        }
    }
    let b = batch.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / b).collect();
    let std_err = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            if batch.len() < 2 {
                return 0.0;
            }
            let var = (sq / b - m * m).max(0.0) * b / (b - 1.0);
            (var / b).sqrt()
        })
        .collect();
    Ok(GradientEstimate { mean, std_err })
}

/// Agent i's estimate with its own output critic Q̂_{i,out}.
pub fn estimate_policy_gradient(
    problem: &Problem,
    agent: usize,
    w_out: &[f64],
    theta: &[f64],
    batch: &[BatchItem],
) -> Result<Vec<f64>> {
    let net = &problem.net;
    Ok(
        estimate_policy_gradient_with(problem, agent, theta, batch, |_, x| {
            net.q_value_unchecked(w_out, x)
        })?
        .mean,
    )
}

/// θ_i(k+1) = P(θ_i(k) + η_a ĝ_i).
pub fn actor_step(
    net: &Network,
    agent: usize,
    theta: &[f64],
    grad: &[f64],
    eta_a: f64,
) -> Vec<f64> {
    let mut next: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t + eta_a * g).collect();
    net.project_actor(agent, &mut next);
    next
}

/// ρ = [P(θ + η ∇J) − θ]/η per agent, and ‖ρ‖₂ over all agents. Agents whose
/// projection is inactive get ρ_i = ∇_{θ_i}J exactly.
pub fn gradient_mapping(
    net: &Network,
    thetas: &[Vec<f64>],
    grads: &[Vec<f64>],
    eta: f64,
) -> (Vec<Vec<f64>>, f64) {
    let rho: Vec<Vec<f64>> = thetas
        .iter()
        .zip(grads)
        .enumerate()
        .map(|(i, (theta, g))| {
            let mut next: Vec<f64> = theta.iter().zip(g).map(|(t, gi)| t + eta * gi).collect();
            if net.project_actor(i, &mut next) {
                next.iter().zip(theta).map(|(n, t)| (n - t) / eta).collect()
            } else {
                g.clone()
            }
        })
        .collect();
    let norm = rho.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    (rho, norm)
}

/// Σ_{(s,a)} σ(s,a) (Q̂(s,a; W) − Q(s,a))² using the per-slab decomposition
/// of Q̂, so the cost is linear in Σ_j |A_j| rather than |A|.
pub fn critic_mse(problem: &Problem, w: &[f64], q: &[f64], sigma: &[f64]) -> f64 {
    let env = &problem.env;
    let n = env.num_agents();
    let na = env.num_actions();
    let radices = env.actions().radices();
    let per_state = par::map_range(env.num_states(), |s| {
        if sigma[s * na..(s + 1) * na].iter().all(|&p| p == 0.0) {
            return 0.0;
        }
        let slabs: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                (0..radices[j])
                    .map(|a| {
                        problem
                            .net
                            .slab_value(w, j, &problem.features.feature(j, s, a))
                    })
                    .collect()
            })
            .collect();
        let mut digits = vec![0; n];
        let mut acc = 0.0;
        for a in 0..na {
            let p = sigma[s * na + a];
            if p > 0.0 {
                env.actions().decode_into(a, &mut digits);
                let qhat: f64 = digits.iter().enumerate().map(|(j, &d)| slabs[j][d]).sum();
                acc += p * (qhat - q[s * na + a]).powi(2);
            }
        }
        acc
    });
    per_state.iter().sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GradSource {
    Exact,
    Estimate,
}

impl fmt::Display for GradSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradSource::Exact => "exact",
            GradSource::Estimate => "estimate",
        })
    }
}

/// Diagnostics for policy iteration k. Fields that cannot be computed for the
/// environment (or at k = K, where no critic runs) are `None`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub k: usize,
    pub j_exact: Option<f64>,
    pub grad_norm_exact: Option<f64>,
    pub grad_mapping_norm: Option<f64>,
    pub grad_mapping_source: Option<GradSource>,
    /// σ-weighted MSE of each agent's Q̂_{i,out} against Q^π.
    pub critic_mse: Option<Vec<f64>>,
    pub disagreement_final: Option<f64>,
    pub wallclock_s: Option<f64>,
}

impl IterationMetrics {
    fn first_non_finite(&self) -> Option<&'static str> {
        let scalars = [
            ("J", self.j_exact),
            ("gradient norm", self.grad_norm_exact),
            ("gradient mapping norm", self.grad_mapping_norm),
            ("disagreement", self.disagreement_final),
        ];
        for (name, v) in scalars {
            if v.is_some_and(|v| !v.is_finite()) {
                return Some(name);
            }
        }
        if self
            .critic_mse
            .as_ref()
            .is_some_and(|v| v.iter().any(|x| !x.is_finite()))
        {
            return Some("critic MSE");
        }
        None
    }
}

/// Per-agent probability of leaving the start state (1 − P(stay class)).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicySnapshot {
    pub k: usize,
    pub forward: Vec<f64>,
}

impl PolicySnapshot {
    pub fn mean_forward(&self) -> f64 {
        self.forward.iter().sum::<f64>() / self.forward.len().max(1) as f64
    }
}

/// The most likely initial state, where snapshots are taken.
pub fn start_state(env: &EnvModel) -> usize {
    env.init_dist()
        .iter()
        .fold((0, f64::NEG_INFINITY), |best, &(s, p)| {
            if p > best.1 {
                (s, p)
            } else {
                best
            }
        })
        .0
}

/// Forward-move probability of every agent at `s` under `policy`.
pub fn forward_probabilities(env: &EnvModel, policy: &ActorPolicy, s: usize) -> Vec<f64> {
    (0..env.num_agents())
        .map(|i| {
            let probs = policy.local(s, i);
            let stay: f64 = env
                .local_action_classes(s, i)
                .into_iter()
                .find(|c| c.contains(&0))
                .map(|c| c.iter().map(|&a| probs[a]).sum())
                .unwrap_or(0.0);
            (1.0 - stay).clamp(0.0, 1.0)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub metrics: Vec<IterationMetrics>,
    pub snapshots: Vec<PolicySnapshot>,
    /// θ(K).
    pub thetas: Vec<Vec<f64>>,
}

fn due(k: usize, every: usize, last: usize) -> bool {
    k % every == 0 || k == last
}

/// Receives results from [`run_algorithm_with`] as they are produced.
pub trait RunObserver {
    fn metrics(&mut self, _row: &IterationMetrics) -> std::io::Result<()> {
        Ok(())
    }

    fn snapshot(&mut self, _snapshot: &PolicySnapshot) -> std::io::Result<()> {
        Ok(())
    }

    /// θ(k) every `checkpoint_every` iterations.
    fn checkpoint(&mut self, _k: usize, _thetas: &[Vec<f64>]) -> std::io::Result<()> {
        Ok(())
    }
}

#[derive(Default)]
struct Collector {
    metrics: Vec<IterationMetrics>,
    snapshots: Vec<PolicySnapshot>,
}

impl RunObserver for Collector {
    fn metrics(&mut self, row: &IterationMetrics) -> std::io::Result<()> {
        self.metrics.push(row.clone());
        Ok(())
    }

    fn snapshot(&mut self, snapshot: &PolicySnapshot) -> std::io::Result<()> {
        self.snapshots.push(snapshot.clone());
        Ok(())
    }
}

/// The learner for K policy iterations, collecting every metrics row and
/// snapshot.
pub fn run_algorithm(problem: &Problem, cfg: &LearnerConfig) -> Result<RunOutput> {
    let mut collector = Collector::default();
    let thetas = run_algorithm_with(problem, cfg, &mut collector)?;
    Ok(RunOutput {
        metrics: collector.metrics,
        snapshots: collector.snapshots,
        thetas,
    })
}

/// The learner, streaming results to `observer`. Returns θ(K).
pub fn run_algorithm_with(
    problem: &Problem,
    cfg: &LearnerConfig,
    observer: &mut dyn RunObserver,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let env = &problem.env;
    let net = &problem.net;
    let n = problem.num_agents();
    let feasible = problem.oracle_feasible();
    let start = Instant::now();
    let s0 = start_state(env);
    let mut thetas = problem.initial_thetas();
    if cfg.k == 0 {
        return Ok(thetas);
    }
    let mut sampler = Sampler::new(env, cfg.sampler)?;
    let mut burn_rng = stream_rng(cfg.seed, 0, BURN_IN_STREAM);

    for k in 0..=cfg.k {
        let row_due = due(k, cfg.metrics_every, cfg.k);
        let tabulate = sampler.is_exact() || (row_due && feasible);
        let policy = ActorPolicy::new(problem, &thetas, tabulate)?;
        if due(k, cfg.snapshot_every, cfg.k) {
            observer.snapshot(&PolicySnapshot {
                k,
                forward: forward_probabilities(env, &policy, s0),
            })?;
        }

        let mut step = None;
        if k < cfg.k {
            sampler.prepare(env, &policy, &mut burn_rng)?;
            let mut rng = stream_rng(cfg.seed, k, CRITIC_STREAM);
            let critic = run_critic(problem, &policy, &mut sampler, cfg, k, &mut rng)?;
            let mut rng = stream_rng(cfg.seed, k, BATCH_STREAM);
            let batch = sampler.sample_batch(env, &policy, cfg.batch_size, &mut rng);
            let grads = par::map_range(n, |i| {
                estimate_policy_gradient(problem, i, &critic.w_out[i], &thetas[i], &batch)
            });
            let grads: Vec<Vec<f64>> = grads.into_iter().collect::<Result<_>>()?;
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(LearnerError::NonFinite {
                    what: "policy gradient estimate".into(),
                    k,
                    t: None,
                });
            }
            let next: Vec<Vec<f64>> = (0..n)
                .map(|i| actor_step(net, i, &thetas[i], &grads[i], cfg.eta_a))
                .collect();
            step = Some((critic, next));
        }

        if row_due {
            let row = metrics_row(
                problem,
                cfg,
                k,
                &thetas,
                &policy,
                step.as_ref(),
                feasible,
                &start,
            )?;
            if let Some(what) = row.first_non_finite() {
                return Err(LearnerError::NonFinite {
                    what: what.to_string(),
                    k,
                    t: None,
                });
            }
            observer.metrics(&row)?;
        }

        if let Some((_, next)) = step {
            if cfg.checkpoint_every > 0 && (k + 1) % cfg.checkpoint_every == 0 {
                observer.checkpoint(k + 1, &next)?;
            }
            thetas = next;
        }
    }
    Ok(thetas)
}

#[allow(clippy::too_many_arguments)]
fn metrics_row(
    problem: &Problem,
    cfg: &LearnerConfig,
    k: usize,
    thetas: &[Vec<f64>],
    policy: &ActorPolicy,
    step: Option<&(CriticOutput, Vec<Vec<f64>>)>,
    feasible: bool,
    start: &Instant,
) -> Result<IterationMetrics> {
    let env = &problem.env;
    let net = &problem.net;
    let mut row = IterationMetrics {
        k,
        j_exact: None,
        grad_norm_exact: None,
        grad_mapping_norm: None,
        grad_mapping_source: None,
        critic_mse: None,
        disagreement_final: step.and_then(|(c, _)| c.disagreement.last().copied()),
        wallclock_s: None,
    };
    if feasible {
        let sol = oracle::solve(env, net, &problem.features, thetas)?;
        row.j_exact = Some(sol.j_value);
        row.grad_norm_exact = Some(
            sol.grads
                .iter()
                .flatten()
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt(),
        );
        row.grad_mapping_norm = Some(gradient_mapping(net, thetas, &sol.grads, cfg.eta_a).1);
        row.grad_mapping_source = Some(GradSource::Exact);
        if let Some((critic, _)) = step {
            row.critic_mse = Some(
                critic
                    .w_out
                    .iter()
                    .map(|w| critic_mse(problem, w, &sol.q_table, &sol.sigma))
                    .collect(),
            );
        }
    } else {
        if k == cfg.k && env.num_states() <= oracle::STATE_LIMIT {
            let table = match policy.table() {
                Some(t) => t.clone(),
                None => PolicyTable::from_actors(env, net, &problem.features, thetas)?,
            };
            row.j_exact = Some(oracle::exact_j(env, &table)?);
        }
        if let Some((_, next)) = step {
            let norm = next
                .iter()
                .zip(thetas)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) / cfg.eta_a))
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            row.grad_mapping_norm = Some(norm);
            row.grad_mapping_source = Some(GradSource::Estimate);
        }
    }
    if cfg.record_wallclock {
        row.wallclock_s = Some(start.elapsed().as_secs_f64());
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_path_env, PathNetworkSpec};

    fn small_net() -> NetConfig {
        NetConfig {
            m: 8,
            p: 0.75,
            radius: 5.0,
            d: 8,
            num_agents: 2,
        }
    }

    fn two_agent_problem(seed: u64) -> Problem {
        let spec = PathNetworkSpec::layered("1-1", &["b1", "b1"], 0.5, 0.5).unwrap();
        let env = build_path_env(&spec, 2, 0.9).unwrap();
        let sched = CommSchedule::undirected(2, vec![vec![(0, 1)]], 1).unwrap();
        Problem::new(env, sched, small_net(), seed).unwrap()
    }

    #[test]
    fn critic_lr_examples() {
        assert!((critic_lr(0, 0.9) - 0.1 / 24.0).abs() < 1e-15);
        assert!((critic_lr(0, 0.9) - 0.00416667).abs() < 5e-9);
        assert!((critic_lr(3, 0.9) - 0.1 / 48.0).abs() < 1e-15);
        assert!((critic_lr(3, 0.9) - 0.00208333).abs() < 5e-9);
        assert!((critic_lr(0, 0.5) - 0.02083333).abs() < 5e-9);
    }

    #[test]
    fn critic_rate_tags_round_trip() {
        for tag in ["base", "scaled:250", "constant:0.01"] {
            let rate: CriticRate = tag.parse().unwrap();
            assert_eq!(rate.to_string(), tag);
        }
        assert_eq!(
            CriticRate::Scaled(4.0).rate(3, 0.9),
            4.0 * critic_lr(3, 0.9)
        );
        assert!("scaled:-1".parse::<CriticRate>().is_err());
        assert!("linear:2".parse::<CriticRate>().is_err());
    }

    #[test]
    fn td_error_examples() {
        // a single neuron with W = x gives Q̂ = 1; scale W to hit the target values
        let x = vec![1.0, 0.0];
        let cfg = NetConfig {
            m: 1,
            p: 0.75,
            radius: 5.0,
            d: 2,
            num_agents: 1,
        };
        let net = Network::from_parts(
            cfg,
            crate::neural::SharedInit::from_parts(vec![0.5, 0.0], vec![1.0]),
        )
        .unwrap();
        let w = vec![0.5, 0.0];
        let delta = td_error(&net, &w, &x, &x, -0.5, 0.9).unwrap();
        assert!((delta - 0.1).abs() < 1e-15);
        assert_eq!(td_error(&net, &[0.0, 0.0], &x, &x, 0.0, 0.9).unwrap(), 0.0);
        let c = net.q_value(&w, &x).unwrap();
        assert!(td_error(&net, &w, &x, &x, c, 0.9).unwrap().abs() < 1e-15);
    }

    #[test]
    fn critic_round_examples() {
        let problem = two_agent_problem(1);
        let net = &problem.net;
        let len = net.config().critic_len();
        let x = problem.joint_features(0, 0);
        let x_next = problem.joint_features(1, 3);

        // identity mixing and η = 0 leave the parameters unchanged
        let identity = CommSchedule::undirected(2, vec![vec![]], 1).unwrap();
        let w0 = vec![net.init().weights().to_vec(); 2];
        let (same, _) =
            critic_round(net, &identity, 0, &w0, &x, &x_next, &[-0.5, -0.5], 0.9, 0.0).unwrap();
        assert_eq!(same, w0);

        // uniform mixing with η = 0 equalizes distinct parameters
        let uniform = CommSchedule::undirected(2, vec![vec![(0, 1)]], 1).unwrap();
        let mut distinct = w0.clone();
        distinct[1][0] += 0.3;
        let (mixed, _) = critic_round(
            net,
            &uniform,
            0,
            &distinct,
            &x,
            &x_next,
            &[0.0, 0.0],
            0.9,
            0.0,
        )
        .unwrap();
        assert_eq!(mixed[0], mixed[1]);

        // zero parameters and zero rewards stay at zero (the ball contains 0
        // only if W'(0) is within B/√N of it, so use a radius large enough)
        let zero = vec![vec![0.0; len]; 2];
        let (deltas_zero, d) =
            critic_round(net, &identity, 0, &zero, &x, &x_next, &[0.0, 0.0], 0.9, 0.1).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
        for w in &deltas_zero {
            assert!(net.critic_deviation(w) <= net.config().ball_radius() * (1.0 + 1e-12));
        }

        assert!(critic_round(
            net,
            &uniform,
            0,
            &w0[..1],
            &x,
            &x_next,
            &[0.0, 0.0],
            0.9,
            0.1
        )
        .is_err());
    }

    #[test]
    fn run_critic_single_iteration_returns_init() {
        let problem = two_agent_problem(2);
        let thetas = problem.initial_thetas();
        let policy = ActorPolicy::new(&problem, &thetas, true).unwrap();
        let mut sampler = Sampler::new(&problem.env, SamplerMode::Exact).unwrap();
        let mut rng = stream_rng(0, 0, 9);
        sampler.prepare(&problem.env, &policy, &mut rng).unwrap();
        let cfg = LearnerConfig {
            t_c: 1,
            ..LearnerConfig::default()
        };
        let out = run_critic(&problem, &policy, &mut sampler, &cfg, 0, &mut rng).unwrap();
        for w in &out.w_out {
            assert_eq!(w.as_slice(), problem.net.init().weights());
        }
        assert_eq!(out.disagreement, vec![0.0]);
    }

    #[test]
    fn critic_iterates_stay_in_ball() {
        let problem = two_agent_problem(3);
        let thetas = problem.initial_thetas();
        let policy = ActorPolicy::new(&problem, &thetas, true).unwrap();
        let mut sampler = Sampler::new(&problem.env, SamplerMode::Auto).unwrap();
        let mut rng = stream_rng(0, 0, 9);
        sampler.prepare(&problem.env, &policy, &mut rng).unwrap();
        let mut critics = vec![problem.net.init().weights().to_vec(); 2];
        for t in 0..200 {
            let tr = sampler.sample_pair(&problem.env, &policy, &mut rng);
            let x = problem.joint_features(tr.s, tr.a);
            let xn = problem.joint_features(tr.s_next, tr.a_next);
            critics = critic_round(
                &problem.net,
                &problem.sched,
                t,
                &critics,
                &x,
                &xn,
                &tr.rewards,
                0.9,
                5.0,
            )
            .unwrap()
            .0;
            for w in &critics {
                assert!(
                    problem.net.critic_deviation(w)
                        <= problem.net.config().ball_radius() * (1.0 + 1e-12)
                );
            }
        }
    }

    #[test]
    fn estimator_edge_cases() {
        let problem = two_agent_problem(4);
        let thetas = problem.initial_thetas();
        let batch = vec![BatchItem { s: 0, a: 0 }, BatchItem { s: 0, a: 3 }];
        let g = estimate_policy_gradient_with(&problem, 0, &thetas[0], &batch, |_, _| 0.0).unwrap();
        assert!(g.mean.iter().all(|&v| v == 0.0));
        assert!(matches!(
            estimate_policy_gradient_with(&problem, 0, &thetas[0], &[], |_, _| 1.0),
            Err(LearnerError::EmptyBatch)
        ));
        // both agents at the destination: a single aliased class, all
        // features differ but the score of a constant value still averages out
        // only in expectation; with |A_i| = 1 it is exactly zero
        let env = EnvModel::tabular(
            vec![1, 1],
            vec![1, 1],
            0.9,
            vec![(0, 1.0)],
            vec![vec![(0, 1.0)]],
            vec![vec![1.0, 1.0]],
        )
        .unwrap();
        let sched = CommSchedule::undirected(2, vec![vec![(0, 1)]], 1).unwrap();
        let single = Problem::new(env, sched, small_net(), 5).unwrap();
        let th = single.initial_thetas();
        let g = estimate_policy_gradient_with(
            &single,
            1,
            &th[1],
            &[BatchItem { s: 0, a: 0 }],
            |_, _| 3.0,
        )
        .unwrap();
        assert!(g.mean.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn actor_step_examples() {
        let problem = two_agent_problem(5);
        let net = &problem.net;
        let theta = problem.initial_thetas()[0].clone();
        let zero = vec![0.0; theta.len()];
        assert_eq!(actor_step(net, 0, &theta, &zero, 0.5), theta);
        let mut small = zero.clone();
        small[0] = 1e-3;
        let next = actor_step(net, 0, &theta, &small, 0.5);
        let expected: Vec<f64> = theta.iter().zip(&small).map(|(t, g)| t + 0.5 * g).collect();
        assert_eq!(next, expected);
        let far: Vec<f64> = (0..theta.len())
            .map(|k| if k % 2 == 0 { 100.0 } else { -50.0 })
            .collect();
        let next = actor_step(net, 0, &theta, &far, 0.5);
        assert!((net.actor_deviation(0, &next) - net.config().ball_radius()).abs() < 1e-12);
    }

    #[test]
    fn gradient_mapping_examples() {
        let problem = two_agent_problem(6);
        let net = &problem.net;
        let thetas = problem.initial_thetas();
        let zeros = vec![vec![0.0; thetas[0].len()]; 2];
        let (rho, norm) = gradient_mapping(net, &thetas, &zeros, 0.5);
        assert_eq!(rho, zeros);
        assert_eq!(norm, 0.0);
        let small: Vec<Vec<f64>> = (0..2)
            .map(|i| {
                (0..thetas[0].len())
                    .map(|k| 1e-3 * (k + i) as f64)
                    .collect()
            })
            .collect();
        let (rho, _) = gradient_mapping(net, &thetas, &small, 0.5);
        assert_eq!(rho, small);
        // on the boundary with an outward gradient the mapping shrinks
        let r = net.config().ball_radius();
        let dir: Vec<f64> = (0..thetas[0].len())
            .map(|k| if k == 0 { 1.0 } else { 0.0 })
            .collect();
        let edge: Vec<Vec<f64>> = (0..2)
            .map(|i| thetas[i].iter().zip(&dir).map(|(t, u)| t + r * u).collect())
            .collect();
        let outward = vec![dir.clone(), dir];
        let (_, norm) = gradient_mapping(net, &edge, &outward, 0.5);
        assert!(norm < 2f64.sqrt());
    }

    #[test]
    fn k_zero_returns_initial_policy() {
        let problem = two_agent_problem(7);
        let cfg = LearnerConfig {
            k: 0,
            ..LearnerConfig::default()
        };
        let out = run_algorithm(&problem, &cfg).unwrap();
        assert!(out.metrics.is_empty());
        assert_eq!(out.thetas, problem.initial_thetas());
    }

    #[test]
    fn short_run_is_deterministic_and_well_formed() {
        let problem = two_agent_problem(8);
        let cfg = LearnerConfig {
            t_c: 5,
            k: 7,
            batch_size: 4,
            metrics_every: 3,
            snapshot_every: 2,
            checkpoint_every: 4,
            ..LearnerConfig::default()
        };
        struct Checkpoints(Vec<(usize, usize)>);
        impl RunObserver for Checkpoints {
            fn checkpoint(&mut self, k: usize, thetas: &[Vec<f64>]) -> std::io::Result<()> {
                self.0.push((k, thetas.len()));
                Ok(())
            }
        }
        let mut seen = Checkpoints(Vec::new());
        let thetas = run_algorithm_with(&problem, &cfg, &mut seen).unwrap();
        let checkpoints = seen.0;
        let a = run_algorithm(&problem, &cfg).unwrap();
        let b = run_algorithm(&problem, &cfg).unwrap();
        assert_eq!(thetas, a.thetas);
        assert_eq!(a, b);
        let ks: Vec<usize> = a.metrics.iter().map(|m| m.k).collect();
        assert_eq!(ks, vec![0, 3, 6, 7]);
        assert!(a.metrics[..3]
            .iter()
            .all(|m| m.critic_mse.is_some() && m.disagreement_final.is_some()));
        assert!(a.metrics[3].critic_mse.is_none() && a.metrics[3].j_exact.is_some());
        assert_eq!(
            a.snapshots.iter().map(|s| s.k).collect::<Vec<_>>(),
            vec![0, 2, 4, 6, 7]
        );
        assert_eq!(checkpoints, vec![(4, 2)]);
        for (i, th) in a.thetas.iter().enumerate() {
            assert!(
                problem.net.actor_deviation(i, th)
                    <= problem.net.config().ball_radius() * (1.0 + 1e-12)
            );
        }
    }

    #[test]
    fn chain_mode_runs() {
        let problem = two_agent_problem(9);
        let cfg = LearnerConfig {
            t_c: 3,
            k: 2,
            batch_size: 2,
            sampler: SamplerMode::Chain,
            ..LearnerConfig::default()
        };
        let out = run_algorithm(&problem, &cfg).unwrap();
        assert_eq!(out.metrics.len(), 2);
    }
}
