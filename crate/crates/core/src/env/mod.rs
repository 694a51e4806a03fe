//! Finite networked MDPs.
//!
//! An [`EnvModel`] holds N agents with finite local state and action sets.
//! Joint states and joint actions are flattened with a mixed-radix
//! [`JointIndex`] (agent 0 is the least significant digit). Dynamics are either
//! an explicit table or the path-network family built in [`path`].

mod features;
pub mod path;

pub use features::FeatureMap;
pub use path::{build_path_env, PathNetworkSpec};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use path::PathDynamics;

/// Probability and normalization tolerance for transition rows and ζ.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("path network contains a cycle through node {0}")]
    Cyclic(String),
    #[error("destination is unreachable from node {0}")]
    Unreachable(String),
    #[error("start position {index} is out of range (network has {nodes} nodes)")]
    StartOutOfRange { index: usize, nodes: usize },
    #[error("expected {expected} start positions, got {got}")]
    StartCount { expected: usize, got: usize },
    #[error("invalid path network: {0}")]
    InvalidSpec(String),
    #[error("invalid environment table: {0}")]
    InvalidTable(String),
    #[error("discount must lie in (0, 1), got {0}")]
    Discount(f64),
    #[error("index {index} out of range for {what} (size {size})")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },
}

/// Mixed-radix flattening of a product of finite sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointIndex {
    radices: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl JointIndex {
    pub fn new(radices: Vec<usize>) -> Self {
        let mut strides = Vec::with_capacity(radices.len());
        let mut size = 1usize;
        for &r in &radices {
            assert!(r >= 1, "every factor needs at least one element");
            strides.push(size);
            size = size
                .checked_mul(r)
                .expect("joint space size overflows usize");
        }
        Self {
            radices,
            strides,
            size,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn encode(&self, digits: &[usize]) -> usize {
        debug_assert_eq!(digits.len(), self.radices.len());
        digits.iter().zip(&self.strides).map(|(&d, &s)| d * s).sum()
    }

    pub fn decode_into(&self, mut index: usize, out: &mut [usize]) {
        for (o, &r) in out.iter_mut().zip(&self.radices) {
            *o = index % r;
            index /= r;
        }
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.radices.len()];
        self.decode_into(index, &mut out);
        out
    }

    /// Digit of factor `i` in `index`.
    pub fn digit(&self, index: usize, i: usize) -> usize {
        (index / self.strides[i]) % self.radices[i]
    }

    /// Replaces digit `i` of `index` with `value`.
    pub fn with_digit(&self, index: usize, i: usize, value: usize) -> usize {
        index - self.digit(index, i) * self.strides[i] + value * self.strides[i]
    }
}

/// Explicit transition and reward tables over flat (s, a) indices.
#[derive(Clone, Debug)]
pub(crate) struct TabularDynamics {
    /// Row `s * |A| + a` lists (s', P(s'|s,a)).
    transitions: Vec<Vec<(usize, f64)>>,
    /// Entry `(s * |A| + a) * N + i` is r_i(s, a).
    rewards: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) enum Dynamics {
    Tabular(TabularDynamics),
    Path(PathDynamics),
}

/// A finite networked MDP (without the communication graph, see [`crate::comm`]).
#[derive(Clone, Debug)]
pub struct EnvModel {
    num_agents: usize,
    states: JointIndex,
    actions: JointIndex,
    init_dist: Vec<(usize, f64)>,
    gamma: f64,
    reward_bound: f64,
    dynamics: Dynamics,
}

/// Serializable description of an environment, used in result metadata and
/// to load generic tabular problems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvDescription {
    Path {
        spec: PathNetworkSpec,
        num_agents: usize,
        gamma: f64,
    },
    Tabular {
        local_states: Vec<usize>,
        local_actions: Vec<usize>,
        gamma: f64,
        init: Vec<(usize, f64)>,
        /// One row per flat (s, a) index.
        transitions: Vec<Vec<(usize, f64)>>,
        /// One length-N reward vector per flat (s, a) index.
        rewards: Vec<Vec<f64>>,
    },
}

impl EnvModel {
    /// Builds a tabular environment, validating every transition row, the
    /// reward table shape and ζ.
    pub fn tabular(
        local_states: Vec<usize>,
        local_actions: Vec<usize>,
        gamma: f64,
        init: Vec<(usize, f64)>,
        transitions: Vec<Vec<(usize, f64)>>,
        rewards: Vec<Vec<f64>>,
    ) -> Result<Self, EnvError> {
        let n = local_states.len();
        if n == 0 || local_actions.len() != n {
            return Err(EnvError::InvalidTable(format!(
                "{} local state spaces but {} local action spaces",
                n,
                local_actions.len()
            )));
        }
        if local_states.iter().chain(&local_actions).any(|&k| k == 0) {
            return Err(EnvError::InvalidTable("empty local space".into()));
        }
        check_discount(gamma)?;
        let states = JointIndex::new(local_states);
        let actions = JointIndex::new(local_actions);
        let pairs = states.size() * actions.size();
        if transitions.len() != pairs || rewards.len() != pairs {
            return Err(EnvError::InvalidTable(format!(
                "expected {pairs} state-action rows, got {} transition rows and {} reward rows",
                transitions.len(),
                rewards.len()
            )));
        }
        for (z, row) in transitions.iter().enumerate() {
            check_distribution(row, states.size(), &format!("transition row {z}"))?;
        }
        let mut flat = Vec::with_capacity(pairs * n);
        let mut bound = 0.0f64;
        for (z, r) in rewards.iter().enumerate() {
            if r.len() != n || r.iter().any(|v| !v.is_finite()) {
                return Err(EnvError::InvalidTable(format!(
                    "reward row {z} must hold {n} finite values"
                )));
            }
            bound = r.iter().fold(bound, |b, v| b.max(v.abs()));
            flat.extend_from_slice(r);
        }
        check_distribution(&init, states.size(), "initial distribution")?;
        Ok(Self {
            num_agents: n,
            states,
            actions,
            init_dist: init,
            gamma,
            reward_bound: bound,
            dynamics: Dynamics::Tabular(TabularDynamics {
                transitions,
                rewards: flat,
            }),
        })
    }

    pub(crate) fn from_parts(
        num_agents: usize,
        states: JointIndex,
        actions: JointIndex,
        init_dist: Vec<(usize, f64)>,
        gamma: f64,
        reward_bound: f64,
        dynamics: Dynamics,
    ) -> Self {
        Self {
            num_agents,
            states,
            actions,
            init_dist,
            gamma,
            reward_bound,
            dynamics,
        }
    }

    pub fn from_description(desc: &EnvDescription) -> Result<Self, EnvError> {
        match desc {
            EnvDescription::Path {
                spec,
                num_agents,
                gamma,
            } => build_path_env(spec, *num_agents, *gamma),
            EnvDescription::Tabular {
                local_states,
                local_actions,
                gamma,
                init,
                transitions,
                rewards,
            } => Self::tabular(
                local_states.clone(),
                local_actions.clone(),
                *gamma,
                init.clone(),
                transitions.clone(),
                rewards.clone(),
            ),
        }
    }

    pub fn description(&self) -> EnvDescription {
        match &self.dynamics {
            Dynamics::Path(p) => EnvDescription::Path {
                spec: p.spec().clone(),
                num_agents: self.num_agents,
                gamma: self.gamma,
            },
            Dynamics::Tabular(t) => EnvDescription::Tabular {
                local_states: self.states.radices().to_vec(),
                local_actions: self.actions.radices().to_vec(),
                gamma: self.gamma,
                init: self.init_dist.clone(),
                transitions: t.transitions.clone(),
                rewards: t
                    .rewards
                    .chunks(self.num_agents)
                    .map(<[f64]>::to_vec)
                    .collect(),
            },
        }
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// R₀: a uniform bound on |r_i(z)|.
    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    pub fn states(&self) -> &JointIndex {
        &self.states
    }

    pub fn actions(&self) -> &JointIndex {
        &self.actions
    }

    pub fn num_states(&self) -> usize {
        self.states.size()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.size()
    }

    pub fn num_local_actions(&self, agent: usize) -> usize {
        self.actions.radices()[agent]
    }

    /// ζ as sparse (state, probability) pairs.
    pub fn init_dist(&self) -> &[(usize, f64)] {
        &self.init_dist
    }

    pub fn path_dynamics(&self) -> Option<&PathDynamics> {
        match &self.dynamics {
            Dynamics::Path(p) => Some(p),
            Dynamics::Tabular(_) => None,
        }
    }

    pub fn check_state(&self, s: usize) -> Result<(), EnvError> {
        check_index("joint state", s, self.num_states())
    }

    pub fn check_action(&self, a: usize) -> Result<(), EnvError> {
        check_index("joint action", a, self.num_actions())
    }

    /// Calls `f(s', P(s'|s,a))` for every successor with positive mass.
    pub fn for_each_transition(&self, s: usize, a: usize, mut f: impl FnMut(usize, f64)) {
        match &self.dynamics {
            Dynamics::Tabular(t) => {
                for &(next, p) in &t.transitions[s * self.actions.size() + a] {
                    f(next, p);
                }
            }
            Dynamics::Path(p) => f(p.next_state(&self.states, &self.actions, s, a), 1.0),
        }
    }

    pub fn transitions(&self, s: usize, a: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.for_each_transition(s, a, |n, p| out.push((n, p)));
        out
    }

    /// Writes r_1(s,a), …, r_N(s,a) into `out`.
    pub fn rewards_into(&self, s: usize, a: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_agents);
        match &self.dynamics {
            Dynamics::Tabular(t) => {
                let base = (s * self.actions.size() + a) * self.num_agents;
                out.copy_from_slice(&t.rewards[base..base + self.num_agents]);
            }
            Dynamics::Path(p) => p.rewards(&self.states, &self.actions, s, a, out),
        }
    }

    pub fn rewards(&self, s: usize, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_agents];
        self.rewards_into(s, a, &mut out);
        out
    }

    /// r̄(s,a) = (1/N) Σᵢ rᵢ(s,a).
    pub fn mean_reward(&self, s: usize, a: usize) -> f64 {
        let r = self.rewards(s, a);
        r.iter().sum::<f64>() / self.num_agents as f64
    }

    /// Partitions agent `agent`'s local actions at joint state `s` into groups
    /// with identical effect on transitions and rewards, whatever the other
    /// agents do. Tabular environments report singleton groups.
    pub fn local_action_classes(&self, s: usize, agent: usize) -> Vec<Vec<usize>> {
        match &self.dynamics {
            Dynamics::Path(p) => {
                p.action_classes(self.states.digit(s, agent), self.num_local_actions(agent))
            }
            Dynamics::Tabular(_) => (0..self.num_local_actions(agent))
                .map(|a| vec![a])
                .collect(),
        }
    }

    /// Draws s' ~ P(·|s,a) and returns it with the reward vector r(s,a).
    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (usize, Vec<f64>) {
        let rewards = self.rewards(s, a);
        let next = match &self.dynamics {
            Dynamics::Path(p) => p.next_state(&self.states, &self.actions, s, a),
            Dynamics::Tabular(t) => sample_row(&t.transitions[s * self.actions.size() + a], rng),
        };
        (next, rewards)
    }

    /// Draws s₀ ~ ζ.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_row(&self.init_dist, rng)
    }

    /// Enumerates every (s, a) and checks the row-sum, nonnegativity and
    /// reward-bound invariants. Returns the first violation found.
    pub fn validate(&self) -> Result<(), EnvError> {
        check_distribution(&self.init_dist, self.num_states(), "initial distribution")?;
        let mut r = vec![0.0; self.num_agents];
        for s in 0..self.num_states() {
            for a in 0..self.num_actions() {
                let row = self.transitions(s, a);
                check_distribution(&row, self.num_states(), &format!("transition ({s},{a})"))?;
                self.rewards_into(s, a, &mut r);
                if r.iter().any(|v| v.abs() > self.reward_bound + PROB_TOL) {
                    return Err(EnvError::InvalidTable(format!(
                        "reward at ({s},{a}) exceeds bound {}",
                        self.reward_bound
                    )));
                }
            }
        }
        Ok(())
    }
}

fn sample_row<R: Rng + ?Sized>(row: &[(usize, f64)], rng: &mut R) -> usize {
    if row.len() == 1 {
        return row[0].0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(s, p) in row {
        acc += p;
        if u < acc {
            return s;
        }
    }
    row.last().map(|&(s, _)| s).expect("empty distribution row")
}

fn check_index(what: &'static str, index: usize, size: usize) -> Result<(), EnvError> {
    if index < size {
        Ok(())
    } else {
        Err(EnvError::Index { what, index, size })
    }
}

pub(crate) fn check_discount(gamma: f64) -> Result<(), EnvError> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(EnvError::Discount(gamma))
    }
}

fn check_distribution(row: &[(usize, f64)], size: usize, what: &str) -> Result<(), EnvError> {
    if row.is_empty() {
        return Err(EnvError::InvalidTable(format!("{what} is empty")));
    }
    let mut total = 0.0;
    for &(s, p) in row {
        if s >= size {
            return Err(EnvError::InvalidTable(format!(
                "{what} targets state {s} of {size}"
            )));
        }
        if !(p >= 0.0) || !p.is_finite() {
            return Err(EnvError::InvalidTable(format!(
                "{what} has invalid mass {p}"
            )));
        }
        total += p;
    }
    if (total - 1.0).abs() > PROB_TOL {
        return Err(EnvError::InvalidTable(format!("{what} sums to {total}")));
    }
    Ok(())
}
