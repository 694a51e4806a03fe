//! Over-parameterized two-layer ReLU networks for the critic and the actors.
//!
//! Parameters are flat `f64` vectors made of length-`d` blocks. A critic
//! parameter W_i has m·N blocks; blocks `j*m .. (j+1)*m` (the j-th *slab*)
//! act on agent j's feature x_j. An actor parameter θ_j has m blocks and is
//! initialized to slab j of the shared initialization W'(0).
//!
//! All networks share the output scale (mN)^{-p} and the frozen signs b_r.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack allowed before a projection engages, so that projecting a
/// projected point is a no-op.
const PROJECTION_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty action set")]
    EmptyActionSet,
    #[error("critic slab {agent} does not match the policy parameter of agent {agent}")]
    ParameterMismatch { agent: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Neurons per agent block.
    pub m: usize,
    /// Output scaling exponent, 1/2 < p < 1.
    pub p: f64,
    /// Projection radius scale B; each ball has radius B/√N.
    pub radius: f64,
    /// Feature dimension.
    pub d: usize,
    pub num_agents: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            m: 256,
            p: 0.75,
            radius: 5.0,
            d: 32,
            num_agents: 1,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.p > 0.5 && self.p < 1.0) {
            return Err(NeuralError::Config(format!(
                "p must lie in (1/2, 1), got {}",
                self.p
            )));
        }
        if self.m == 0 || self.d == 0 || self.num_agents == 0 {
            return Err(NeuralError::Config("m, d and N must be positive".into()));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(NeuralError::Config(format!(
                "B must be positive, got {}",
                self.radius
            )));
        }
        Ok(())
    }

    /// mN, the number of hidden units of a critic.
    pub fn width(&self) -> usize {
        self.m * self.num_agents
    }

    /// (mN)^{-p}.
    pub fn scale(&self) -> f64 {
        (self.width() as f64).powf(-self.p)
    }

    pub fn critic_len(&self) -> usize {
        self.width() * self.d
    }

    pub fn actor_len(&self) -> usize {
        self.m * self.d
    }

    /// B/√N.
    pub fn ball_radius(&self) -> f64 {
        self.radius / (self.num_agents as f64).sqrt()
    }

    /// (mN)^{1/2-p}: the bound on ‖∇Q̂‖₂ and on the norm of ψ_i.
    pub fn grad_bound(&self) -> f64 {
        (self.width() as f64).powf(0.5 - self.p)
    }
}

/// The frozen initialization W'(0) and signs b shared by every agent.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedInit {
    weights: Vec<f64>,
    signs: Vec<f64>,
}

impl SharedInit {
    /// Blocks i.i.d. N(0, I_d/d), signs uniform on {−1, +1}.
    pub fn sample(cfg: &NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let sd = 1.0 / (cfg.d as f64).sqrt();
        let weights = (0..cfg.critic_len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect();
        rng.set_stream(2);
        let signs = (0..cfg.width())
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Self { weights, signs }
    }

    pub fn from_parts(weights: Vec<f64>, signs: Vec<f64>) -> Self {
        Self { weights, signs }
    }

    /// W'(0) as a flat vector of m·N blocks.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }
}

/// Agent-owned critic parameter W_i.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticParams {
    pub agent: usize,
    pub weights: Vec<f64>,
}

/// Agent-owned policy parameter θ_i.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub agent: usize,
    pub weights: Vec<f64>,
}

/// Configuration plus shared initialization: everything needed to evaluate
/// the critic and actor networks.
#[derive(Clone, Debug)]
pub struct Network {
    cfg: NetConfig,
    init: SharedInit,
}

/// Sum of `f(a_k, b_k)` over four interleaved partial sums, which lets the
/// compiler keep independent accumulators in vector registers.
#[inline]
pub(crate) fn sum4(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += f(x[k], y[k]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += f(*x, *y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    sum4(a, b, |x, y| x * y)
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), NeuralError> {
    if expected == got {
        Ok(())
    } else {
        Err(NeuralError::Dimension {
            what,
            expected,
            got,
        })
    }
}

impl Network {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self, NeuralError> {
        cfg.validate()?;
        let init = SharedInit::sample(&cfg, seed);
        Ok(Self { cfg, init })
    }

    pub fn from_parts(cfg: NetConfig, init: SharedInit) -> Result<Self, NeuralError> {
        cfg.validate()?;
        check_len("initial weights", cfg.critic_len(), init.weights.len())?;
        check_len("signs", cfg.width(), init.signs.len())?;
        Ok(Self { cfg, init })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn init(&self) -> &SharedInit {
        &self.init
    }

    /// Slab j of W'(0), which is also θ_j(0).
    pub fn initial_slab(&self, j: usize) -> &[f64] {
        let len = self.cfg.actor_len();
        &self.init.weights[j * len..(j + 1) * len]
    }

    pub fn initial_critic(&self, agent: usize) -> CriticParams {
        CriticParams {
            agent,
            weights: self.init.weights.clone(),
        }
    }

    pub fn initial_policy(&self, agent: usize) -> PolicyParams {
        PolicyParams {
            agent,
            weights: self.initial_slab(agent).to_vec(),
        }
    }

    fn check_critic(&self, w: &[f64], x: &[f64]) -> Result<(), NeuralError> {
        check_len("critic parameter", self.cfg.critic_len(), w.len())?;
        check_len("joint features", self.cfg.num_agents * self.cfg.d, x.len())
    }

    /// Q̂(z; W) = (mN)^{-p} Σ_r b_r ReLU(W_rᵀ x_{slab(r)}), with `x` the
    /// concatenated features x_1 … x_N of z.
    pub fn q_value(&self, w: &[f64], x: &[f64]) -> Result<f64, NeuralError> {
        self.check_critic(w, x)?;
        Ok(self.q_value_unchecked(w, x))
    }

    pub(crate) fn q_value_unchecked(&self, w: &[f64], x: &[f64]) -> f64 {
        let d = self.cfg.d;
        let m = self.cfg.m;
        let mut acc = 0.0;
        for (r, (block, b)) in w.chunks_exact(d).zip(&self.init.signs).enumerate() {
            let xj = &x[(r / m) * d..(r / m + 1) * d];
            let u = dot(block, xj);
            if u > 0.0 {
                acc += b * u;
            }
        }
        self.cfg.scale() * acc
    }

    /// Contribution of slab j to Q̂: (mN)^{-p} Σ_{r ∈ slab j} b_r ReLU(W_rᵀ x_j).
    /// Q̂(z; W) is the sum of these over j, so a table of slab values over
    /// (s, a_j) gives Q̂ on every joint action.
    pub fn slab_value(&self, w: &[f64], j: usize, xj: &[f64]) -> f64 {
        let d = self.cfg.d;
        let len = self.cfg.actor_len();
        let signs = &self.init.signs[j * self.cfg.m..(j + 1) * self.cfg.m];
        let acc: f64 = w[j * len..(j + 1) * len]
            .chunks_exact(d)
            .zip(signs)
            .map(|(block, b)| {
                let u = dot(block, xj);
                if u > 0.0 {
                    b * u
                } else {
                    0.0
                }
            })
            .sum();
        self.cfg.scale() * acc
    }

    /// ∇_W Q̂(z; W): block r is (mN)^{-p} b_r 𝟙{W_rᵀx > 0} x.
    pub fn q_grad(&self, w: &[f64], x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        self.check_critic(w, x)?;
        let mut out = vec![0.0; w.len()];
        self.add_q_grad(w, x, 1.0, &mut out);
        Ok(out)
    }

    /// `out += coef · ∇_W Q̂(z; W)` evaluated at `w`.
    pub(crate) fn add_q_grad(&self, w: &[f64], x: &[f64], coef: f64, out: &mut [f64]) {
        let d = self.cfg.d;
        let m = self.cfg.m;
        let c = coef * self.cfg.scale();
        for (r, ((block, b), o)) in w
            .chunks_exact(d)
            .zip(&self.init.signs)
            .zip(out.chunks_exact_mut(d))
            .enumerate()
        {
            let xj = &x[(r / m) * d..(r / m + 1) * d];
            if dot(block, xj) > 0.0 {
                let k = c * b;
                for (oi, xi) in o.iter_mut().zip(xj) {
                    *oi += k * xi;
                }
            }
        }
    }

    /// Q̂(z; W) and Q̂(z'; W) in one pass over W, recording the activation
    /// pattern at z.
    pub(crate) fn q_pair_masked(
        &self,
        w: &[f64],
        x: &[f64],
        x_next: &[f64],
        mask: &mut [bool],
    ) -> (f64, f64) {
        let d = self.cfg.d;
        let m = self.cfg.m;
        let (mut acc, mut acc_next) = (0.0, 0.0);
        for (r, ((block, b), on)) in w
            .chunks_exact(d)
            .zip(&self.init.signs)
            .zip(mask.iter_mut())
            .enumerate()
        {
            let slab = (r / m) * d..(r / m + 1) * d;
            let u = dot(block, &x[slab.clone()]);
            let v = dot(block, &x_next[slab]);
            *on = u > 0.0;
            if *on {
                acc += b * u;
            }
            if v > 0.0 {
                acc_next += b * v;
            }
        }
        (self.cfg.scale() * acc, self.cfg.scale() * acc_next)
    }

    /// out = P(Σ_j a_j W_j + coef · ∇_W Q̂(z; W)), with the gradient taken at
    /// the activation pattern `mask`. Works slab by slab so each slab stays
    /// in cache across mixing, gradient and projection.
    pub(crate) fn mix_step_project(
        &self,
        weights: &[(usize, f64)],
        params: &[Vec<f64>],
        mask: &[bool],
        x: &[f64],
        coef: f64,
        out: &mut [f64],
    ) {
        let d = self.cfg.d;
        let m = self.cfg.m;
        let len = self.cfg.actor_len();
        let c = coef * self.cfg.scale();
        let radius = self.cfg.ball_radius();
        for (j, (slab, init)) in out
            .chunks_exact_mut(len)
            .zip(self.init.weights.chunks_exact(len))
            .enumerate()
        {
            let range = j * len..(j + 1) * len;
            match weights.split_first() {
                Some((&(first, a0), rest)) => {
                    for (o, w) in slab.iter_mut().zip(&params[first][range.clone()]) {
                        *o = a0 * w;
                    }
                    for &(k, a) in rest {
                        for (o, w) in slab.iter_mut().zip(&params[k][range.clone()]) {
                            *o += a * w;
                        }
                    }
                }
                None => slab.fill(0.0),
            }
            let xj = &x[j * d..(j + 1) * d];
            let signs = &self.init.signs[j * m..(j + 1) * m];
            let on = &mask[j * m..(j + 1) * m];
            for ((o, b), &active) in slab.chunks_exact_mut(d).zip(signs).zip(on) {
                if active {
                    let k = c * b;
                    for (oi, xi) in o.iter_mut().zip(xj) {
                        *oi += k * xi;
                    }
                }
            }
            project_ball(slab, init, radius);
        }
    }

    /// Local linearization at W'(0): (mN)^{-p} Σ_r b_r 𝟙{W'_r(0)ᵀx > 0} W_rᵀ x.
    pub fn q_value_linearized(&self, w: &[f64], x: &[f64]) -> Result<f64, NeuralError> {
        self.check_critic(w, x)?;
        let d = self.cfg.d;
        let m = self.cfg.m;
        let mut acc = 0.0;
        for (r, ((block, init), b)) in w
            .chunks_exact(d)
            .zip(self.init.weights.chunks_exact(d))
            .zip(&self.init.signs)
            .enumerate()
        {
            let xj = &x[(r / m) * d..(r / m + 1) * d];
            if dot(init, xj) > 0.0 {
                acc += b * dot(block, xj);
            }
        }
        Ok(self.cfg.scale() * acc)
    }

    /// Q̂₀(z) = Q̂(z; W'(0)).
    pub fn q_value_init(&self, x: &[f64]) -> Result<f64, NeuralError> {
        self.q_value(&self.init.weights, x)
    }

    fn check_actor(&self, theta: &[f64], feats: &[f64]) -> Result<usize, NeuralError> {
        check_len("policy parameter", self.cfg.actor_len(), theta.len())?;
        if feats.is_empty() {
            return Err(NeuralError::EmptyActionSet);
        }
        if feats.len() % self.cfg.d != 0 {
            return Err(NeuralError::Dimension {
                what: "action features",
                expected: self.cfg.d * (feats.len() / self.cfg.d + 1),
                got: feats.len(),
            });
        }
        Ok(feats.len() / self.cfg.d)
    }

    fn actor_signs(&self, agent: usize) -> &[f64] {
        &self.init.signs[agent * self.cfg.m..(agent + 1) * self.cfg.m]
    }

    /// f_i(s, a; θ) = (mN)^{-p} Σ_{r<m} b_{im+r} ReLU(θ_rᵀ x_a) for each local
    /// action; `feats` holds x_a for every local action, concatenated.
    pub fn logits(
        &self,
        agent: usize,
        theta: &[f64],
        feats: &[f64],
    ) -> Result<Vec<f64>, NeuralError> {
        self.check_actor(theta, feats)?;
        Ok(self.logits_unchecked(agent, theta, feats))
    }

    fn logits_unchecked(&self, agent: usize, theta: &[f64], feats: &[f64]) -> Vec<f64> {
        let d = self.cfg.d;
        let signs = self.actor_signs(agent);
        feats
            .chunks_exact(d)
            .map(|x| {
                let acc: f64 = theta
                    .chunks_exact(d)
                    .zip(signs)
                    .map(|(block, b)| {
                        let u = dot(block, x);
                        if u > 0.0 {
                            b * u
                        } else {
                            0.0
                        }
                    })
                    .sum();
                self.cfg.scale() * acc
            })
            .collect()
    }

    /// π_i(·|s; θ): softmax of the logits over the local actions.
    pub fn policy_probs(
        &self,
        agent: usize,
        theta: &[f64],
        feats: &[f64],
    ) -> Result<Vec<f64>, NeuralError> {
        self.check_actor(theta, feats)?;
        Ok(softmax(&self.logits_unchecked(agent, theta, feats)))
    }

    /// ψ_i(s, a; θ): block r is (mN)^{-p} b_{im+r} 𝟙{θ_rᵀx > 0} x.
    pub fn psi(&self, agent: usize, theta: &[f64], x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        check_len("feature", self.cfg.d, x.len())?;
        self.check_actor(theta, x)?;
        let mut out = vec![0.0; theta.len()];
        self.add_psi(agent, theta, x, 1.0, &mut out);
        Ok(out)
    }

    pub(crate) fn add_psi(
        &self,
        agent: usize,
        theta: &[f64],
        x: &[f64],
        coef: f64,
        out: &mut [f64],
    ) {
        let d = self.cfg.d;
        let c = coef * self.cfg.scale();
        for ((block, b), o) in theta
            .chunks_exact(d)
            .zip(self.actor_signs(agent))
            .zip(out.chunks_exact_mut(d))
        {
            if dot(block, x) > 0.0 {
                let k = c * b;
                for (oi, xi) in o.iter_mut().zip(x) {
                    *oi += k * xi;
                }
            }
        }
    }

    /// ∇_θ log π_i(a|s; θ) = ψ_i(s,a) − E_{a'~π_i}[ψ_i(s,a')].
    pub fn log_policy_grad(
        &self,
        agent: usize,
        theta: &[f64],
        feats: &[f64],
        action: usize,
    ) -> Result<Vec<f64>, NeuralError> {
        let n = self.check_actor(theta, feats)?;
        if action >= n {
            return Err(NeuralError::Dimension {
                what: "action index",
                expected: n,
                got: action,
            });
        }
        let probs = softmax(&self.logits_unchecked(agent, theta, feats));
        let mut out = vec![0.0; theta.len()];
        self.add_log_policy_grad(agent, theta, feats, &probs, action, 1.0, &mut out);
        Ok(out)
    }

    /// `out += coef · ψ̄_i(s, a)` given precomputed action probabilities.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn add_log_policy_grad(
        &self,
        agent: usize,
        theta: &[f64],
        feats: &[f64],
        probs: &[f64],
        action: usize,
        coef: f64,
        out: &mut [f64],
    ) {
        let d = self.cfg.d;
        for (a, (x, &p)) in feats.chunks_exact(d).zip(probs).enumerate() {
            let w = if a == action { 1.0 - p } else { -p };
            if w != 0.0 {
                self.add_psi(agent, theta, x, coef * w, out);
            }
        }
    }

    /// Projects W onto S^W_B in place: each slab's deviation from W'(0) is
    /// radially shrunk to at most B/√N. Returns whether any slab moved.
    pub fn project_critic(&self, w: &mut [f64]) -> bool {
        let len = self.cfg.actor_len();
        let mut moved = false;
        for (slab, init) in w
            .chunks_exact_mut(len)
            .zip(self.init.weights.chunks_exact(len))
        {
            moved |= project_ball(slab, init, self.cfg.ball_radius());
        }
        moved
    }

    /// Projects θ_i onto S^θ_{i,B}: ‖θ_i − θ_i(0)‖ ≤ B/√N. Returns whether
    /// θ_i moved.
    pub fn project_actor(&self, agent: usize, theta: &mut [f64]) -> bool {
        project_ball(theta, self.initial_slab(agent), self.cfg.ball_radius())
    }

    /// Largest slab deviation ‖W_slab − W'(0)_slab‖ of a critic parameter.
    pub fn critic_deviation(&self, w: &[f64]) -> f64 {
        let len = self.cfg.actor_len();
        w.chunks_exact(len)
            .zip(self.init.weights.chunks_exact(len))
            .map(|(a, b)| distance(a, b))
            .fold(0.0, f64::max)
    }

    pub fn actor_deviation(&self, agent: usize, theta: &[f64]) -> f64 {
        distance(theta, self.initial_slab(agent))
    }

    /// Compares ∇_W Â_i(z; W) with ∇_θ log π_θ(a|s) at matched parameters.
    ///
    /// The advantage gradient is evaluated by enumerating every joint action
    /// a' at state s: ∇Q̂(s,a) − Σ_{a'} π(a'|s) ∇Q̂(s,a'). The score side
    /// stacks ψ̄_j(s, a_j; θ_j). `local_feats[j]` holds agent j's features for
    /// each of its local actions at s; `actions` is the taken joint action.
    /// Returns the largest elementwise gap.
    pub fn advantage_grad_check(
        &self,
        critic: &[f64],
        thetas: &[Vec<f64>],
        local_feats: &[Vec<f64>],
        actions: &[usize],
    ) -> Result<f64, NeuralError> {
        let n = self.cfg.num_agents;
        let d = self.cfg.d;
        let len = self.cfg.actor_len();
        check_len("critic parameter", self.cfg.critic_len(), critic.len())?;
        check_len("policy parameters", n, thetas.len())?;
        check_len("local features", n, local_feats.len())?;
        check_len("joint action", n, actions.len())?;
        for (j, theta) in thetas.iter().enumerate() {
            if theta.as_slice() != &critic[j * len..(j + 1) * len] {
                return Err(NeuralError::ParameterMismatch { agent: j });
            }
        }
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|j| self.policy_probs(j, &thetas[j], &local_feats[j]))
            .collect::<Result<_, _>>()?;
        let counts: Vec<usize> = local_feats.iter().map(|f| f.len() / d).collect();

        let joint_x = |acts: &[usize]| -> Vec<f64> {
            acts.iter()
                .enumerate()
                .flat_map(|(j, &a)| local_feats[j][a * d..(a + 1) * d].iter().copied())
                .collect()
        };
        let mut adv = vec![0.0; critic.len()];
        self.add_q_grad(critic, &joint_x(actions), 1.0, &mut adv);
        let total: usize = counts.iter().product();
        let mut acts = vec![0usize; n];
        for k in 0..total {
            let mut rest = k;
            let mut p = 1.0;
            for j in 0..n {
                acts[j] = rest % counts[j];
                rest /= counts[j];
                p *= probs[j][acts[j]];
            }
            self.add_q_grad(critic, &joint_x(&acts), -p, &mut adv);
        }

        let mut gap: f64 = 0.0;
        for j in 0..n {
            let score = self.log_policy_grad(j, &thetas[j], &local_feats[j], actions[j])?;
            for (x, y) in adv[j * len..(j + 1) * len].iter().zip(&score) {
                gap = gap.max((x - y).abs());
            }
        }
        Ok(gap)
    }
}

/// Numerically stable softmax (the max logit is subtracted first).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&f| (f - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    sum4(a, b, |x, y| (x - y) * (x - y)).sqrt()
}

fn project_ball(v: &mut [f64], center: &[f64], radius: f64) -> bool {
    let dist = distance(v, center);
    let k = if dist == f64::INFINITY {
        // squares overflowed: rescale so huge finite steps still land on the boundary
        let scale = v
            .iter()
            .zip(center)
            .map(|(x, c)| (x - c).abs())
            .fold(0.0, f64::max);
        (radius / scale) / sum4(v, center, |x, c| ((x - c) / scale).powi(2)).sqrt()
    } else if dist > radius * (1.0 + PROJECTION_SLACK) {
        radius / dist
    } else {
        return false;
    };
    for (x, c) in v.iter_mut().zip(center) {
        *x = c + (*x - c) * k;
    }
    true
}
