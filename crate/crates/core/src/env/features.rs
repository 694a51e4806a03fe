use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::EnvModel;

/// Largest table (in f64 entries) that [`FeatureMap::for_env`] precomputes.
pub const FEATURE_CACHE_LIMIT: usize = 4_000_000;

/// Unit-norm features x_i = φ_i(s, a_i).
///
/// Each vector is a standard-normal draw from a ChaCha stream keyed by
/// `(seed, i, s, a_i)`, normalized to Euclidean length one. Small problems
/// keep every vector in a table; large ones regenerate on demand.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    dim: usize,
    seed: u64,
    num_states: usize,
    num_actions: usize,
    table: Option<Vec<f64>>,
}

impl FeatureMap {
    /// A generator with no cache.
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "feature dimension must be positive");
        Self {
            dim,
            seed,
            num_states: 0,
            num_actions: 0,
            table: None,
        }
    }

    /// A generator sized for `env`, caching every vector when the table fits
    /// in [`FEATURE_CACHE_LIMIT`] entries.
    pub fn for_env(env: &EnvModel, dim: usize, seed: u64) -> Self {
        let mut map = Self::new(dim, seed);
        let n = env.num_agents();
        let a_max = env.actions().radices().iter().copied().max().unwrap_or(1);
        let entries = n
            .checked_mul(env.num_states())
            .and_then(|v| v.checked_mul(a_max))
            .and_then(|v| v.checked_mul(dim));
        if let Some(entries) = entries.filter(|&e| e <= FEATURE_CACHE_LIMIT) {
            map.num_states = env.num_states();
            map.num_actions = a_max;
            let mut table = vec![0.0; entries];
            let block = env.num_states() * a_max * dim;
            crate::par::for_each_chunk_mut(&mut table, block, |i, agent_block| {
                for (k, out) in agent_block.chunks_mut(dim).enumerate() {
                    let (s, a) = (k / a_max, k % a_max);
                    map.generate(i, s, a, out);
                }
            });
            map.table = Some(table);
        }
        map
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_cached(&self) -> bool {
        self.table.is_some()
    }

    /// Writes φ_agent(s, a) into `out` (length `dim`).
    pub fn feature_into(&self, agent: usize, s: usize, a: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        if let Some(table) = &self.table {
            if s < self.num_states && a < self.num_actions {
                let k = ((agent * self.num_states + s) * self.num_actions + a) * self.dim;
                if k + self.dim <= table.len() {
                    out.copy_from_slice(&table[k..k + self.dim]);
                    return;
                }
            }
        }
        self.generate(agent, s, a, out);
    }

    pub fn feature(&self, agent: usize, s: usize, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.feature_into(agent, s, a, &mut out);
        out
    }

    /// Concatenated x_1(s,a_1), …, x_N(s,a_N) for joint action digits `actions`.
    pub fn joint_into(&self, s: usize, actions: &[usize], out: &mut [f64]) {
        for (i, (&a, chunk)) in actions.iter().zip(out.chunks_mut(self.dim)).enumerate() {
            self.feature_into(i, s, a, chunk);
        }
    }

    /// Features of every local action of `agent` at state `s`, concatenated.
    pub fn local_actions_into(
        &self,
        agent: usize,
        s: usize,
        num_actions: usize,
        out: &mut Vec<f64>,
    ) {
        out.resize(num_actions * self.dim, 0.0);
        for (a, chunk) in out.chunks_mut(self.dim).enumerate() {
            self.feature_into(agent, s, a, chunk);
        }
    }

    fn generate(&self, agent: usize, s: usize, a: usize, out: &mut [f64]) {
        assert!(agent < (1 << 12) && a < (1 << 12) && (s as u64) < (1u64 << 40));
        let stream = ((agent as u64) << 52) | ((a as u64) << 40) | s as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.iter_mut().for_each(|v| *v /= norm);
    }
}
