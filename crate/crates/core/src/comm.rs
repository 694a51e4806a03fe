//! Time-varying communication graphs and doubly stochastic mixing.
//!
//! A [`CommSchedule`] cycles through a list of graphs, one mixing matrix
//! A(t) per graph. Entry `a_ij(t)` is the weight agent `i` puts on agent
//! `j`'s parameters in round `t`.

use serde::Serialize;
use thiserror::Error;

/// Row/column-sum tolerance for the doubly stochastic check.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CommError {
    #[error("edge set is not symmetric: ({0},{1}) has no reverse edge")]
    Asymmetric(usize, usize),
    #[error("edge ({0},{1}) references an agent outside 0..{2}")]
    AgentOutOfRange(usize, usize, usize),
    #[error("schedule needs at least one graph and a window of at least one round")]
    Empty,
    #[error("matrix {index} has {got} entries, expected {expected}")]
    MatrixShape {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("expected {expected} parameter vectors, got {got}")]
    AgentCount { expected: usize, got: usize },
    #[error("parameter vectors have mismatched lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("isolation needs an undirected (Metropolis) schedule")]
    NotUndirected,
}

/// Metropolis–Hastings weights for a symmetric edge set on `n` agents:
/// a_ij = 1/(1 + max(deg_i, deg_j)) on edges and a_ii = 1 − Σ_{j≠i} a_ij.
/// Self-loops in the input are ignored. Returns a row-major n×n matrix.
pub fn metropolis_weights(n: usize, edges: &[(usize, usize)]) -> Result<Vec<f64>, CommError> {
    let mut adj = vec![false; n * n];
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(CommError::AgentOutOfRange(i, j, n));
        }
        if i != j {
            adj[i * n + j] = true;
        }
    }
    for i in 0..n {
        for j in 0..n {
            if adj[i * n + j] && !adj[j * n + i] {
                return Err(CommError::Asymmetric(i, j));
            }
        }
    }
    let deg: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| adj[i * n + j]).count())
        .collect();
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if adj[i * n + j] {
                let a = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
                w[i * n + j] = a;
                off += a;
            }
        }
        w[i * n + i] = 1.0 - off;
    }
    Ok(w)
}

#[derive(Clone, Debug, PartialEq)]
enum Origin {
    /// Undirected edge lists (each pair stored once) with Metropolis weights.
    Undirected(Vec<Vec<(usize, usize)>>),
    Matrices,
}

/// A periodic sequence of mixing matrices with connectivity window D.
#[derive(Clone, Debug, PartialEq)]
pub struct CommSchedule {
    num_agents: usize,
    window: usize,
    min_weight: f64,
    matrices: Vec<Vec<f64>>,
    /// Per graph, per agent: (j, a_ij) for every nonzero entry including j = i.
    neighbors: Vec<Vec<Vec<(usize, f64)>>>,
    origin: Origin,
}

/// Outcome of [`CommSchedule::validate`]. Agent labels are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub doubly_stochastic: bool,
    pub max_row_error: f64,
    pub max_col_error: f64,
    pub min_weight_ok: bool,
    pub min_weight: f64,
    pub window: usize,
    pub connected: bool,
    /// First round t whose window [t, t+D) has a union graph that is not strongly connected.
    pub first_violated_window: Option<usize>,
    /// Agents with no link to any other agent in any graph of the schedule.
    pub isolated_agents: Vec<usize>,
    pub messages: Vec<String>,
}

impl CommSchedule {
    /// Builds a schedule from undirected edge lists (one per round of the
    /// period), weighting each graph with [`metropolis_weights`].
    pub fn undirected(
        num_agents: usize,
        graphs: Vec<Vec<(usize, usize)>>,
        window: usize,
    ) -> Result<Self, CommError> {
        if graphs.is_empty() || window == 0 || num_agents == 0 {
            return Err(CommError::Empty);
        }
        let mut matrices = Vec::with_capacity(graphs.len());
        let mut canonical = Vec::with_capacity(graphs.len());
        for g in &graphs {
            let mut sym = Vec::with_capacity(2 * g.len());
            let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(g.len());
            for &(i, j) in g {
                if i == j {
                    continue;
                }
                let key = (i.min(j), i.max(j));
                if !pairs.contains(&key) {
                    pairs.push(key);
                    sym.push((i, j));
                    sym.push((j, i));
                }
            }
            matrices.push(metropolis_weights(num_agents, &sym)?);
            canonical.push(pairs);
        }
        Ok(Self::assemble(
            num_agents,
            matrices,
            window,
            Origin::Undirected(canonical),
        ))
    }

    /// Builds a schedule from user-supplied row-major matrices. The edge set
    /// of each round is the off-diagonal support; call [`Self::validate`] to
    /// check the connectivity and weight assumptions.
    pub fn from_matrices(
        num_agents: usize,
        matrices: Vec<Vec<f64>>,
        window: usize,
    ) -> Result<Self, CommError> {
        if matrices.is_empty() || window == 0 || num_agents == 0 {
            return Err(CommError::Empty);
        }
        for (index, m) in matrices.iter().enumerate() {
            if m.len() != num_agents * num_agents {
                return Err(CommError::MatrixShape {
                    index,
                    expected: num_agents * num_agents,
                    got: m.len(),
                });
            }
        }
        Ok(Self::assemble(
            num_agents,
            matrices,
            window,
            Origin::Matrices,
        ))
    }

    fn assemble(num_agents: usize, matrices: Vec<Vec<f64>>, window: usize, origin: Origin) -> Self {
        let n = num_agents;
        let neighbors: Vec<Vec<Vec<(usize, f64)>>> = matrices
            .iter()
            .map(|m| {
                (0..n)
                    .map(|i| {
                        (0..n)
                            .filter(|&j| m[i * n + j] != 0.0)
                            .map(|j| (j, m[i * n + j]))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let min_weight = matrices
            .iter()
            .flatten()
            .copied()
            .filter(|&w| w > 0.0)
            .fold(f64::INFINITY, f64::min);
        Self {
            num_agents,
            window,
            min_weight,
            matrices,
            neighbors,
            origin,
        }
    }

    /// The default six-agent schedule: the path 1-2-3-4-5-6 alternating with
    /// the path 2-4-6-1-3-5, D = 2.
    pub fn alternating_paths_6() -> Self {
        let path = |order: [usize; 6]| -> Vec<(usize, usize)> {
            order.windows(2).map(|w| (w[0] - 1, w[1] - 1)).collect()
        };
        Self::undirected(
            6,
            vec![path([1, 2, 3, 4, 5, 6]), path([2, 4, 6, 1, 3, 5])],
            2,
        )
        .expect("default schedule is well formed")
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn period(&self) -> usize {
        self.matrices.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// α: the smallest positive weight across the schedule.
    pub fn min_weight(&self) -> f64 {
        self.min_weight
    }

    /// Row-major A(t).
    pub fn matrix(&self, t: usize) -> &[f64] {
        &self.matrices[t % self.period()]
    }

    /// Nonzero (j, a_ij(t)) for agent `i`, including i itself when a_ii > 0.
    pub fn neighbors(&self, t: usize, i: usize) -> &[(usize, f64)] {
        &self.neighbors[t % self.period()][i]
    }

    /// Undirected edge lists when the schedule was built from graphs.
    pub fn undirected_graphs(&self) -> Option<&[Vec<(usize, usize)>]> {
        match &self.origin {
            Origin::Undirected(g) => Some(g),
            Origin::Matrices => None,
        }
    }

    /// Removes every link incident to `agents` (0-based) and reweights.
    pub fn isolate(&self, agents: &[usize]) -> Result<Self, CommError> {
        let Origin::Undirected(graphs) = &self.origin else {
            return Err(CommError::NotUndirected);
        };
        if let Some(&a) = agents.iter().find(|&&a| a >= self.num_agents) {
            return Err(CommError::AgentOutOfRange(a, a, self.num_agents));
        }
        let kept = graphs
            .iter()
            .map(|g| {
                g.iter()
                    .copied()
                    .filter(|(i, j)| !agents.contains(i) && !agents.contains(j))
                    .collect()
            })
            .collect();
        Self::undirected(self.num_agents, kept, self.window)
    }

    /// Checks double stochasticity, the α lower bound on edge weights and
    /// strong connectivity of every D-round union graph. Violations are
    /// reported, never raised.
    pub fn validate(&self) -> ValidationReport {
        let n = self.num_agents;
        let mut messages = Vec::new();
        let mut max_row: f64 = 0.0;
        let mut max_col: f64 = 0.0;
        let mut nonneg = true;
        for m in &self.matrices {
            for i in 0..n {
                let row: f64 = (0..n).map(|j| m[i * n + j]).sum();
                let col: f64 = (0..n).map(|j| m[j * n + i]).sum();
                max_row = max_row.max((row - 1.0).abs());
                max_col = max_col.max((col - 1.0).abs());
            }
            nonneg &= m.iter().all(|&w| w >= 0.0 && w.is_finite());
        }
        let doubly_stochastic = nonneg && max_row <= STOCHASTIC_TOL && max_col <= STOCHASTIC_TOL;
        if !doubly_stochastic {
            messages.push(format!(
                "not doubly stochastic (max row error {max_row:e}, max column error {max_col:e}, nonnegative: {nonneg})"
            ));
        }
        let min_weight_ok = self.min_weight > 0.0
            && self
                .matrices
                .iter()
                .flatten()
                .all(|&w| w == 0.0 || w >= self.min_weight);
        if !min_weight_ok {
            messages.push("edge weights are not bounded below by a positive α".into());
        }

        let period = self.period();
        let mut first_violated_window = None;
        for start in 0..period {
            let mut adj = vec![false; n * n];
            for dt in 0..self.window {
                let m = self.matrix(start + dt);
                for (a, &w) in adj.iter_mut().zip(m) {
                    *a |= w > 0.0;
                }
            }
            if !strongly_connected(n, &adj) {
                first_violated_window = Some(start);
                messages.push(format!(
                    "union graph over rounds {start}..{} is not strongly connected",
                    start + self.window
                ));
                break;
            }
        }
        let connected = first_violated_window.is_none();

        let isolated_agents: Vec<usize> = (0..n)
            .filter(|&i| {
                n > 1
                    && self.matrices.iter().all(|m| {
                        (0..n).all(|j| j == i || (m[i * n + j] == 0.0 && m[j * n + i] == 0.0))
                    })
            })
            .map(|i| i + 1)
            .collect();
        if !isolated_agents.is_empty() {
            messages.push(format!("isolated agents: {isolated_agents:?}"));
        }

        ValidationReport {
            passed: doubly_stochastic && min_weight_ok && connected,
            doubly_stochastic,
            max_row_error: max_row,
            max_col_error: max_col,
            min_weight_ok,
            min_weight: self.min_weight,
            window: self.window,
            connected,
            first_violated_window,
            isolated_agents,
            messages,
        }
    }

    /// One synchronous mixing round: W_i' = Σ_j a_ij(t) W_j.
    pub fn mix(&self, t: usize, params: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, CommError> {
        let len = check_params(params, self.num_agents)?;
        Ok(crate::par::map_range(self.num_agents, |i| {
            let mut out = vec![0.0; len];
            self.mix_into(t, i, params, &mut out);
            out
        }))
    }

    /// Writes agent `i`'s mixed parameters into `out`, reading only its
    /// neighbours in round `t`.
    pub fn mix_into(&self, t: usize, i: usize, params: &[Vec<f64>], out: &mut [f64]) {
        let neighbors = self.neighbors(t, i);
        let Some((&(first, a0), rest)) = neighbors.split_first() else {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        };
        for (o, w) in out.iter_mut().zip(&params[first]) {
            *o = a0 * w;
        }
        for &(j, a) in rest {
            for (o, w) in out.iter_mut().zip(&params[j]) {
                *o += a * w;
            }
        }
    }
}

fn strongly_connected(n: usize, adj: &[bool]) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let e = if forward {
                    adj[u * n + v]
                } else {
                    adj[v * n + u]
                };
                if e && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    n <= 1 || (reach(true) && reach(false))
}

fn check_params(params: &[Vec<f64>], expected: usize) -> Result<usize, CommError> {
    if params.len() != expected {
        return Err(CommError::AgentCount {
            expected,
            got: params.len(),
        });
    }
    let len = params.first().map_or(0, Vec::len);
    if let Some(p) = params.iter().find(|p| p.len() != len) {
        return Err(CommError::LengthMismatch(len, p.len()));
    }
    Ok(len)
}

/// ‖(C ⊗ I) W_tot‖₂ with C = I − (1/N)𝟙𝟙ᵀ, i.e. √(Σᵢ ‖Wᵢ − W̄‖²).
pub fn disagreement(params: &[Vec<f64>]) -> Result<f64, CommError> {
    let len = check_params(params, params.len())?;
    if params.is_empty() {
        return Ok(0.0);
    }
    let n = params.len() as f64;
    let mut mean = vec![0.0; len];
    for p in params {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let total: f64 = params
        .iter()
        .map(|p| crate::neural::sum4(p, &mean, |x, y| (x - y) * (x - y)))
        .sum();
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn metropolis_three_cycle() {
        let w = metropolis_weights(3, &[(0, 1), (1, 0), (1, 2), (2, 1), (2, 0), (0, 2)]).unwrap();
        assert!(close(&w, &[1.0 / 3.0; 9], 1e-15));
    }

    #[test]
    fn metropolis_empty_is_identity() {
        let w = metropolis_weights(3, &[]).unwrap();
        assert_eq!(w, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn metropolis_complete_graph_is_uniform() {
        let n = 5;
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        let w = metropolis_weights(n, &edges).unwrap();
        assert!(close(&w, &vec![0.2; n * n], 1e-15));
    }

    #[test]
    fn metropolis_rejects_asymmetric() {
        assert_eq!(
            metropolis_weights(3, &[(0, 1)]),
            Err(CommError::Asymmetric(0, 1))
        );
    }

    #[test]
    fn alternating_default_schedule_passes() {
        let sched = CommSchedule::alternating_paths_6();
        let report = sched.validate();
        assert!(report.passed, "{report:?}");
        assert_eq!(sched.window(), 2);
        assert!(report.isolated_agents.is_empty());
    }

    #[test]
    fn identity_schedule_fails() {
        let id: Vec<f64> = (0..9).map(|k| if k % 4 == 0 { 1.0 } else { 0.0 }).collect();
        for d in [1, 3, 7] {
            let sched = CommSchedule::from_matrices(3, vec![id.clone()], d).unwrap();
            let report = sched.validate();
            assert!(!report.passed);
            assert!(report.doubly_stochastic);
            assert_eq!(report.first_violated_window, Some(0));
            assert_eq!(report.isolated_agents, vec![1, 2, 3]);
        }
    }

    #[test]
    fn isolating_agents_two_and_five_is_flagged() {
        let sched = CommSchedule::alternating_paths_6()
            .isolate(&[1, 4])
            .unwrap();
        let report = sched.validate();
        assert!(!report.passed);
        assert!(!report.connected);
        assert!(report.doubly_stochastic);
        assert_eq!(report.isolated_agents, vec![2, 5]);
        assert_eq!(sched.neighbors(0, 1), &[(1, 1.0)]);
    }

    #[test]
    fn directed_matrix_schedule() {
        // directed 3-cycle with weights 1/2: doubly stochastic and strongly connected
        let m = vec![0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.5, 0.0, 0.5];
        let sched = CommSchedule::from_matrices(3, vec![m], 1).unwrap();
        assert!(sched.validate().passed);
        assert_eq!(sched.isolate(&[0]), Err(CommError::NotUndirected));
    }

    #[test]
    fn disagreement_examples() {
        let same = vec![vec![1.0, 2.0]; 4];
        assert_eq!(disagreement(&same).unwrap(), 0.0);
        let d = disagreement(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            disagreement(&[vec![1.0], vec![1.0, 2.0]]),
            Err(CommError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn mix_examples() {
        let uniform = CommSchedule::from_matrices(3, vec![vec![1.0 / 3.0; 9]], 1).unwrap();
        let w = vec![vec![1.0, 0.0], vec![0.0, 3.0], vec![2.0, 0.0]];
        let mixed = uniform.mix(0, &w).unwrap();
        assert!(disagreement(&mixed).unwrap() < 1e-15);
        assert!(close(&mixed[0], &[1.0, 1.0], 1e-15));

        let id = CommSchedule::undirected(3, vec![vec![]], 1).unwrap();
        assert_eq!(id.mix(5, &w).unwrap(), w);

        let cycle = CommSchedule::undirected(3, vec![vec![(0, 1), (1, 2), (2, 0)]], 1).unwrap();
        let basis = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let mixed = cycle.mix(0, &basis).unwrap();
        for m in &mixed {
            assert!(close(m, &[1.0 / 3.0; 3], 1e-15));
        }
        assert!(matches!(
            cycle.mix(0, &basis[..2]),
            Err(CommError::AgentCount {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn pure_mixing_reaches_consensus() {
        let sched = CommSchedule::alternating_paths_6();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut w: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..10).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let initial = disagreement(&w).unwrap();
        let mut prev_window = initial;
        for t in 0..50 * sched.window() {
            w = sched.mix(t, &w).unwrap();
            if (t + 1) % sched.window() == 0 {
                let d = disagreement(&w).unwrap();
                assert!(
                    d <= prev_window * (1.0 + 1e-12) + 1e-14,
                    "window {}: {d} > {prev_window}",
                    t / sched.window()
                );
                prev_window = d;
            }
        }
        assert!(disagreement(&w).unwrap() < 1e-6 * initial);
    }

    proptest! {
        #[test]
        fn metropolis_is_doubly_stochastic(n in 2usize..8, mask in prop::collection::vec(any::<bool>(), 28)) {
            let mut edges = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if mask[k % mask.len()] {
                        edges.push((i, j));
                    }
                    k += 1;
                }
            }
            let sched = CommSchedule::undirected(n, vec![edges], 1).unwrap();
            let report = sched.validate();
            prop_assert!(report.doubly_stochastic);
            prop_assert!(report.min_weight_ok);
        }

        #[test]
        fn mix_preserves_sum_and_disagreement_is_shift_invariant(
            vals in prop::collection::vec(-10.0f64..10.0, 18),
            shift in prop::collection::vec(-5.0f64..5.0, 3),
            t in 0usize..4,
        ) {
            let w: Vec<Vec<f64>> = vals.chunks(3).map(<[f64]>::to_vec).collect();
            let sched = CommSchedule::alternating_paths_6();
            let mixed = sched.mix(t, &w).unwrap();
            for k in 0..3 {
                let before: f64 = w.iter().map(|v| v[k]).sum();
                let after: f64 = mixed.iter().map(|v| v[k]).sum();
                prop_assert!((before - after).abs() < 1e-12);
            }
            let shifted: Vec<Vec<f64>> = w.iter().map(|v| v.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
            let d0 = disagreement(&w).unwrap();
            let d1 = disagreement(&shifted).unwrap();
            prop_assert!((d0 - d1).abs() < 1e-9);
        }
    }
}
