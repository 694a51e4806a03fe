//! Multi-robot path planning on acyclic path networks.
//!
//! Each agent's local state is its node; local action 0 is "stay" and action
//! k ≥ 1 follows the k-th outgoing edge of the current node. Actions beyond a
//! node's out-degree alias to "stay". The destination is absorbing and pays
//! zero reward.

use serde::{Deserialize, Serialize};

use super::{check_discount, Dynamics, EnvError, EnvModel, JointIndex};

/// Label of the single destination node.
pub const DESTINATION: &str = "dest";

/// A layered acyclic path network with agent start positions and costs.
///
/// Nodes are numbered layer by layer; the last layer holds exactly one node,
/// the destination. Node `j` (1-based) of layer `l` is labelled with the
/// letter `'b' + l` followed by `j`, e.g. `b1`, `c2`; the destination is
/// labelled [`DESTINATION`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathNetworkSpec {
    pub layers: Vec<usize>,
    /// Directed edges (from, to) as node indices.
    pub edges: Vec<(usize, usize)>,
    /// Start node index of each agent.
    pub starts: Vec<usize>,
    pub r_cost: f64,
    pub r_collision: f64,
}

impl PathNetworkSpec {
    /// Builds a spec from a structure string like `"3-2-1"`, connecting
    /// consecutive layers by proportional overlap: node j of an n-node layer
    /// links to node k of the next n'-node layer when the intervals
    /// [j/n, (j+1)/n] and [k/n', (k+1)/n'] overlap with positive length.
    pub fn layered(
        structure: &str,
        starts: &[&str],
        r_cost: f64,
        r_collision: f64,
    ) -> Result<Self, EnvError> {
        let layers = parse_structure(structure)?;
        let edges = banded_edges(&layers);
        let mut spec = Self {
            layers,
            edges,
            starts: Vec::new(),
            r_cost,
            r_collision,
        };
        spec.starts = starts
            .iter()
            .map(|l| spec.node_index(l))
            .collect::<Result<_, _>>()?;
        Ok(spec)
    }

    pub fn num_nodes(&self) -> usize {
        self.layers.iter().sum()
    }

    pub fn destination(&self) -> usize {
        self.num_nodes() - 1
    }

    pub fn node_label(&self, index: usize) -> String {
        if index + 1 == self.num_nodes() {
            return DESTINATION.to_string();
        }
        let mut offset = 0;
        for (l, &size) in self.layers.iter().enumerate() {
            if index < offset + size {
                let letter = (b'b' + l as u8) as char;
                return format!("{letter}{}", index - offset + 1);
            }
            offset += size;
        }
        format!("node{index}")
    }

    pub fn node_index(&self, label: &str) -> Result<usize, EnvError> {
        let label = label.trim();
        if label == DESTINATION {
            return Ok(self.destination());
        }
        let bad = || EnvError::InvalidSpec(format!("unknown node label '{label}'"));
        let mut chars = label.chars();
        let letter = chars.next().ok_or_else(bad)?;
        let layer = (letter as u32).checked_sub('b' as u32).ok_or_else(bad)? as usize;
        let pos: usize = chars.as_str().parse().map_err(|_| bad())?;
        if layer + 1 >= self.layers.len() || pos == 0 || pos > self.layers[layer] {
            return Err(bad());
        }
        Ok(self.layers[..layer].iter().sum::<usize>() + pos - 1)
    }

    /// Checks layer shape, edge ranges, acyclicity, reachability of the
    /// destination and start ranges.
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.layers.len() < 2 || self.layers.contains(&0) {
            return Err(EnvError::InvalidSpec(
                "need at least two non-empty layers".into(),
            ));
        }
        if *self.layers.last().unwrap() != 1 {
            return Err(EnvError::InvalidSpec(
                "the last layer must be the single destination".into(),
            ));
        }
        if !(self.r_cost >= 0.0 && self.r_collision >= 0.0)
            || !self.r_cost.is_finite()
            || !self.r_collision.is_finite()
        {
            return Err(EnvError::InvalidSpec(
                "costs must be finite and non-negative".into(),
            ));
        }
        let n = self.num_nodes();
        let dest = self.destination();
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in &self.edges {
            if u >= n || v >= n || u == v {
                return Err(EnvError::InvalidSpec(format!("invalid edge ({u},{v})")));
            }
            if u == dest {
                return Err(EnvError::InvalidSpec(
                    "the destination must not have outgoing edges".into(),
                ));
            }
            if !seen.insert((u, v)) {
                return Err(EnvError::InvalidSpec(format!(
                    "duplicate edge {}-{}",
                    self.node_label(u),
                    self.node_label(v)
                )));
            }
        }
        let succ = self.successors();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut mark = vec![0u8; n];
        for root in 0..n {
            if mark[root] == 0 {
                self.dfs_acyclic(root, &succ, &mut mark)?;
            }
        }
        let mut reaches = vec![false; n];
        reaches[dest] = true;
        let mut changed = true;
        while changed {
            changed = false;
            for u in 0..n {
                if !reaches[u] && succ[u].iter().any(|&v| reaches[v]) {
                    reaches[u] = true;
                    changed = true;
                }
            }
        }
        if let Some(u) = reaches.iter().position(|r| !r) {
            return Err(EnvError::Unreachable(self.node_label(u)));
        }
        if let Some(&s) = self.starts.iter().find(|&&s| s >= n) {
            return Err(EnvError::StartOutOfRange { index: s, nodes: n });
        }
        Ok(())
    }

    fn dfs_acyclic(&self, u: usize, succ: &[Vec<usize>], mark: &mut [u8]) -> Result<(), EnvError> {
        mark[u] = 1;
        for &v in &succ[u] {
            match mark[v] {
                1 => return Err(EnvError::Cyclic(self.node_label(v))),
                0 => self.dfs_acyclic(v, succ, mark)?,
                _ => {}
            }
        }
        mark[u] = 2;
        Ok(())
    }

    /// Outgoing neighbours of each node, sorted by node index.
    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.num_nodes()];
        for &(u, v) in &self.edges {
            if u < succ.len() {
                succ[u].push(v);
            }
        }
        for s in &mut succ {
            s.sort_unstable();
        }
        succ
    }
}

fn parse_structure(structure: &str) -> Result<Vec<usize>, EnvError> {
    structure
        .split('-')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| EnvError::InvalidSpec(format!("bad layer structure '{structure}'")))
        })
        .collect()
}

fn banded_edges(layers: &[usize]) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    let mut offset = 0;
    for w in layers.windows(2) {
        let (n, m) = (w[0], w[1]);
        for j in 0..n {
            for k in 0..m {
                // [j/n, (j+1)/n] ∩ [k/m, (k+1)/m] has positive length
                if j * m < (k + 1) * n && k * n < (j + 1) * m {
                    edges.push((offset + j, offset + n + k));
                }
            }
        }
        offset += n;
    }
    edges
}

/// Deterministic path-network dynamics.
#[derive(Clone, Debug)]
pub struct PathDynamics {
    spec: PathNetworkSpec,
    succ: Vec<Vec<usize>>,
    dest: usize,
    num_agents: usize,
}

impl PathDynamics {
    pub fn spec(&self) -> &PathNetworkSpec {
        &self.spec
    }

    pub fn destination(&self) -> usize {
        self.dest
    }

    pub fn successors(&self, node: usize) -> &[usize] {
        &self.succ[node]
    }

    /// Node reached from `node` under local action `action` (aliased actions stay).
    pub fn move_target(&self, node: usize, action: usize) -> usize {
        if action == 0 || node == self.dest {
            return node;
        }
        self.succ[node].get(action - 1).copied().unwrap_or(node)
    }

    pub(crate) fn next_state(
        &self,
        states: &JointIndex,
        actions: &JointIndex,
        s: usize,
        a: usize,
    ) -> usize {
        let mut next = s;
        for i in 0..self.num_agents {
            let u = states.digit(s, i);
            let v = self.move_target(u, actions.digit(a, i));
            if v != u {
                next = states.with_digit(next, i, v);
            }
        }
        next
    }

    pub(crate) fn rewards(
        &self,
        states: &JointIndex,
        actions: &JointIndex,
        s: usize,
        a: usize,
        out: &mut [f64],
    ) {
        let n = self.num_agents;
        let moves: Vec<(usize, usize)> = (0..n)
            .map(|i| {
                let u = states.digit(s, i);
                (u, self.move_target(u, actions.digit(a, i)))
            })
            .collect();
        for (i, &(u, v)) in moves.iter().enumerate() {
            out[i] = if u == self.dest {
                0.0
            } else if u == v {
                -self.spec.r_cost
            } else {
                let p = moves.iter().filter(|&&e| e == (u, v)).count();
                if p == 1 {
                    -self.spec.r_cost
                } else {
                    -self.spec.r_cost - (p as f64 / n as f64) * self.spec.r_collision
                }
            };
        }
    }

    pub(crate) fn action_classes(&self, node: usize, num_local: usize) -> Vec<Vec<usize>> {
        if node == self.dest {
            return vec![(0..num_local).collect()];
        }
        let deg = self.succ[node].len();
        let mut stay = vec![0];
        stay.extend(deg + 1..num_local);
        let mut classes = vec![stay];
        classes.extend((1..=deg.min(num_local - 1)).map(|k| vec![k]));
        classes
    }
}

/// Builds the N-agent path-planning MDP for `spec` with discount `gamma`.
pub fn build_path_env(
    spec: &PathNetworkSpec,
    num_agents: usize,
    gamma: f64,
) -> Result<EnvModel, EnvError> {
    spec.validate()?;
    check_discount(gamma)?;
    if num_agents == 0 || spec.starts.len() != num_agents {
        return Err(EnvError::StartCount {
            expected: num_agents,
            got: spec.starts.len(),
        });
    }
    let succ = spec.successors();
    let nodes = spec.num_nodes();
    let local_actions = 1 + succ.iter().map(Vec::len).max().unwrap_or(0);
    let states = JointIndex::new(vec![nodes; num_agents]);
    let actions = JointIndex::new(vec![local_actions; num_agents]);
    let start = states.encode(&spec.starts);
    let dynamics = PathDynamics {
        spec: spec.clone(),
        succ,
        dest: spec.destination(),
        num_agents,
    };
    Ok(EnvModel::from_parts(
        num_agents,
        states,
        actions,
        vec![(start, 1.0)],
        gamma,
        spec.r_cost + spec.r_collision,
        Dynamics::Path(dynamics),
    ))
}
