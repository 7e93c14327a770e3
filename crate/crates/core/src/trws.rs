//! Sequential tree-reweighted message passing (TRW-S).
//!
//! Nodes are processed in index order. The edges are split into monotone
//! chains along that order; each node is shared by `max(#earlier
//! neighbours, #later neighbours)` chains and every edge belongs to exactly
//! one chain. After each forward/backward sweep the lower bound is the sum
//! over chains of their exact minima under the current reparameterization,
//! which never decreases from one iteration to the next.
//!
//! Infinite costs are replaced by a finite value larger than the spread of
//! all finite energies, so messages stay finite. A message row at or above
//! that value is reported as saturated.

use crate::cost::Cost;
use crate::model::{GraphicalModel, Labeling, NodeId};
use crate::scalar::{min2, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrwsConfig {
    pub iterations: usize,
}

impl Default for TrwsConfig {
    fn default() -> Self {
        TrwsConfig { iterations: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrwsError {
    #[error("at least one iteration is required")]
    NoIterations,
    #[error("node {0} has an infinite unary cost")]
    InfiniteUnary(NodeId),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrwsDiagnostics {
    /// Nodes whose every label conflicted (∞) with the already chosen labels
    /// during rounding; they fall back to their unary argmin.
    pub fallback_nodes: Vec<NodeId>,
    /// Messages whose every entry reached the clamp during the last sweep.
    pub saturated_messages: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrwsResult<T> {
    pub labeling: Labeling,
    pub lower_bound: T,
    pub bound_history: Vec<T>,
    pub diagnostics: TrwsDiagnostics,
}

/// Edge chains that are increasing in node index.
#[derive(Debug, Clone)]
struct Chain {
    nodes: Vec<NodeId>,
    edges: Vec<usize>,
}

fn monotone_chains<T: Scalar>(model: &GraphicalModel<T>) -> Vec<Chain> {
    let n = model.node_count();
    let mut chains: Vec<Chain> = Vec::new();
    let mut arriving: Vec<Vec<usize>> = vec![Vec::new(); n];
    for u in 0..n {
        let incoming = std::mem::take(&mut arriving[u]);
        let outgoing: Vec<(NodeId, usize)> = model.neighbors(u).iter().copied().filter(|&(v, _)| v > u).collect();
        if incoming.is_empty() && outgoing.is_empty() {
            chains.push(Chain { nodes: vec![u], edges: Vec::new() });
            continue;
        }
        for (k, &(v, e)) in outgoing.iter().enumerate() {
            let id = match incoming.get(k) {
                Some(&id) => id,
                None => {
                    chains.push(Chain { nodes: vec![u], edges: Vec::new() });
                    chains.len() - 1
                }
            };
            chains[id].nodes.push(v);
            chains[id].edges.push(e);
            arriving[v].push(id);
        }
    }
    chains
}

struct State<T> {
    unary: Vec<Vec<T>>,
    /// β-weighted, clamped tables of each edge `(u, v)`, row-major in `(x_u, x_v)`.
    pair: Vec<Vec<T>>,
    /// Message from the lower endpoint to the higher one, indexed by `x_v`.
    up: Vec<Vec<T>>,
    /// Message from the higher endpoint to the lower one, indexed by `x_u`.
    down: Vec<Vec<T>>,
    /// `1 / (number of chains through u)`.
    gamma: Vec<T>,
    clamp: T,
}

impl<T: Scalar> State<T> {
    fn reparam_unary<M: Scalar>(&self, model: &GraphicalModel<M>, u: NodeId) -> Vec<T> {
        let mut h = self.unary[u].clone();
        for &(w, e) in model.neighbors(u) {
            let msg = if w < u { &self.up[e] } else { &self.down[e] };
            for (x, m) in h.iter_mut().zip(msg) {
                *x += *m;
            }
        }
        h
    }

    /// Recomputes the message `u → w` over edge `e`; returns true when the
    /// whole row reached the clamp.
    fn send(&mut self, model: &GraphicalModel<T>, u: NodeId, w: NodeId, e: usize, theta_hat: &[T]) -> bool {
        let gamma = self.gamma[u];
        let (nu, nw) = (model.label_count(u), model.label_count(w));
        let incoming = if w > u { &self.down[e] } else { &self.up[e] };
        let h: Vec<T> = (0..nu).map(|i| gamma * theta_hat[i] - incoming[i]).collect();
        let table = &self.pair[e];
        let mut out = vec![T::zero(); nw];
        for (j, o) in out.iter_mut().enumerate() {
            let mut best: Option<T> = None;
            for (i, &hi) in h.iter().enumerate() {
                let entry = if u < w { table[i * nw + j] } else { table[j * nu + i] };
                let c = hi + entry;
                if best.is_none_or(|b| c < b) {
                    best = Some(c);
                }
            }
            *o = best.unwrap_or_else(T::zero);
        }
        let lo = out.iter().copied().fold(out[0], min2);
        for o in &mut out {
            *o -= lo;
        }
        let saturated = lo >= self.clamp;
        if w > u {
            self.up[e] = out;
        } else {
            self.down[e] = out;
        }
        saturated
    }

    fn chain_bound(&self, model: &GraphicalModel<T>, chains: &[Chain]) -> T {
        let hats: Vec<Vec<T>> = (0..model.node_count()).map(|u| self.reparam_unary(model, u)).collect();
        let mut total = model.constant();
        for chain in chains {
            let first = chain.nodes[0];
            let mut f: Vec<T> = hats[first].iter().map(|&x| x * self.gamma[first]).collect();
            for (k, &e) in chain.edges.iter().enumerate() {
                let (u, v) = (chain.nodes[k], chain.nodes[k + 1]);
                let nv = model.label_count(v);
                let table = &self.pair[e];
                let next: Vec<T> = (0..nv)
                    .map(|y| {
                        let mut best: Option<T> = None;
                        for (x, &fx) in f.iter().enumerate() {
                            let c = fx + table[x * nv + y] - self.up[e][y] - self.down[e][x];
                            if best.is_none_or(|b| c < b) {
                                best = Some(c);
                            }
                        }
                        best.unwrap_or_else(T::zero) + self.gamma[v] * hats[v][y]
                    })
                    .collect();
                debug_assert_eq!(model.edge(e), (u, v));
                f = next;
            }
            total += f.iter().copied().fold(f[0], min2);
        }
        total
    }
}

/// Runs `cfg.iterations` forward/backward sweeps and rounds a labeling
/// during the final forward sweep (sequential conditional argmin, ties to
/// the lower label).
pub fn solve_trws<T: Scalar>(model: &GraphicalModel<T>, cfg: &TrwsConfig) -> Result<TrwsResult<T>, TrwsError> {
    if cfg.iterations == 0 {
        return Err(TrwsError::NoIterations);
    }
    let n = model.node_count();
    let beta = model.pairwise_weight();
    let two = T::one() + T::one();

    let mut mass = T::zero();
    let mut unary = Vec::with_capacity(n);
    for u in 0..n {
        let mut row = Vec::with_capacity(model.label_count(u));
        for c in model.unary(u) {
            match c {
                Cost::Finite(x) => {
                    mass += x.abs();
                    row.push(*x);
                }
                Cost::Infinite => return Err(TrwsError::InfiniteUnary(u)),
            }
        }
        unary.push(row);
    }
    for e in 0..model.edge_count() {
        for c in model.pairwise_table(e) {
            if let Cost::Finite(x) = c.scale(beta) {
                mass += x.abs();
            }
        }
    }
    let clamp = T::one() + two * mass;
    let pair: Vec<Vec<T>> = (0..model.edge_count())
        .map(|e| model.pairwise_table(e).iter().map(|c| c.scale(beta).finite_or(clamp)).collect())
        .collect();

    let gamma: Vec<T> = (0..n)
        .map(|u| {
            let later = model.neighbors(u).iter().filter(|&&(v, _)| v > u).count();
            let earlier = model.neighbors(u).len() - later;
            let share = later.max(earlier).max(1);
            T::one() / T::from_usize(share).expect("chain count fits")
        })
        .collect();

    let mut state = State {
        unary,
        up: model.edges().iter().map(|&(_, v)| vec![T::zero(); model.label_count(v)]).collect(),
        down: model.edges().iter().map(|&(u, _)| vec![T::zero(); model.label_count(u)]).collect(),
        pair,
        gamma,
        clamp,
    };
    let chains = monotone_chains(model);

    let mut labels = vec![0usize; n];
    let mut diagnostics = TrwsDiagnostics::default();
    let mut bound_history = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let last = iteration + 1 == cfg.iterations;
        let mut saturated = 0;

        for u in 0..n {
            let hat = state.reparam_unary(model, u);
            if last {
                labels[u] = round_node(model, &state, u, &labels, &mut diagnostics);
            }
            for &(v, e) in model.neighbors(u) {
                if v > u && state.send(model, u, v, e, &hat) {
                    saturated += 1;
                }
            }
        }
        for u in (0..n).rev() {
            let hat = state.reparam_unary(model, u);
            for &(w, e) in model.neighbors(u) {
                if w < u && state.send(model, u, w, e, &hat) {
                    saturated += 1;
                }
            }
        }

        bound_history.push(state.chain_bound(model, &chains));
        if last {
            diagnostics.saturated_messages = saturated;
        }
    }

    let lower_bound = *bound_history.last().expect("at least one iteration");
    Ok(TrwsResult { labeling: Labeling(labels), lower_bound, bound_history, diagnostics })
}

fn round_node<T: Scalar>(
    model: &GraphicalModel<T>,
    state: &State<T>,
    u: NodeId,
    labels: &[usize],
    diagnostics: &mut TrwsDiagnostics,
) -> usize {
    let nu = model.label_count(u);
    let mut score = state.unary[u].clone();
    for &(w, e) in model.neighbors(u) {
        if w < u {
            let table = &state.pair[e];
            let xw = labels[w];
            for (i, s) in score.iter_mut().enumerate() {
                *s += table[xw * nu + i];
            }
        } else {
            for (s, m) in score.iter_mut().zip(&state.down[e]) {
                *s += *m;
            }
        }
    }
    let argmin = |row: &[T]| {
        let mut best = 0;
        for (i, x) in row.iter().enumerate() {
            if *x < row[best] {
                best = i;
            }
        }
        best
    };
    let choice = argmin(&score);
    let conflicts = model
        .neighbors(u)
        .iter()
        .filter(|&&(w, _)| w < u)
        .any(|&(w, e)| (0..nu).all(|i| model.pairwise(e, labels[w], i).is_infinite()));
    if conflicts && score[choice] >= state.clamp {
        diagnostics.fallback_nodes.push(u);
        return argmin(&state.unary[u]);
    }
    choice
}

/// Nodes whose label differs from `outlier_label`.
pub fn extract_inliers(labeling: &Labeling, outlier_label: impl Fn(NodeId) -> usize) -> Vec<NodeId> {
    labeling.0.iter().enumerate().filter_map(|(u, &l)| (l != outlier_label(u)).then_some(u)).collect()
}
