//! Roof duality (QPBO) for binary pairwise energies.
//!
//! The energy is rewritten in normal form (non-negative unary slopes and
//! pairwise terms that each charge a single label combination), encoded on a
//! doubled network with one node for `x_p` and one for its complement, and
//! solved by max-flow. A variable is labeled only when both extremal minimum
//! cuts agree on it, which makes the output strongly persistent: every
//! minimizer of the energy carries the returned labels.

use crate::cost::Cost;
use crate::maxflow::{max_flow, FlowNetwork};
use crate::model::{BinaryModel, PartialLabeling};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct QpboSolution<T> {
    pub labeling: PartialLabeling,
    /// Roof-dual lower bound on the minimum energy, with `∞` entries replaced
    /// by [`QpboSolution::clamp`].
    pub lower_bound: T,
    /// Finite stand-in for `∞` used inside the network.
    pub clamp: T,
    /// Nodes unlabeled by the post-check because a labeled pair realized an
    /// infinite cost.
    pub demoted: usize,
}

/// Labels returned by [`solve_qpbo`]; unlabeled nodes are `None`.
pub fn qpbo<T: Scalar>(model: &BinaryModel<T>) -> PartialLabeling {
    solve_qpbo(model).labeling
}

pub fn solve_qpbo<T: Scalar>(model: &BinaryModel<T>) -> QpboSolution<T> {
    let n = model.node_count();
    let beta = model.pairwise_weight();
    let two = T::one() + T::one();

    // Total finite mass bounds the spread of all finite energies, so any
    // value above twice that mass behaves like ∞ for minimization.
    let mut mass = T::zero();
    for u in 0..n {
        for c in model.unary(u) {
            if let Cost::Finite(x) = c {
                mass += x.abs();
            }
        }
    }
    for e in 0..model.edge_count() {
        for c in model.quad(e) {
            if let Cost::Finite(x) = c.scale(beta) {
                mass += x.abs();
            }
        }
    }
    let clamp = T::one() + two * mass;

    let mut constant = model.constant();
    let mut slope = vec![T::zero(); n];
    for (u, s) in slope.iter_mut().enumerate() {
        let un = model.unary(u);
        let (c0, c1) = (un[0].finite_or(clamp), un[1].finite_or(clamp));
        constant += c0;
        *s = c1 - c0;
    }

    let (source, sink) = (2 * n, 2 * n + 1);
    let bar = |p: usize| n + p;
    let mut net = FlowNetwork::new(2 * n + 2, source, sink).expect("valid network");
    let mut add = |from: usize, to: usize, cap: T| {
        if cap > T::zero() {
            net.add_arc(from, to, cap).expect("valid arc");
        }
    };

    for e in 0..model.edge_count() {
        let (p, q) = model.edge(e);
        let [a, b, c, d] = model.quad(e).map(|x| x.scale(beta).finite_or(clamp));
        // θ = a + (c-a)·x_p + (b-a)·x_q + k·x_p·x_q
        constant += a;
        slope[p] += c - a;
        slope[q] += b - a;
        let k = a + d - b - c;
        if k < T::zero() {
            // k·x_p·x_q = k·x_p + |k|·[x_p = 1, x_q = 0]
            slope[p] += k;
            add(q, p, -k);
            add(bar(p), bar(q), -k);
        } else if k > T::zero() {
            // k·[x_p = 1, x_q = 1]
            add(bar(q), p, k);
            add(bar(p), q, k);
        }
    }
    for (p, &w) in slope.iter().enumerate() {
        if w > T::zero() {
            add(source, p, w);
            add(bar(p), sink, w);
        } else if w < T::zero() {
            // w·x_p = w + |w|·[x_p = 0]
            constant += w;
            add(p, sink, -w);
            add(source, bar(p), -w);
        }
    }

    let flow = max_flow(&net);
    let (src, snk) = (&flow.source_side, &flow.sink_side);
    let mut labels: Vec<Option<usize>> = (0..n)
        .map(|p| {
            if src[p] && snk[bar(p)] {
                Some(0)
            } else if snk[p] && src[bar(p)] {
                Some(1)
            } else {
                None
            }
        })
        .collect();

    let mut demoted = 0;
    for e in 0..model.edge_count() {
        let (p, q) = model.edge(e);
        if let (Some(lp), Some(lq)) = (labels[p], labels[q]) {
            if model.pairwise(e, lp, lq).is_infinite() {
                labels[p] = None;
                labels[q] = None;
                demoted += 2;
            }
        }
    }

    QpboSolution {
        labeling: PartialLabeling(labels),
        lower_bound: constant + flow.flow_value / two,
        clamp,
        demoted,
    }
}

/// Number of edges whose `(1, 1)` entry is infinite.
pub fn count_infinite_pairs<T: Scalar>(model: &BinaryModel<T>) -> usize {
    (0..model.edge_count()).filter(|&e| model.pairwise(e, 1, 1).is_infinite()).count()
}
