//! Maximum flow / minimum cut by shortest augmenting paths.
//!
//! Augmenting paths are found level by level (BFS distance layers, then
//! blocking flows along them), so every augmentation uses a shortest path in
//! the residual graph.

use std::collections::VecDeque;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("node {node} outside 0..{node_count}")]
    NodeOutOfRange { node: usize, node_count: usize },
    #[error("source and sink coincide")]
    SourceIsSink,
    #[error("arc {from}->{to} has negative capacity")]
    NegativeCapacity { from: usize, to: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowArc<T> {
    pub from: usize,
    pub to: usize,
    pub capacity: T,
}

/// A directed network with non-negative capacities.
#[derive(Debug, Clone)]
pub struct FlowNetwork<T> {
    node_count: usize,
    source: usize,
    sink: usize,
    arcs: Vec<FlowArc<T>>,
}

impl<T: Scalar> FlowNetwork<T> {
    pub fn new(node_count: usize, source: usize, sink: usize) -> Result<Self, FlowError> {
        for node in [source, sink] {
            if node >= node_count {
                return Err(FlowError::NodeOutOfRange { node, node_count });
            }
        }
        if source == sink {
            return Err(FlowError::SourceIsSink);
        }
        Ok(FlowNetwork { node_count, source, sink, arcs: Vec::new() })
    }

    pub fn add_arc(&mut self, from: usize, to: usize, capacity: T) -> Result<(), FlowError> {
        for node in [from, to] {
            if node >= self.node_count {
                return Err(FlowError::NodeOutOfRange { node, node_count: self.node_count });
            }
        }
        if capacity < T::zero() {
            return Err(FlowError::NegativeCapacity { from, to });
        }
        if capacity > T::zero() && from != to {
            self.arcs.push(FlowArc { from, to, capacity });
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn arcs(&self) -> &[FlowArc<T>] {
        &self.arcs
    }

    /// Sum of capacities of arcs leaving `side` (true = source side).
    pub fn cut_capacity(&self, side: &[bool]) -> T {
        self.arcs
            .iter()
            .filter(|a| side[a.from] && !side[a.to])
            .fold(T::zero(), |acc, a| acc + a.capacity)
    }
}

#[derive(Debug, Clone)]
pub struct MaxFlow<T> {
    pub flow_value: T,
    /// Flow on each arc, in insertion order.
    pub arc_flows: Vec<T>,
    /// Nodes reachable from the source in the final residual graph: the
    /// source side of the minimum cut with the fewest nodes.
    pub source_side: Vec<bool>,
    /// Nodes that can reach the sink in the final residual graph: the sink
    /// side of the minimum cut with the fewest nodes.
    pub sink_side: Vec<bool>,
}

impl<T: Scalar> MaxFlow<T> {
    /// The partition returned by the contract: source side of the cut.
    pub fn min_cut(&self) -> &[bool] {
        &self.source_side
    }
}

struct Residual<T> {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<T>,
    eps: T,
}

impl<T: Scalar> Residual<T> {
    fn open(&self, arc: usize) -> bool {
        self.cap[arc] > self.eps
    }

    fn levels(&self, s: usize) -> Vec<usize> {
        let mut level = vec![usize::MAX; self.head.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &a in &self.head[u] {
                let v = self.to[a];
                if level[v] == usize::MAX && self.open(a) {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        level
    }

    /// One augmenting path along increasing levels; returns the pushed amount.
    fn augment(&mut self, s: usize, t: usize, level: &[usize], next: &mut [usize]) -> Option<T> {
        let mut path: Vec<usize> = Vec::new();
        let mut u = s;
        loop {
            if u == t {
                let mut amount = self.cap[path[0]];
                for &a in &path[1..] {
                    if self.cap[a] < amount {
                        amount = self.cap[a];
                    }
                }
                for &a in &path {
                    self.cap[a] -= amount;
                    self.cap[a ^ 1] += amount;
                }
                return Some(amount);
            }
            let mut advanced = false;
            while next[u] < self.head[u].len() {
                let a = self.head[u][next[u]];
                let v = self.to[a];
                if self.open(a) && level[v] == level[u] + 1 && level[v] <= level[t] {
                    path.push(a);
                    u = v;
                    advanced = true;
                    break;
                }
                next[u] += 1;
            }
            if !advanced {
                // dead end: retreat and skip the arc that led here
                let a = path.pop()?;
                u = self.to[a ^ 1];
                next[u] += 1;
            }
        }
    }

    fn reachable_from(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.head.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &a in &self.head[u] {
                let v = self.to[a];
                if !seen[v] && self.open(a) {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    fn reaching(&self, t: usize) -> Vec<bool> {
        let mut seen = vec![false; self.head.len()];
        seen[t] = true;
        let mut stack = vec![t];
        while let Some(v) = stack.pop() {
            for &a in &self.head[v] {
                // a: v -> u, so a^1: u -> v must be open
                let u = self.to[a];
                if !seen[u] && self.open(a ^ 1) {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen
    }
}

pub fn max_flow<T: Scalar>(net: &FlowNetwork<T>) -> MaxFlow<T> {
    let n = net.node_count;
    let mut res = Residual {
        head: vec![Vec::new(); n],
        to: Vec::with_capacity(2 * net.arcs.len()),
        cap: Vec::with_capacity(2 * net.arcs.len()),
        eps: T::zero(),
    };
    let mut total = T::zero();
    for arc in &net.arcs {
        res.head[arc.from].push(res.to.len());
        res.to.push(arc.to);
        res.cap.push(arc.capacity);
        res.head[arc.to].push(res.to.len());
        res.to.push(arc.from);
        res.cap.push(T::zero());
        total += arc.capacity;
    }
    res.eps = T::negligible(total);

    let (s, t) = (net.source, net.sink);
    loop {
        let level = res.levels(s);
        if level[t] == usize::MAX {
            break;
        }
        let mut next = vec![0usize; n];
        while res.augment(s, t, &level, &mut next).is_some() {}
    }

    let arc_flows: Vec<T> =
        net.arcs.iter().enumerate().map(|(i, a)| a.capacity - res.cap[2 * i]).collect();
    let flow_value = net
        .arcs
        .iter()
        .zip(&arc_flows)
        .fold(T::zero(), |acc, (a, &f)| {
            if a.from == s {
                acc + f
            } else if a.to == s {
                acc - f
            } else {
                acc
            }
        });
    MaxFlow { flow_value, arc_flows, source_side: res.reachable_from(s), sink_side: res.reaching(t) }
}

#[cfg(test)]
mod tests {
    use num_rational::Rational64;
    use rand::Rng;

    use super::*;
    use crate::oracle::instances::trial_rng;

    fn brute_min_cut<T: Scalar>(net: &FlowNetwork<T>) -> T {
        let n = net.node_count();
        let interior: Vec<usize> = (0..n).filter(|&v| v != net.source() && v != net.sink()).collect();
        let mut best: Option<T> = None;
        for mask in 0u64..(1u64 << interior.len()) {
            let mut side = vec![false; n];
            side[net.source()] = true;
            for (bit, &v) in interior.iter().enumerate() {
                side[v] = mask >> bit & 1 == 1;
            }
            let c = net.cut_capacity(&side);
            if best.is_none_or(|b| c < b) {
                best = Some(c);
            }
        }
        best.unwrap()
    }

    #[test]
    fn bottleneck_path() {
        let mut net = FlowNetwork::new(3, 0, 2).unwrap();
        net.add_arc(0, 1, 3.0).unwrap();
        net.add_arc(1, 2, 2.0).unwrap();
        let r = max_flow(&net);
        assert_eq!(r.flow_value, 2.0);
        assert_eq!(r.min_cut(), &[true, true, false]);
    }

    #[test]
    fn direct_arc() {
        let mut net = FlowNetwork::new(2, 0, 1).unwrap();
        net.add_arc(0, 1, 5.0).unwrap();
        assert_eq!(max_flow(&net).flow_value, 5.0);
    }

    #[test]
    fn disconnected_source_and_sink() {
        let mut net = FlowNetwork::new(4, 0, 3).unwrap();
        net.add_arc(0, 1, 5.0).unwrap();
        net.add_arc(2, 3, 5.0).unwrap();
        let r = max_flow(&net);
        assert_eq!(r.flow_value, 0.0);
        assert_eq!(r.source_side, vec![true, true, false, false]);
        assert_eq!(net.cut_capacity(&r.source_side), 0.0);
    }

    #[test]
    fn invalid_networks_are_rejected() {
        assert_eq!(FlowNetwork::<f64>::new(2, 0, 0).unwrap_err(), FlowError::SourceIsSink);
        assert!(FlowNetwork::<f64>::new(2, 0, 5).is_err());
        let mut net = FlowNetwork::new(2, 0, 1).unwrap();
        assert_eq!(net.add_arc(0, 1, -1.0).unwrap_err(), FlowError::NegativeCapacity { from: 0, to: 1 });
    }

    fn random_network<T: Scalar>(seed: u64, trial: u64) -> FlowNetwork<T> {
        let mut rng = trial_rng(seed, trial);
        let n = rng.random_range(2..=10);
        let mut net = FlowNetwork::new(n, 0, n - 1).unwrap();
        for u in 0..n {
            for v in 0..n {
                if u != v && rng.random_bool(0.35) {
                    let c = rng.random_range(0..=40) as f64 / 4.0;
                    net.add_arc(u, v, T::from_f64_lossy(c)).unwrap();
                }
            }
        }
        net
    }

    #[test]
    fn flow_equals_enumerated_min_cut_exactly() {
        for trial in 0..200 {
            let net: FlowNetwork<Rational64> = random_network(21, trial);
            let r = max_flow(&net);
            assert_eq!(r.flow_value, brute_min_cut(&net), "trial {trial}");
            assert_eq!(net.cut_capacity(&r.source_side), r.flow_value);
            let sink_cut: Vec<bool> = r.sink_side.iter().map(|&b| !b).collect();
            assert_eq!(net.cut_capacity(&sink_cut), r.flow_value);
        }
    }

    #[test]
    fn flow_is_conserved_and_feasible() {
        for trial in 0..100 {
            let net: FlowNetwork<f64> = random_network(22, trial);
            let r = max_flow(&net);
            assert!((r.flow_value - brute_min_cut(&net)).abs() < 1e-9);
            let mut balance = vec![0.0; net.node_count()];
            for (a, &f) in net.arcs().iter().zip(&r.arc_flows) {
                assert!(f >= -1e-12 && f <= a.capacity + 1e-12);
                balance[a.from] -= f;
                balance[a.to] += f;
            }
            for (v, b) in balance.iter().enumerate() {
                if v != net.source() && v != net.sink() {
                    assert!(b.abs() < 1e-9, "node {v} imbalance {b}");
                }
            }
        }
    }
}
