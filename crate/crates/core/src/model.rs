//! Pairwise graphical models, labelings and induced submodels.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::cost::Cost;
use crate::scalar::Scalar;

pub type NodeId = usize;

/// Deterministic pairwise cost callback `(u, v, label_u, label_v)`, called
/// with `u < v` in the model's own node numbering.
pub type PairwiseFn<T> = dyn Fn(NodeId, NodeId, usize, usize) -> Cost<T> + Send + Sync;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("node {node} has no labels")]
    EmptyLabelSet { node: NodeId },
    #[error("node {node}: unary table has {got} entries, expected {expected}")]
    UnaryLength { node: NodeId, expected: usize, got: usize },
    #[error("edge ({u}, {v}) references a node outside 0..{node_count}")]
    NodeOutOfRange { u: NodeId, v: NodeId, node_count: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("edge ({0}, {1}) added twice")]
    DuplicateEdge(NodeId, NodeId),
    #[error("edge ({u}, {v}): pairwise table has {got} entries, expected {expected}")]
    PairwiseShape { u: NodeId, v: NodeId, expected: usize, got: usize },
    #[error("lazy edge ({0}, {1}) but no pairwise callback was set")]
    MissingCallback(NodeId, NodeId),
    #[error("labeling has {got} entries, model has {expected} nodes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("node {node}: label {label} outside 0..{count}")]
    LabelOutOfRange { node: NodeId, label: usize, count: usize },
    #[error("cannot induce a submodel on an empty node set")]
    EmptySubmodel,
    #[error("model is not binary: node {node} has {count} labels")]
    NotBinary { node: NodeId, count: usize },
}

/// A complete assignment, one label index per node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Labeling(pub Vec<usize>);

impl Labeling {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// An assignment where some nodes may stay unlabeled (`None`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartialLabeling(pub Vec<Option<usize>>);

impl PartialLabeling {
    pub fn unlabeled(n: usize) -> Self {
        PartialLabeling(vec![None; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.0.iter().filter(|l| l.is_some()).count()
    }

    /// Nodes carrying exactly `label`.
    pub fn nodes_with(&self, label: usize) -> Vec<NodeId> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(u, l)| (*l == Some(label)).then_some(u))
            .collect()
    }

    /// True when every labeled node agrees with `full`.
    pub fn agrees_with(&self, full: &[usize]) -> bool {
        self.0.len() == full.len() && self.0.iter().zip(full).all(|(p, f)| p.is_none_or(|l| l == *f))
    }
}

impl From<&Labeling> for PartialLabeling {
    fn from(l: &Labeling) -> Self {
        PartialLabeling(l.0.iter().map(|&x| Some(x)).collect())
    }
}

#[derive(Clone)]
enum PairwiseTerm<T> {
    Table(Arc<[Cost<T>]>),
    Lazy(OnceLock<Arc<[Cost<T>]>>),
}

/// A pairwise graphical model: per-node unary tables, an undirected edge set
/// and per-edge pairwise tables, a weight `β` on all pairwise terms and a
/// constant offset.
///
/// Edges are stored canonically with `u < v`, sorted lexicographically.
/// Pairwise tables are row-major, indexed `label_u * labels(v) + label_v`.
#[derive(Clone)]
pub struct GraphicalModel<T> {
    label_counts: Vec<usize>,
    unary: Vec<Vec<Cost<T>>>,
    edges: Vec<(NodeId, NodeId)>,
    pairwise: Vec<PairwiseTerm<T>>,
    callback: Option<Arc<PairwiseFn<T>>>,
    adjacency: Vec<Vec<(NodeId, usize)>>,
    pairwise_weight: T,
    constant: T,
}

impl<T: Scalar> fmt::Debug for GraphicalModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GraphicalModel")
            .field("nodes", &self.node_count())
            .field("edges", &self.edge_count())
            .field("pairwise_weight", &self.pairwise_weight)
            .field("constant", &self.constant)
            .finish()
    }
}

impl<T: Scalar> GraphicalModel<T> {
    pub fn node_count(&self) -> usize {
        self.label_counts.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn label_count(&self, u: NodeId) -> usize {
        self.label_counts[u]
    }

    pub fn label_counts(&self) -> &[usize] {
        &self.label_counts
    }

    pub fn unary(&self, u: NodeId) -> &[Cost<T>] {
        &self.unary[u]
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> (NodeId, NodeId) {
        self.edges[e]
    }

    /// `(neighbor, edge index)` pairs of `u`, ordered by neighbor.
    pub fn neighbors(&self, u: NodeId) -> &[(NodeId, usize)] {
        &self.adjacency[u]
    }

    pub fn edge_between(&self, u: NodeId, v: NodeId) -> Option<usize> {
        let key = if u < v { (u, v) } else { (v, u) };
        self.edges.binary_search(&key).ok()
    }

    pub fn pairwise_weight(&self) -> T {
        self.pairwise_weight
    }

    pub fn constant(&self) -> T {
        self.constant
    }

    /// Unweighted pairwise cost of edge `e` at `(label_u, label_v)` where
    /// `(u, v) = self.edge(e)`.
    pub fn pairwise(&self, e: usize, label_u: usize, label_v: usize) -> Cost<T> {
        let (u, v) = self.edges[e];
        match &self.pairwise[e] {
            PairwiseTerm::Table(t) => t[label_u * self.label_counts[v] + label_v],
            PairwiseTerm::Lazy(memo) => match memo.get() {
                Some(t) => t[label_u * self.label_counts[v] + label_v],
                None => self.call(u, v, label_u, label_v),
            },
        }
    }

    /// Full unweighted table of edge `e`. Lazy edges are materialized once and
    /// memoized; concurrent callers may race but compute identical tables.
    pub fn pairwise_table(&self, e: usize) -> &[Cost<T>] {
        let (u, v) = self.edges[e];
        match &self.pairwise[e] {
            PairwiseTerm::Table(t) => t,
            PairwiseTerm::Lazy(memo) => memo.get_or_init(|| self.evaluate_lazy(u, v)),
        }
    }

    pub fn is_lazy(&self, e: usize) -> bool {
        matches!(self.pairwise[e], PairwiseTerm::Lazy(_))
    }

    fn call(&self, u: NodeId, v: NodeId, a: usize, b: usize) -> Cost<T> {
        let f = self.callback.as_ref().expect("lazy edge without callback");
        f(u, v, a, b)
    }

    fn evaluate_lazy(&self, u: NodeId, v: NodeId) -> Arc<[Cost<T>]> {
        let (nu, nv) = (self.label_counts[u], self.label_counts[v]);
        let mut table = Vec::with_capacity(nu * nv);
        for a in 0..nu {
            for b in 0..nv {
                table.push(self.call(u, v, a, b));
            }
        }
        table.into()
    }

    /// Copy of the model with every lazy edge replaced by a stored table.
    pub fn materialized(&self) -> Self {
        let pairwise = (0..self.edge_count())
            .map(|e| PairwiseTerm::Table(Arc::from(self.pairwise_table(e))))
            .collect();
        GraphicalModel { pairwise, callback: None, ..self.clone() }
    }

    /// Same model with a different additive constant.
    pub fn with_constant(mut self, constant: T) -> Self {
        self.constant = constant;
        self
    }

    pub fn check_labeling(&self, labels: &[usize]) -> Result<(), ModelError> {
        if labels.len() != self.node_count() {
            return Err(ModelError::DimensionMismatch { expected: self.node_count(), got: labels.len() });
        }
        for (node, (&label, &count)) in labels.iter().zip(&self.label_counts).enumerate() {
            if label >= count {
                return Err(ModelError::LabelOutOfRange { node, label, count });
            }
        }
        Ok(())
    }

    /// `Σ_u θ_u(l_u) + β Σ_{uv} θ_uv(l_u, l_v) + constant`, or `∞` when any
    /// term is infinite. Terms are accumulated in node then edge order, so
    /// repeated evaluations are bit-identical.
    pub fn evaluate_energy(&self, labeling: &Labeling) -> Result<Cost<T>, ModelError> {
        self.check_labeling(&labeling.0)?;
        Ok(self.energy_unchecked(&labeling.0))
    }

    pub(crate) fn energy_unchecked(&self, l: &[usize]) -> Cost<T> {
        let mut unary_sum = T::zero();
        for (u, &label) in l.iter().enumerate() {
            match self.unary[u][label] {
                Cost::Finite(c) => unary_sum += c,
                Cost::Infinite => return Cost::Infinite,
            }
        }
        let mut pair_sum = T::zero();
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            match self.pairwise(e, l[u], l[v]) {
                Cost::Finite(c) => pair_sum += c,
                Cost::Infinite => return Cost::Infinite,
            }
        }
        Cost::Finite(unary_sum + self.pairwise_weight * pair_sum + self.constant)
    }

    /// Model induced by `keep`: its nodes, every edge with both endpoints in
    /// `keep`, and unchanged unary and pairwise costs. The constant offset is
    /// carried over. The returned map sends new node ids to old ones and is
    /// increasing.
    pub fn induce_submodel(&self, keep: &[NodeId]) -> Result<(Self, Vec<NodeId>), ModelError> {
        if keep.is_empty() {
            return Err(ModelError::EmptySubmodel);
        }
        let mut node_map = keep.to_vec();
        node_map.sort_unstable();
        node_map.dedup();
        let n = self.node_count();
        if let Some(&bad) = node_map.iter().find(|&&u| u >= n) {
            return Err(ModelError::NodeOutOfRange { u: bad, v: bad, node_count: n });
        }
        let mut new_id = vec![usize::MAX; n];
        for (i, &old) in node_map.iter().enumerate() {
            new_id[old] = i;
        }

        let mut edges = Vec::new();
        let mut pairwise = Vec::new();
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            if new_id[u] != usize::MAX && new_id[v] != usize::MAX {
                edges.push((new_id[u], new_id[v]));
                pairwise.push(self.pairwise[e].clone());
            }
        }
        let callback = self.callback.clone().map(|f| {
            let map = node_map.clone();
            Arc::new(move |u: NodeId, v: NodeId, a: usize, b: usize| f(map[u], map[v], a, b)) as Arc<PairwiseFn<T>>
        });
        let label_counts: Vec<usize> = node_map.iter().map(|&u| self.label_counts[u]).collect();
        let unary = node_map.iter().map(|&u| self.unary[u].clone()).collect();
        let adjacency = build_adjacency(label_counts.len(), &edges);
        let model = GraphicalModel {
            label_counts,
            unary,
            edges,
            pairwise,
            callback,
            adjacency,
            pairwise_weight: self.pairwise_weight,
            constant: self.constant,
        };
        Ok((model, node_map))
    }

    pub fn is_binary(&self) -> bool {
        self.label_counts.iter().all(|&c| c == 2)
    }

    /// Same graph with new unaries and constant; edges listed in `replaced`
    /// get new tables, the rest keep theirs.
    pub(crate) fn with_terms(&self, unary: Vec<Vec<Cost<T>>>, replaced: Vec<(usize, Vec<Cost<T>>)>, constant: T) -> Self {
        debug_assert!(unary.iter().zip(&self.label_counts).all(|(u, &c)| u.len() == c));
        let mut pairwise = self.pairwise.clone();
        for (e, table) in replaced {
            let (u, v) = self.edges[e];
            assert_eq!(table.len(), self.label_counts[u] * self.label_counts[v], "edge {e} table shape");
            pairwise[e] = PairwiseTerm::Table(table.into());
        }
        GraphicalModel { unary, pairwise, constant, ..self.clone() }
    }
}

fn build_adjacency(n: usize, edges: &[(NodeId, NodeId)]) -> Vec<Vec<(NodeId, usize)>> {
    let mut adjacency = vec![Vec::new(); n];
    for (e, &(u, v)) in edges.iter().enumerate() {
        adjacency[u].push((v, e));
        adjacency[v].push((u, e));
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    adjacency
}

/// Places a submodel's partial labeling into a master of `master_size` nodes.
/// Nodes outside the submodel receive `fill`; unlabeled submodel entries stay
/// unlabeled.
pub fn extend_partial(
    master_size: usize,
    sub: &PartialLabeling,
    node_map: &[NodeId],
    fill: Option<usize>,
) -> PartialLabeling {
    assert_eq!(sub.len(), node_map.len(), "node map does not match the submodel");
    let mut out = vec![fill; master_size];
    for (&old, &label) in node_map.iter().zip(&sub.0) {
        out[old] = label;
    }
    PartialLabeling(out)
}

enum PendingPairwise<T> {
    Table(Vec<Cost<T>>),
    Lazy,
}

/// Incremental constructor for [`GraphicalModel`].
pub struct ModelBuilder<T> {
    unary: Vec<Vec<Cost<T>>>,
    edges: Vec<(NodeId, NodeId, PendingPairwise<T>)>,
    callback: Option<Arc<PairwiseFn<T>>>,
    pairwise_weight: T,
    constant: T,
}

impl<T: Scalar> Default for ModelBuilder<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ModelBuilder<T> {
    pub fn new() -> Self {
        ModelBuilder {
            unary: Vec::new(),
            edges: Vec::new(),
            callback: None,
            pairwise_weight: T::one(),
            constant: T::zero(),
        }
    }

    /// Adds a node whose label count is the length of `unary`.
    pub fn add_node(&mut self, unary: Vec<Cost<T>>) -> NodeId {
        self.unary.push(unary);
        self.unary.len() - 1
    }

    pub fn add_node_f64(&mut self, unary: &[f64]) -> NodeId {
        self.add_node(unary.iter().map(|&c| Cost::from_f64(c)).collect())
    }

    /// Adds edge `{u, v}` with a row-major table indexed `(label_u, label_v)`
    /// in the order given here; it is transposed when `u > v`.
    pub fn add_edge(&mut self, u: NodeId, v: NodeId, table: Vec<Cost<T>>) -> &mut Self {
        self.edges.push((u, v, PendingPairwise::Table(table)));
        self
    }

    pub fn add_edge_f64(&mut self, u: NodeId, v: NodeId, table: &[f64]) -> &mut Self {
        self.add_edge(u, v, table.iter().map(|&c| Cost::from_f64(c)).collect())
    }

    /// Adds an edge whose costs come from the pairwise callback.
    pub fn add_lazy_edge(&mut self, u: NodeId, v: NodeId) -> &mut Self {
        self.edges.push((u, v, PendingPairwise::Lazy));
        self
    }

    pub fn pairwise_fn(&mut self, f: Arc<PairwiseFn<T>>) -> &mut Self {
        self.callback = Some(f);
        self
    }

    pub fn pairwise_weight(&mut self, beta: T) -> &mut Self {
        self.pairwise_weight = beta;
        self
    }

    pub fn constant(&mut self, constant: T) -> &mut Self {
        self.constant = constant;
        self
    }

    pub fn build(self) -> Result<GraphicalModel<T>, ModelError> {
        let n = self.unary.len();
        let label_counts: Vec<usize> = self.unary.iter().map(Vec::len).collect();
        if let Some(node) = label_counts.iter().position(|&c| c == 0) {
            return Err(ModelError::EmptyLabelSet { node });
        }

        let mut staged = Vec::with_capacity(self.edges.len());
        for (u, v, pending) in self.edges {
            if u >= n || v >= n {
                return Err(ModelError::NodeOutOfRange { u, v, node_count: n });
            }
            if u == v {
                return Err(ModelError::SelfLoop(u));
            }
            let (nu, nv) = (label_counts[u], label_counts[v]);
            let term = match pending {
                PendingPairwise::Table(table) => {
                    if table.len() != nu * nv {
                        return Err(ModelError::PairwiseShape { u, v, expected: nu * nv, got: table.len() });
                    }
                    let table = if u < v {
                        table
                    } else {
                        let mut t = Vec::with_capacity(table.len());
                        for b in 0..nv {
                            for a in 0..nu {
                                t.push(table[a * nv + b]);
                            }
                        }
                        t
                    };
                    PairwiseTerm::Table(table.into())
                }
                PendingPairwise::Lazy => {
                    if self.callback.is_none() {
                        return Err(ModelError::MissingCallback(u, v));
                    }
                    PairwiseTerm::Lazy(OnceLock::new())
                }
            };
            staged.push(((u.min(v), u.max(v)), term));
        }
        staged.sort_by_key(|(key, _)| *key);
        if let Some(w) = staged.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(ModelError::DuplicateEdge(w[0].0 .0, w[0].0 .1));
        }
        let (edges, pairwise): (Vec<_>, Vec<_>) = staged.into_iter().unzip();

        for (node, (table, &count)) in self.unary.iter().zip(&label_counts).enumerate() {
            debug_assert_eq!(table.len(), count, "node {node}");
        }
        let adjacency = build_adjacency(n, &edges);
        Ok(GraphicalModel {
            label_counts,
            unary: self.unary,
            edges,
            pairwise,
            callback: self.callback,
            adjacency,
            pairwise_weight: self.pairwise_weight,
            constant: self.constant,
        })
    }
}

/// A graphical model with exactly two labels per node.
#[derive(Clone)]
pub struct BinaryModel<T>(GraphicalModel<T>);

impl<T: Scalar> fmt::Debug for BinaryModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("BinaryModel").field(&self.0).finish()
    }
}

impl<T: Scalar> BinaryModel<T> {
    pub fn new(model: GraphicalModel<T>) -> Result<Self, ModelError> {
        if let Some(node) = model.label_counts.iter().position(|&c| c != 2) {
            return Err(ModelError::NotBinary { node, count: model.label_counts[node] });
        }
        Ok(BinaryModel(model))
    }

    pub fn model(&self) -> &GraphicalModel<T> {
        &self.0
    }

    pub fn into_inner(self) -> GraphicalModel<T> {
        self.0
    }

    /// Pairwise entries of edge `e` as `[θ(0,0), θ(0,1), θ(1,0), θ(1,1)]`.
    pub fn quad(&self, e: usize) -> [Cost<T>; 4] {
        let t = self.0.pairwise_table(e);
        [t[0], t[1], t[2], t[3]]
    }

    pub fn induce_submodel(&self, keep: &[NodeId]) -> Result<(Self, Vec<NodeId>), ModelError> {
        let (m, map) = self.0.induce_submodel(keep)?;
        Ok((BinaryModel(m), map))
    }

    pub(crate) fn with_terms(&self, unary: Vec<Vec<Cost<T>>>, replaced: Vec<(usize, Vec<Cost<T>>)>, constant: T) -> Self {
        BinaryModel(self.0.with_terms(unary, replaced, constant))
    }
}

impl<T> std::ops::Deref for BinaryModel<T> {
    type Target = GraphicalModel<T>;

    fn deref(&self) -> &GraphicalModel<T> {
        &self.0
    }
}
