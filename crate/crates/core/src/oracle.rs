//! Exhaustive minimization used as ground truth by the solver tests and the
//! verification suites.

use crate::cost::Cost;
use crate::model::{extend_partial, BinaryModel, GraphicalModel, Labeling, ModelError, PartialLabeling};
use crate::scalar::Scalar;

/// Largest state space `Π |L_u|` the oracle agrees to enumerate.
pub const STATE_SPACE_GUARD: u128 = 10_000_000;
pub const DEFAULT_OPTIMA_CAP: usize = 1024;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("state space of {states} labelings exceeds the guard of {STATE_SPACE_GUARD}")]
    StateSpaceTooLarge { states: u128 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult<T> {
    pub optimal_energy: Cost<T>,
    /// Labelings attaining `optimal_energy`, in lexicographic order.
    pub optima: Vec<Labeling>,
    /// Set when more optima existed than the cap allowed.
    pub truncated: bool,
}

pub fn state_space(model: &GraphicalModel<impl Scalar>) -> u128 {
    model.label_counts().iter().fold(1u128, |acc, &c| acc.saturating_mul(c as u128))
}

/// Exact minimization by depth-first enumeration.
///
/// Branches are cut only when a valid lower bound on their completion exceeds
/// the incumbent, and every leaf is scored with
/// [`GraphicalModel::evaluate_energy`], so the reported optima evaluate to
/// `optimal_energy` exactly.
pub fn brute_force<T: Scalar>(model: &GraphicalModel<T>, cap: usize) -> Result<OracleResult<T>, OracleError> {
    brute_force_constrained(model, &PartialLabeling::unlabeled(model.node_count()), cap)
}

/// [`brute_force`] restricted to labelings agreeing with `fixed`.
pub fn brute_force_constrained<T: Scalar>(
    model: &GraphicalModel<T>,
    fixed: &PartialLabeling,
    cap: usize,
) -> Result<OracleResult<T>, OracleError> {
    let n = model.node_count();
    if fixed.len() != n {
        return Err(ModelError::DimensionMismatch { expected: n, got: fixed.len() }.into());
    }
    let domains: Vec<Vec<usize>> = (0..n)
        .map(|u| match fixed.0[u] {
            Some(l) if l < model.label_count(u) => Ok(vec![l]),
            Some(l) => Err(ModelError::LabelOutOfRange { node: u, label: l, count: model.label_count(u) }),
            None => Ok((0..model.label_count(u)).collect()),
        })
        .collect::<Result<_, _>>()?;
    let states = domains.iter().fold(1u128, |acc, d| acc.saturating_mul(d.len() as u128));
    if states > STATE_SPACE_GUARD {
        return Err(OracleError::StateSpaceTooLarge { states });
    }

    let mut search = Search::new(model, domains, cap);
    if n == 0 {
        search.leaf();
    } else {
        search.descend(0, Cost::zero());
    }
    Ok(OracleResult { optimal_energy: search.best, optima: search.optima, truncated: search.truncated })
}

struct Search<'a, T> {
    model: &'a GraphicalModel<T>,
    domains: Vec<Vec<usize>>,
    /// Edges `(w, e)` with `w < u`, for each node `u`.
    back_edges: Vec<Vec<(usize, usize)>>,
    /// Lower bound on everything decided at depth ≥ d.
    remaining: Vec<Cost<T>>,
    slack: T,
    labels: Vec<usize>,
    best: Cost<T>,
    optima: Vec<Labeling>,
    truncated: bool,
    cap: usize,
}

impl<'a, T: Scalar> Search<'a, T> {
    fn new(model: &'a GraphicalModel<T>, domains: Vec<Vec<usize>>, cap: usize) -> Self {
        let n = model.node_count();
        let beta = model.pairwise_weight();
        let mut back_edges = vec![Vec::new(); n];
        for (e, &(u, v)) in model.edges().iter().enumerate() {
            back_edges[v].push((u, e));
        }

        let mut scale = T::zero();
        let mut remaining = vec![Cost::zero(); n + 1];
        for d in (0..n).rev() {
            let unary_min = domains[d]
                .iter()
                .map(|&l| model.unary(d)[l])
                .fold(Cost::Infinite, |a, b| if b < a { b } else { a });
            let mut at_d = unary_min;
            for &(w, e) in &back_edges[d] {
                let mut lo = Cost::Infinite;
                for &a in &domains[w] {
                    for &b in &domains[d] {
                        let c = model.pairwise(e, a, b).scale(beta);
                        if c < lo {
                            lo = c;
                        }
                        if let Cost::Finite(x) = c {
                            scale += x.abs();
                        }
                    }
                }
                at_d = at_d + lo;
            }
            for &l in &domains[d] {
                if let Cost::Finite(x) = model.unary(d)[l] {
                    scale += x.abs();
                }
            }
            remaining[d] = at_d + remaining[d + 1];
        }

        Search {
            model,
            domains,
            back_edges,
            remaining,
            slack: T::negligible(scale) + T::negligible(scale),
            labels: vec![0; n],
            best: Cost::Infinite,
            optima: Vec::new(),
            truncated: false,
            cap,
        }
    }

    fn prune(&self, partial: Cost<T>, depth: usize) -> bool {
        match self.best {
            Cost::Infinite => false,
            Cost::Finite(best) => match partial + self.remaining[depth] {
                Cost::Infinite => true,
                Cost::Finite(bound) => bound > best + self.slack,
            },
        }
    }

    fn descend(&mut self, depth: usize, partial: Cost<T>) {
        let beta = self.model.pairwise_weight();
        for i in 0..self.domains[depth].len() {
            let label = self.domains[depth][i];
            self.labels[depth] = label;
            let mut here = partial + self.model.unary(depth)[label];
            for &(w, e) in &self.back_edges[depth] {
                here = here + self.model.pairwise(e, self.labels[w], label).scale(beta);
            }
            if self.prune(here, depth + 1) {
                continue;
            }
            if depth + 1 == self.labels.len() {
                self.leaf();
            } else {
                self.descend(depth + 1, here);
            }
        }
    }

    fn leaf(&mut self) {
        let energy = self.model.energy_unchecked(&self.labels);
        if energy < self.best || self.optima.is_empty() {
            self.best = energy;
            self.optima.clear();
            self.truncated = false;
            self.optima.push(Labeling(self.labels.clone()));
        } else if energy == self.best {
            if self.optima.len() < self.cap {
                self.optima.push(Labeling(self.labels.clone()));
            } else {
                self.truncated = true;
            }
        }
    }
}

/// True iff some exact optimum of `model` agrees with every labeled node of
/// `partial`. Falls back to a constrained search when the optima list was
/// truncated.
pub fn check_persistency<T: Scalar>(model: &BinaryModel<T>, partial: &PartialLabeling) -> Result<bool, OracleError> {
    let full = brute_force(model, DEFAULT_OPTIMA_CAP)?;
    check_persistency_with(model, partial, &full)
}

/// [`check_persistency`] reusing an already computed oracle result.
pub fn check_persistency_with<T: Scalar>(
    model: &GraphicalModel<T>,
    partial: &PartialLabeling,
    full: &OracleResult<T>,
) -> Result<bool, OracleError> {
    if partial.labeled_count() == 0 {
        return Ok(true);
    }
    if full.optima.iter().any(|o| partial.agrees_with(&o.0)) {
        return Ok(true);
    }
    if !full.truncated {
        return Ok(false);
    }
    let constrained = brute_force_constrained(model, partial, 1)?;
    Ok(constrained.optimal_energy == full.optimal_energy)
}

/// True iff every listed optimum agrees with `partial` (strong persistency).
/// Only meaningful when the optima list is not truncated.
pub fn all_optima_agree<T>(partial: &PartialLabeling, full: &OracleResult<T>) -> bool {
    full.optima.iter().all(|o| partial.agrees_with(&o.0))
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub trials: usize,
    pub passed: usize,
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn new(suite: &str) -> Self {
        SuiteReport { suite: suite.to_string(), trials: 0, passed: 0, failures: Vec::new() }
    }

    pub fn record(&mut self, trial: usize, outcome: Result<(), String>) {
        self.trials += 1;
        match outcome {
            Ok(()) => self.passed += 1,
            Err(msg) => self.failures.push(format!("trial {trial}: {msg}")),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.passed == self.trials
    }
}

/// Executes the optimality argument for induced submodels on random
/// zero-form binary models: for an optimum `l̂` with inlier set `V̂` and a
/// random `V′ ⊇ V̂`, the optimum of the induced model extended by zeros must
/// attain the master optimum (within `tolerance`).
pub fn verify_prop1<T: Scalar>(trials: usize, max_nodes: usize, seed: u64, tolerance: T) -> SuiteReport {
    use rand::Rng;

    let mut report = SuiteReport::new("prop1");
    for trial in 0..trials {
        let mut rng = instances::trial_rng(seed, trial as u64);
        let n = rng.random_range(2..=max_nodes.max(2));
        let master: BinaryModel<T> = instances::random_zero_form(&mut rng, n, 0.7, 0.15);
        let outcome = (|| -> Result<(), String> {
            let full = brute_force(&master, 1).map_err(|e| e.to_string())?;
            let hat = &full.optima[0];
            let keep: Vec<usize> =
                (0..n).filter(|&u| hat.0[u] == 1 || rng.random_bool(0.5)).collect();
            let keep = if keep.is_empty() { vec![rng.random_range(0..n)] } else { keep };
            let (sub, map) = master.induce_submodel(&keep).map_err(|e| e.to_string())?;
            let sub_opt = brute_force(&sub, 1).map_err(|e| e.to_string())?;
            let sub_partial = PartialLabeling::from(&sub_opt.optima[0]);
            let extended = extend_partial(n, &sub_partial, &map, Some(0));
            let star = Labeling(extended.0.iter().map(|l| l.expect("fully labeled")).collect());
            let energy = master.evaluate_energy(&star).map_err(|e| e.to_string())?;
            match (energy, full.optimal_energy) {
                (Cost::Finite(a), Cost::Finite(b)) if (a - b).abs() <= tolerance => Ok(()),
                (a, b) => Err(format!("extended energy {a:?} vs optimum {b:?} (n={n}, keep={keep:?})")),
            }
        })();
        report.record(trial, outcome);
    }
    report
}

/// Seeded random instances for tests and verification suites.
///
/// Costs are multiples of 1/8 (or 1/64 for the `continuous` variants) so
/// sums are exact in binary floating point and in rationals alike.
pub mod instances {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::cost::Cost;
    use crate::model::{BinaryModel, GraphicalModel, ModelBuilder};
    use crate::scalar::Scalar;

    /// Independent generator for trial `index` of a run seeded with `seed`.
    pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        rng
    }

    fn dyadic<T: Scalar>(rng: &mut impl Rng, lo: i64, hi: i64, denom: i64) -> Cost<T> {
        let k = rng.random_range(lo * denom..=hi * denom);
        Cost::Finite(T::from_f64_lossy(k as f64 / denom as f64))
    }

    /// Multi-label model with `n` nodes of 1..=`max_labels` labels and edges
    /// present independently with probability `edge_prob`. Costs lie in
    /// [0, 4] with resolution 1/64.
    pub fn random_model<T: Scalar>(
        rng: &mut impl Rng,
        n: usize,
        max_labels: usize,
        edge_prob: f64,
    ) -> GraphicalModel<T> {
        let mut b = ModelBuilder::new();
        let counts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=max_labels)).collect();
        for &c in &counts {
            let unary = (0..c).map(|_| dyadic(rng, 0, 4, 64)).collect();
            b.add_node(unary);
        }
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(edge_prob) {
                    let table = (0..counts[u] * counts[v]).map(|_| dyadic(rng, 0, 4, 64)).collect();
                    b.add_edge(u, v, table);
                }
            }
        }
        b.pairwise_weight(T::from_f64_lossy(rng.random_range(1..=8) as f64 / 4.0));
        b.build().expect("valid random model")
    }

    /// Random tree (each node `u > 0` attached to a random earlier node),
    /// optionally renumbered by a random permutation.
    pub fn random_tree<T: Scalar>(rng: &mut impl Rng, n: usize, max_labels: usize, shuffle: bool) -> GraphicalModel<T> {
        let mut order: Vec<usize> = (0..n).collect();
        if shuffle {
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
        }
        let counts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=max_labels)).collect();
        let mut b = ModelBuilder::new();
        for &c in &counts {
            b.add_node((0..c).map(|_| dyadic(rng, 0, 4, 64)).collect());
        }
        for k in 1..n {
            let parent = order[rng.random_range(0..k)];
            let child = order[k];
            let table = (0..counts[parent] * counts[child]).map(|_| dyadic(rng, 0, 4, 64)).collect();
            b.add_edge(parent, child, table);
        }
        b.build().expect("valid random tree")
    }

    /// Path `0 – 1 – … – n-1`.
    pub fn random_chain<T: Scalar>(rng: &mut impl Rng, n: usize, max_labels: usize) -> GraphicalModel<T> {
        let counts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=max_labels)).collect();
        let mut b = ModelBuilder::new();
        for &c in &counts {
            b.add_node((0..c).map(|_| dyadic(rng, 0, 4, 64)).collect());
        }
        for u in 1..n {
            let table = (0..counts[u - 1] * counts[u]).map(|_| dyadic(rng, 0, 4, 64)).collect();
            b.add_edge(u - 1, u, table);
        }
        b.build().expect("valid random chain")
    }

    /// Shape of the pairwise terms of [`random_binary`].
    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum EdgeMix {
        Submodular,
        Mixed,
    }

    /// Binary model with general pairwise tables. In `Mixed` mode edges are
    /// submodular or supermodular at random, and with probability `inf_prob`
    /// a non-(0,0) entry is `∞` (the all-zero labeling always stays finite).
    /// `coarse` draws costs on a 1/2 grid, which produces many ties.
    pub fn random_binary<T: Scalar>(
        rng: &mut impl Rng,
        n: usize,
        edge_prob: f64,
        mix: EdgeMix,
        inf_prob: f64,
        coarse: bool,
    ) -> BinaryModel<T> {
        let denom = if coarse { 2 } else { 64 };
        let mut b = ModelBuilder::new();
        for _ in 0..n {
            b.add_node(vec![dyadic(rng, -2, 2, denom), dyadic(rng, -2, 2, denom)]);
        }
        for u in 0..n {
            for v in u + 1..n {
                if !rng.random_bool(edge_prob) {
                    continue;
                }
                let mut t: Vec<Cost<T>> = (0..4).map(|_| dyadic(rng, 0, 2, denom)).collect();
                let k = |t: &[Cost<T>]| -> f64 {
                    t[0].to_f64() + t[3].to_f64() - t[1].to_f64() - t[2].to_f64()
                };
                let want_submodular = match mix {
                    EdgeMix::Submodular => true,
                    EdgeMix::Mixed => rng.random_bool(0.5),
                };
                if want_submodular && k(&t) > 0.0 {
                    // raise the off-diagonal entries until θ00 + θ11 ≤ θ01 + θ10
                    let excess = T::from_f64_lossy(k(&t));
                    t[1] = t[1] + excess;
                }
                if mix == EdgeMix::Mixed && rng.random_bool(inf_prob) {
                    t[rng.random_range(1..4)] = Cost::Infinite;
                }
                b.add_edge(u, v, t);
            }
        }
        b.pairwise_weight(T::one());
        BinaryModel::new(b.build().expect("valid random binary model")).expect("binary")
    }

    /// Binary model already in zero form: `θ(0,0) = θ(0,1) = θ(1,0) = 0`,
    /// `θ(1,1)` of either sign or (with probability `inf_prob`) `∞`.
    pub fn random_zero_form<T: Scalar>(rng: &mut impl Rng, n: usize, edge_prob: f64, inf_prob: f64) -> BinaryModel<T> {
        let mut b = ModelBuilder::new();
        for _ in 0..n {
            b.add_node(vec![dyadic(rng, 0, 2, 64), dyadic(rng, -1, 1, 64)]);
        }
        for u in 0..n {
            for v in u + 1..n {
                if !rng.random_bool(edge_prob) {
                    continue;
                }
                let d = if rng.random_bool(inf_prob) { Cost::Infinite } else { dyadic(rng, -1, 2, 64) };
                b.add_edge(u, v, vec![Cost::zero(), Cost::zero(), Cost::zero(), d]);
            }
        }
        b.pairwise_weight(T::from_f64_lossy(rng.random_range(1..=8) as f64 / 4.0));
        BinaryModel::new(b.build().expect("valid zero-form model")).expect("binary")
    }
}

#[cfg(test)]
mod tests {
    use num_rational::Rational64;

    use super::*;
    use crate::model::ModelBuilder;

    #[test]
    fn single_node_picks_unary_argmin() {
        let mut b = ModelBuilder::<f64>::new();
        b.add_node_f64(&[4.0, 1.5, 2.0]);
        let r = brute_force(&b.build().unwrap(), 8).unwrap();
        assert_eq!(r.optimal_energy, Cost::Finite(1.5));
        assert_eq!(r.optima, vec![Labeling(vec![1])]);
    }

    #[test]
    fn two_node_hand_model_unique_optimum() {
        // E(0,1) = 1 + 0 + 0.5 = 1.5 is the unique minimum:
        // E(0,0) = 1+2+3 = 6, E(1,0) = 2+2+1 = 5, E(1,1) = 2+0+4 = 6
        let mut b = ModelBuilder::<f64>::new();
        b.add_node_f64(&[1.0, 2.0]);
        b.add_node_f64(&[2.0, 0.0]);
        b.add_edge_f64(0, 1, &[3.0, 0.5, 1.0, 4.0]);
        let r = brute_force(&b.build().unwrap(), 8).unwrap();
        assert_eq!(r.optimal_energy, Cost::Finite(1.5));
        assert_eq!(r.optima, vec![Labeling(vec![0, 1])]);
    }

    #[test]
    fn infinite_everywhere_but_all_zeros() {
        let mut b = ModelBuilder::<f64>::new();
        for _ in 0..4 {
            b.add_node_f64(&[1.0, 0.0]);
        }
        let inf = f64::INFINITY;
        for u in 0..4 {
            for v in u + 1..4 {
                b.add_edge_f64(u, v, &[0.0, inf, inf, inf]);
            }
        }
        let r = brute_force(&b.build().unwrap(), 8).unwrap();
        assert_eq!(r.optima, vec![Labeling(vec![0; 4])]);
        assert_eq!(r.optimal_energy, Cost::Finite(4.0));
    }

    #[test]
    fn guard_refuses_huge_state_space() {
        let mut b = ModelBuilder::<f64>::new();
        for _ in 0..24 {
            b.add_node_f64(&[0.0, 0.0]);
        }
        let err = brute_force(&b.build().unwrap(), 1).unwrap_err();
        assert_eq!(err, OracleError::StateSpaceTooLarge { states: 1 << 24 });
    }

    #[test]
    fn cap_truncates_and_persistency_falls_back() {
        let mut b = ModelBuilder::<f64>::new();
        for _ in 0..6 {
            b.add_node_f64(&[0.0, 0.0]);
        }
        let m = BinaryModel::new(b.build().unwrap()).unwrap();
        let r = brute_force(&m, 4).unwrap();
        assert_eq!(r.optima.len(), 4);
        assert!(r.truncated);
        // (1,1,1,1,1,1) is not among the first four listed optima
        let p = PartialLabeling(vec![Some(1); 6]);
        assert!(check_persistency_with(&m, &p, &r).unwrap());
    }

    #[test]
    fn persistency_basics() {
        let mut rng = instances::trial_rng(7, 0);
        let m: BinaryModel<f64> = instances::random_binary(&mut rng, 7, 0.6, instances::EdgeMix::Mixed, 0.1, false);
        let full = brute_force(&m, DEFAULT_OPTIMA_CAP).unwrap();
        assert!(check_persistency(&m, &PartialLabeling::unlabeled(7)).unwrap());
        let opt = PartialLabeling::from(&full.optima[0]);
        assert!(check_persistency(&m, &opt).unwrap());
        let flipped = PartialLabeling(opt.0.iter().map(|l| l.map(|x| 1 - x)).collect());
        if full.optima.len() == 1 {
            assert!(!check_persistency(&m, &flipped).unwrap());
        }
    }

    #[test]
    fn optima_evaluate_exactly_to_optimal_energy() {
        for trial in 0..30 {
            let mut rng = instances::trial_rng(11, trial);
            let m: GraphicalModel<f64> = instances::random_model(&mut rng, 6, 3, 0.5);
            let r = brute_force(&m, 64).unwrap();
            for l in &r.optima {
                assert_eq!(m.evaluate_energy(l).unwrap(), r.optimal_energy);
            }
            let again = brute_force(&m, 64).unwrap();
            assert_eq!(r, again);
        }
    }

    #[test]
    fn prop1_identity_and_exact_superset() {
        for trial in 0..20u64 {
            let mut rng = instances::trial_rng(3, trial);
            let m: BinaryModel<Rational64> = instances::random_zero_form(&mut rng, 8, 0.6, 0.2);
            let full = brute_force(&m, 1).unwrap();
            let hat = &full.optima[0];
            let v_hat: Vec<usize> = (0..8).filter(|&u| hat.0[u] == 1).collect();
            for keep in [(0..8).collect::<Vec<_>>(), v_hat] {
                if keep.is_empty() {
                    continue;
                }
                let (sub, map) = m.induce_submodel(&keep).unwrap();
                let sub_opt = brute_force(&sub, 1).unwrap();
                let ext = extend_partial(8, &PartialLabeling::from(&sub_opt.optima[0]), &map, Some(0));
                let star = Labeling(ext.0.iter().map(|l| l.unwrap()).collect());
                assert_eq!(m.evaluate_energy(&star).unwrap(), full.optimal_energy);
            }
        }
    }

    #[test]
    fn prop1_suite_passes_exactly_on_rationals() {
        let report = verify_prop1::<Rational64>(40, 10, 5, Rational64::from_integer(0));
        assert!(report.all_passed(), "{:?}", report.failures);
    }
}
