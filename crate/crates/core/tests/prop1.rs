use gmpose::oracle::{brute_force, check_persistency_with, instances, verify_prop1};
use gmpose::submodels::{solve_decomposed, SubmodelSpec};
use gmpose::{BinaryModel, ModelBuilder, Rational64};
use rand::Rng;

#[test]
fn zero_extension_is_optimal_in_exact_arithmetic() {
    let report = verify_prop1::<Rational64>(200, 12, 2024, Rational64::from_integer(0));
    assert!(report.all_passed(), "{:?}", report.failures);
    assert_eq!(report.trials, 200);
}

/// QPBO on an induced submodel whose node set covers the inliers of some
/// master optimum: the labeled nodes plus zeros elsewhere agree with a
/// master optimum.
#[test]
fn qpbo_on_a_covering_submodel_is_partially_optimal_for_the_master() {
    for trial in 0..150u64 {
        let mut rng = instances::trial_rng(99, trial);
        let n = rng.random_range(2..=11);
        let master: BinaryModel<Rational64> = instances::random_zero_form(&mut rng, n, 0.7, 0.15);
        let full = brute_force(&master, 4096).unwrap();
        let hat = &full.optima[0];
        let nodes: Vec<usize> = (0..n).filter(|&u| hat.0[u] == 1 || rng.random_bool(0.4)).collect();
        if nodes.is_empty() {
            continue;
        }
        let spec = SubmodelSpec { seed: 0, members: vec![0], nodes };
        let results = solve_decomposed(&master, std::slice::from_ref(&spec)).unwrap();
        let labeling = &results[0].labeling;
        for u in (0..n).filter(|u| !spec.nodes.contains(u)) {
            assert_eq!(labeling.0[u], Some(0));
        }
        assert!(check_persistency_with(&master, labeling, &full).unwrap(), "trial {trial}: {labeling:?}");
    }
}

#[test]
fn decomposition_recovers_a_planted_unique_optimum() {
    // nodes 0..3 attract each other, 4 and 5 are expensive as inliers
    let mut b = ModelBuilder::<Rational64>::new();
    for u in 0..6 {
        let one = if u < 4 { -1 } else { 3 };
        b.add_node_f64(&[0.0, one as f64]);
    }
    for u in 0..6 {
        for v in u + 1..6 {
            let d = if u < 4 && v < 4 { -0.5 } else { 1.0 };
            b.add_edge_f64(u, v, &[0.0, 0.0, 0.0, d]);
        }
    }
    let master = BinaryModel::new(b.build().unwrap()).unwrap();
    let full = brute_force(&master, 16).unwrap();
    assert_eq!(full.optima.len(), 1);
    assert_eq!(full.optima[0].0, vec![1, 1, 1, 1, 0, 0]);
    let specs = vec![
        SubmodelSpec { seed: 0, members: vec![0], nodes: vec![0, 1, 2, 3, 4] },
        SubmodelSpec { seed: 1, members: vec![1], nodes: vec![4, 5] },
    ];
    let results = solve_decomposed(&master, &specs).unwrap();
    assert_eq!(results[0].labeling.0, vec![Some(1), Some(1), Some(1), Some(1), Some(0), Some(0)]);
    assert!(results[1].labeling.agrees_with(&[0, 0, 0, 0, 0, 0]));
}
