use std::collections::BTreeSet;

use gmpose::pose_model::build_sparse_neighborhood;

/// Ranks 9..=56 of `u` by squared grid distance, ties by index, by sorting
/// the whole grid.
fn ring(u: usize, w: usize, h: usize) -> Vec<usize> {
    let (cu, ru) = ((u % w) as i64, (u / w) as i64);
    let mut all: Vec<(i64, usize)> = (0..w * h)
        .filter(|&v| v != u)
        .map(|v| {
            let (c, r) = ((v % w) as i64, (v / w) as i64);
            ((c - cu).pow(2) + (r - ru).pow(2), v)
        })
        .collect();
    all.sort();
    all.into_iter().skip(8).take(48).map(|(_, v)| v).collect()
}

#[test]
fn interior_node_has_48_ring_neighbours_beyond_the_eight_closest() {
    let (w, h) = (20, 20);
    let u = 10 * w + 10;
    let out = ring(u, w, h);
    assert_eq!(out.len(), 48);
    for &v in &out {
        let (dc, dr) = ((v % w).abs_diff(u % w), (v / w).abs_diff(u / w));
        assert!(dc.max(dr) > 1, "{v} is one of the eight closest");
    }
    let edges: BTreeSet<(usize, usize)> = build_sparse_neighborhood(w, h).into_iter().collect();
    for &v in &out {
        assert!(edges.contains(&(u.min(v), u.max(v))));
    }
}

#[test]
fn edges_are_the_symmetrized_rings() {
    for (w, h) in [(20, 20), (13, 7), (3, 40)] {
        let mut expected = BTreeSet::new();
        for u in 0..w * h {
            for v in ring(u, w, h) {
                expected.insert((u.min(v), u.max(v)));
            }
        }
        let got = build_sparse_neighborhood(w, h);
        let got_set: BTreeSet<_> = got.iter().copied().collect();
        assert_eq!(got.len(), got_set.len(), "duplicate edges on {w}x{h}");
        assert!(got.windows(2).all(|p| p[0] < p[1]), "edges not sorted on {w}x{h}");
        assert_eq!(got_set, expected, "{w}x{h}");
    }
}

#[test]
fn boundary_nodes_take_the_ranks_that_exist() {
    // 3x3 grid: every node has at most 8 others, all skipped
    assert!(build_sparse_neighborhood(3, 3).is_empty());
    // 4x4 corner: 15 others, ranks 9..=15 remain
    assert_eq!(ring(0, 4, 4).len(), 7);
}
