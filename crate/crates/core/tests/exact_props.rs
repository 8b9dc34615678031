mod common;

use common::{random_mv, restricted_oracle};
use miqp_hybrid::exact::*;
use miqp_hybrid::model::BinarySelection;
use proptest::prelude::*;

#[test]
fn brute_force_matches_slow_enumeration() {
    let inst = random_mv(12, 4, 0.01, 21);
    let bf = brute_force(&inst).unwrap();
    assert!(bf.proved_optimal);
    let best = common::combinations(12, 4)
        .into_iter()
        .map(|c| restricted_oracle(&inst, &c))
        .fold(f64::INFINITY, f64::min);
    let rel = (bf.solution.objective - best).abs() / best.abs();
    assert!(rel <= 1e-6, "{} vs {best}", bf.solution.objective);
}

#[test]
fn branch_and_bound_agrees_with_brute_force() {
    for seed in 0..50u64 {
        let n = 5 + (seed as usize % 8);
        let k = 1 + (seed as usize / 8) % 4;
        assert!(n_choose_k(n, k) <= 10_000);
        let inst = random_mv(n, k, 0.01, 900 + seed);
        let bf = brute_force(&inst).unwrap();
        let bb = branch_and_bound(&inst, Budget::nodes(1_000_000)).unwrap();
        assert!(bb.proved_optimal);
        assert!(!bb.node_budget_hit && !bb.wall_budget_hit);
        let (a, b) = (bf.solution.objective, bb.solution.objective);
        if a.is_finite() {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "seed {seed}: {a} vs {b}");
            assert_eq!(bb.solution.selection.popcount(), k);
        } else {
            assert!(b.is_infinite());
        }
        for w in bb.incumbent_history.windows(2) {
            assert!(w[0].0 <= w[1].0 && w[1].1 <= w[0].1, "history {:?}", bb.incumbent_history);
        }
    }
}

#[test]
fn unit_node_budget_returns_root_incumbent() {
    let inst = random_mv(10, 3, 0.01, 4);
    let r = branch_and_bound(&inst, Budget::nodes(1)).unwrap();
    assert!(!r.proved_optimal && r.node_budget_hit);
    assert_eq!(r.solution.selection.popcount(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn proved_optimum_bounds_every_selection(seed in any::<u64>(), n in 3usize..9) {
        let k = 1 + (seed as usize % (n - 1));
        let inst = random_mv(n, k, 0.01, seed);
        let bb = branch_and_bound(&inst, Budget::nodes(100_000)).unwrap();
        prop_assert!(bb.proved_optimal);
        for c in combinations(n, k) {
            let f = miqp_hybrid::heuristic::fitness(&inst, &BinarySelection::from_indices(n, &c));
            prop_assert!(bb.solution.objective <= f + 1e-8 * f.abs().max(1.0));
        }
    }
}
