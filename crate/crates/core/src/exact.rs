//! Reference solvers: exhaustive enumeration and best-first branch and
//! bound on the Line relaxation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::heuristic::{solve_restricted, FitnessCache};
use crate::model::{BinarySelection, ProblemInstance, WeightedSolution};
use crate::relax::{self, select_by_scores};

/// Largest `C(n, k)` brute force will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;
/// Nodes with `bound >= incumbent - PRUNE_TOL` are discarded.
pub const PRUNE_TOL: f64 = 1e-9;
const INTEGRAL_TOL: f64 = 1e-9;
const TIE_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactError {
    #[error("C(n, k) = {0} exceeds the enumeration limit")]
    TooLarge(u128),
    #[error("exact solvers need a single all-ones cardinality row")]
    NotUniformCardinality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub solution: WeightedSolution,
    pub proved_optimal: bool,
    pub nodes_explored: usize,
    pub wall_budget_hit: bool,
    pub node_budget_hit: bool,
    /// `(nodes_explored, objective)` at each incumbent improvement.
    pub incumbent_history: Vec<(usize, f64)>,
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn n_choose_k(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = match c.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    c
}

/// All `k`-subsets of `0..n` as index tuples, in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Every cardinality-feasible selection with its restricted optimum, in
/// lexicographic index-tuple order.
pub fn enumerate_fitness(
    inst: &ProblemInstance,
) -> Result<Vec<(BinarySelection, WeightedSolution)>, ExactError> {
    let k = inst
        .uniform_cardinality()
        .ok_or(ExactError::NotUniformCardinality)?;
    let n = inst.n();
    let count = n_choose_k(n, k);
    if count > BRUTE_FORCE_LIMIT {
        return Err(ExactError::TooLarge(count));
    }
    Ok(combinations(n, k)
        .into_par_iter()
        .map(|c| {
            let sel = BinarySelection::from_indices(n, &c);
            let sol = solve_restricted(inst, &sel);
            (sel, sol)
        })
        .collect())
}

/// Strict improvement beyond the relative tie tolerance; any finite value
/// beats `+∞`.
fn better(candidate: f64, incumbent: f64) -> bool {
    if !incumbent.is_finite() {
        return candidate.is_finite();
    }
    candidate < incumbent - TIE_REL_TOL * incumbent.abs()
}

/// Exhaustive enumeration; ties go to the earliest index tuple.
pub fn brute_force(inst: &ProblemInstance) -> Result<ExactResult, ExactError> {
    let all = enumerate_fitness(inst)?;
    let nodes = all.len();
    let mut best: Option<WeightedSolution> = None;
    let mut history = Vec::new();
    for (i, (_, sol)) in all.into_iter().enumerate() {
        let take = match &best {
            None => true,
            Some(b) => better(sol.objective, b.objective),
        };
        if take {
            if sol.objective.is_finite() {
                history.push((i + 1, sol.objective));
            }
            best = Some(sol);
        }
    }
    let solution = best.unwrap_or_else(|| {
        WeightedSolution::infeasible(BinarySelection::from_bits(vec![false; inst.n()]))
    });
    Ok(ExactResult {
        solution,
        proved_optimal: true,
        nodes_explored: nodes,
        wall_budget_hit: false,
        node_budget_hit: false,
        incumbent_history: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub nodes: usize,
    pub time: Option<Duration>,
}

impl Budget {
    pub fn nodes(nodes: usize) -> Self {
        Self { nodes, time: None }
    }
}

struct Node {
    bound: f64,
    seq: usize,
    fixings: Vec<Option<bool>>,
    b_relaxed: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Reversed: the heap pops the lowest bound, then the earliest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.seq.cmp(&self.seq))
    }
}

struct Search<'a> {
    inst: &'a ProblemInstance,
    k: usize,
    cache: FitnessCache<'a>,
    incumbent: WeightedSolution,
    history: Vec<(usize, f64)>,
    nodes: usize,
    seq: usize,
}

enum Evaluated {
    Pruned,
    Open(Node),
}

impl Search<'_> {
    fn offer(&mut self, sel: &BinarySelection) {
        let f = self.cache.get(sel);
        if better(f, self.incumbent.objective) {
            self.incumbent = solve_restricted(self.inst, sel);
            self.history.push((self.nodes, self.incumbent.objective));
        }
    }

    fn cutoff(&self) -> f64 {
        self.incumbent.objective - PRUNE_TOL
    }

    /// Solves one node: a leaf is evaluated directly, otherwise the Line
    /// relaxation gives its bound and a rounded incumbent candidate.
    fn evaluate(&mut self, fixings: Vec<Option<bool>>) -> Evaluated {
        self.nodes += 1;
        let n = self.inst.n();
        let ones = fixings.iter().filter(|f| **f == Some(true)).count();
        let free = fixings.iter().filter(|f| f.is_none()).count();
        if ones > self.k || ones + free < self.k {
            return Evaluated::Pruned;
        }
        if ones == self.k || ones + free == self.k {
            // Either every free index is forced to 0 or every one to 1.
            let take = |f: Option<bool>| if ones == self.k { f == Some(true) } else { f != Some(false) };
            let idx: Vec<usize> = (0..n).filter(|&i| take(fixings[i])).collect();
            self.offer(&BinarySelection::from_indices(n, &idx));
            return Evaluated::Pruned;
        }
        let Ok(sol) = relax::solve_line_fixed(self.inst, &fixings) else {
            return Evaluated::Pruned;
        };
        if let Ok(sel) = select_by_scores(self.inst, sol.b_relaxed.as_slice()) {
            self.offer(&sel);
        }
        let integral = (0..n).all(|i| {
            let b = sol.b_relaxed[i];
            b.min(1.0 - b) <= INTEGRAL_TOL
        });
        if integral || sol.bound >= self.cutoff() {
            return Evaluated::Pruned;
        }
        self.seq += 1;
        Evaluated::Open(Node {
            bound: sol.bound,
            seq: self.seq,
            fixings,
            b_relaxed: sol.b_relaxed.iter().copied().collect(),
        })
    }
}

/// Best-first branch and bound. The tree is exhausted (proved optimal)
/// unless the node or time budget stops it first.
pub fn branch_and_bound(inst: &ProblemInstance, budget: Budget) -> Result<ExactResult, ExactError> {
    let k = inst
        .uniform_cardinality()
        .ok_or(ExactError::NotUniformCardinality)?;
    let n = inst.n();
    let start = Instant::now();
    let mut search = Search {
        inst,
        k,
        cache: FitnessCache::new(inst),
        incumbent: WeightedSolution::infeasible(BinarySelection::from_bits(vec![false; n])),
        history: Vec::new(),
        nodes: 0,
        seq: 0,
    };
    let mut heap = BinaryHeap::new();
    let mut node_budget_hit = false;
    let mut wall_budget_hit = false;

    if budget.nodes == 0 {
        node_budget_hit = true;
    } else if let Evaluated::Open(root) = search.evaluate(vec![None; n]) {
        heap.push(root);
    }

    while let Some(node) = heap.peek() {
        if node.bound >= search.cutoff() {
            heap.clear();
            break;
        }
        if search.nodes >= budget.nodes {
            node_budget_hit = true;
            break;
        }
        if budget.time.is_some_and(|t| start.elapsed() >= t) {
            wall_budget_hit = true;
            break;
        }
        let node = heap.pop().unwrap();
        let branch = (0..n)
            .filter(|&i| node.fixings[i].is_none())
            .max_by(|&i, &j| {
                let fi = node.b_relaxed[i].min(1.0 - node.b_relaxed[i]);
                let fj = node.b_relaxed[j].min(1.0 - node.b_relaxed[j]);
                fi.total_cmp(&fj).then(j.cmp(&i))
            })
            .expect("open node has a free index");
        for value in [true, false] {
            if search.nodes >= budget.nodes {
                node_budget_hit = true;
                break;
            }
            let mut fixings = node.fixings.clone();
            fixings[branch] = Some(value);
            if let Evaluated::Open(child) = search.evaluate(fixings) {
                heap.push(child);
            }
        }
        if node_budget_hit {
            break;
        }
    }
    let exhausted = heap.is_empty() && !node_budget_hit && !wall_budget_hit;
    Ok(ExactResult {
        solution: search.incumbent,
        proved_optimal: exhausted,
        nodes_explored: search.nodes,
        wall_budget_hit,
        node_budget_hit,
        incumbent_history: search.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_from_mv, MvSpec};
    use nalgebra::{DMatrix, DVector};

    fn simplex(n: usize, k: usize) -> ProblemInstance {
        ProblemInstance::new(
            DMatrix::identity(n, n),
            DVector::zeros(n),
            DMatrix::from_element(1, n, 1.0),
            DVector::from_element(1, 1.0),
            DVector::zeros(n),
            DVector::from_element(n, 1.0),
            DMatrix::from_element(1, n, 1.0),
            vec![k],
        )
        .unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(n_choose_k(5, 2), 10);
        assert_eq!(n_choose_k(31, 10), 44_352_165);
        assert_eq!(n_choose_k(3, 4), 0);
        assert!(n_choose_k(225, 10) > BRUTE_FORCE_LIMIT);
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(4, 2)[0], vec![0, 1]);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn brute_force_examples() {
        let r = brute_force(&simplex(3, 3)).unwrap();
        assert_eq!(r.solution.selection.bits(), &[true; 3]);
        let r = brute_force(&simplex(5, 2)).unwrap();
        assert_eq!(r.solution.selection.bits(), &[true, true, false, false, false]);
        assert!((r.solution.objective - 0.5).abs() < 1e-12);
        assert!(r.proved_optimal);
    }

    #[test]
    fn too_large_guard() {
        let inst = simplex(225, 10);
        assert!(matches!(brute_force(&inst), Err(ExactError::TooLarge(_))));
    }

    #[test]
    fn node_budget_one_returns_root_incumbent() {
        let spec = MvSpec {
            returns: vec![0.05, 0.1, 0.12, 0.2, 0.07, 0.15],
            target_return: 0.11,
            k: 2,
            lower: 0.0,
            upper: 1.0,
        };
        let q = DMatrix::from_fn(6, 6, |i, j| if i == j { 1.0 + i as f64 * 0.3 } else { 0.2 });
        let inst = build_from_mv(&spec, &q).unwrap();
        let r = branch_and_bound(&inst, Budget::nodes(1)).unwrap();
        assert!(!r.proved_optimal && r.node_budget_hit);
        assert_eq!(r.nodes_explored, 1);
        let full = branch_and_bound(&inst, Budget::nodes(1_000_000)).unwrap();
        let bf = brute_force(&inst).unwrap();
        assert!(full.proved_optimal);
        assert!((full.solution.objective - bf.solution.objective).abs() < 1e-8);
    }
}
