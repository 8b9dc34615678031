//! Solution pool, genetic algorithm, neighborhood search, and the full
//! relax → pool → GA → VNS → restricted-QP pipeline.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BinarySelection, ProblemInstance, SolutionStatus, WeightedSolution};
use crate::qpsolve::{self, QpProblem, QpStatus};
use crate::relax::{self, DualAscentParams, RelaxError, RelaxationOutcome, RelaxKind};
use crate::seeding::{self, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeuristicError {
    #[error("solution pool is empty")]
    EmptyPool,
    #[error("spread undefined: no finite positive best fitness")]
    DegenerateSpread,
    #[error("no candidate selection yields a feasible restricted problem")]
    PipelineInfeasible,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub m_random: usize,
    pub perturbations_per_relax: usize,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            m_random: 100,
            perturbations_per_relax: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub retain_fraction: f64,
    pub mutation_prob: f64,
    pub spread_threshold: f64,
    pub max_generations: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            retain_fraction: 0.5,
            mutation_prob: 0.1,
            spread_threshold: 0.01,
            max_generations: 200,
        }
    }
}

impl GaConfig {
    pub fn check(&self) -> Result<(), HeuristicError> {
        let p = self.retain_fraction;
        if !(p > 0.0 && p <= 1.0) {
            return Err(HeuristicError::InvalidConfig(format!("retain_fraction {p}")));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(HeuristicError::InvalidConfig(format!(
                "mutation_prob {}",
                self.mutation_prob
            )));
        }
        if !(self.spread_threshold > 0.0) {
            return Err(HeuristicError::InvalidConfig(format!(
                "spread_threshold {}",
                self.spread_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnsConfig {
    pub max_non_improving: usize,
    pub seed: u64,
}

impl Default for VnsConfig {
    fn default() -> Self {
        Self {
            max_non_improving: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub selection: BinarySelection,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pool {
    pub entries: Vec<PoolEntry>,
    pub generation: usize,
}

impl Pool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lowest fitness, earliest entry on ties.
    pub fn best(&self) -> Option<&PoolEntry> {
        self.entries
            .iter()
            .reduce(|a, b| if b.fitness < a.fitness { b } else { a })
    }

    pub fn contains(&self, sel: &BinarySelection) -> bool {
        self.entries.iter().any(|e| &e.selection == sel)
    }
}

/// Restricted QP: `x_i ∈ [l_i, u_i]` where `b_i = 1`, `x_i = 0` elsewhere.
pub fn solve_restricted(inst: &ProblemInstance, sel: &BinarySelection) -> WeightedSolution {
    let n = inst.n();
    assert_eq!(sel.len(), n);
    if !inst.satisfies_cardinality(sel.bits()) {
        return WeightedSolution::infeasible(sel.clone());
    }
    let idx = sel.ones();
    let d = idx.len();
    let h = DMatrix::from_fn(d, d, |r, c| inst.q()[(idx[r], idx[c])]);
    let g = DVector::from_fn(d, |r, _| inst.lin()[idx[r]]);
    let a = DMatrix::from_fn(inst.m_a(), d, |r, c| inst.a()[(r, idx[c])]);
    let lo = DVector::from_fn(d, |r, _| inst.lower()[idx[r]]);
    let hi = DVector::from_fn(d, |r, _| inst.upper()[idx[r]]);
    let Some((a, b)) = qpsolve::reduce_equalities(&a, inst.c_a()) else {
        return WeightedSolution::infeasible(sel.clone());
    };
    let Ok(problem) = QpProblem::new(h, g, a, b, lo, hi) else {
        return WeightedSolution::infeasible(sel.clone());
    };
    match qpsolve::solve_qp(&problem) {
        Ok(res) if res.status != QpStatus::Infeasible => {
            let mut x = DVector::zeros(n);
            for (r, &i) in idx.iter().enumerate() {
                x[i] = res.x[r];
            }
            WeightedSolution {
                objective: inst.objective(&x),
                x,
                selection: sel.clone(),
                status: SolutionStatus::Optimal,
            }
        }
        _ => WeightedSolution::infeasible(sel.clone()),
    }
}

/// `f(b)`: the restricted optimum, `+∞` when the restriction is infeasible.
pub fn fitness(inst: &ProblemInstance, sel: &BinarySelection) -> f64 {
    solve_restricted(inst, sel).objective
}

/// Memoized fitness, safe to share across threads.
pub struct FitnessCache<'a> {
    inst: &'a ProblemInstance,
    memo: Mutex<HashMap<BinarySelection, f64>>,
    solves: AtomicUsize,
}

impl<'a> FitnessCache<'a> {
    pub fn new(inst: &'a ProblemInstance) -> Self {
        Self {
            inst,
            memo: Mutex::new(HashMap::new()),
            solves: AtomicUsize::new(0),
        }
    }

    pub fn instance(&self) -> &ProblemInstance {
        self.inst
    }

    pub fn get(&self, sel: &BinarySelection) -> f64 {
        if let Some(&f) = self.memo.lock().unwrap().get(sel) {
            return f;
        }
        let f = fitness(self.inst, sel);
        self.solves.fetch_add(1, Ordering::Relaxed);
        self.memo.lock().unwrap().insert(sel.clone(), f);
        f
    }

    /// Number of restricted QPs actually solved.
    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }
}

/// Uniform over all `C(n, k)` selections (partial Fisher–Yates).
pub fn random_selection(n: usize, k: usize, rng: &mut impl Rng) -> BinarySelection {
    assert!(k <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let sel = BinarySelection::from_indices(n, &idx[..k]);
    debug_assert_eq!(sel.popcount(), k);
    sel
}

/// Swaps one uniformly chosen 1 with one uniformly chosen 0.
fn random_swap(b: &BinarySelection, rng: &mut impl Rng) -> BinarySelection {
    let ones = b.ones();
    let zeros = b.zeros();
    if ones.is_empty() || zeros.is_empty() {
        return b.clone();
    }
    let i = ones[rng.random_range(0..ones.len())];
    let j = zeros[rng.random_range(0..zeros.len())];
    b.swapped(i, j)
}

/// Relaxation selections, their single-swap perturbations, and random
/// selections; deduplicated in insertion order and fitness-tagged.
pub fn build_pool(
    cache: &FitnessCache<'_>,
    relax_selections: &[BinarySelection],
    cfg: &PoolConfig,
) -> Result<Pool, HeuristicError> {
    let inst = cache.instance();
    let n = inst.n();
    let k = inst
        .selection_size()
        .ok_or_else(|| HeuristicError::InvalidConfig("cardinality rows".into()))?;
    let mut rng = seeding::rng_for(cfg.seed, Stream::Pool, 0);

    let mut candidates = Vec::new();
    for sel in relax_selections {
        candidates.push(sel.clone());
        for _ in 0..cfg.perturbations_per_relax {
            candidates.push(random_swap(sel, &mut rng));
        }
    }
    for _ in 0..cfg.m_random {
        candidates.push(random_selection(n, k, &mut rng));
    }
    let mut seen = HashSet::new();
    candidates.retain(|s| seen.insert(s.clone()));

    let fit: Vec<f64> = candidates.par_iter().map(|s| cache.get(s)).collect();
    let entries: Vec<PoolEntry> = candidates
        .into_iter()
        .zip(fit)
        .map(|(selection, fitness)| PoolEntry { selection, fitness })
        .collect();
    let all_infinite = entries.iter().all(|e| !e.fitness.is_finite());
    if entries.is_empty() || (all_infinite && cfg.m_random == 0) {
        return Err(HeuristicError::EmptyPool);
    }
    Ok(Pool {
        entries,
        generation: 0,
    })
}

/// Keeps the `⌈p·|pool|⌉` lowest-fitness entries (at least two), stable
/// with respect to insertion order.
pub fn ga_select(pool: &Pool, retain_fraction: f64) -> Pool {
    let len = pool.len();
    let mut keep = (retain_fraction * len as f64).ceil() as usize;
    keep = keep.max(2).min(len);
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&i, &j| pool.entries[i].fitness.total_cmp(&pool.entries[j].fitness));
    Pool {
        entries: order[..keep]
            .iter()
            .map(|&i| pool.entries[i].clone())
            .collect(),
        generation: pool.generation,
    }
}

/// `(max f - min f) / min f <= threshold` over the finite entries.
pub fn spread_ok(pool: &Pool, threshold: f64) -> Result<bool, HeuristicError> {
    let finite: Vec<f64> = pool
        .entries
        .iter()
        .map(|e| e.fitness)
        .filter(|f| f.is_finite())
        .collect();
    if finite.is_empty() {
        return Err(HeuristicError::DegenerateSpread);
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo <= 0.0 {
        return Err(HeuristicError::DegenerateSpread);
    }
    Ok((hi - lo) / lo <= threshold)
}

/// Common ones kept, remaining ones drawn uniformly from the symmetric
/// difference.
pub fn crossover(
    father: &BinarySelection,
    mother: &BinarySelection,
    k: usize,
    rng: &mut impl Rng,
) -> BinarySelection {
    assert_eq!(father.len(), mother.len());
    let n = father.len();
    let mut bits = vec![false; n];
    let mut diff = Vec::new();
    for i in 0..n {
        match (father.get(i), mother.get(i)) {
            (true, true) => bits[i] = true,
            (true, false) | (false, true) => diff.push(i),
            _ => {}
        }
    }
    let common = bits.iter().filter(|&&b| b).count();
    let need = k.saturating_sub(common).min(diff.len());
    for t in 0..need {
        let j = rng.random_range(t..diff.len());
        diff.swap(t, j);
        bits[diff[t]] = true;
    }
    let child = BinarySelection::from_bits(bits);
    debug_assert_eq!(child.popcount(), k);
    child
}

/// With probability `prob`, swaps a uniformly chosen 1 with a uniformly
/// chosen 0.
pub fn mutate(b: &BinarySelection, prob: f64, rng: &mut impl Rng) -> BinarySelection {
    if prob <= 0.0 || rng.random::<f64>() >= prob {
        return b.clone();
    }
    random_swap(b, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub best: PoolEntry,
    pub generations: usize,
    pub converged: bool,
    /// Best fitness after each generation, starting with the initial pool.
    pub best_history: Vec<f64>,
}

pub fn run_ga(
    cache: &FitnessCache<'_>,
    pool: Pool,
    cfg: &GaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GaOutcome, HeuristicError> {
    let k = cache
        .instance()
        .selection_size()
        .ok_or_else(|| HeuristicError::InvalidConfig("cardinality rows".into()))?;
    let mut best = pool.best().ok_or(HeuristicError::EmptyPool)?.clone();
    let mut history = vec![best.fitness];
    let finite = pool.entries.iter().filter(|e| e.fitness.is_finite()).count();
    if finite < 2 {
        return Ok(GaOutcome {
            best,
            generations: 0,
            converged: false,
            best_history: history,
        });
    }

    let mut pool = pool;
    for gen in 0..cfg.max_generations {
        let retained = ga_select(&pool, cfg.retain_fraction);
        if spread_ok(&retained, cfg.spread_threshold).unwrap_or(false) {
            return Ok(GaOutcome {
                best,
                generations: gen,
                converged: true,
                best_history: history,
            });
        }
        let finite: Vec<usize> = (0..retained.len())
            .filter(|&i| retained.entries[i].fitness.is_finite())
            .collect();
        let parents: Vec<usize> = if finite.len() >= 2 {
            finite
        } else {
            (0..retained.len()).collect()
        };
        if parents.len() < 2 {
            break;
        }
        let i = rng.random_range(0..parents.len());
        let mut j = rng.random_range(0..parents.len() - 1);
        if j >= i {
            j += 1;
        }
        let (father, mother) = (
            &retained.entries[parents[i]].selection,
            &retained.entries[parents[j]].selection,
        );
        let child = mutate(&crossover(father, mother, k, rng), cfg.mutation_prob, rng);
        let f = cache.get(&child);

        pool = retained;
        pool.generation = gen + 1;
        if !pool.contains(&child) {
            pool.entries.push(PoolEntry {
                selection: child.clone(),
                fitness: f,
            });
        }
        if f < best.fitness {
            best = PoolEntry {
                selection: child,
                fitness: f,
            };
        }
        history.push(best.fitness);
    }
    Ok(GaOutcome {
        best,
        generations: history.len() - 1,
        converged: false,
        best_history: history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VnsOutcome {
    pub best: PoolEntry,
    pub proposals: usize,
    pub improvements: usize,
}

/// Chained single-swap search: each proposal swaps a 1 and a 0 of the
/// previous proposal; strict improvements replace the incumbent.
pub fn run_vns(cache: &FitnessCache<'_>, b0: &BinarySelection, cfg: &VnsConfig) -> VnsOutcome {
    let mut rng = seeding::rng_for(cfg.seed, Stream::Vns, 0);
    let mut best = PoolEntry {
        selection: b0.clone(),
        fitness: cache.get(b0),
    };
    let (mut proposals, mut improvements) = (0, 0);
    if b0.popcount() == 0 || b0.popcount() == b0.len() {
        return VnsOutcome {
            best,
            proposals,
            improvements,
        };
    }
    let mut proposal = b0.clone();
    let mut idle = 0;
    while idle < cfg.max_non_improving.max(1) {
        proposal = random_swap(&proposal, &mut rng);
        proposals += 1;
        let f = cache.get(&proposal);
        if f < best.fitness {
            best = PoolEntry {
                selection: proposal.clone(),
                fitness: f,
            };
            improvements += 1;
            idle = 0;
        } else {
            idle += 1;
        }
    }
    VnsOutcome {
        best,
        proposals,
        improvements,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub pool: PoolConfig,
    pub ga: GaConfig,
    pub vns: VnsConfig,
    pub dual: DualAscentParams,
    pub lambda_g: f64,
    /// Seed of the GA stream.
    pub ga_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

impl PipelineConfig {
    /// Defaults with every component seeded from `root`.
    pub fn with_seed(root: u64) -> Self {
        Self {
            pool: PoolConfig {
                seed: seeding::derive_seed(root, Stream::Pool, 0),
                ..PoolConfig::default()
            },
            ga: GaConfig::default(),
            vns: VnsConfig {
                seed: seeding::derive_seed(root, Stream::Vns, 0),
                ..VnsConfig::default()
            },
            dual: DualAscentParams {
                seed: seeding::derive_seed(root, Stream::Dual, 0),
                ..DualAscentParams::default()
            },
            lambda_g: 1e-7,
            ga_seed: seeding::derive_seed(root, Stream::Ga, 0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub solution: WeightedSolution,
    pub relaxations: Vec<RelaxationOutcome>,
    pub relaxation_errors: Vec<(RelaxKind, RelaxError)>,
    pub pool_size: usize,
    pub ga: GaOutcome,
    pub vns: VnsOutcome,
    pub restricted_solves: usize,
}

/// Runs the requested relaxations with the seeds of `cfg`.
pub fn run_relaxations(
    inst: &ProblemInstance,
    cfg: &PipelineConfig,
    kinds: &[RelaxKind],
) -> Vec<(RelaxKind, Result<RelaxationOutcome, RelaxError>)> {
    kinds
        .iter()
        .map(|&kind| {
            let out = match kind {
                RelaxKind::Line => relax::solve_line(inst),
                RelaxKind::Dual => relax::solve_dual(inst, &cfg.dual),
                RelaxKind::Augm => {
                    let params = DualAscentParams {
                        seed: seeding::derive_seed(cfg.dual.seed, Stream::Augm, 0),
                        ..cfg.dual.clone()
                    };
                    relax::solve_augm(inst, cfg.lambda_g, &params)
                }
            };
            (kind, out)
        })
        .collect()
}

/// Line, Dual, Augm → pool → GA → VNS → restricted QP on the result.
pub fn solve_pipeline(
    inst: &ProblemInstance,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome, HeuristicError> {
    let runs = run_relaxations(inst, cfg, &[RelaxKind::Line, RelaxKind::Dual, RelaxKind::Augm]);
    solve_pipeline_from(inst, cfg, runs)
}

/// The pipeline after the relaxation stage.
pub fn solve_pipeline_from(
    inst: &ProblemInstance,
    cfg: &PipelineConfig,
    runs: Vec<(RelaxKind, Result<RelaxationOutcome, RelaxError>)>,
) -> Result<PipelineOutcome, HeuristicError> {
    cfg.ga.check()?;
    let mut relaxations = Vec::new();
    let mut relaxation_errors = Vec::new();
    for (kind, r) in runs {
        match r {
            Ok(o) => relaxations.push(o),
            Err(e) => relaxation_errors.push((kind, e)),
        }
    }

    let cache = FitnessCache::new(inst);
    let seeds: Vec<BinarySelection> = relaxations.iter().map(|r| r.selection.clone()).collect();
    let pool = build_pool(&cache, &seeds, &cfg.pool).map_err(|e| match e {
        HeuristicError::EmptyPool => HeuristicError::PipelineInfeasible,
        other => other,
    })?;
    let pool_size = pool.len();
    let mut ga_rng = seeding::rng_for(cfg.ga_seed, Stream::Ga, 0);
    let ga = run_ga(&cache, pool, &cfg.ga, &mut ga_rng)?;
    let vns = run_vns(&cache, &ga.best.selection, &cfg.vns);
    if !vns.best.fitness.is_finite() {
        return Err(HeuristicError::PipelineInfeasible);
    }
    let solution = solve_restricted(inst, &vns.best.selection);
    if !solution.is_optimal() {
        return Err(HeuristicError::PipelineInfeasible);
    }
    Ok(PipelineOutcome {
        solution,
        relaxations,
        relaxation_errors,
        pool_size,
        ga,
        vns,
        restricted_solves: cache.solves(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_from_mv, MvSpec};
    use rand::SeedableRng;

    fn simplex(n: usize) -> ProblemInstance {
        ProblemInstance::new(
            DMatrix::identity(n, n),
            DVector::zeros(n),
            DMatrix::from_element(1, n, 1.0),
            DVector::from_element(1, 1.0),
            DVector::zeros(n),
            DVector::from_element(n, 1.0),
            DMatrix::from_element(1, n, 1.0),
            vec![2],
        )
        .unwrap()
    }

    fn entries(fs: &[f64]) -> Pool {
        Pool {
            entries: fs
                .iter()
                .enumerate()
                .map(|(i, &f)| PoolEntry {
                    selection: BinarySelection::from_indices(4, &[i]),
                    fitness: f,
                })
                .collect(),
            generation: 0,
        }
    }

    #[test]
    fn restricted_symmetric() {
        let sol = solve_restricted(&simplex(3), &BinarySelection::from_bits(vec![true, true, false]));
        assert!((sol.objective - 0.5).abs() < 1e-12);
        assert!((sol.x[0] - 0.5).abs() < 1e-12 && sol.x[2] == 0.0);
    }

    #[test]
    fn unattainable_return_is_infinite() {
        let spec = MvSpec {
            returns: vec![0.1, 0.2, 0.3],
            target_return: 0.3,
            k: 2,
            lower: 0.0,
            upper: 1.0,
        };
        let inst = build_from_mv(&spec, &DMatrix::identity(3, 3)).unwrap();
        let f = fitness(&inst, &BinarySelection::from_bits(vec![true, true, false]));
        assert_eq!(f, f64::INFINITY);
    }

    #[test]
    fn random_selection_forced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_selection(4, 4, &mut rng).bits(), &[true; 4]);
    }

    #[test]
    fn ga_select_examples() {
        let kept = ga_select(&entries(&[3.0, 1.0, 2.0]), 0.34);
        let f: Vec<f64> = kept.entries.iter().map(|e| e.fitness).collect();
        assert_eq!(f, vec![1.0, 2.0]);
        let all = entries(&[3.0, 1.0, 2.0]);
        assert_eq!(ga_select(&all, 1.0).len(), 3);
        let inf = entries(&[f64::INFINITY; 4]);
        let kept = ga_select(&inf, 0.5);
        assert_eq!(kept.entries, inf.entries[..2].to_vec());
    }

    #[test]
    fn spread_examples() {
        assert!(spread_ok(&entries(&[1.0, 1.005]), 0.01).unwrap());
        assert!(!spread_ok(&entries(&[1.0, 2.0]), 0.01).unwrap());
        assert!(spread_ok(&entries(&[1.0]), 0.01).unwrap());
        assert!(spread_ok(&entries(&[1.0, f64::INFINITY]), 0.01).unwrap());
        assert_eq!(
            spread_ok(&entries(&[f64::INFINITY]), 0.01),
            Err(HeuristicError::DegenerateSpread)
        );
        assert_eq!(spread_ok(&entries(&[0.0, 1.0]), 0.01), Err(HeuristicError::DegenerateSpread));
    }

    #[test]
    fn crossover_and_mutate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let same = BinarySelection::from_bits(vec![true, false, true, false]);
        assert_eq!(crossover(&same, &same, 2, &mut rng), same);
        let f = BinarySelection::from_bits(vec![true, true, false, false]);
        let m = BinarySelection::from_bits(vec![true, false, true, false]);
        for _ in 0..50 {
            let c = crossover(&f, &m, 2, &mut rng);
            assert!(c.get(0) && !c.get(3) && (c.get(1) ^ c.get(2)));
        }
        assert_eq!(mutate(&f, 0.0, &mut rng), f);
        let two = BinarySelection::from_bits(vec![true, false]);
        assert_eq!(mutate(&two, 1.0, &mut rng).bits(), &[false, true]);
    }

    #[test]
    fn pool_counts_and_dedup() {
        let inst = simplex(6);
        let cache = FitnessCache::new(&inst);
        let s = BinarySelection::from_indices(6, &[0, 1]);
        let cfg = PoolConfig {
            m_random: 5,
            perturbations_per_relax: 0,
            seed: 9,
        };
        let pool = build_pool(&cache, &[s.clone(), s.clone(), s], &cfg).unwrap();
        assert!(pool.len() <= 6);
        let uniq: HashSet<_> = pool.entries.iter().map(|e| e.selection.clone()).collect();
        assert_eq!(uniq.len(), pool.len());
        assert!(pool.entries.iter().all(|e| e.fitness.is_finite()));
    }

    #[test]
    fn vns_single_step_rejects_worse() {
        let spec = MvSpec {
            returns: vec![0.1, 0.1, 0.1],
            target_return: 0.1,
            k: 1,
            lower: 0.0,
            upper: 1.0,
        };
        let q = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 2.0, 3.0]));
        let inst = build_from_mv(&spec, &q).unwrap();
        let cache = FitnessCache::new(&inst);
        let b0 = BinarySelection::from_indices(3, &[0]);
        let out = run_vns(&cache, &b0, &VnsConfig { max_non_improving: 1, seed: 5 });
        assert_eq!(out.best.selection, b0);
        assert_eq!(out.proposals, 1);
    }

    #[test]
    fn pipeline_n_equals_k() {
        let spec = MvSpec {
            returns: vec![0.1, 0.2, 0.3],
            target_return: 0.2,
            k: 3,
            lower: 0.0,
            upper: 1.0,
        };
        let inst = build_from_mv(&spec, &DMatrix::identity(3, 3)).unwrap();
        let out = solve_pipeline(&inst, &PipelineConfig::with_seed(1)).unwrap();
        assert_eq!(out.solution.selection.bits(), &[true; 3]);
        let f = fitness(&inst, &out.solution.selection);
        assert!((out.solution.objective - f).abs() < 1e-15);
    }

    #[test]
    fn pipeline_infeasible_target() {
        let spec = MvSpec {
            returns: vec![0.1, 0.2, 0.3],
            target_return: 0.5,
            k: 2,
            lower: 0.0,
            upper: 1.0,
        };
        let inst = build_from_mv(&spec, &DMatrix::identity(3, 3)).unwrap();
        assert!(matches!(
            solve_pipeline(&inst, &PipelineConfig::with_seed(1)),
            Err(HeuristicError::PipelineInfeasible)
        ));
    }
}
