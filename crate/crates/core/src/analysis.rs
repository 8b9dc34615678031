//! Gap metrics, frontier sweeps, and percentage errors against the
//! unconstrained efficient frontier.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{self, Budget, ExactResult};
use crate::heuristic::{self, solve_restricted, PipelineConfig};
use crate::model::{build_from_mv, BinarySelection, ModelError, MvSpec};
use crate::qpsolve::{self, QpProblem, QpStatus};
use crate::relax::RelaxKind;
use crate::seeding::{self, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("selections differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("reference objective {0} is not positive")]
    NonpositiveReference(f64),
    #[error("return {0} lies outside the frontier domain [{1}, {2}]")]
    OutOfRange(f64, f64, f64),
    #[error("point has no feasible solution")]
    NotOk,
    #[error("frontier needs at least one point with strictly increasing returns")]
    EmptyCurve,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Line,
    Dual,
    Augm,
    Ours,
    Exact,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Line, Method::Dual, Method::Augm, Method::Ours, Method::Exact];

    pub fn name(self) -> &'static str {
        match self {
            Method::Line => "line",
            Method::Dual => "dual",
            Method::Augm => "augm",
            Method::Ours => "ours",
            Method::Exact => "exact",
        }
    }

    fn relax_kind(self) -> Option<RelaxKind> {
        match self {
            Method::Line => Some(RelaxKind::Line),
            Method::Dual => Some(RelaxKind::Dual),
            Method::Augm => Some(RelaxKind::Augm),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown method '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointStatus {
    Ok,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub target_return: f64,
    /// Restricted-QP objective of the method's selection.
    pub risk: Option<f64>,
    pub selection: String,
    pub method: Method,
    pub status: PointStatus,
}

/// `|b1 - b2|₁ / 2`.
pub fn binary_gap(b1: &BinarySelection, b2: &BinarySelection) -> Result<f64, AnalysisError> {
    if b1.len() != b2.len() {
        return Err(AnalysisError::LengthMismatch(b1.len(), b2.len()));
    }
    let diff = (0..b1.len()).filter(|&i| b1.get(i) != b2.get(i)).count();
    Ok(diff as f64 / 2.0)
}

/// `(obj - obj_ref) / obj_ref`.
pub fn objective_gap(obj: f64, obj_ref: f64) -> Result<f64, AnalysisError> {
    if !(obj_ref > 0.0) {
        return Err(AnalysisError::NonpositiveReference(obj_ref));
    }
    Ok((obj - obj_ref) / obj_ref)
}

/// Piecewise-linear frontier, strictly increasing in return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UefCurve {
    points: Vec<(f64, f64)>,
}

impl UefCurve {
    /// Sorts by return; equal returns keep the lower variance.
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self, AnalysisError> {
        points.retain(|(r, v)| r.is_finite() && v.is_finite());
        if points.is_empty() {
            return Err(AnalysisError::EmptyCurve);
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        points.dedup_by(|later, earlier| later.0 == earlier.0);
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn return_range(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    /// Indices `i` where the variance drops from point `i` to `i + 1`.
    pub fn monotonicity_violations(&self) -> Vec<usize> {
        self.points
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].1 < w[0].1)
            .map(|(i, _)| i)
            .collect()
    }

    /// Interpolated variance at return `r`.
    pub fn variance_at(&self, r: f64) -> Result<f64, AnalysisError> {
        let (lo, hi) = self.return_range();
        if !(r >= lo && r <= hi) {
            return Err(AnalysisError::OutOfRange(r, lo, hi));
        }
        if self.points.len() == 1 {
            return Ok(self.points[0].1);
        }
        let i = self.points.partition_point(|p| p.0 <= r).clamp(1, self.points.len() - 1);
        let (r0, v0) = self.points[i - 1];
        let (r1, v1) = self.points[i];
        Ok(v0 + (v1 - v0) * (r - r0) / (r1 - r0))
    }

    /// Inverse interpolation on the first segment (by return) whose
    /// variance increases through `v`.
    pub fn return_at(&self, v: f64) -> Option<f64> {
        self.points.windows(2).find_map(|w| {
            let ((r0, v0), (r1, v1)) = (w[0], w[1]);
            (v1 > v0 && v >= v0 && v <= v1).then(|| r0 + (r1 - r0) * (v - v0) / (v1 - v0))
        })
    }
}

/// Both relative deviations, in percent, and their minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentageError {
    pub vertical: f64,
    pub horizontal: Option<f64>,
    pub value: f64,
}

/// `100 · min(|v - V(r)| / V(r), |r - R(v)| / r)`; the horizontal term is
/// dropped when `v` lies outside the curve's variance range or `r <= 0`.
pub fn percentage_error(
    target_return: f64,
    risk: f64,
    uef: &UefCurve,
) -> Result<PercentageError, AnalysisError> {
    let v_ref = uef.variance_at(target_return)?;
    let vertical = 100.0 * (risk - v_ref).abs() / v_ref;
    let horizontal = if target_return > 0.0 {
        uef.return_at(risk)
            .map(|r| 100.0 * (target_return - r).abs() / target_return)
    } else {
        None
    };
    let value = horizontal.map_or(vertical, |h| h.min(vertical));
    Ok(PercentageError {
        vertical,
        horizontal,
        value,
    })
}

/// PE of a frontier point.
pub fn point_percentage_error(
    point: &FrontierPoint,
    uef: &UefCurve,
) -> Result<PercentageError, AnalysisError> {
    match (point.status, point.risk) {
        (PointStatus::Ok, Some(risk)) => percentage_error(point.target_return, risk, uef),
        _ => Err(AnalysisError::NotOk),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
    pub min: Option<f64>,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Aggregate {
            count: 0,
            mean: None,
            median: None,
            max: None,
            min: None,
        };
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    Aggregate {
        count: n,
        mean: Some(v.iter().sum::<f64>() / n as f64),
        median: Some(median),
        max: Some(v[n - 1]),
        min: Some(v[0]),
    }
}

/// `count` equally spaced values on `[lo, hi]`; a single value is `lo`.
pub fn sweep_targets(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| {
                if i == count - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

/// Frontier without cardinality: `min x'Qx` s.t. `r'x = t`, `Σx = 1`,
/// `0 <= x <= 1`, for `count` targets from the minimum-variance return to
/// the largest asset return.
pub fn unconstrained_frontier(
    q: &DMatrix<f64>,
    returns: &[f64],
    count: usize,
) -> Result<UefCurve, AnalysisError> {
    let n = returns.len();
    let lo = DVector::zeros(n);
    let hi = DVector::from_element(n, 1.0);
    let ones = DMatrix::from_element(1, n, 1.0);
    let mv = QpProblem::new(q.clone(), DVector::zeros(n), ones, DVector::from_element(1, 1.0), lo.clone(), hi.clone())
        .map_err(|_| AnalysisError::EmptyCurve)?;
    let res = qpsolve::solve_qp(&mv).map_err(|_| AnalysisError::EmptyCurve)?;
    let r = DVector::from_row_slice(returns);
    let r_min = r.dot(&res.x);
    let r_max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut a = DMatrix::from_element(2, n, 1.0);
    a.row_mut(0).copy_from(&r.transpose());
    let points: Vec<(f64, f64)> = sweep_targets(r_min, r_max, count)
        .into_par_iter()
        .filter_map(|t| {
            let b = DVector::from_row_slice(&[t, 1.0]);
            let (a, b) = qpsolve::reduce_equalities(&a, &b)?;
            let p = QpProblem::new(q.clone(), DVector::zeros(n), a, b, lo.clone(), hi.clone()).ok()?;
            let s = qpsolve::solve_qp(&p).ok()?;
            (s.status != QpStatus::Infeasible).then_some((t, s.objective))
        })
        .collect();
    UefCurve::new(points)
}

/// Covariance and mean returns of an asset universe.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    pub q: DMatrix<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub k: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub methods: Vec<Method>,
    /// Component parameters; seeds are replaced per target from `seed`.
    pub pipeline: PipelineConfig,
    pub seed: u64,
    /// Reference solves; `None` skips gap computation.
    pub reference: Option<ReferenceBudget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBudget {
    pub nodes: usize,
    pub time_s: Option<f64>,
}

impl ReferenceBudget {
    fn budget(&self) -> Budget {
        Budget {
            nodes: self.nodes,
            time: self.time_s.map(Duration::from_secs_f64),
        }
    }
}

impl SweepConfig {
    /// Parameters of target `index` with its own seeds.
    pub fn pipeline_for(&self, index: usize) -> PipelineConfig {
        let base = PipelineConfig::with_seed(seeding::derive_seed(self.seed, Stream::Target, index as u64));
        let mut cfg = self.pipeline.clone();
        cfg.pool.seed = base.pool.seed;
        cfg.vns.seed = base.vns.seed;
        cfg.dual.seed = base.dual.seed;
        cfg.ga_seed = base.ga_seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeRecord {
    pub target_return: f64,
    pub method: Method,
    pub vertical: f64,
    pub horizontal: Option<f64>,
    pub percentage_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub target_return: f64,
    pub objective: Option<f64>,
    pub selection: String,
    pub proved_optimal: bool,
    pub nodes_explored: usize,
    pub budget_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub target_return: f64,
    pub method: Method,
    pub binary_gap: f64,
    pub objective_gap: Option<f64>,
    pub reference_proved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregates {
    pub percentage_error: Aggregate,
    pub binary_gap: Aggregate,
    pub objective_gap: Aggregate,
    /// Gaps restricted to targets with a proved-optimal reference.
    pub binary_gap_proved: Aggregate,
    pub objective_gap_proved: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub targets: Vec<f64>,
    pub frontier: Vec<FrontierPoint>,
    pub percentage_errors: Vec<PeRecord>,
    pub references: Vec<ReferenceRecord>,
    pub gaps: Vec<GapRecord>,
    pub aggregates: BTreeMap<Method, MethodAggregates>,
}

struct TargetResult {
    points: Vec<(FrontierPoint, Option<BinarySelection>)>,
    reference: Option<ExactResult>,
}

fn run_target(market: &Market, cfg: &SweepConfig, index: usize, target: f64) -> Result<TargetResult, AnalysisError> {
    let spec = MvSpec {
        returns: market.returns.clone(),
        target_return: target,
        k: cfg.k,
        lower: cfg.lower,
        upper: cfg.upper,
    };
    let inst = build_from_mv(&spec, &market.q)?;
    let pcfg = cfg.pipeline_for(index);
    let wants = |m: Method| cfg.methods.contains(&m);

    let kinds: Vec<RelaxKind> = if wants(Method::Ours) {
        vec![RelaxKind::Line, RelaxKind::Dual, RelaxKind::Augm]
    } else {
        cfg.methods.iter().filter_map(|m| m.relax_kind()).collect()
    };
    let runs = heuristic::run_relaxations(&inst, &pcfg, &kinds);

    let point = |method: Method, sel: Option<BinarySelection>| {
        let sol = sel.as_ref().map(|s| solve_restricted(&inst, s));
        let ok = sol.as_ref().filter(|s| s.is_optimal());
        let fp = FrontierPoint {
            target_return: target,
            risk: ok.map(|s| s.objective),
            selection: sel.as_ref().map(|s| s.to_bit_string()).unwrap_or_default(),
            method,
            status: if ok.is_some() { PointStatus::Ok } else { PointStatus::Infeasible },
        };
        (fp, sel)
    };

    let mut points = Vec::new();
    for &m in &cfg.methods {
        if let Some(kind) = m.relax_kind() {
            let sel = runs
                .iter()
                .find(|(k, _)| *k == kind)
                .and_then(|(_, r)| r.as_ref().ok())
                .map(|o| o.selection.clone());
            points.push(point(m, sel));
        }
    }
    if wants(Method::Ours) {
        let sel = heuristic::solve_pipeline_from(&inst, &pcfg, runs)
            .ok()
            .map(|o| o.solution.selection);
        points.push(point(Method::Ours, sel));
    }

    let reference = match (&cfg.reference, wants(Method::Exact)) {
        (Some(b), _) => exact::branch_and_bound(&inst, b.budget()).ok(),
        (None, true) => exact::branch_and_bound(&inst, Budget::nodes(1_000_000)).ok(),
        _ => None,
    };
    if wants(Method::Exact) {
        let sel = reference
            .as_ref()
            .filter(|r| r.solution.is_optimal())
            .map(|r| r.solution.selection.clone());
        points.push(point(Method::Exact, sel));
    }
    Ok(TargetResult { points, reference })
}

/// Runs every method at `cfg.count` equally spaced returns across the
/// frontier's domain. Targets are independent and run in parallel; the
/// output order follows the targets.
pub fn sweep_frontier(market: &Market, uef: &UefCurve, cfg: &SweepConfig) -> Result<SweepOutcome, AnalysisError> {
    let (lo, hi) = uef.return_range();
    let targets = sweep_targets(lo, hi, cfg.count);
    let results: Vec<TargetResult> = targets
        .par_iter()
        .enumerate()
        .map(|(i, &t)| run_target(market, cfg, i, t))
        .collect::<Result<_, _>>()?;

    let mut frontier = Vec::new();
    let mut pe = Vec::new();
    let mut references = Vec::new();
    let mut gaps = Vec::new();
    for (t, res) in targets.iter().zip(results) {
        let reference = res.reference.as_ref().filter(|r| r.solution.is_optimal());
        if let Some(r) = &res.reference {
            references.push(ReferenceRecord {
                target_return: *t,
                objective: r.solution.is_optimal().then_some(r.solution.objective),
                selection: if r.solution.is_optimal() {
                    r.solution.selection.to_bit_string()
                } else {
                    String::new()
                },
                proved_optimal: r.proved_optimal,
                nodes_explored: r.nodes_explored,
                budget_hit: r.node_budget_hit || r.wall_budget_hit,
            });
        }
        for (fp, sel) in res.points {
            if let Ok(e) = point_percentage_error(&fp, uef) {
                pe.push(PeRecord {
                    target_return: *t,
                    method: fp.method,
                    vertical: e.vertical,
                    horizontal: e.horizontal,
                    percentage_error: e.value,
                });
            }
            if let (Some(r), Some(sel), PointStatus::Ok) = (reference, &sel, fp.status) {
                if fp.method != Method::Exact {
                    gaps.push(GapRecord {
                        target_return: *t,
                        method: fp.method,
                        binary_gap: binary_gap(sel, &r.solution.selection)?,
                        objective_gap: fp.risk.and_then(|v| objective_gap(v, r.solution.objective).ok()),
                        reference_proved: r.proved_optimal,
                    });
                }
            }
            frontier.push(fp);
        }
    }

    let mut aggregates = BTreeMap::new();
    for &m in &cfg.methods {
        let pes: Vec<f64> = pe.iter().filter(|r| r.method == m).map(|r| r.percentage_error).collect();
        let mine: Vec<&GapRecord> = gaps.iter().filter(|g| g.method == m).collect();
        let bin = |proved_only: bool| {
            let v: Vec<f64> = mine
                .iter()
                .filter(|g| !proved_only || g.reference_proved)
                .map(|g| g.binary_gap)
                .collect();
            aggregate(&v)
        };
        let obj = |proved_only: bool| {
            let v: Vec<f64> = mine
                .iter()
                .filter(|g| !proved_only || g.reference_proved)
                .filter_map(|g| g.objective_gap)
                .collect();
            aggregate(&v)
        };
        aggregates.insert(
            m,
            MethodAggregates {
                percentage_error: aggregate(&pes),
                binary_gap: bin(false),
                objective_gap: obj(false),
                binary_gap_proved: bin(true),
                objective_gap_proved: obj(true),
            },
        );
    }
    Ok(SweepOutcome {
        targets,
        frontier,
        percentage_errors: pe,
        references,
        gaps,
        aggregates,
    })
}
