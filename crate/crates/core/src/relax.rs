//! Continuous relaxations that propose binary selections.
//!
//! * Line: `b` relaxed to `[0, 1]`, solved as one QP, top-k rounded.
//! * Dual: Lagrangian dual with the closed-form inner minimizer
//!   `x̂ = -1/2 Q⁻¹ (q + A'λa - λl + λu)`, maximized by projected
//!   supergradient ascent; the selection ranks the negated coefficients of
//!   `b` in the Lagrangian.
//! * Augm: the same ascent on the diagonal surrogate `Φ` plus the
//!   quadratic penalty `λg |A x̂ - c_a|²`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BinarySelection, ProblemInstance};
use crate::qpsolve::{self, QpError, QpProblem, QpStatus};

/// Condition number beyond which `Q` is treated as numerically singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelaxError {
    #[error("relaxation is infeasible")]
    RelaxationInfeasible,
    #[error("Q is nearly singular (condition estimate {0:e})")]
    NearSingularQ(f64),
    #[error("Q is not positive-definite")]
    NotPositiveDefinite,
    #[error("no selection satisfies the cardinality rows")]
    NoSelection,
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelaxKind {
    Line,
    Dual,
    Augm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationOutcome {
    pub kind: RelaxKind,
    pub selection: BinarySelection,
    /// `b_R` for Line, `-(B'λb + Lλl - Uλu)` for Dual and Augm.
    pub continuous_b: DVector<f64>,
    pub x_hat: DVector<f64>,
    pub bound: f64,
    pub iterations: usize,
}

/// Lagrange multipliers of the primal constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVariables {
    pub lam_a: DVector<f64>,
    pub lam_b: DVector<f64>,
    pub lam_l: DVector<f64>,
    pub lam_u: DVector<f64>,
}

impl DualVariables {
    pub fn zeros(inst: &ProblemInstance) -> Self {
        Self {
            lam_a: DVector::zeros(inst.m_a()),
            lam_b: DVector::zeros(inst.m_b()),
            lam_l: DVector::zeros(inst.n()),
            lam_u: DVector::zeros(inst.n()),
        }
    }

    /// Coefficients of `b` in the Lagrangian: `B'λb + Lλl - Uλu`.
    pub fn b_coefficients(&self, inst: &ProblemInstance) -> DVector<f64> {
        let mut d = inst.b().transpose() * &self.lam_b;
        for i in 0..inst.n() {
            d[i] += inst.lower()[i] * self.lam_l[i] - inst.upper()[i] * self.lam_u[i];
        }
        d
    }

    fn to_flat(&self) -> DVector<f64> {
        let parts = [&self.lam_a, &self.lam_b, &self.lam_l, &self.lam_u];
        let len = parts.iter().map(|p| p.len()).sum();
        let mut out = DVector::zeros(len);
        let mut at = 0;
        for p in parts {
            out.rows_mut(at, p.len()).copy_from(p);
            at += p.len();
        }
        out
    }

    fn with_flat(&self, flat: &DVector<f64>) -> Self {
        let (ma, mb, n) = (self.lam_a.len(), self.lam_b.len(), self.lam_l.len());
        Self {
            lam_a: flat.rows(0, ma).into_owned(),
            lam_b: flat.rows(ma, mb).into_owned(),
            lam_l: flat.rows(ma + mb, n).into_owned(),
            lam_u: flat.rows(ma + mb + n, n).into_owned(),
        }
    }

    fn project(&mut self) {
        self.lam_l.apply(|v| *v = v.max(0.0));
        self.lam_u.apply(|v| *v = v.max(0.0));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualAscentParams {
    pub max_iters: usize,
    pub step0: f64,
    pub penalty_weight: f64,
    pub seed: u64,
}

impl Default for DualAscentParams {
    fn default() -> Self {
        Self {
            max_iters: 500,
            step0: 1.0,
            penalty_weight: 10.0,
            seed: 0,
        }
    }
}

/// Picks the `k` largest scores; equal scores resolve to the lower index.
pub fn discretize_topk(scores: &[f64], k: usize) -> BinarySelection {
    let n = scores.len();
    let k = k.min(n);
    let mut bits = vec![false; n];
    for i in ranked_desc(scores).into_iter().take(k) {
        bits[i] = true;
    }
    BinarySelection::from_bits(bits)
}

fn ranked_desc(scores: &[f64]) -> Vec<usize> {
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| key(scores[j]).total_cmp(&key(scores[i])).then(i.cmp(&j)));
    order
}

/// Rounds scores to a selection satisfying `B b = c_b`.
///
/// A single all-ones row is exact top-k. Other systems are filled greedily
/// in descending score order, taking an index only while no row overshoots.
pub fn select_by_scores(
    inst: &ProblemInstance,
    scores: &[f64],
) -> Result<BinarySelection, RelaxError> {
    if let Some(k) = inst.uniform_cardinality() {
        return Ok(discretize_topk(scores, k));
    }
    let (n, mb) = (inst.n(), inst.m_b());
    let mut remaining: Vec<f64> = inst.c_b().iter().map(|&c| c as f64).collect();
    let mut bits = vec![false; n];
    for i in ranked_desc(scores) {
        let fits = (0..mb).all(|r| inst.b()[(r, i)] <= remaining[r]);
        let helps = (0..mb).any(|r| inst.b()[(r, i)] > 0.0 && remaining[r] > 0.0);
        if fits && helps {
            bits[i] = true;
            for (r, rem) in remaining.iter_mut().enumerate() {
                *rem -= inst.b()[(r, i)];
            }
        }
        if remaining.iter().all(|&r| r == 0.0) {
            break;
        }
    }
    if inst.satisfies_cardinality(&bits) {
        Ok(BinarySelection::from_bits(bits))
    } else {
        Err(RelaxError::NoSelection)
    }
}

/// Diagonal of `Φ`, `Φ_jj = 1 / Σ_k |Q⁻¹_jk|`.
pub fn compute_phi(q: &DMatrix<f64>) -> Result<DVector<f64>, RelaxError> {
    let eig = SymmetricEigen::new(q.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        return Err(RelaxError::NotPositiveDefinite);
    }
    let cond = hi / lo;
    if cond > MAX_CONDITION {
        return Err(RelaxError::NearSingularQ(cond));
    }
    let chol = Cholesky::new(q.clone()).ok_or(RelaxError::NotPositiveDefinite)?;
    let inv = chol.inverse();
    Ok(DVector::from_fn(q.nrows(), |j, _| {
        1.0 / inv.row(j).iter().map(|v| v.abs()).sum::<f64>()
    }))
}

/// Per-instance factorization shared by every dual evaluation.
pub struct DualModel<'a> {
    inst: &'a ProblemInstance,
    chol: Cholesky<f64, Dyn>,
    k: Option<usize>,
}

/// Value and supergradient of a dual function at one multiplier point.
#[derive(Debug, Clone)]
pub struct DualEvaluation {
    pub value: f64,
    pub x_hat: DVector<f64>,
    /// `B'λb + Lλl - Uλu`.
    pub coefficients: DVector<f64>,
    pub supergradient: DualVariables,
}

impl<'a> DualModel<'a> {
    pub fn new(inst: &'a ProblemInstance) -> Result<Self, RelaxError> {
        let chol = Cholesky::new(inst.q().clone()).ok_or(RelaxError::NotPositiveDefinite)?;
        Ok(Self {
            inst,
            chol,
            k: inst.uniform_cardinality(),
        })
    }

    /// `x̂ = -1/2 Q⁻¹ (q + A'λa - λl + λu)`.
    pub fn x_hat(&self, lam: &DualVariables) -> DVector<f64> {
        let c = self.linear_term(lam);
        self.chol.solve(&c) * -0.5
    }

    fn linear_term(&self, lam: &DualVariables) -> DVector<f64> {
        self.inst.lin() + self.inst.a().transpose() * &lam.lam_a - &lam.lam_l + &lam.lam_u
    }

    /// Minimum of `d' b` over binaries with at most `k` ones (any number for
    /// general `B`), and the minimizing `b`. Positive coefficients never
    /// enter, which is the sign rule of the inner minimization.
    fn b_term(&self, d: &DVector<f64>) -> (f64, Vec<bool>) {
        let n = d.len();
        let mut bits = vec![false; n];
        let mut value = 0.0;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
        let limit = self.k.unwrap_or(n);
        for &i in order.iter().take(limit) {
            if d[i] < 0.0 {
                bits[i] = true;
                value += d[i];
            }
        }
        (value, bits)
    }

    /// Lagrangian dual function and a supergradient.
    pub fn dual(&self, lam: &DualVariables) -> DualEvaluation {
        let x_hat = self.x_hat(lam);
        let quad = -x_hat.dot(&(self.inst.q() * &x_hat));
        self.assemble(lam, x_hat.clone(), quad, x_hat)
    }

    /// Augmented surrogate with diagonal `phi` and penalty weight `lambda_g`.
    pub fn augmented(&self, lam: &DualVariables, phi: &DVector<f64>, lambda_g: f64) -> DualEvaluation {
        let x_hat = self.x_hat(lam);
        let resid = self.inst.a() * &x_hat - self.inst.c_a();
        let quad = -x_hat.dot(&phi.component_mul(&x_hat)) + lambda_g * resid.norm_squared();
        // d value / d x̂, pulled back through x̂ = -1/2 Q⁻¹ c.
        let gx = -2.0 * phi.component_mul(&x_hat)
            + 2.0 * lambda_g * (self.inst.a().transpose() * &resid);
        let w = self.chol.solve(&gx) * -0.5;
        self.assemble(lam, x_hat, quad, w)
    }

    /// `w` is the derivative of the quadratic part with respect to the
    /// linear term `c = q + A'λa - λl + λu`.
    fn assemble(
        &self,
        lam: &DualVariables,
        x_hat: DVector<f64>,
        quad: f64,
        w: DVector<f64>,
    ) -> DualEvaluation {
        let inst = self.inst;
        let d = lam.b_coefficients(inst);
        let (bval, bits) = self.b_term(&d);
        let c_b = DVector::from_iterator(inst.m_b(), inst.c_b().iter().map(|&c| c as f64));
        let value = quad + bval - lam.lam_a.dot(inst.c_a()) - lam.lam_b.dot(&c_b);

        let bvec = DVector::from_iterator(inst.n(), bits.iter().map(|&b| f64::from(u8::from(b))));
        let supergradient = DualVariables {
            lam_a: inst.a() * &w - inst.c_a(),
            lam_b: inst.b() * &bvec - c_b,
            lam_l: inst.lower().component_mul(&bvec) - &w,
            lam_u: &w - inst.upper().component_mul(&bvec),
        };
        DualEvaluation {
            value,
            x_hat,
            coefficients: d,
            supergradient,
        }
    }
}

/// Lagrangian dual value at `lam`; a lower bound on the primal optimum.
pub fn dual_objective(inst: &ProblemInstance, lam: &DualVariables) -> Result<f64, RelaxError> {
    Ok(DualModel::new(inst)?.dual(lam).value)
}

/// Augmented surrogate value at `lam`.
pub fn augm_objective(
    inst: &ProblemInstance,
    lam: &DualVariables,
    lambda_g: f64,
) -> Result<f64, RelaxError> {
    let phi = compute_phi(inst.q())?;
    Ok(DualModel::new(inst)?.augmented(lam, &phi, lambda_g).value)
}

/// Typical multiplier magnitude: the objective gradient scale `2 tr(Q)/n`.
fn multiplier_scale(inst: &ProblemInstance) -> f64 {
    let n = inst.n() as f64;
    let s = 2.0 * inst.q().trace() / n + inst.lin().amax();
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

struct AscentTrace {
    best: DualVariables,
    best_eval: DualEvaluation,
    iterations: usize,
}

fn ascend<F>(inst: &ProblemInstance, params: &DualAscentParams, eval: F) -> AscentTrace
where
    F: Fn(&DualVariables) -> DualEvaluation,
{
    let scale = multiplier_scale(inst);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut lam = DualVariables::zeros(inst);
    let jitter = 1e-3 * params.step0 * scale;
    for i in 0..inst.n() {
        lam.lam_l[i] = rng.random::<f64>() * jitter;
        lam.lam_u[i] = rng.random::<f64>() * jitter;
    }

    let mut current = eval(&lam);
    let mut best = (lam.clone(), current.clone());
    let iters = params.max_iters.max(1);
    for t in 1..=iters {
        let mut grad = current.supergradient.to_flat();
        if params.penalty_weight > 0.0 {
            // -w/scale * Σ max(d_i, 0)^2 pushes the b-coefficients nonpositive.
            let pos = current.coefficients.map(|v| v.max(0.0));
            if pos.amax() > 0.0 {
                let f = -2.0 * params.penalty_weight / scale;
                let pen = DualVariables {
                    lam_a: DVector::zeros(inst.m_a()),
                    lam_b: inst.b() * &pos * f,
                    lam_l: inst.lower().component_mul(&pos) * f,
                    lam_u: inst.upper().component_mul(&pos) * -f,
                };
                grad += pen.to_flat();
            }
        }
        let norm = grad.norm();
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        let step = params.step0 * scale / (t as f64).sqrt();
        let flat = lam.to_flat() + grad * (step / norm);
        lam = lam.with_flat(&flat);
        lam.project();
        current = eval(&lam);
        if current.value > best.1.value {
            best = (lam.clone(), current.clone());
        }
    }
    AscentTrace {
        best: best.0,
        best_eval: best.1,
        iterations: iters,
    }
}

fn outcome_from_ascent(
    inst: &ProblemInstance,
    kind: RelaxKind,
    trace: AscentTrace,
) -> Result<RelaxationOutcome, RelaxError> {
    let scores = -trace.best_eval.coefficients.clone();
    let selection = select_by_scores(inst, scores.as_slice())?;
    debug_assert_eq!(trace.best.lam_l.len(), inst.n());
    Ok(RelaxationOutcome {
        kind,
        selection,
        continuous_b: scores,
        x_hat: trace.best_eval.x_hat,
        bound: trace.best_eval.value,
        iterations: trace.iterations,
    })
}

/// Lagrangian dual relaxation by projected supergradient ascent.
pub fn solve_dual(
    inst: &ProblemInstance,
    params: &DualAscentParams,
) -> Result<RelaxationOutcome, RelaxError> {
    let model = DualModel::new(inst)?;
    let trace = ascend(inst, params, |lam| model.dual(lam));
    outcome_from_ascent(inst, RelaxKind::Dual, trace)
}

/// Augmented relaxation: the dual ascent run on the `Φ` surrogate.
pub fn solve_augm(
    inst: &ProblemInstance,
    lambda_g: f64,
    params: &DualAscentParams,
) -> Result<RelaxationOutcome, RelaxError> {
    let model = DualModel::new(inst)?;
    let phi = compute_phi(inst.q())?;
    let trace = ascend(inst, params, |lam| model.augmented(lam, &phi, lambda_g));
    outcome_from_ascent(inst, RelaxKind::Augm, trace)
}

/// Solution of the continuous relaxation with some `b_i` fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSolution {
    pub x: DVector<f64>,
    pub b_relaxed: DVector<f64>,
    pub bound: f64,
    pub iterations: usize,
}

/// Line relaxation with optional fixings (`Some(true)` forces `b_i = 1`,
/// `Some(false)` forces `b_i = 0` and `x_i = 0`).
///
/// Free indices carry `(x_i, b_i, s_i, t_i)` with `x_i - l_i b_i - s_i = 0`
/// and `u_i b_i - x_i - t_i = 0`, slacks nonnegative, `b_i ∈ [0, 1]`.
pub fn solve_line_fixed(
    inst: &ProblemInstance,
    fixings: &[Option<bool>],
) -> Result<LineSolution, RelaxError> {
    let n = inst.n();
    assert_eq!(fixings.len(), n);
    let (ma, mb) = (inst.m_a(), inst.m_b());

    // Column layout.
    let mut x_col = vec![None; n];
    let mut b_col = vec![None; n];
    let mut dim = 0;
    for i in 0..n {
        match fixings[i] {
            Some(false) => {}
            Some(true) => {
                x_col[i] = Some(dim);
                dim += 1;
            }
            None => {
                x_col[i] = Some(dim);
                b_col[i] = Some(dim + 1);
                dim += 4;
            }
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| fixings[i].is_none()).collect();
    let rows = ma + mb + 2 * free.len();

    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    let mut lo = DVector::zeros(dim);
    let mut hi = DVector::zeros(dim);
    let mut a = DMatrix::zeros(rows, dim);
    let mut rhs = DVector::zeros(rows);

    for i in 0..n {
        let Some(ci) = x_col[i] else { continue };
        g[ci] = inst.lin()[i];
        for j in 0..n {
            if let Some(cj) = x_col[j] {
                h[(ci, cj)] = inst.q()[(i, j)];
            }
        }
        for r in 0..ma {
            a[(r, ci)] = inst.a()[(r, i)];
        }
        let (l, u) = (inst.lower()[i], inst.upper()[i]);
        if fixings[i] == Some(true) {
            lo[ci] = l;
            hi[ci] = u;
        } else {
            lo[ci] = 0.0;
            hi[ci] = u;
            hi[ci + 1] = 1.0;
            hi[ci + 2] = u;
            hi[ci + 3] = u;
        }
    }
    rhs.rows_mut(0, ma).copy_from(inst.c_a());
    for r in 0..mb {
        let mut target = inst.c_b()[r] as f64;
        for i in 0..n {
            match (fixings[i], b_col[i]) {
                (Some(true), _) => target -= inst.b()[(r, i)],
                (None, Some(cb)) => a[(ma + r, cb)] = inst.b()[(r, i)],
                _ => {}
            }
        }
        if target < 0.0 {
            return Err(RelaxError::RelaxationInfeasible);
        }
        rhs[ma + r] = target;
    }
    for (f, &i) in free.iter().enumerate() {
        let cx = x_col[i].unwrap();
        let (l, u) = (inst.lower()[i], inst.upper()[i]);
        let r1 = ma + mb + 2 * f;
        a[(r1, cx)] = 1.0;
        a[(r1, cx + 1)] = -l;
        a[(r1, cx + 2)] = -1.0;
        a[(r1 + 1, cx + 1)] = u;
        a[(r1 + 1, cx)] = -1.0;
        a[(r1 + 1, cx + 3)] = -1.0;
    }

    let Some((a_red, rhs_red)) = qpsolve::reduce_equalities(&a, &rhs) else {
        return Err(RelaxError::RelaxationInfeasible);
    };
    let problem = QpProblem::new(h, g, a_red, rhs_red, lo, hi)?;
    let res = qpsolve::solve_qp(&problem)?;
    if res.status == QpStatus::Infeasible {
        return Err(RelaxError::RelaxationInfeasible);
    }

    let mut x = DVector::zeros(n);
    let mut b_relaxed = DVector::zeros(n);
    for i in 0..n {
        if let Some(c) = x_col[i] {
            x[i] = res.x[c];
        }
        b_relaxed[i] = match (fixings[i], b_col[i]) {
            (Some(true), _) => 1.0,
            (None, Some(c)) => res.x[c].clamp(0.0, 1.0),
            _ => 0.0,
        };
    }
    Ok(LineSolution {
        x,
        b_relaxed,
        bound: res.objective,
        iterations: res.iterations,
    })
}

/// Continuous relaxation of `b` to `[0, 1]`, rounded by top-k.
pub fn solve_line(inst: &ProblemInstance) -> Result<RelaxationOutcome, RelaxError> {
    let sol = solve_line_fixed(inst, &vec![None; inst.n()])?;
    let selection = select_by_scores(inst, sol.b_relaxed.as_slice())?;
    Ok(RelaxationOutcome {
        kind: RelaxKind::Line,
        selection,
        continuous_b: sol.b_relaxed,
        x_hat: sol.x,
        bound: sol.bound,
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_from_mv, MvSpec};

    fn mv(returns: Vec<f64>, target: f64, k: usize, q: DMatrix<f64>) -> ProblemInstance {
        let spec = MvSpec {
            returns,
            target_return: target,
            k,
            lower: 0.0,
            upper: 1.0,
        };
        build_from_mv(&spec, &q).unwrap()
    }

    #[test]
    fn topk_examples() {
        assert_eq!(discretize_topk(&[0.5, 0.2, 0.9], 2).bits(), &[true, false, true]);
        assert_eq!(discretize_topk(&[0.3, 0.3, 0.3], 1).bits(), &[true, false, false]);
        assert_eq!(discretize_topk(&[0.0; 4], 0).bits(), &[false; 4]);
    }

    #[test]
    fn phi_identity_and_diagonal() {
        let phi = compute_phi(&DMatrix::identity(3, 3)).unwrap();
        assert!((phi - DVector::from_element(3, 1.0)).amax() < 1e-15);
        let q = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 4.0]));
        let phi = compute_phi(&q).unwrap();
        assert!((phi[0] - 2.0).abs() < 1e-12 && (phi[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn phi_rejects_near_singular() {
        let q = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 1e-13]));
        assert!(matches!(compute_phi(&q), Err(RelaxError::NearSingularQ(_))));
    }

    #[test]
    fn dual_at_zero_multipliers_is_zero() {
        let inst = mv(vec![0.1, 0.2, 0.3], 0.2, 2, DMatrix::identity(3, 3));
        let lam = DualVariables::zeros(&inst);
        assert_eq!(dual_objective(&inst, &lam).unwrap(), 0.0);
        let model = DualModel::new(&inst).unwrap();
        assert_eq!(model.x_hat(&lam).amax(), 0.0);
    }

    #[test]
    fn augm_at_zero_multipliers_is_penalty_only() {
        let inst = mv(vec![0.1, 0.2, 0.3], 0.2, 2, DMatrix::identity(3, 3));
        let lam = DualVariables::zeros(&inst);
        let v = augm_objective(&inst, &lam, 0.5).unwrap();
        assert!((v - 0.5 * (0.2f64.powi(2) + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn augm_equals_dual_for_diagonal_q_without_penalty() {
        let q = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 2.0, 3.0]));
        let inst = mv(vec![0.1, 0.2, 0.3], 0.2, 2, q);
        let lam = DualVariables {
            lam_a: DVector::from_row_slice(&[0.3, -0.7]),
            lam_b: DVector::from_row_slice(&[0.1]),
            lam_l: DVector::from_row_slice(&[0.2, 0.0, 0.5]),
            lam_u: DVector::from_row_slice(&[0.0, 0.4, 0.1]),
        };
        let a = augm_objective(&inst, &lam, 0.0).unwrap();
        let d = dual_objective(&inst, &lam).unwrap();
        assert!((a - d).abs() < 1e-14);
    }

    #[test]
    fn dual_supergradient_matches_finite_differences_on_smooth_part() {
        // With λb, λl, λu chosen so no b-coefficient is negative, the b-term
        // vanishes and the dual is smooth in λa.
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let inst = mv(vec![0.1, 0.3], 0.2, 1, q);
        let model = DualModel::new(&inst).unwrap();
        let lam = DualVariables {
            lam_a: DVector::from_row_slice(&[0.4, -0.2]),
            lam_b: DVector::from_row_slice(&[0.5]),
            lam_l: DVector::zeros(2),
            lam_u: DVector::zeros(2),
        };
        let e = model.dual(&lam);
        let h = 1e-6;
        for r in 0..2 {
            let mut up = lam.clone();
            up.lam_a[r] += h;
            let mut dn = lam.clone();
            dn.lam_a[r] -= h;
            let fd = (model.dual(&up).value - model.dual(&dn).value) / (2.0 * h);
            assert!((fd - e.supergradient.lam_a[r]).abs() < 1e-8);
        }
    }

    #[test]
    fn line_forced_when_k_equals_n() {
        let inst = mv(vec![0.1, 0.2], 0.15, 2, DMatrix::identity(2, 2));
        let out = solve_line(&inst).unwrap();
        assert_eq!(out.selection.bits(), &[true, true]);
        assert!((out.continuous_b[0] - 1.0).abs() < 1e-9 && (out.continuous_b[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn line_bound_spreads_weight() {
        let inst = mv(vec![0.1; 4], 0.1, 2, DMatrix::identity(4, 4));
        let out = solve_line(&inst).unwrap();
        assert!((out.bound - 0.25).abs() < 1e-9, "{}", out.bound);
        assert_eq!(out.selection.popcount(), 2);
    }

    #[test]
    fn line_fixings_respected() {
        let inst = mv(vec![0.1, 0.2, 0.3, 0.25], 0.2, 2, DMatrix::identity(4, 4));
        let fix = [Some(false), Some(true), None, None];
        let sol = solve_line_fixed(&inst, &fix).unwrap();
        assert_eq!(sol.x[0], 0.0);
        assert_eq!(sol.b_relaxed[1], 1.0);
        let free = solve_line_fixed(&inst, &[None; 4]).unwrap();
        assert!(sol.bound >= free.bound - 1e-12);
    }

    #[test]
    fn greedy_fill_for_multirow_cardinality() {
        let b = DMatrix::from_row_slice(2, 4, &[1., 1., 0., 0., 0., 0., 1., 1.]);
        let inst = ProblemInstance::new(
            DMatrix::identity(4, 4),
            DVector::zeros(4),
            DMatrix::from_element(1, 4, 1.0),
            DVector::from_element(1, 1.0),
            DVector::zeros(4),
            DVector::from_element(4, 1.0),
            b,
            vec![1, 1],
        )
        .unwrap();
        let sel = select_by_scores(&inst, &[0.9, 0.8, 0.1, 0.2]).unwrap();
        assert_eq!(sel.bits(), &[true, false, false, true]);
    }
}
