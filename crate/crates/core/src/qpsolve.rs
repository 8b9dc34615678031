//! Dense convex QP solver for equality constraints plus simple bounds.
//!
//! ```text
//!     minimize     x' H x + g' x
//!     subject to   Aeq x = beq
//!                  lo <= x <= hi
//! ```
//!
//! The objective has no 1/2 factor. The solver is a primal active-set
//! method whose working set holds bound constraints only; the equalities
//! are always active. A feasible start comes from a phase-1 bounded least
//! squares problem solved by the same machinery. Each iteration solves
//! the KKT system of the free variables with a small proximal shift on the
//! Hessian, so positive-semidefinite `H` (zero-curvature directions)
//! is handled by stepping to the nearest blocking bound.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Bound activity tolerance.
pub const ACTIVITY_TOL: f64 = 1e-9;
/// Target KKT residual at convergence (scaled down for tiny problem data).
pub const KKT_TOL: f64 = 1e-8;
/// Iteration cap is this many iterations per variable.
pub const ITERS_PER_VAR: usize = 50;

const FEASIBILITY_TOL: f64 = 1e-9;
const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("equality rows are linearly dependent (rank {rank} < {rows})")]
    SingularKkt { rank: usize, rows: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        h: DMatrix<f64>,
        g: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        lo: DVector<f64>,
        hi: DVector<f64>,
    ) -> Result<Self, QpError> {
        let p = Self {
            h,
            g,
            a_eq,
            b_eq,
            lo,
            hi,
        };
        p.check()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    fn check(&self) -> Result<(), QpError> {
        let d = self.g.len();
        let bad = |m: &str| Err(QpError::InvalidProblem(m.to_string()));
        if self.h.nrows() != d || self.h.ncols() != d {
            return bad("H must be d x d");
        }
        if self.a_eq.ncols() != d || self.a_eq.nrows() != self.b_eq.len() {
            return bad("Aeq/beq dimensions");
        }
        if self.lo.len() != d || self.hi.len() != d {
            return bad("bound dimensions");
        }
        let scale = self.h.amax().max(1.0);
        for i in 0..d {
            if self.lo[i] > self.hi[i] || self.lo[i].is_nan() || self.hi[i].is_nan() {
                return bad("lo must not exceed hi");
            }
            for j in (i + 1)..d {
                if (self.h[(i, j)] - self.h[(j, i)]).abs() > 1e-12 * scale {
                    return bad("H must be symmetric");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Multipliers `mu` of `Aeq x = beq` in `2 H x + g + Aeq' mu - z = 0`.
    pub eq_multipliers: DVector<f64>,
    /// Bound multipliers `z`: nonnegative at active lower bounds,
    /// nonpositive at active upper bounds, zero elsewhere.
    pub bound_multipliers: DVector<f64>,
    pub kkt_residual: f64,
}

/// Solves the QP from a phase-1 feasible start.
pub fn solve_qp(p: &QpProblem) -> Result<QpResult, QpError> {
    solve_qp_from(p, None)
}

/// Solves the QP, starting from `x0` when it is feasible.
pub fn solve_qp_from(p: &QpProblem, x0: Option<&DVector<f64>>) -> Result<QpResult, QpError> {
    p.check()?;
    let d = p.dim();
    let m = p.a_eq.nrows();

    // Variables pinned by lo == hi are substituted out.
    let pinned: Vec<bool> = (0..d).map(|i| p.lo[i] == p.hi[i]).collect();
    let free: Vec<usize> = (0..d).filter(|&i| !pinned[i]).collect();
    let mut x_full = DVector::zeros(d);
    for i in 0..d {
        if pinned[i] {
            x_full[i] = p.lo[i];
        }
    }

    let nf = free.len();
    let h_ff = DMatrix::from_fn(nf, nf, |r, c| p.h[(free[r], free[c])]);
    let hx_pinned = &p.h * &x_full;
    let g_f = DVector::from_fn(nf, |r, _| p.g[free[r]] + 2.0 * hx_pinned[free[r]]);
    let a_f = DMatrix::from_fn(m, nf, |r, c| p.a_eq[(r, free[c])]);
    let b_f = &p.b_eq - &p.a_eq * &x_full;
    let lo_f = DVector::from_fn(nf, |r, _| p.lo[free[r]]);
    let hi_f = DVector::from_fn(nf, |r, _| p.hi[free[r]]);

    let rank = row_rank(&a_f);
    if rank < m {
        if nf == 0 && b_f.amax() <= FEASIBILITY_TOL * (1.0 + p.b_eq.amax()) {
            // Nothing left to choose and the pinned point is feasible.
        } else if nf == 0 {
            return Ok(infeasible_result(p, x_full, 0));
        } else {
            return Err(QpError::SingularKkt { rank, rows: m });
        }
    }
    if nf == 0 {
        return Ok(finish(p, x_full, DVector::zeros(m), QpStatus::Optimal, 0));
    }

    let start = x0
        .map(|x| DVector::from_fn(nf, |r, _| x[free[r]]))
        .filter(|xf| is_feasible(xf, &a_f, &b_f, &lo_f, &hi_f));
    let (start, phase1_iters) = match start {
        Some(s) => (s, 0),
        None => match phase_one(&a_f, &b_f, &lo_f, &hi_f) {
            Some(found) => found,
            None => {
                return Ok(infeasible_result(p, x_full, 0));
            }
        },
    };

    let core = ActiveSet::new(2.0 * h_ff, g_f, a_f, lo_f, hi_f);
    let out = core.run(start, ITERS_PER_VAR * d.max(1))?;
    for (r, &i) in free.iter().enumerate() {
        x_full[i] = out.x[r];
    }
    Ok(finish(
        p,
        x_full,
        out.mu,
        out.status,
        out.iterations + phase1_iters,
    ))
}

/// Drops equality rows that are linear combinations of earlier rows.
///
/// Returns `None` when a dependent row contradicts the rows it depends on
/// (the affine set is empty), otherwise the retained rows.
pub fn reduce_equalities(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let d = a.ncols();
    let mut basis: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut kept = Vec::new();
    for i in 0..a.nrows() {
        let row = a.row(i).transpose();
        let norm = row.norm();
        let mut ra = row.clone();
        let mut rb = b[i];
        for (q, beta) in &basis {
            let c = row.dot(q);
            ra -= q * c;
            rb -= c * beta;
        }
        let rn = ra.norm();
        if norm == 0.0 || rn <= DEPENDENCE_TOL * norm {
            let scale = 1.0 + b[i].abs();
            if rb.abs() > 1e-9 * scale {
                return None;
            }
            continue;
        }
        basis.push((ra / rn, rb / rn));
        kept.push(i);
    }
    let a_red = DMatrix::from_fn(kept.len(), d, |r, c| a[(kept[r], c)]);
    let b_red = DVector::from_fn(kept.len(), |r, _| b[kept[r]]);
    Some((a_red, b_red))
}

fn row_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 {
        return 0;
    }
    if a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let tol = DEPENDENCE_TOL * smax * (a.nrows().max(a.ncols()) as f64);
    sv.iter().filter(|&&s| s > tol).count()
}

fn is_feasible(
    x: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> bool {
    let inside = (0..x.len()).all(|i| x[i] >= lo[i] && x[i] <= hi[i]);
    inside && (a * x - b).amax() <= FEASIBILITY_TOL * (1.0 + b.amax())
}

fn infeasible_result(p: &QpProblem, x: DVector<f64>, iterations: usize) -> QpResult {
    let d = p.dim();
    QpResult {
        x,
        objective: f64::INFINITY,
        status: QpStatus::Infeasible,
        iterations,
        eq_multipliers: DVector::zeros(p.a_eq.nrows()),
        bound_multipliers: DVector::zeros(d),
        kkt_residual: f64::INFINITY,
    }
}

fn finish(
    p: &QpProblem,
    x: DVector<f64>,
    mu: DVector<f64>,
    status: QpStatus,
    iterations: usize,
) -> QpResult {
    let grad = 2.0 * (&p.h * &x) + &p.g;
    let z = &grad + p.a_eq.transpose() * &mu;
    let d = p.dim();
    let mut bound_multipliers = DVector::zeros(d);
    let mut residual: f64 = 0.0;
    for i in 0..d {
        let at_lo = x[i] <= p.lo[i] + ACTIVITY_TOL;
        let at_hi = x[i] >= p.hi[i] - ACTIVITY_TOL;
        let zi = z[i];
        let (mult, res) = match (at_lo, at_hi) {
            (true, true) => (zi, 0.0),
            (true, false) => (zi.max(0.0), (-zi).max(0.0)),
            (false, true) => (zi.min(0.0), zi.max(0.0)),
            (false, false) => (0.0, zi.abs()),
        };
        bound_multipliers[i] = mult;
        residual = residual.max(res);
    }
    let eq_res = (&p.a_eq * &x - &p.b_eq).amax();
    QpResult {
        objective: p.objective(&x),
        x,
        status,
        iterations,
        eq_multipliers: mu,
        bound_multipliers,
        kkt_residual: residual.max(eq_res),
    }
}

/// Phase 1: minimize |A x - b|^2 over the box. Returns a feasible point or
/// `None` when the residual cannot be driven to zero.
fn phase_one(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> Option<(DVector<f64>, usize)> {
    let d = lo.len();
    let m = a.nrows();
    let x0 = DVector::from_fn(d, |i, _| 0.0f64.clamp(lo[i], hi[i]));
    if m == 0 {
        return Some((x0, 0));
    }
    // Unit-norm rows keep the normal equations reasonably scaled.
    let mut an = a.clone();
    let mut bn = b.clone();
    for r in 0..m {
        let nr = a.row(r).norm();
        if nr > 0.0 {
            an.row_mut(r).scale_mut(1.0 / nr);
            bn[r] /= nr;
        }
    }
    let h2 = 2.0 * an.transpose() * &an;
    let g = -2.0 * an.transpose() * &bn;
    let core = ActiveSet::new(h2, g, DMatrix::zeros(0, d), lo.clone(), hi.clone());
    let out = core.run(x0, ITERS_PER_VAR * d.max(1)).ok()?;
    let mut x = out.x;
    refine_onto_affine(&mut x, a, b, lo, hi);
    let scale = 1.0 + b.amax();
    if (a * &x - b).amax() <= FEASIBILITY_TOL * scale {
        Some((x, out.iterations))
    } else {
        None
    }
}

/// Min-norm correction of the equality residual using variables strictly
/// inside their bounds; skipped if it would leave the box.
fn refine_onto_affine(
    x: &mut DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) {
    let inner: Vec<usize> = (0..x.len())
        .filter(|&i| x[i] > lo[i] + ACTIVITY_TOL && x[i] < hi[i] - ACTIVITY_TOL)
        .collect();
    if inner.is_empty() {
        return;
    }
    let a_i = DMatrix::from_fn(a.nrows(), inner.len(), |r, c| a[(r, inner[c])]);
    let resid = b - a * &*x;
    let gram = &a_i * a_i.transpose();
    let Some(y) = gram.lu().solve(&resid) else {
        return;
    };
    let delta = a_i.transpose() * y;
    let mut trial = x.clone();
    for (c, &i) in inner.iter().enumerate() {
        trial[i] += delta[c];
        if trial[i] < lo[i] || trial[i] > hi[i] {
            return;
        }
    }
    if (a * &trial - b).amax() < (a * &*x - b).amax() {
        *x = trial;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activity {
    Free,
    Lower,
    Upper,
}

struct CoreOutcome {
    x: DVector<f64>,
    mu: DVector<f64>,
    status: QpStatus,
    iterations: usize,
}

/// Primal active-set iterations on `x' (h2/2) x + g' x`, `a x = const`,
/// `lo <= x <= hi`, from a feasible `x`.
struct ActiveSet {
    h2: DMatrix<f64>,
    g: DVector<f64>,
    a: DMatrix<f64>,
    lo: DVector<f64>,
    hi: DVector<f64>,
    shift: f64,
    kkt_tol: f64,
}

impl ActiveSet {
    fn new(
        h2: DMatrix<f64>,
        g: DVector<f64>,
        a: DMatrix<f64>,
        lo: DVector<f64>,
        hi: DVector<f64>,
    ) -> Self {
        let hscale = h2.amax();
        let gscale = hscale.max(g.amax());
        let shift = 1e-12 * if hscale > 0.0 { hscale } else { 1e-12 };
        let kkt_tol = KKT_TOL * gscale.clamp(1e-6, 1.0);
        Self {
            h2,
            g,
            a,
            lo,
            hi,
            shift,
            kkt_tol,
        }
    }

    fn run(&self, mut x: DVector<f64>, max_iter: usize) -> Result<CoreOutcome, QpError> {
        let d = x.len();
        let m = self.a.nrows();
        let mut state = vec![Activity::Free; d];
        for i in 0..d {
            if x[i] <= self.lo[i] + ACTIVITY_TOL {
                x[i] = self.lo[i];
                state[i] = Activity::Lower;
            } else if x[i] >= self.hi[i] - ACTIVITY_TOL {
                x[i] = self.hi[i];
                state[i] = Activity::Upper;
            }
        }
        self.release_for_rank(&mut state);

        let mut mu = DVector::zeros(m);
        for iter in 0..max_iter {
            let free: Vec<usize> = (0..d).filter(|&i| state[i] == Activity::Free).collect();
            let grad = &self.h2 * &x + &self.g;
            let (p, new_mu) = match self.direction(&free, &grad) {
                Ok(step) => step,
                Err(e) => {
                    let before = state.clone();
                    self.release_for_rank(&mut state);
                    if state == before {
                        return Err(e);
                    }
                    continue;
                }
            };
            mu = new_mu;

            let nf = free.len();
            let mut resid: f64 = 0.0;
            for r in 0..nf {
                let i = free[r];
                let mut s = grad[i];
                for k in 0..m {
                    s += self.a[(k, i)] * mu[k];
                }
                resid = resid.max(s.abs());
            }

            if resid <= self.kkt_tol || p.amax() <= 1e-15 * (1.0 + x.amax()) {
                // Subspace minimizer: test the bound multipliers.
                let atmu = self.a.transpose() * &mu;
                let mut worst: Option<(usize, f64)> = None;
                for i in 0..d {
                    let z = grad[i] + atmu[i];
                    let violation = match state[i] {
                        Activity::Lower => -z,
                        Activity::Upper => z,
                        Activity::Free => continue,
                    };
                    if violation > self.kkt_tol && worst.is_none_or(|(_, w)| violation > w) {
                        worst = Some((i, violation));
                    }
                }
                match worst {
                    None => {
                        return Ok(CoreOutcome {
                            x,
                            mu,
                            status: QpStatus::Optimal,
                            iterations: iter + 1,
                        })
                    }
                    Some((i, _)) => state[i] = Activity::Free,
                }
                continue;
            }

            // Ratio test; the first index wins ties.
            let mut alpha = 1.0;
            let mut blocking: Option<(usize, Activity)> = None;
            let negligible = 1e-11 * p.amax();
            for (r, &i) in free.iter().enumerate() {
                let pi = p[r];
                if pi.abs() <= negligible {
                    continue;
                }
                let (t, side) = if pi < 0.0 && self.lo[i].is_finite() {
                    (((self.lo[i] - x[i]) / pi).max(0.0), Activity::Lower)
                } else if pi > 0.0 && self.hi[i].is_finite() {
                    (((self.hi[i] - x[i]) / pi).max(0.0), Activity::Upper)
                } else {
                    continue;
                };
                if t < alpha {
                    alpha = t;
                    blocking = Some((i, side));
                }
            }
            for (r, &i) in free.iter().enumerate() {
                x[i] += alpha * p[r];
            }
            if let Some((i, side)) = blocking {
                x[i] = if side == Activity::Lower {
                    self.lo[i]
                } else {
                    self.hi[i]
                };
                state[i] = side;
            }
        }
        Ok(CoreOutcome {
            x,
            mu,
            status: QpStatus::IterationLimit,
            iterations: max_iter,
        })
    }

    /// Frees bound variables (lowest index first) until the free columns of
    /// `a` have full row rank, so the KKT matrix is nonsingular.
    fn release_for_rank(&self, state: &mut [Activity]) {
        let m = self.a.nrows();
        if m == 0 {
            return;
        }
        let cols = |st: &[Activity]| -> Vec<usize> {
            (0..st.len()).filter(|&i| st[i] == Activity::Free).collect()
        };
        let rank_of = |idx: &[usize]| {
            let sub = DMatrix::from_fn(m, idx.len(), |r, c| self.a[(r, idx[c])]);
            row_rank(&sub)
        };
        let mut current = rank_of(&cols(state));
        for i in 0..state.len() {
            if current == m {
                break;
            }
            if state[i] == Activity::Free {
                continue;
            }
            let mut trial = cols(state);
            trial.push(i);
            trial.sort_unstable();
            let r = rank_of(&trial);
            if r > current {
                state[i] = Activity::Free;
                current = r;
            }
        }
    }

    /// Solves the regularized KKT system of the free variables for the step
    /// and the equality multipliers.
    fn direction(
        &self,
        free: &[usize],
        grad: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), QpError> {
        let nf = free.len();
        let m = self.a.nrows();
        let dim = nf + m;
        if dim == 0 {
            return Ok((DVector::zeros(0), DVector::zeros(0)));
        }
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for r in 0..nf {
            for c in 0..nf {
                kkt[(r, c)] = self.h2[(free[r], free[c])];
            }
            kkt[(r, r)] += self.shift;
            for k in 0..m {
                let v = self.a[(k, free[r])];
                kkt[(r, nf + k)] = v;
                kkt[(nf + k, r)] = v;
            }
            rhs[r] = -grad[free[r]];
        }
        let sol = kkt.lu().solve(&rhs).filter(|s| s.iter().all(|v| v.is_finite()));
        let Some(sol) = sol else {
            let rank = row_rank(&DMatrix::from_fn(m, nf, |r, c| self.a[(r, free[c])]));
            return Err(QpError::SingularKkt { rank, rows: m });
        };
        let p = sol.rows(0, nf).into_owned();
        let mu = sol.rows(nf, m).into_owned();
        let a_f = DMatrix::from_fn(m, nf, |r, c| self.a[(r, free[c])]);
        if m > 0 && (&a_f * &p).amax() > 1e-9 * (1.0 + p.amax()) {
            return Err(QpError::SingularKkt {
                rank: row_rank(&a_f),
                rows: m,
            });
        }
        Ok((p, mu))
    }
}
