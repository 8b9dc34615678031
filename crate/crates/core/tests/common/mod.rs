//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimizes `x'Hx + g'x` s.t. `Ax = b`, `lo <= x <= hi` by an augmented
/// Lagrangian outer loop with accelerated projected gradient inside.
pub fn oracle_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let d = g.len();
    // Unit rows keep the penalty well scaled.
    let mut a = a.clone();
    let mut b = b.clone();
    for r in 0..a.nrows() {
        let nr = a.row(r).norm();
        if nr > 0.0 {
            a.row_mut(r).scale_mut(1.0 / nr);
            b[r] /= nr;
        }
    }
    let (a, b) = (&a, &b);
    let obj_at = |x: &DVector<f64>| x.dot(&(h * x)) + g.dot(x);
    // Objective scaling leaves the minimizer unchanged.
    let scale = h.norm().max(g.norm()).max(1e-300);
    let h = &(h / scale);
    let g = &(g / scale);
    let clamp = |x: &DVector<f64>| DVector::from_fn(d, |i, _| x[i].clamp(lo[i], hi[i]));
    let mut x = clamp(&DVector::zeros(d));
    let mut mu = DVector::zeros(a.nrows());
    let rho = 100.0 * (1.0 + h.norm());
    let hess = 2.0 * h + rho * a.transpose() * a;
    let lip = hess.clone().symmetric_eigenvalues().max().max(1e-12);
    for _outer in 0..200 {
        let mut y = x.clone();
        let mut t = 1.0f64;
        let grad_at = |z: &DVector<f64>| {
            2.0 * h * z + g + a.transpose() * (&mu + rho * (a * z - b))
        };
        for it in 0..20000 {
            let xn = clamp(&(&y - grad_at(&y) / lip));
            let tn = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            y = &xn + (&xn - &x) * ((t - 1.0) / tn);
            x = xn;
            t = tn;
            if it % 50 == 49 {
                let stat = (&x - clamp(&(&x - grad_at(&x) / lip))).amax();
                if stat < 1e-15 {
                    break;
                }
                // Restart momentum.
                y = x.clone();
                t = 1.0;
            }
        }
        let r = a * &x - b;
        mu += rho * &r;
        if r.amax() < 1e-12 {
            break;
        }
    }
    let obj = obj_at(&x);
    (x, obj)
}

/// Random symmetric positive-definite matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    let qr = m.qr();
    let q = qr.q();
    let diag = DVector::from_fn(n, |_, _| lo + (hi - lo) * rng.random::<f64>());
    let out = &q * DMatrix::from_diagonal(&diag) * q.transpose();
    (&out + out.transpose()) * 0.5
}

/// Port-like covariance: one-factor structure plus idiosyncratic noise, with
/// returns loosely tied to volatility.
pub fn synthetic_market(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
    let idio: Vec<f64> = (0..n).map(|_| 0.02 + 0.05 * rng.random::<f64>()).collect();
    let f = 0.03;
    let q = DMatrix::from_fn(n, n, |i, j| {
        beta[i] * beta[j] * f * f + if i == j { idio[i] * idio[i] } else { 0.0 }
    });
    let r = (0..n)
        .map(|i| 0.002 + 0.01 * beta[i] * rng.random::<f64>() + 0.004 * rng.random::<f64>())
        .collect();
    (q, r)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Asset statistics in benchmark form: returns, volatilities, correlation.
pub struct Universe {
    pub returns: Vec<f64>,
    pub sd: Vec<f64>,
    pub corr: DMatrix<f64>,
}

impl Universe {
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.returns.len();
        DMatrix::from_fn(n, n, |i, j| self.corr[(i, j)] * self.sd[i] * self.sd[j])
    }

    /// Benchmark text: `n`, `mean sd` lines, upper-triangle `i j corr`.
    pub fn port_text(&self) -> String {
        let n = self.returns.len();
        let mut s = format!("{n}\n");
        for i in 0..n {
            s += &format!("{:.17e} {:.17e}\n", self.returns[i], self.sd[i]);
        }
        for i in 0..n {
            for j in i..n {
                s += &format!("{} {} {:.17e}\n", i + 1, j + 1, self.corr[(i, j)]);
            }
        }
        s
    }
}

/// Random universe with a two-factor correlation structure.
pub fn random_universe(n: usize, seed: u64) -> Universe {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: DMatrix<f64> = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
    let spec = DVector::from_fn(n, |_, _| 0.3 + rng.random::<f64>());
    let cov = &w * w.transpose() + DMatrix::from_diagonal(&spec);
    let corr = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt()
        }
    });
    let sd: Vec<f64> = (0..n).map(|_| 0.02 + 0.08 * rng.random::<f64>()).collect();
    let returns = (0..n).map(|i| 0.001 + 0.1 * sd[i] * rng.random::<f64>()).collect();
    Universe { returns, sd, corr }
}

/// Random MV instance whose target lies strictly inside the asset return
/// range.
pub fn random_mv(n: usize, k: usize, lower: f64, seed: u64) -> miqp_hybrid::model::ProblemInstance {
    use miqp_hybrid::model::{build_from_mv, MvSpec};
    let u = random_universe(n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut sorted = u.returns.clone();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[..k].iter().sum::<f64>() / k as f64;
    let hi = sorted[n - k..].iter().sum::<f64>() / k as f64;
    let t = lo + (hi - lo) * (0.1 + 0.8 * rng.random::<f64>());
    let spec = MvSpec {
        returns: u.returns.clone(),
        target_return: t,
        k,
        lower,
        upper: 1.0,
    };
    build_from_mv(&spec, &u.covariance()).unwrap()
}

/// Restricted optimum by the slow oracle; `+∞` when the equality residual
/// cannot be driven to zero.
pub fn restricted_oracle(inst: &miqp_hybrid::model::ProblemInstance, ones: &[usize]) -> f64 {
    let d = ones.len();
    let h = DMatrix::from_fn(d, d, |r, c| inst.q()[(ones[r], ones[c])]);
    let g = DVector::from_fn(d, |r, _| inst.lin()[ones[r]]);
    let a = DMatrix::from_fn(inst.m_a(), d, |r, c| inst.a()[(r, ones[c])]);
    let lo = DVector::from_fn(d, |r, _| inst.lower()[ones[r]]);
    let hi = DVector::from_fn(d, |r, _| inst.upper()[ones[r]]);
    let (x, obj) = oracle_qp(&h, &g, &a, inst.c_a(), &lo, &hi);
    if (&a * &x - inst.c_a()).amax() > 1e-7 {
        f64::INFINITY
    } else {
        obj
    }
}

/// Random feasible equality+box QP; `semidef` flattens half the Hessian.
pub fn random_qp(seed: u64, d: usize, m: usize, semidef: bool) -> miqp_hybrid::qpsolve::QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = random_spd(d, 0.1, 2.0, &mut rng);
    if semidef {
        // Zero out trailing rows/columns: a PSD Hessian with a flat block.
        for i in d / 2..d {
            for j in 0..d {
                h[(i, j)] = 0.0;
                h[(j, i)] = 0.0;
            }
        }
    }
    let g = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let a = DMatrix::from_fn(m, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let lo = DVector::from_fn(d, |_, _| -rng.random::<f64>());
    let hi = DVector::from_fn(d, |i, _| lo[i] + 0.1 + rng.random::<f64>());
    // Right-hand side from an interior point so the problem is feasible.
    let x0 = DVector::from_fn(d, |i, _| lo[i] + (hi[i] - lo[i]) * (0.2 + 0.6 * rng.random::<f64>()));
    let b = &a * &x0;
    miqp_hybrid::qpsolve::QpProblem::new(h, g, a, b, lo, hi).unwrap()
}
