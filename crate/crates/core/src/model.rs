//! Problem data for binary-cardinality-constrained quadratic programs.
//!
//! The general form handled throughout the crate is
//!
//! ```text
//!     minimize     x' Q x + q' x
//!     subject to   A x  = c_a
//!                  l_i b_i <= x_i <= u_i b_i
//!                  B b  = c_b
//!                  b binary
//! ```
//!
//! Note the objective carries no 1/2 factor. The mean-variance portfolio
//! model maps onto it with `A = [r'; 1']`, `c_a = [r*, 1]`, `B = 1'` and
//! `c_b = [k]` (see [`build_from_mv`]).

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for the symmetry check on `Q`.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest eigenvalue `Q` must exceed (after symmetrization).
pub const PD_EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("selection has popcount {found}, expected {expected}")]
    Cardinality { expected: usize, found: usize },
}

/// The generalized primal model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    q: DMatrix<f64>,
    lin: DVector<f64>,
    a: DMatrix<f64>,
    c_a: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    b: DMatrix<f64>,
    c_b: Vec<usize>,
}

impl ProblemInstance {
    /// Assembles an instance, checking only that dimensions agree.
    ///
    /// Numerical invariants (symmetry, definiteness, bound order) are left
    /// to [`validate`] so that malformed data can still be inspected.
    pub fn new(
        q: DMatrix<f64>,
        lin: DVector<f64>,
        a: DMatrix<f64>,
        c_a: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
        b: DMatrix<f64>,
        c_b: Vec<usize>,
    ) -> Result<Self, ModelError> {
        let n = q.nrows();
        if n == 0 {
            return Err(ModelError::DimensionMismatch("n must be positive".into()));
        }
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(ModelError::DimensionMismatch(what.to_string()))
            }
        };
        check(q.ncols() == n, "Q must be square")?;
        check(lin.len() == n, "q must have length n")?;
        check(a.ncols() == n, "A must have n columns")?;
        check(a.nrows() == c_a.len(), "A rows must match c_a")?;
        check(lower.len() == n, "lower bounds must have length n")?;
        check(upper.len() == n, "upper bounds must have length n")?;
        check(b.ncols() == n, "B must have n columns")?;
        check(b.nrows() == c_b.len(), "B rows must match c_b")?;
        Ok(Self {
            q,
            lin,
            a,
            c_a,
            lower,
            upper,
            b,
            c_b,
        })
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn m_a(&self) -> usize {
        self.a.nrows()
    }

    pub fn m_b(&self) -> usize {
        self.b.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn lin(&self) -> &DVector<f64> {
        &self.lin
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c_a(&self) -> &DVector<f64> {
        &self.c_a
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c_b(&self) -> &[usize] {
        &self.c_b
    }

    /// `Some(k)` when the cardinality system is the single row `1' b = k`.
    pub fn uniform_cardinality(&self) -> Option<usize> {
        if self.b.nrows() == 1 && self.b.iter().all(|&v| v == 1.0) {
            Some(self.c_b[0])
        } else {
            None
        }
    }

    /// Total number of ones any feasible selection carries, when that is
    /// determined by a single row. Used by the heuristics.
    pub fn selection_size(&self) -> Option<usize> {
        self.uniform_cardinality()
    }

    /// Whether `bits` satisfies `B b = c_b` exactly.
    pub fn satisfies_cardinality(&self, bits: &[bool]) -> bool {
        if bits.len() != self.n() {
            return false;
        }
        (0..self.m_b()).all(|r| {
            let lhs: f64 = bits
                .iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(i, _)| self.b[(r, i)])
                .sum();
            lhs == self.c_b[r] as f64
        })
    }

    /// Same instance with a different right-hand side for the equality system.
    pub fn with_c_a(&self, c_a: DVector<f64>) -> Result<Self, ModelError> {
        if c_a.len() != self.m_a() {
            return Err(ModelError::DimensionMismatch("c_a length".into()));
        }
        let mut out = self.clone();
        out.c_a = c_a;
        Ok(out)
    }

    /// `x' Q x + q' x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x)) + self.lin.dot(x)
    }
}

/// Mean-variance portfolio parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvSpec {
    pub returns: Vec<f64>,
    pub target_return: f64,
    pub k: usize,
    pub lower: f64,
    pub upper: f64,
}

impl MvSpec {
    pub fn n(&self) -> usize {
        self.returns.len()
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let n = self.n();
        if n == 0 {
            return Err(ModelError::DimensionMismatch("no assets".into()));
        }
        if self.k == 0 || self.k > n {
            return Err(ModelError::InvalidBounds(format!(
                "k = {} must lie in 1..={n}",
                self.k
            )));
        }
        if !(0.0..1.0).contains(&self.lower) || !(self.upper > 0.0 && self.upper <= 1.0) {
            return Err(ModelError::InvalidBounds(format!(
                "need 0 <= l < 1 and 0 < u <= 1, got l = {}, u = {}",
                self.lower, self.upper
            )));
        }
        if self.lower >= self.upper {
            return Err(ModelError::InvalidBounds(format!(
                "l = {} must be below u = {}",
                self.lower, self.upper
            )));
        }
        let k = self.k as f64;
        if k * self.lower > 1.0 || k * self.upper < 1.0 {
            return Err(ModelError::InvalidBounds(format!(
                "budget unreachable: k*l = {}, k*u = {}",
                k * self.lower,
                k * self.upper
            )));
        }
        Ok(())
    }
}

/// Maps a mean-variance specification and covariance onto the primal model.
pub fn build_from_mv(spec: &MvSpec, q: &DMatrix<f64>) -> Result<ProblemInstance, ModelError> {
    let n = spec.n();
    if q.nrows() != n || q.ncols() != n {
        return Err(ModelError::DimensionMismatch(format!(
            "Q is {}x{}, expected {n}x{n}",
            q.nrows(),
            q.ncols()
        )));
    }
    spec.check()?;
    let mut a = DMatrix::zeros(2, n);
    for (j, &r) in spec.returns.iter().enumerate() {
        a[(0, j)] = r;
        a[(1, j)] = 1.0;
    }
    ProblemInstance::new(
        q.clone(),
        DVector::zeros(n),
        a,
        DVector::from_vec(vec![spec.target_return, 1.0]),
        DVector::from_element(n, spec.lower),
        DVector::from_element(n, spec.upper),
        DMatrix::from_element(1, n, 1.0),
        vec![spec.k],
    )
}

/// A violated instance invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    AsymmetricQ { row: usize, col: usize, diff: f64 },
    NotPositiveDefinite { min_eigenvalue: f64 },
    NonFinite { what: &'static str, index: usize },
    NegativeLower { index: usize, value: f64 },
    NonpositiveUpper { index: usize, value: f64 },
    BoundOrder { index: usize, lower: f64, upper: f64 },
    NonIntegralCardinality { row: usize, col: usize, value: f64 },
    ZeroCardinalityTarget { row: usize },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::AsymmetricQ { row, col, diff } => {
                write!(f, "Q not symmetric at ({row},{col}): |Q_ij - Q_ji| = {diff:e}")
            }
            Diagnostic::NotPositiveDefinite { min_eigenvalue } => {
                write!(f, "Q not positive-definite, min eig = {min_eigenvalue}")
            }
            Diagnostic::NonFinite { what, index } => write!(f, "non-finite entry in {what} at {index}"),
            Diagnostic::NegativeLower { index, value } => {
                write!(f, "lower bound l_{index} = {value} is negative")
            }
            Diagnostic::NonpositiveUpper { index, value } => {
                write!(f, "upper bound u_{index} = {value} is not positive")
            }
            Diagnostic::BoundOrder { index, lower, upper } => {
                write!(f, "l_{index} = {lower} exceeds u_{index} = {upper}")
            }
            Diagnostic::NonIntegralCardinality { row, col, value } => {
                write!(f, "B[{row}][{col}] = {value} is not a nonnegative integer")
            }
            Diagnostic::ZeroCardinalityTarget { row } => write!(f, "c_b[{row}] must be positive"),
        }
    }
}

/// Lists every violated invariant; empty when the instance is usable.
pub fn validate(inst: &ProblemInstance) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = inst.n();
    let q = inst.q();

    for (what, values) in [
        ("Q", q.as_slice()),
        ("q", inst.lin().as_slice()),
        ("A", inst.a().as_slice()),
        ("c_a", inst.c_a().as_slice()),
    ] {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            out.push(Diagnostic::NonFinite { what, index });
        }
    }

    let scale = q.amax().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (q[(i, j)] - q[(j, i)]).abs();
            if diff > SYMMETRY_TOL * scale {
                out.push(Diagnostic::AsymmetricQ { row: i, col: j, diff });
            }
        }
    }
    if q.iter().all(|v| v.is_finite()) {
        let sym = (q + q.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
        if min_eig <= PD_EIGEN_FLOOR {
            out.push(Diagnostic::NotPositiveDefinite { min_eigenvalue: min_eig });
        }
    }

    for i in 0..n {
        let (l, u) = (inst.lower()[i], inst.upper()[i]);
        if l < 0.0 || l.is_nan() {
            out.push(Diagnostic::NegativeLower { index: i, value: l });
        }
        if u <= 0.0 || u.is_nan() {
            out.push(Diagnostic::NonpositiveUpper { index: i, value: u });
        }
        if l > u {
            out.push(Diagnostic::BoundOrder { index: i, lower: l, upper: u });
        }
    }

    let b = inst.b();
    for r in 0..inst.m_b() {
        for c in 0..n {
            let v = b[(r, c)];
            if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
                out.push(Diagnostic::NonIntegralCardinality { row: r, col: c, value: v });
            }
        }
        if inst.c_b()[r] == 0 {
            out.push(Diagnostic::ZeroCardinalityTarget { row: r });
        }
    }
    out
}

/// A binary selection vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinarySelection {
    bits: Vec<bool>,
}

impl BinarySelection {
    /// Builds a selection, rejecting it unless exactly `k` bits are set.
    pub fn with_cardinality(bits: Vec<bool>, k: usize) -> Result<Self, ModelError> {
        let found = bits.iter().filter(|&&b| b).count();
        if found != k {
            return Err(ModelError::Cardinality { expected: k, found });
        }
        Ok(Self { bits })
    }

    /// Builds a selection without a cardinality check (general `B`).
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn from_indices(n: usize, ones: &[usize]) -> Self {
        let mut bits = vec![false; n];
        for &i in ones {
            bits[i] = true;
        }
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn ones(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }

    pub fn zeros(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| !self.bits[i]).collect()
    }

    /// Exchanges the values at positions `i` and `j`.
    pub fn swapped(&self, i: usize, j: usize) -> Self {
        let mut bits = self.bits.clone();
        bits.swap(i, j);
        Self { bits }
    }

    /// `"0110..."` rendering used in reports.
    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn parse_bit_string(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(|bits| Self { bits })
    }
}

impl fmt::Display for BinarySelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolutionStatus {
    Optimal,
    Infeasible,
}

/// Weights, the selection they were restricted to, and their objective.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSolution {
    pub x: DVector<f64>,
    pub selection: BinarySelection,
    pub objective: f64,
    pub status: SolutionStatus,
}

impl WeightedSolution {
    pub fn infeasible(selection: BinarySelection) -> Self {
        let n = selection.len();
        Self {
            x: DVector::zeros(n),
            selection,
            objective: f64::INFINITY,
            status: SolutionStatus::Infeasible,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolutionStatus::Optimal
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(returns: Vec<f64>, target: f64, k: usize, l: f64, u: f64) -> MvSpec {
        MvSpec {
            returns,
            target_return: target,
            k,
            lower: l,
            upper: u,
        }
    }

    #[test]
    fn mv_mapping_transcribes_constraints() {
        let s = spec(vec![0.1, 0.2], 0.15, 2, 0.0, 1.0);
        let inst = build_from_mv(&s, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(inst.a(), &DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 1.0, 1.0]));
        assert_eq!(inst.c_a().as_slice(), &[0.15, 1.0]);
        assert_eq!(inst.b(), &DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
        assert_eq!(inst.c_b(), &[2]);
        assert_eq!(inst.lin().as_slice(), &[0.0, 0.0]);
        assert_eq!(inst.uniform_cardinality(), Some(2));
        assert!(validate(&inst).is_empty());
    }

    #[test]
    fn budget_infeasible_bounds_rejected() {
        let s = spec(vec![0.1; 5], 0.1, 3, 0.4, 1.0);
        let err = build_from_mv(&s, &DMatrix::identity(5, 5)).unwrap_err();
        assert!(matches!(err, ModelError::InvalidBounds(_)));
        let s = spec(vec![0.1; 5], 0.1, 2, 0.0, 0.4);
        assert!(matches!(
            build_from_mv(&s, &DMatrix::identity(5, 5)),
            Err(ModelError::InvalidBounds(_))
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let s = spec(vec![0.1, 0.2, 0.3], 0.2, 2, 0.0, 1.0);
        assert!(matches!(
            build_from_mv(&s, &DMatrix::identity(2, 2)),
            Err(ModelError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn asymmetric_q_reported() {
        let s = spec(vec![0.1, 0.2], 0.15, 1, 0.0, 1.0);
        let mut q = DMatrix::identity(2, 2);
        q[(0, 1)] = 0.3;
        let inst = build_from_mv(&s, &q).unwrap();
        let diags = validate(&inst);
        assert!(diags
            .iter()
            .any(|d| matches!(d, Diagnostic::AsymmetricQ { row: 0, col: 1, .. })));
    }

    #[test]
    fn indefinite_q_reported_with_min_eigenvalue() {
        let s = spec(vec![0.1, 0.2], 0.15, 1, 0.0, 1.0);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let inst = build_from_mv(&s, &q).unwrap();
        let diags = validate(&inst);
        assert_eq!(diags.len(), 1);
        match diags[0] {
            Diagnostic::NotPositiveDefinite { min_eigenvalue } => {
                assert!((min_eigenvalue + 1.0).abs() < 1e-12)
            }
            ref other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_q_rejected() {
        let s = spec(vec![0.1, 0.2], 0.15, 1, 0.0, 1.0);
        let inst = build_from_mv(&s, &DMatrix::zeros(2, 2)).unwrap();
        assert!(validate(&inst)
            .iter()
            .any(|d| matches!(d, Diagnostic::NotPositiveDefinite { .. })));
    }

    #[test]
    fn bound_order_reported() {
        let inst = ProblemInstance::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_element(1, 2, 1.0),
            DVector::from_element(1, 1.0),
            DVector::from_vec(vec![0.5, 0.0]),
            DVector::from_vec(vec![0.2, 1.0]),
            DMatrix::from_element(1, 2, 1.0),
            vec![1],
        )
        .unwrap();
        assert_eq!(
            validate(&inst),
            vec![Diagnostic::BoundOrder { index: 0, lower: 0.5, upper: 0.2 }]
        );
    }

    #[test]
    fn selection_constructor_checks_popcount() {
        assert!(BinarySelection::with_cardinality(vec![true, false, true], 2).is_ok());
        assert_eq!(
            BinarySelection::with_cardinality(vec![true, false, true], 1),
            Err(ModelError::Cardinality { expected: 1, found: 2 })
        );
        let s = BinarySelection::from_indices(4, &[1, 3]);
        assert_eq!(s.to_bit_string(), "0101");
        assert_eq!(BinarySelection::parse_bit_string("0101"), Some(s));
    }
}
