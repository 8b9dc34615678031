//! Benchmark file parsing, covariance construction, and report writing.

use std::collections::{BTreeMap, HashMap};
use std::io;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    FrontierPoint, GapRecord, Method, MethodAggregates, PeRecord, ReferenceRecord, UefCurve,
};
use crate::model::PD_EIGEN_FLOOR;

/// Eigenvalues below this make the covariance unusable.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("line {line}: index ({i}, {j}) outside 1..={n}")]
    IndexOutOfRange { line: usize, i: usize, j: usize, n: usize },
    #[error("line {line}: duplicate entry ({i}, {j})")]
    DuplicateEntry { line: usize, i: usize, j: usize },
    #[error("expected {expected} asset lines, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("correlation ({i}, {j}) missing")]
    MissingEntry { i: usize, j: usize },
    #[error("covariance not PSD (smallest eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("frontier file has no points")]
    EmptyCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetUniverse {
    pub n: usize,
    pub mean_returns: Vec<f64>,
    pub std_devs: Vec<f64>,
    pub correlation: DMatrix<f64>,
}

/// A parse result with its non-fatal warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

fn numbers(line: &str, lineno: usize, want: usize) -> Result<Vec<f64>, DataError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != want {
        return Err(DataError::MalformedLine {
            line: lineno,
            msg: format!("expected {want} fields, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::MalformedLine {
                    line: lineno,
                    msg: format!("'{f}' is not a finite number"),
                })
        })
        .collect()
}

fn index(v: f64, line: usize) -> Result<usize, DataError> {
    if v.fract() != 0.0 || v < 0.0 {
        return Err(DataError::MalformedLine {
            line,
            msg: format!("'{v}' is not an index"),
        });
    }
    Ok(v as usize)
}

/// Reads the benchmark format: `n`, then `n` lines of `mean std`, then
/// `i j corr` lines with 1-based indices over one triangle.
pub fn parse_port(text: &str) -> Result<Parsed<AssetUniverse>, DataError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (first, head) = lines.next().ok_or(DataError::MalformedLine {
        line: 1,
        msg: "empty input".into(),
    })?;
    let n = index(numbers(head, first, 1)?[0], first)?;

    let mut mean_returns = Vec::with_capacity(n);
    let mut std_devs = Vec::with_capacity(n);
    for _ in 0..n {
        let Some((lineno, line)) = lines.next() else {
            return Err(DataError::CountMismatch {
                expected: n,
                found: mean_returns.len(),
            });
        };
        let v = numbers(line, lineno, 2).map_err(|e| match e {
            DataError::MalformedLine { .. } if line.split_whitespace().count() == 3 => {
                DataError::CountMismatch {
                    expected: n,
                    found: mean_returns.len(),
                }
            }
            other => other,
        })?;
        if v[1] <= 0.0 {
            return Err(DataError::MalformedLine {
                line: lineno,
                msg: format!("standard deviation {} is not positive", v[1]),
            });
        }
        mean_returns.push(v[0]);
        std_devs.push(v[1]);
    }

    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    let mut correlation = DMatrix::zeros(n, n);
    for (lineno, line) in lines {
        let v = numbers(line, lineno, 3)?;
        let (i, j) = (index(v[0], lineno)?, index(v[1], lineno)?);
        if i == 0 || j == 0 || i > n || j > n {
            return Err(DataError::IndexOutOfRange { line: lineno, i, j, n });
        }
        if !(-1.0..=1.0).contains(&v[2]) {
            return Err(DataError::MalformedLine {
                line: lineno,
                msg: format!("correlation {} outside [-1, 1]", v[2]),
            });
        }
        let key = (i.min(j) - 1, i.max(j) - 1);
        if seen.insert(key, lineno).is_some() {
            return Err(DataError::DuplicateEntry { line: lineno, i, j });
        }
        correlation[(key.0, key.1)] = v[2];
        correlation[(key.1, key.0)] = v[2];
    }

    let mut warnings = Vec::new();
    for i in 0..n {
        if !seen.contains_key(&(i, i)) {
            correlation[(i, i)] = 1.0;
            warnings.push(format!("diagonal correlation ({0}, {0}) missing, set to 1", i + 1));
        }
        for j in i + 1..n {
            if !seen.contains_key(&(i, j)) {
                return Err(DataError::MissingEntry { i: i + 1, j: j + 1 });
            }
        }
    }
    Ok(Parsed {
        value: AssetUniverse {
            n,
            mean_returns,
            std_devs,
            correlation,
        },
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub q: DMatrix<f64>,
    pub min_eigenvalue: f64,
    /// Diagonal shift added to reach positive definiteness.
    pub shift: Option<f64>,
}

/// `Q_ij = corr_ij sd_i sd_j`, symmetrized. A smallest eigenvalue in
/// `(-PSD_TOL, PD_EIGEN_FLOOR]` is lifted to `2 · PD_EIGEN_FLOOR` by a
/// diagonal shift.
pub fn covariance(u: &AssetUniverse) -> Result<Covariance, DataError> {
    let n = u.n;
    let q = DMatrix::from_fn(n, n, |i, j| u.correlation[(i, j)] * u.std_devs[i] * u.std_devs[j]);
    let mut q = (&q + q.transpose()) * 0.5;
    let min_eigenvalue = if n == 0 {
        f64::INFINITY
    } else {
        SymmetricEigen::new(q.clone()).eigenvalues.min()
    };
    if min_eigenvalue <= -PSD_TOL {
        return Err(DataError::NotPsd(min_eigenvalue));
    }
    let shift = (min_eigenvalue <= PD_EIGEN_FLOOR).then_some(2.0 * PD_EIGEN_FLOOR - min_eigenvalue);
    if let Some(s) = shift {
        for i in 0..n {
            q[(i, i)] += s;
        }
    }
    Ok(Covariance {
        q,
        min_eigenvalue,
        shift,
    })
}

/// Reads `return variance` pairs (or `variance return` with
/// `swap_columns`), one per line.
pub fn parse_uef(text: &str, swap_columns: bool) -> Result<Parsed<UefCurve>, DataError> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v = numbers(line, i + 1, 2)?;
        points.push(if swap_columns { (v[1], v[0]) } else { (v[0], v[1]) });
    }
    if points.is_empty() {
        return Err(DataError::EmptyCurve);
    }
    let mut returns: Vec<f64> = points.iter().map(|p| p.0).collect();
    returns.sort_by(f64::total_cmp);
    let dups = returns.windows(2).filter(|w| w[0] == w[1]).count();
    let curve = UefCurve::new(points).map_err(|_| DataError::EmptyCurve)?;
    let mut warnings = Vec::new();
    if dups > 0 {
        warnings.push(format!("{dups} duplicate returns collapsed to the lower variance"));
    }
    let drops = curve.monotonicity_violations();
    if !drops.is_empty() {
        warnings.push(format!("variance decreases after {} frontier points", drops.len()));
    }
    Ok(Parsed {
        value: curve,
        warnings,
    })
}

/// One solved instance (solve and oracle commands).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub method: Method,
    pub target_return: f64,
    pub status: String,
    pub objective: Option<f64>,
    pub selection: String,
    pub weights: Vec<f64>,
    pub proved_optimal: Option<bool>,
    pub nodes_explored: Option<usize>,
    pub budget_hit: Option<bool>,
    /// Relaxation values by name.
    pub bounds: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    pub dataset: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub covariance_min_eigenvalue: Option<f64>,
    pub covariance_shift: Option<f64>,
    pub shift_policy: String,
    pub returns_convention: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub metadata: Metadata,
    pub frontier: Vec<FrontierPoint>,
    pub percentage_errors: Vec<PeRecord>,
    pub references: Vec<ReferenceRecord>,
    pub gaps: Vec<GapRecord>,
    pub aggregates: BTreeMap<Method, MethodAggregates>,
    pub solutions: Vec<SolutionRecord>,
}

impl ReportDocument {
    pub fn new(metadata: Metadata) -> Self {
        Self {
            metadata,
            frontier: Vec::new(),
            percentage_errors: Vec::new(),
            references: Vec::new(),
            gaps: Vec::new(),
            aggregates: BTreeMap::new(),
            solutions: Vec::new(),
        }
    }
}

/// 17 significant digits in scientific notation.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Pretty JSON with every float written by [`format_f64`].
struct FixedDigits(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for FixedDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(format_f64(v).as_bytes())
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(v))
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes any value as pretty JSON with fixed-digit floats and a
/// trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = FixedDigits(serde_json::ser::PrettyFormatter::with_indent(b"  "));
    let mut ser = serde_json::Serializer::with_formatter(&mut out, fmt);
    value.serialize(&mut ser).expect("report serialization");
    out.push(b'\n');
    out
}

pub fn write_json(doc: &ReportDocument) -> Vec<u8> {
    to_json_bytes(doc)
}

pub fn read_json(bytes: &[u8]) -> serde_json::Result<ReportDocument> {
    serde_json::from_slice(bytes)
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

fn table(header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// One CSV table per report section, as `(file name, bytes)`.
pub fn write_csv(doc: &ReportDocument) -> Vec<(String, Vec<u8>)> {
    let m = &doc.metadata;
    let metadata = table(
        &["key", "value"],
        vec![
            vec!["command".into(), m.command.clone()],
            vec!["dataset".into(), m.dataset.clone()],
            vec!["seed".into(), m.seed.to_string()],
            vec!["config".into(), m.config.to_string()],
            vec!["covariance_min_eigenvalue".into(), opt(m.covariance_min_eigenvalue)],
            vec!["covariance_shift".into(), opt(m.covariance_shift)],
            vec!["shift_policy".into(), m.shift_policy.clone()],
            vec!["returns_convention".into(), m.returns_convention.clone()],
            vec!["warnings".into(), m.warnings.join("; ")],
        ],
    );
    let frontier = table(
        &["target_return", "method", "status", "risk", "selection"],
        doc.frontier
            .iter()
            .map(|p| {
                vec![
                    format_f64(p.target_return),
                    p.method.to_string(),
                    format!("{:?}", p.status).to_lowercase(),
                    opt(p.risk),
                    p.selection.clone(),
                ]
            })
            .collect(),
    );
    let pe = table(
        &["target_return", "method", "vertical", "horizontal", "percentage_error"],
        doc.percentage_errors
            .iter()
            .map(|r| {
                vec![
                    format_f64(r.target_return),
                    r.method.to_string(),
                    format_f64(r.vertical),
                    opt(r.horizontal),
                    format_f64(r.percentage_error),
                ]
            })
            .collect(),
    );
    let references = table(
        &["target_return", "objective", "selection", "proved_optimal", "nodes_explored", "budget_hit"],
        doc.references
            .iter()
            .map(|r| {
                vec![
                    format_f64(r.target_return),
                    opt(r.objective),
                    r.selection.clone(),
                    r.proved_optimal.to_string(),
                    r.nodes_explored.to_string(),
                    r.budget_hit.to_string(),
                ]
            })
            .collect(),
    );
    let gaps = table(
        &["target_return", "method", "binary_gap", "objective_gap", "reference_proved"],
        doc.gaps
            .iter()
            .map(|g| {
                vec![
                    format_f64(g.target_return),
                    g.method.to_string(),
                    format_f64(g.binary_gap),
                    opt(g.objective_gap),
                    g.reference_proved.to_string(),
                ]
            })
            .collect(),
    );
    let mut agg_rows = Vec::new();
    for (method, a) in &doc.aggregates {
        for (metric, s) in [
            ("percentage_error", &a.percentage_error),
            ("binary_gap", &a.binary_gap),
            ("objective_gap", &a.objective_gap),
            ("binary_gap_proved", &a.binary_gap_proved),
            ("objective_gap_proved", &a.objective_gap_proved),
        ] {
            agg_rows.push(vec![
                method.to_string(),
                metric.to_string(),
                s.count.to_string(),
                opt(s.mean),
                opt(s.median),
                opt(s.max),
                opt(s.min),
            ]);
        }
    }
    let aggregates = table(&["method", "metric", "count", "mean", "median", "max", "min"], agg_rows);
    let solutions = table(
        &[
            "method",
            "target_return",
            "status",
            "objective",
            "selection",
            "proved_optimal",
            "nodes_explored",
            "budget_hit",
            "weights",
        ],
        doc.solutions
            .iter()
            .map(|s| {
                vec![
                    s.method.to_string(),
                    format_f64(s.target_return),
                    s.status.clone(),
                    opt(s.objective),
                    s.selection.clone(),
                    s.proved_optimal.map(|b| b.to_string()).unwrap_or_default(),
                    s.nodes_explored.map(|b| b.to_string()).unwrap_or_default(),
                    s.budget_hit.map(|b| b.to_string()).unwrap_or_default(),
                    s.weights.iter().map(|w| format_f64(*w)).collect::<Vec<_>>().join(" "),
                ]
            })
            .collect(),
    );
    vec![
        ("metadata.csv".into(), metadata),
        ("frontier.csv".into(), frontier),
        ("percentage_errors.csv".into(), pe),
        ("references.csv".into(), references),
        ("gaps.csv".into(), gaps),
        ("aggregates.csv".into(), aggregates),
        ("solutions.csv".into(), solutions),
    ]
}
