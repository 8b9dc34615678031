//! Relaxation-seeded heuristics for binary-cardinality-constrained MIQPs.

pub mod analysis;
pub mod cli;
pub mod dataio;
pub mod exact;
pub mod heuristic;
pub mod model;
pub mod qpsolve;
pub mod relax;
pub mod seeding;
