//! Dense matrices, reverse-mode differentiation and the finite-difference
//! gradient checker.

pub mod gradcheck;
pub mod matrix;
pub mod rng;
pub mod tape;

pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport, Stencil};
pub use matrix::{cosine, log_softmax, softmax, Matrix};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};

/// Rounds to 9 significant decimal digits, the precision of every text file
/// this crate writes. Values pass through here before they are persisted so
/// that in-memory state and re-loaded state are bit-identical.
pub fn snap9(x: f64) -> f64 {
    format_sig9(x).parse().expect("formatted float parses")
}

/// 9 significant digits in scientific notation.
pub fn format_sig9(x: f64) -> String {
    format!("{x:.8e}")
}
