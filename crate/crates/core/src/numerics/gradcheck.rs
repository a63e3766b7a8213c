use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Central-difference step.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Denominator floor for the relative error `|a − n| / max(|a|, |n|, floor)`.
/// Keeps coordinates whose true gradient is zero from producing 0/0.
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    /// Flat index of the coordinate with the largest relative error.
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Finite-difference formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error `O(h²)`.
    ThreePoint,
    /// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`, error `O(h⁴)`.
    FivePoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    pub step: f64,
    pub floor: f64,
    pub stencil: Stencil,
}

impl GradCheckOptions {
    pub fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            step: DEFAULT_STEP,
            floor: DEFAULT_FLOOR,
            stencil: Stencil::ThreePoint,
        }
    }
}

/// Compares the tape gradient of `f` at `params` with central differences.
///
/// `f` receives a fresh tape and the leaf holding the (possibly perturbed)
/// parameters, and must return a `1 × 1` node.
pub fn grad_check<F>(f: F, params: &Matrix, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_with(f, params, &GradCheckOptions::new(tolerance))
}

pub fn grad_check_with<F>(f: F, params: &Matrix, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let GradCheckOptions {
        tolerance,
        step,
        floor,
        stencil,
    } = *opts;
    if tolerance <= 0.0 || step <= 0.0 {
        return Err(Error::Config(format!(
            "grad_check needs positive tolerance and step, got {tolerance} and {step}"
        )));
    }
    let eval = |p: &Matrix| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(p.clone());
        let out = f(&mut tape, leaf)?;
        let y = tape.scalar(out);
        if !y.is_finite() {
            return Err(Error::Evaluation(format!("objective evaluated to {y}")));
        }
        Ok(y)
    };
    eval(params)?;

    let mut tape = Tape::new();
    let leaf = tape.leaf(params.clone());
    let out = f(&mut tape, leaf)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(leaf)
        .cloned()
        .unwrap_or_else(|| Matrix::zeros(params.rows(), params.cols()))
        .into_data();

    let mut numeric = Vec::with_capacity(params.len());
    let mut probe = params.clone();
    for i in 0..params.len() {
        let x = params.data()[i];
        let mut at = |dx: f64| -> Result<f64> {
            probe.data_mut()[i] = x + dx;
            let y = eval(&probe);
            probe.data_mut()[i] = x;
            y
        };
        let d = match stencil {
            Stencil::ThreePoint => (at(step)? - at(-step)?) / (2.0 * step),
            Stencil::FivePoint => {
                (8.0 * (at(step)? - at(-step)?) - (at(2.0 * step)? - at(-2.0 * step)?)) / (12.0 * step)
            }
        };
        numeric.push(d);
    }

    let (mut max_rel_error, mut worst_index) = (0.0_f64, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = relative_error(*a, *n, floor);
        if err > max_rel_error {
            max_rel_error = err;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_error,
        worst_index,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
