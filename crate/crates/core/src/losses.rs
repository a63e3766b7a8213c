//! Additive angular margin (AAM) softmax and the speaker contrastive loss.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AamConfig {
    pub scale: f64,
    /// Additive angular margin in radians.
    pub margin: f64,
}

impl Default for AamConfig {
    fn default() -> Self {
        Self {
            scale: 32.0,
            margin: 0.2,
        }
    }
}

impl AamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("aam scale must be positive, got {}", self.scale)));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin) {
            return Err(Error::Config(format!("aam margin must be in [0, pi/2), got {}", self.margin)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub negatives: usize,
    /// Weight of the contrastive term in the combined objective.
    pub alpha: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            negatives: 5,
            alpha: 1.0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "contrastive temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.negatives == 0 {
            return Err(Error::Config("contrastive negatives must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("contrastive alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// AAM softmax loss for one `1 × D` embedding against the `C × D` class
/// weights: the true-class cosine `cos θ_y` becomes `cos(θ_y + m)`, all
/// logits are scaled by `s`, and the result is the negative log-probability
/// of `label`.
pub fn aam_loss_on(tape: &mut Tape, embedding: Var, class_weights: Var, label: usize, cfg: &AamConfig) -> Result<Var> {
    let classes = tape.value(class_weights).rows();
    if label >= classes {
        return Err(Error::Index { index: label, len: classes });
    }
    let e = tape.normalize_rows(embedding)?;
    let w = tape.normalize_rows(class_weights)?;
    let et = tape.transpose(e);
    let cos = tape.matmul(w, et)?;
    let cos = tape.clamp(cos, -1.0, 1.0);
    let true_cos = tape.pick(cos, label)?;
    let with_margin = tape.angular_margin(true_cos, cfg.margin);
    let logits = tape.replace_entry(cos, label, with_margin)?;
    let logits = tape.scale(logits, cfg.scale);
    let logp = tape.log_softmax(logits)?;
    let picked = tape.pick(logp, label)?;
    Ok(tape.scale(picked, -1.0))
}

pub fn aam_loss(embedding: &[f64], class_weights: &Matrix, label: usize, cfg: &AamConfig) -> Result<f64> {
    cfg.validate()?;
    let mut tape = Tape::new();
    let e = tape.constant(Matrix::row_vector(embedding.to_vec()));
    let w = tape.constant(class_weights.clone());
    let l = aam_loss_on(&mut tape, e, w, label, cfg)?;
    Ok(tape.scalar(l))
}

/// Contrastive loss of a `1 × D` converted-speech embedding against the
/// `(K+1) × D` candidate rows, positive first:
/// `−log softmax(cos(e, c_k) / τ)_0`.
pub fn contrastive_loss_on(tape: &mut Tape, embedding: Var, candidates: Var, temperature: f64) -> Result<Var> {
    let rows = tape.value(candidates).rows();
    if rows < 2 {
        return Err(Error::Arity {
            expected: 1,
            got: rows.saturating_sub(1),
        });
    }
    let e = tape.normalize_rows(embedding)?;
    let c = tape.normalize_rows(candidates)?;
    let et = tape.transpose(e);
    let cos = tape.matmul(c, et)?;
    let cos = tape.clamp(cos, -1.0, 1.0);
    let logits = tape.scale(cos, 1.0 / temperature);
    let logp = tape.log_softmax(logits)?;
    let picked = tape.pick(logp, 0)?;
    Ok(tape.scale(picked, -1.0))
}

/// Stacks `positive` over `negatives` into the candidate matrix.
pub fn candidate_matrix(positive: &[f64], negatives: &[&[f64]]) -> Result<Matrix> {
    let mut rows = Vec::with_capacity(negatives.len() + 1);
    rows.push(positive.to_vec());
    rows.extend(negatives.iter().map(|n| n.to_vec()));
    Matrix::from_rows(&rows)
}

pub fn contrastive_loss(embedding: &[f64], positive: &[f64], negatives: &[&[f64]], cfg: &ContrastiveConfig) -> Result<f64> {
    cfg.validate()?;
    if negatives.len() != cfg.negatives {
        return Err(Error::Arity {
            expected: cfg.negatives,
            got: negatives.len(),
        });
    }
    let mut tape = Tape::new();
    let e = tape.constant(Matrix::row_vector(embedding.to_vec()));
    let c = tape.constant(candidate_matrix(positive, negatives)?);
    let l = contrastive_loss_on(&mut tape, e, c, cfg.temperature)?;
    Ok(tape.scalar(l))
}

/// `L_aam + α · L_con`.
pub fn combined_loss_on(tape: &mut Tape, aam: Var, con: Var, alpha: f64) -> Result<Var> {
    let weighted = tape.scale(con, alpha);
    tape.add(aam, weighted)
}

pub fn combined_loss(aam: f64, con: f64, alpha: f64) -> f64 {
    aam + alpha * con
}
