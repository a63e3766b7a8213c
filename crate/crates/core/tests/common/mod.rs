#![allow(dead_code)]

use rand::Rng as _;
use source_trace::losses::{aam_loss_on, combined_loss_on, contrastive_loss_on, AamConfig};
use source_trace::model::{embed_on, ExtractorParams, ModelDims, ParamVars, TENSOR_NAMES};
use source_trace::numerics::{grad_check_with, GradCheckOptions, Stencil};
use source_trace::numerics::rng::{normal_matrix, seeded};
use source_trace::numerics::{Matrix, Tape, Var};
use source_trace::Result;

pub const GRAD_TOL: f64 = 1e-4;

/// Checks through the whole extractor use the five-point stencil: with
/// s = 32 and tau = 0.05 the three-point truncation error at h = 1e-4 alone
/// reaches 2e-4 relative on some instances.
pub fn extractor_check() -> GradCheckOptions {
    GradCheckOptions {
        stencil: Stencil::FivePoint,
        ..GradCheckOptions::new(GRAD_TOL)
    }
}

pub fn small_dims() -> ModelDims {
    ModelDims {
        feat_dim: 4,
        hidden_dim: 5,
        attention_dim: 3,
        embedding_dim: 4,
        num_classes: 4,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Aam,
    Contrastive,
    Combined,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Aam, Objective::Contrastive, Objective::Combined];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Aam => "aam",
            Objective::Contrastive => "contrastive",
            Objective::Combined => "combined",
        }
    }
}

/// One random extractor plus inputs for a loss evaluation.
pub struct Instance {
    pub params: ExtractorParams,
    pub features: Matrix,
    pub label: usize,
    /// Positive first, then `K` negatives.
    pub candidates: Matrix,
    pub aam: AamConfig,
    pub temperature: f64,
    pub alpha: f64,
}

impl Instance {
    pub fn random(seed: u64) -> Self {
        let dims = small_dims();
        let mut rng = seeded(seed);
        let params = ExtractorParams::init(dims, &mut rng);
        let frames = rng.random_range(3..=7);
        let features = normal_matrix(&mut rng, frames, dims.feat_dim, 1.0);
        let label = rng.random_range(0..dims.num_classes);
        let candidates = normal_matrix(&mut rng, 6, dims.embedding_dim, 1.0);
        Instance {
            params,
            features,
            label,
            candidates,
            aam: AamConfig {
                scale: rng.random_range(4.0..32.0),
                margin: rng.random_range(0.0..0.3),
            },
            temperature: rng.random_range(0.05..0.5),
            alpha: rng.random_range(0.1..2.0),
        }
    }

    fn loss(&self, tape: &mut Tape, p: &ParamVars, x: Var, objective: Objective) -> Result<Var> {
        let e = embed_on(tape, x, p, &self.params.dims)?;
        match objective {
            Objective::Aam => aam_loss_on(tape, e, p.speaker_head, self.label, &self.aam),
            Objective::Contrastive => {
                let c = tape.constant(self.candidates.clone());
                contrastive_loss_on(tape, e, c, self.temperature)
            }
            Objective::Combined => {
                let a = aam_loss_on(tape, e, p.speaker_head, self.label, &self.aam)?;
                let c = tape.constant(self.candidates.clone());
                let con = contrastive_loss_on(tape, e, c, self.temperature)?;
                combined_loss_on(tape, a, con, self.alpha)
            }
        }
    }

    /// Largest relative error over every extractor tensor and the input
    /// features, with the name of the worst tensor.
    pub fn max_grad_error(&self, objective: Objective) -> Result<(f64, &'static str)> {
        let tensors = self.params.tensors();
        let mut worst = (0.0, "");
        for (i, name) in TENSOR_NAMES.iter().enumerate() {
            if objective == Objective::Contrastive && *name == "speaker_head" {
                continue;
            }
            let report = grad_check_with(
                |tape, leaf| {
                    let p = with_var(self.params.attach(tape, false), i, leaf);
                    let x = tape.constant(self.features.clone());
                    self.loss(tape, &p, x, objective)
                },
                tensors[i],
                &extractor_check(),
            )?;
            if report.max_rel_error >= worst.0 {
                worst = (report.max_rel_error, name);
            }
        }
        let report = grad_check_with(
            |tape, leaf| {
                let p = self.params.attach(tape, false);
                self.loss(tape, &p, leaf, objective)
            },
            &self.features,
            &extractor_check(),
        )?;
        if report.max_rel_error >= worst.0 {
            worst = (report.max_rel_error, "features");
        }
        Ok(worst)
    }
}

/// Replaces the `i`-th tensor handle (in [`TENSOR_NAMES`] order) with `v`.
pub fn with_var(mut p: ParamVars, i: usize, v: Var) -> ParamVars {
    match i {
        0 => p.enc_w1 = v,
        1 => p.enc_b1 = v,
        2 => p.enc_w2 = v,
        3 => p.enc_b2 = v,
        4 => p.att_w = v,
        5 => p.att_b = v,
        6 => p.att_v = v,
        7 => p.emb_w = v,
        8 => p.emb_b = v,
        9 => p.speaker_head = v,
        _ => panic!("no tensor {i}"),
    }
    p
}

/// Exhaustive EER: FAR and FRR at a threshold below every score, at every
/// midpoint between consecutive distinct scores and above every score, then
/// linear interpolation where FAR − FRR changes sign.
pub fn eer_oracle(target: &[f64], nontarget: &[f64]) -> f64 {
    let mut distinct: Vec<f64> = target.iter().chain(nontarget).copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut thresholds = vec![distinct[0] - 1.0];
    thresholds.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thresholds.push(distinct[distinct.len() - 1] + 1.0);
    let curve: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let far = nontarget.iter().filter(|&&s| s >= t).count() as f64 / nontarget.len() as f64;
            let frr = target.iter().filter(|&&s| s < t).count() as f64 / target.len() as f64;
            (far, frr)
        })
        .collect();
    let k = curve.iter().position(|(far, frr)| far - frr <= 0.0).expect("curve ends at FAR 0, FRR 1");
    let (far1, frr1) = curve[k];
    if far1 == frr1 {
        return far1;
    }
    let (far0, frr0) = curve[k - 1];
    let (d0, d1) = (far0 - frr0, far1 - frr1);
    let w = d0 / (d0 - d1);
    far0 + w * (far1 - far0)
}
