mod common;

use common::{small_dims, with_var, Instance, Objective, GRAD_TOL};
use rand::Rng as _;
use source_trace::model::{attentive_stats_pool_on, encode_frames_on, ExtractorParams};
use source_trace::numerics::gradcheck::grad_check;
use source_trace::numerics::rng::{normal_matrix, seeded};
use source_trace::numerics::{Matrix, Tape, Var};
use source_trace::Result;

const SEEDS: u64 = 100;

/// Reduces any node to a scalar through a fixed random projection so every
/// output coordinate gets a distinct upstream gradient.
fn project(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.value(v).shape();
    let w = tape.constant(normal_matrix(&mut seeded(seed ^ 0x5eed), r, c, 1.0));
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

fn check_unary(name: &str, shape: (usize, usize), op: impl Fn(&mut Tape, Var) -> Result<Var>) {
    for seed in 0..SEEDS {
        let x = normal_matrix(&mut seeded(seed), shape.0, shape.1, 1.0);
        let report = grad_check(
            |tape, leaf| {
                let y = op(tape, leaf)?;
                project(tape, y, seed)
            },
            &x,
            GRAD_TOL,
        )
        .unwrap();
        assert!(report.passed, "{name} seed {seed}: rel error {}", report.max_rel_error);
    }
}

/// Checks the gradient with respect to each operand of a binary op.
fn check_binary(name: &str, a: (usize, usize), b: (usize, usize), op: impl Fn(&mut Tape, Var, Var) -> Result<Var>) {
    for seed in 0..SEEDS {
        let mut rng = seeded(seed);
        let xa = normal_matrix(&mut rng, a.0, a.1, 1.0);
        let xb = normal_matrix(&mut rng, b.0, b.1, 1.0);
        let left = grad_check(
            |tape, leaf| {
                let other = tape.constant(xb.clone());
                let y = op(tape, leaf, other)?;
                project(tape, y, seed)
            },
            &xa,
            GRAD_TOL,
        )
        .unwrap();
        let right = grad_check(
            |tape, leaf| {
                let other = tape.constant(xa.clone());
                let y = op(tape, other, leaf)?;
                project(tape, y, seed)
            },
            &xb,
            GRAD_TOL,
        )
        .unwrap();
        assert!(left.passed, "{name} left seed {seed}: {}", left.max_rel_error);
        assert!(right.passed, "{name} right seed {seed}: {}", right.max_rel_error);
    }
}

#[test]
fn matmul() {
    check_binary("matmul", (3, 4), (4, 2), |t, a, b| t.matmul(a, b));
}

#[test]
fn elementwise() {
    check_binary("add", (3, 4), (3, 4), |t, a, b| t.add(a, b));
    check_binary("sub", (3, 4), (3, 4), |t, a, b| t.sub(a, b));
    check_binary("mul", (3, 4), (3, 4), |t, a, b| t.mul(a, b));
    check_binary("add_row", (3, 4), (1, 4), |t, a, b| t.add_row(a, b));
    check_binary("concat_cols", (3, 2), (3, 4), |t, a, b| t.concat_cols(a, b));
}

#[test]
fn pointwise() {
    check_unary("scale", (3, 4), |t, a| Ok(t.scale(a, -2.5)));
    check_unary("tanh", (3, 4), |t, a| Ok(t.tanh(a)));
    check_unary("transpose", (3, 4), |t, a| Ok(t.transpose(a)));
    check_unary("sum", (3, 4), |t, a| Ok(t.sum(a)));
    check_unary("sqrt_floor", (3, 4), |t, a| {
        let sq = t.mul(a, a)?;
        let shift = t.constant(Matrix::filled(3, 4, 0.25));
        let pos = t.add(sq, shift)?;
        Ok(t.sqrt_floor(pos, 1e-9))
    });
}

#[test]
fn softmax_family() {
    check_unary("softmax", (5, 1), |t, a| t.softmax(a));
    check_unary("log_softmax", (1, 6), |t, a| t.log_softmax(a));
    check_unary("normalize_rows", (3, 4), |t, a| t.normalize_rows(a));
}

#[test]
fn indexing() {
    check_unary("pick", (1, 6), |t, a| t.pick(a, 4));
    check_binary("replace_entry", (1, 6), (1, 1), |t, a, v| t.replace_entry(a, 2, v));
}

#[test]
fn angular_margin_inside_the_valid_range() {
    for seed in 0..SEEDS {
        let mut rng = seeded(seed);
        let x = Matrix::scalar(rng.random_range(-0.9..0.9));
        let m = rng.random_range(0.0..0.5);
        let report = grad_check(|tape, leaf| Ok(tape.angular_margin(leaf, m)), &x, GRAD_TOL).unwrap();
        assert!(report.passed, "seed {seed}: {}", report.max_rel_error);
    }
}

#[test]
fn encoder_and_pooling_blocks() {
    let dims = small_dims();
    for seed in 0..SEEDS {
        let mut rng = seeded(seed);
        let params = ExtractorParams::init(dims, &mut rng);
        let x = normal_matrix(&mut rng, 5, dims.feat_dim, 1.0);
        let h = normal_matrix(&mut rng, 5, dims.hidden_dim, 0.5);
        let enc = grad_check(
            |tape, leaf| {
                let p = params.attach(tape, false);
                let y = encode_frames_on(tape, leaf, &p)?;
                project(tape, y, seed)
            },
            &x,
            GRAD_TOL,
        )
        .unwrap();
        assert!(enc.passed, "encoder seed {seed}: {}", enc.max_rel_error);
        let pool = grad_check(
            |tape, leaf| {
                let p = params.attach(tape, false);
                let y = attentive_stats_pool_on(tape, leaf, &p)?;
                project(tape, y, seed)
            },
            &h,
            GRAD_TOL,
        )
        .unwrap();
        assert!(pool.passed, "pooling seed {seed}: {}", pool.max_rel_error);
        // Attention parameters only reach the output through the frame weights.
        let tensors = params.tensors();
        for (i, tensor) in tensors.iter().enumerate().take(7).skip(4) {
            let r = grad_check(
                |tape, leaf| {
                    let p = with_var(params.attach(tape, false), i, leaf);
                    let hv = tape.constant(h.clone());
                    let y = attentive_stats_pool_on(tape, hv, &p)?;
                    project(tape, y, seed)
                },
                tensor,
                GRAD_TOL,
            )
            .unwrap();
            assert!(r.passed, "pooling tensor {i} seed {seed}: {}", r.max_rel_error);
        }
    }
}

#[test]
fn losses_through_the_extractor() {
    for seed in 0..20 {
        let inst = Instance::random(seed);
        for objective in Objective::ALL {
            let (err, tensor) = inst.max_grad_error(objective).unwrap();
            assert!(err < GRAD_TOL, "{} seed {seed}: {tensor} rel error {err}", objective.name());
        }
    }
}
