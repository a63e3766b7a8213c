//! Embedding extractor: per-frame encoder, attentive statistics pooling,
//! embedding projection and a speaker classification head.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::rng::{uniform_matrix, Rng};
use crate::numerics::{format_sig9, snap9, Matrix, Tape, Var};
use crate::par::Exec;
use crate::synthcorpus::Corpus;

/// Variance floor inside the standard-deviation branch of the pooling.
pub const POOL_VAR_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub feat_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub embedding_dim: usize,
    pub num_classes: usize,
}

impl ModelDims {
    pub fn new(feat_dim: usize, num_classes: usize) -> Self {
        Self {
            feat_dim,
            hidden_dim: 64,
            attention_dim: 32,
            embedding_dim: 32,
            num_classes,
        }
    }
}

/// Learned weights. Weight matrices are stored `in × out`; the speaker head
/// holds one `D`-dimensional row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorParams {
    pub dims: ModelDims,
    pub enc_w1: Matrix,
    pub enc_b1: Matrix,
    pub enc_w2: Matrix,
    pub enc_b2: Matrix,
    pub att_w: Matrix,
    pub att_b: Matrix,
    pub att_v: Matrix,
    pub emb_w: Matrix,
    pub emb_b: Matrix,
    pub speaker_head: Matrix,
    /// Reserved slot for a conversion-method head; never trained or used.
    pub method_head: Option<Matrix>,
}

pub const TENSOR_NAMES: [&str; 10] = [
    "enc_w1",
    "enc_b1",
    "enc_w2",
    "enc_b2",
    "att_w",
    "att_b",
    "att_v",
    "emb_w",
    "emb_b",
    "speaker_head",
];

impl ExtractorParams {
    /// Uniform `±1/√fan_in` initialisation.
    pub fn init(dims: ModelDims, rng: &mut Rng) -> Self {
        let (f, h, a, d, c) = (
            dims.feat_dim,
            dims.hidden_dim,
            dims.attention_dim,
            dims.embedding_dim,
            dims.num_classes,
        );
        let b = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        Self {
            dims,
            enc_w1: uniform_matrix(rng, f, h, b(f)),
            enc_b1: uniform_matrix(rng, 1, h, b(f)),
            enc_w2: uniform_matrix(rng, h, h, b(h)),
            enc_b2: uniform_matrix(rng, 1, h, b(h)),
            att_w: uniform_matrix(rng, h, a, b(h)),
            att_b: uniform_matrix(rng, 1, a, b(h)),
            att_v: uniform_matrix(rng, a, 1, b(a)),
            emb_w: uniform_matrix(rng, 2 * h, d, b(2 * h)),
            emb_b: uniform_matrix(rng, 1, d, b(2 * h)),
            speaker_head: uniform_matrix(rng, c, d, b(d)),
            method_head: None,
        }
    }

    pub fn zeros(dims: ModelDims) -> Self {
        let (f, h, a, d, c) = (
            dims.feat_dim,
            dims.hidden_dim,
            dims.attention_dim,
            dims.embedding_dim,
            dims.num_classes,
        );
        Self {
            dims,
            enc_w1: Matrix::zeros(f, h),
            enc_b1: Matrix::zeros(1, h),
            enc_w2: Matrix::zeros(h, h),
            enc_b2: Matrix::zeros(1, h),
            att_w: Matrix::zeros(h, a),
            att_b: Matrix::zeros(1, a),
            att_v: Matrix::zeros(a, 1),
            emb_w: Matrix::zeros(2 * h, d),
            emb_b: Matrix::zeros(1, d),
            speaker_head: Matrix::zeros(c, d),
            method_head: None,
        }
    }

    pub fn tensors(&self) -> [&Matrix; 10] {
        [
            &self.enc_w1,
            &self.enc_b1,
            &self.enc_w2,
            &self.enc_b2,
            &self.att_w,
            &self.att_b,
            &self.att_v,
            &self.emb_w,
            &self.emb_b,
            &self.speaker_head,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 10] {
        [
            &mut self.enc_w1,
            &mut self.enc_b1,
            &mut self.enc_w2,
            &mut self.enc_b2,
            &mut self.att_w,
            &mut self.att_b,
            &mut self.att_v,
            &mut self.emb_w,
            &mut self.emb_b,
            &mut self.speaker_head,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    /// Checks every tensor against `dims`.
    pub fn validate(&self) -> Result<()> {
        let zero = Self::zeros(self.dims);
        for ((name, have), want) in TENSOR_NAMES.iter().zip(self.tensors()).zip(zero.tensors()) {
            if have.shape() != want.shape() {
                return Err(Error::Data(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
            if !have.is_finite() {
                return Err(Error::Data(format!("tensor {name} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// `self += c · other`, tensor by tensor.
    pub fn axpy(&mut self, c: f64, other: &ExtractorParams) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(c, b)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for t in self.tensors_mut() {
            for x in t.data_mut() {
                *x *= c;
            }
        }
    }

    pub fn snapped(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            for x in t.data_mut() {
                *x = snap9(*x);
            }
        }
        out
    }

    /// Puts every tensor on `tape`, as leaves when `trainable`, else as constants.
    pub fn attach(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let mut put = |m: &Matrix| {
            if trainable {
                tape.leaf(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        ParamVars {
            enc_w1: put(&self.enc_w1),
            enc_b1: put(&self.enc_b1),
            enc_w2: put(&self.enc_w2),
            enc_b2: put(&self.enc_b2),
            att_w: put(&self.att_w),
            att_b: put(&self.att_b),
            att_v: put(&self.att_v),
            emb_w: put(&self.emb_w),
            emb_b: put(&self.emb_b),
            speaker_head: put(&self.speaker_head),
        }
    }
}

/// Tape handles for an attached [`ExtractorParams`].
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub enc_w1: Var,
    pub enc_b1: Var,
    pub enc_w2: Var,
    pub enc_b2: Var,
    pub att_w: Var,
    pub att_b: Var,
    pub att_v: Var,
    pub emb_w: Var,
    pub emb_b: Var,
    pub speaker_head: Var,
}

impl ParamVars {
    pub fn vars(&self) -> [Var; 10] {
        [
            self.enc_w1,
            self.enc_b1,
            self.enc_w2,
            self.enc_b2,
            self.att_w,
            self.att_b,
            self.att_v,
            self.emb_w,
            self.emb_b,
            self.speaker_head,
        ]
    }

    /// Gradients for every tensor; tensors the loss does not reach get zeros.
    pub fn collect_grads(&self, grads: &mut crate::numerics::Gradients, like: &ExtractorParams) -> ExtractorParams {
        let mut out = ExtractorParams::zeros(like.dims);
        for (slot, var) in out.tensors_mut().into_iter().zip(self.vars()) {
            if let Some(g) = grads.take(var) {
                *slot = g;
            }
        }
        out
    }
}

fn check_features(tape: &Tape, x: Var, dims: &ModelDims) -> Result<()> {
    let shape = tape.value(x).shape();
    if shape.1 != dims.feat_dim {
        return Err(Error::Shape {
            op: "encode_frames",
            left: shape,
            right: (shape.0, dims.feat_dim),
        });
    }
    Ok(())
}

/// Per-frame `affine → tanh → affine → tanh`, `T × F → T × H`.
pub fn encode_frames_on(tape: &mut Tape, x: Var, p: &ParamVars) -> Result<Var> {
    let a1 = tape.matmul(x, p.enc_w1)?;
    let a1 = tape.add_row(a1, p.enc_b1)?;
    let h1 = tape.tanh(a1);
    let a2 = tape.matmul(h1, p.enc_w2)?;
    let a2 = tape.add_row(a2, p.enc_b2)?;
    Ok(tape.tanh(a2))
}

/// Attentive statistics pooling, `T × H → 1 × 2H`.
///
/// Frame weights are `softmax_t(v · tanh(W·h_t + b))`; the output is the
/// weighted mean followed by the weighted standard deviation, whose variance
/// is floored at [`POOL_VAR_FLOOR`].
pub fn attentive_stats_pool_on(tape: &mut Tape, h: Var, p: &ParamVars) -> Result<Var> {
    if tape.value(h).rows() == 0 {
        return Err(Error::EmptyInput("attentive pooling over zero frames"));
    }
    let s = tape.matmul(h, p.att_w)?;
    let s = tape.add_row(s, p.att_b)?;
    let s = tape.tanh(s);
    let scores = tape.matmul(s, p.att_v)?;
    let alpha = tape.softmax(scores)?;
    let alpha_t = tape.transpose(alpha);
    let mu = tape.matmul(alpha_t, h)?;
    let sq = tape.mul(h, h)?;
    let second = tape.matmul(alpha_t, sq)?;
    let mu_sq = tape.mul(mu, mu)?;
    let var = tape.sub(second, mu_sq)?;
    let sigma = tape.sqrt_floor(var, POOL_VAR_FLOOR);
    tape.concat_cols(mu, sigma)
}

/// Full extractor on a tape; returns the `1 × D` embedding node.
pub fn embed_on(tape: &mut Tape, x: Var, p: &ParamVars, dims: &ModelDims) -> Result<Var> {
    check_features(tape, x, dims)?;
    let h = encode_frames_on(tape, x, p)?;
    let pooled = attentive_stats_pool_on(tape, h, p)?;
    let e = tape.matmul(pooled, p.emb_w)?;
    tape.add_row(e, p.emb_b)
}

pub fn encode_frames(features: &Matrix, params: &ExtractorParams) -> Result<Matrix> {
    let mut tape = Tape::new();
    let p = params.attach(&mut tape, false);
    let x = tape.constant(features.clone());
    check_features(&tape, x, &params.dims)?;
    let h = encode_frames_on(&mut tape, x, &p)?;
    Ok(tape.value(h).clone())
}

pub fn attentive_stats_pool(hidden: &Matrix, params: &ExtractorParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = params.attach(&mut tape, false);
    let h = tape.constant(hidden.clone());
    let out = attentive_stats_pool_on(&mut tape, h, &p)?;
    Ok(tape.value(out).data().to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub utt_id: String,
    pub values: Vec<f64>,
}

/// Raw (not length-normalised) embedding of one utterance.
pub fn extract_embedding(utt_id: &str, features: &Matrix, params: &ExtractorParams) -> Result<Embedding> {
    let mut tape = Tape::new();
    let p = params.attach(&mut tape, false);
    let x = tape.constant(features.clone());
    let e = embed_on(&mut tape, x, &p, &params.dims)?;
    let values = tape.value(e).data().to_vec();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation(format!("non-finite embedding for `{utt_id}`")));
    }
    Ok(Embedding {
        utt_id: utt_id.to_string(),
        values,
    })
}

/// Embeddings for `ids`, keyed by utterance id.
pub fn extract_embeddings(
    exec: Exec,
    corpus: &Corpus,
    ids: &[&str],
    params: &ExtractorParams,
) -> Result<BTreeMap<String, Embedding>> {
    let embs = exec.try_map(ids, |id| extract_embedding(id, corpus.features(id)?, params))?;
    Ok(embs.into_iter().map(|e| (e.utt_id.clone(), e)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    I,
    II,
    III,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::I => 1,
            Phase::II => 2,
            Phase::III => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Phase> {
        match n {
            1 => Some(Phase::I),
            2 => Some(Phase::II),
            3 => Some(Phase::III),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::I => "I",
            Phase::II => "II",
            Phase::III => "III",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" => Ok(Phase::I),
            "II" => Ok(Phase::II),
            "III" => Ok(Phase::III),
            other => Err(Error::parse("phase", format!("unknown phase tag `{other}`"))),
        }
    }
}

/// Phase-tagged parameters. Values are held at the 9-significant-digit
/// precision of the checkpoint file, so saving and loading is lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    params: ExtractorParams,
}

pub const CHECKPOINT_HEADER: &str = "#source-trace-ckpt v1";

impl Checkpoint {
    pub fn new(phase: Phase, params: &ExtractorParams) -> Self {
        Self {
            phase,
            params: params.snapped(),
        }
    }

    pub fn params(&self) -> &ExtractorParams {
        &self.params
    }

    pub fn require(&self, phase: Phase) -> Result<()> {
        if self.phase != phase {
            return Err(Error::PhaseMismatch {
                expected: format!("phase {phase} checkpoint"),
                got: format!("phase {}", self.phase),
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let d = &self.params.dims;
        let mut s = format!(
            "{CHECKPOINT_HEADER}\ndims f={} h={} a={} d={} c={}\nphase {}\n",
            d.feat_dim, d.hidden_dim, d.attention_dim, d.embedding_dim, d.num_classes, self.phase
        );
        for (name, m) in TENSOR_NAMES.iter().zip(self.params.tensors()) {
            s.push_str(&format!("{name} {} {}", m.rows(), m.cols()));
            for &x in m.data() {
                s.push(' ');
                s.push_str(&format_sig9(x));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, name: &str) -> Result<Self> {
        let mut lines = text.lines();
        let loc = |n: usize| format!("{name}:{n}");
        if lines.next() != Some(CHECKPOINT_HEADER) {
            return Err(Error::parse(loc(1), format!("missing `{CHECKPOINT_HEADER}` header")));
        }
        let dims_line = lines.next().ok_or_else(|| Error::parse(loc(2), "missing dims line"))?;
        let mut dims = BTreeMap::new();
        for tok in dims_line.split_whitespace().skip(1) {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse(loc(2), format!("bad dims token `{tok}`")))?;
            let v: usize = v
                .parse()
                .map_err(|_| Error::parse(loc(2), format!("bad dims value `{tok}`")))?;
            dims.insert(k, v);
        }
        let get = |k: &str| {
            dims.get(k)
                .copied()
                .ok_or_else(|| Error::parse(loc(2), format!("dims line lacks `{k}`")))
        };
        let dims = ModelDims {
            feat_dim: get("f")?,
            hidden_dim: get("h")?,
            attention_dim: get("a")?,
            embedding_dim: get("d")?,
            num_classes: get("c")?,
        };
        let phase_line = lines.next().ok_or_else(|| Error::parse(loc(3), "missing phase line"))?;
        let phase: Phase = phase_line
            .strip_prefix("phase ")
            .ok_or_else(|| Error::parse(loc(3), "expected `phase <tag>`"))?
            .parse()?;
        let mut params = ExtractorParams::zeros(dims);
        let mut seen = 0;
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let at = loc(i + 4);
            let mut toks = line.split_whitespace();
            let tname = toks.next().unwrap_or_default();
            let slot = TENSOR_NAMES
                .iter()
                .position(|n| *n == tname)
                .ok_or_else(|| Error::parse(&at, format!("unknown tensor `{tname}`")))?;
            let mut dim = || -> Result<usize> {
                toks.next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::parse(&at, "bad tensor shape"))
            };
            let (r, c) = (dim()?, dim()?);
            let data = toks
                .map(|t| t.parse::<f64>().map_err(|_| Error::parse(&at, format!("bad value `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            *params.tensors_mut()[slot] = Matrix::new(r, c, data).map_err(|_| Error::parse(&at, "value count does not match shape"))?;
            seen |= 1 << slot;
        }
        if seen != (1 << TENSOR_NAMES.len()) - 1 {
            return Err(Error::parse(name, "checkpoint is missing tensors"));
        }
        params.validate()?;
        Ok(Self { phase, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// `<utt_id> <v1> ... <vD>` per line.
pub fn format_embeddings(embeddings: &BTreeMap<String, Embedding>) -> String {
    let mut s = String::new();
    for e in embeddings.values() {
        s.push_str(&e.utt_id);
        for &v in &e.values {
            s.push(' ');
            s.push_str(&format_sig9(v));
        }
        s.push('\n');
    }
    s
}

pub fn parse_embeddings(text: &str, name: &str) -> Result<BTreeMap<String, Embedding>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut toks = line.split_whitespace();
        let Some(id) = toks.next() else { continue };
        let values = toks
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(format!("{name}:{}", i + 1), format!("bad value `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(
            id.to_string(),
            Embedding {
                utt_id: id.to_string(),
                values,
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::grad_check;
    use crate::numerics::rng::seeded;

    fn small_dims() -> ModelDims {
        ModelDims {
            feat_dim: 4,
            hidden_dim: 5,
            attention_dim: 3,
            embedding_dim: 4,
            num_classes: 3,
        }
    }

    fn features(rng: &mut Rng, t: usize, f: usize) -> Matrix {
        uniform_matrix(rng, t, f, 1.5)
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let p = ExtractorParams::zeros(small_dims());
        let x = features(&mut seeded(1), 6, 4);
        let h = encode_frames(&x, &p).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_is_frame_local() {
        let p = ExtractorParams::init(small_dims(), &mut seeded(2));
        let x = features(&mut seeded(3), 5, 4);
        let perm = [3, 0, 4, 1, 2];
        let xp = Matrix::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let h = encode_frames(&x, &p).unwrap();
        let hp = encode_frames(&xp, &p).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(hp.row(k), h.row(i));
        }
    }

    #[test]
    fn wrong_feature_width_is_a_shape_error() {
        let p = ExtractorParams::init(small_dims(), &mut seeded(2));
        let x = Matrix::zeros(5, 7);
        assert!(matches!(encode_frames(&x, &p), Err(Error::Shape { .. })));
        assert!(matches!(extract_embedding("u", &x, &p), Err(Error::Shape { .. })));
    }

    #[test]
    fn single_frame_pool_is_the_frame_with_floored_sigma() {
        let p = ExtractorParams::init(small_dims(), &mut seeded(4));
        let h = Matrix::row_vector(vec![0.3, -0.2, 0.9, 0.0, 0.5]);
        let out = attentive_stats_pool(&h, &p).unwrap();
        assert_eq!(&out[..5], h.data());
        for s in &out[5..] {
            assert!((s - POOL_VAR_FLOOR.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_frames_have_zero_spread() {
        let p = ExtractorParams::init(small_dims(), &mut seeded(4));
        let row = vec![0.3, -0.2, 0.9, 0.1, 0.5];
        let h = Matrix::from_rows(&vec![row.clone(); 7]).unwrap();
        let out = attentive_stats_pool(&h, &p).unwrap();
        for (a, b) in out[..5].iter().zip(&row) {
            assert!((a - b).abs() < 1e-12);
        }
        for s in &out[5..] {
            assert!(*s <= 1e-4, "{s}");
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let p = ExtractorParams::init(small_dims(), &mut seeded(4));
        let h = Matrix::zeros(0, 5);
        assert!(matches!(attentive_stats_pool(&h, &p), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn pooling_is_permutation_invariant() {
        let p = ExtractorParams::init(small_dims(), &mut seeded(5));
        let h = uniform_matrix(&mut seeded(6), 9, 5, 1.0);
        let perm = [8, 2, 5, 0, 7, 1, 6, 3, 4];
        let hp = Matrix::from_rows(&perm.iter().map(|&i| h.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let a = attentive_stats_pool(&h, &p).unwrap();
        let b = attentive_stats_pool(&hp, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn extraction_is_pure() {
        let p = ExtractorParams::init(small_dims(), &mut seeded(7));
        let x = features(&mut seeded(8), 6, 4);
        let a = extract_embedding("a", &x, &p).unwrap();
        let b = extract_embedding("b", &x, &p).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.values.len(), 4);
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let p = ExtractorParams::init(small_dims(), &mut seeded(9));
        let x = features(&mut seeded(10), 5, 4);
        let r = grad_check(
            |t, w1| {
                let mut pv = p.attach(t, false);
                pv.enc_w1 = w1;
                let xv = t.constant(x.clone());
                let h = encode_frames_on(t, xv, &pv)?;
                let h2 = t.mul(h, h)?;
                Ok(t.sum(h2))
            },
            &p.enc_w1,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn embedding_coordinate_gradient_wrt_encoder_weights() {
        let p = ExtractorParams::init(small_dims(), &mut seeded(11));
        let x = features(&mut seeded(12), 6, 4);
        for coord in 0..4 {
            let r = grad_check(
                |t, w2| {
                    let mut pv = p.attach(t, false);
                    pv.enc_w2 = w2;
                    let xv = t.constant(x.clone());
                    let e = embed_on(t, xv, &pv, &p.dims)?;
                    t.pick(e, coord)
                },
                &p.enc_w2,
                1e-4,
            )
            .unwrap();
            assert!(r.passed, "coord {coord}: {r:?}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = ExtractorParams::init(ModelDims::new(6, 5), &mut seeded(13));
        let ck = Checkpoint::new(Phase::II, &p);
        let text = ck.to_text();
        assert!(text.starts_with("#source-trace-ckpt v1\ndims f=6 h=64 a=32 d=32 c=5\nphase II\nenc_w1 6 64 "));
        let back = Checkpoint::from_text(&text, "mem").unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_text(), text);
        let x = features(&mut seeded(14), 7, 6);
        assert_eq!(
            extract_embedding("u", &x, back.params()).unwrap(),
            extract_embedding("u", &x, ck.params()).unwrap()
        );
    }

    #[test]
    fn checkpoint_with_missing_tensor_is_rejected() {
        let p = ExtractorParams::init(small_dims(), &mut seeded(15));
        let text = Checkpoint::new(Phase::I, &p).to_text();
        let truncated: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        assert!(Checkpoint::from_text(&truncated, "mem").is_err());
    }

    #[test]
    fn param_count_reported() {
        let p = ExtractorParams::zeros(small_dims());
        // 4*5+5 + 5*5+5 + 5*3+3+3 + 10*4+4 + 3*4
        assert_eq!(p.param_count(), 25 + 30 + 21 + 44 + 12);
    }

    #[test]
    fn embedding_file_round_trip() {
        let mut m = BTreeMap::new();
        m.insert(
            "u1".to_string(),
            Embedding {
                utt_id: "u1".into(),
                values: vec![0.5, -1.25e-3],
            },
        );
        let text = format_embeddings(&m);
        assert_eq!(text, "u1 5.00000000e-1 -1.25000000e-3\n");
        assert_eq!(parse_embeddings(&text, "e").unwrap(), m);
    }
}
