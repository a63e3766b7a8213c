//! Three-phase training: source-only AAM, converted+source AAM fine-tuning,
//! and AAM plus the contrastive loss against a frozen source-speech bank.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};

use crate::error::{Error, Result};
use crate::eval::{per_method_report, score_trials_with, EvalReport, ScoredTrial, Trial};
use crate::losses::{aam_loss_on, candidate_matrix, combined_loss_on, contrastive_loss_on, AamConfig, ContrastiveConfig};
use crate::model::{embed_on, extract_embeddings, Checkpoint, Embedding, ExtractorParams, ModelDims, Phase};
use crate::numerics::rng::{substream, Rng};
use crate::numerics::{cosine, Matrix, Tape};
use crate::par::Exec;
use crate::synthcorpus::{Corpus, Split, Utterance};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSelection {
    SourceOnly,
    ConvertedAndSource,
    ConvertedOnly,
}

impl DataSelection {
    pub fn for_phase(phase: Phase) -> Self {
        match phase {
            Phase::I => DataSelection::SourceOnly,
            Phase::II => DataSelection::ConvertedAndSource,
            Phase::III => DataSelection::ConvertedOnly,
        }
    }

    fn admits(self, u: &Utterance) -> bool {
        match self {
            DataSelection::SourceOnly => !u.is_converted(),
            DataSelection::ConvertedAndSource => true,
            DataSelection::ConvertedOnly => u.is_converted(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePlan {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub exec: Exec,
}

impl PhasePlan {
    pub fn default_for(phase: Phase) -> Self {
        let (epochs, learning_rate) = match phase {
            Phase::I => (30, 0.05),
            Phase::II => (20, 0.02),
            Phase::III => (20, 0.01),
        };
        Self {
            phase,
            epochs,
            batch_size: 32,
            learning_rate,
            exec: Exec::default(),
        }
    }

    pub fn data_selection(&self) -> DataSelection {
        DataSelection::for_phase(self.phase)
    }

    fn check(&self, phase: Phase) -> Result<()> {
        if self.phase != phase {
            return Err(Error::PhaseMismatch {
                expected: format!("phase {phase} plan"),
                got: format!("phase {} plan", self.phase),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub embedding_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            attention_dim: 32,
            embedding_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.attention_dim == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }
}

/// Class index per train source speaker, in sorted id order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpeakerLabels {
    index: BTreeMap<String, usize>,
}

impl SpeakerLabels {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let index = corpus
            .manifest
            .source_speakers(Split::Train)
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s.to_string(), i))
            .collect();
        Self { index }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn label(&self, speaker: &str) -> Result<usize> {
        self.index
            .get(speaker)
            .copied()
            .ok_or_else(|| Error::Data(format!("no training label for speaker `{speaker}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainItem {
    pub utt_id: String,
    pub source_speaker: String,
    pub label: usize,
    /// The unconverted utterance a converted item was made from.
    pub source_utt: Option<String>,
}

/// Train-split utterances admitted by `selection`, labelled by source speaker.
pub fn training_items(corpus: &Corpus, selection: DataSelection) -> Result<Vec<TrainItem>> {
    let labels = SpeakerLabels::from_corpus(corpus);
    let mut items = Vec::new();
    for u in corpus.manifest.utterances_in(Split::Train) {
        if !selection.admits(u) {
            continue;
        }
        items.push(TrainItem {
            utt_id: u.utt_id.clone(),
            source_speaker: u.source_speaker.clone(),
            label: labels.label(&u.source_speaker)?,
            source_utt: u.source_utterance().map(str::to_string),
        });
    }
    if items.is_empty() {
        return Err(Error::Data(format!("no train utterances match {selection:?}")));
    }
    items.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    Ok(items)
}

/// `param ← param − lr · grad`.
pub fn sgd_update(param: &mut Matrix, grad: &Matrix, learning_rate: f64) -> Result<()> {
    if learning_rate.is_nan() || learning_rate <= 0.0 {
        return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
    }
    param.axpy(-learning_rate, grad)
}

pub fn sgd_step(params: &mut ExtractorParams, grads: &ExtractorParams, learning_rate: f64) -> Result<()> {
    if params.dims != grads.dims {
        return Err(Error::Data("gradient dims differ from parameter dims".into()));
    }
    for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        sgd_update(p, g, learning_rate)?;
    }
    Ok(())
}

/// Frozen Phase I embeddings of every unconverted train utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceEmbeddingBank {
    speakers: BTreeMap<String, Vec<Embedding>>,
    by_utt: BTreeMap<String, (String, usize)>,
}

impl SourceEmbeddingBank {
    pub fn speakers(&self) -> impl Iterator<Item = &str> {
        self.speakers.keys().map(String::as_str)
    }

    pub fn speaker_embeddings(&self, speaker: &str) -> Option<&[Embedding]> {
        self.speakers.get(speaker).map(Vec::as_slice)
    }

    pub fn utterance(&self, utt_id: &str) -> Option<&Embedding> {
        let (spk, i) = self.by_utt.get(utt_id)?;
        Some(&self.speakers[spk][*i])
    }

    pub fn len(&self) -> usize {
        self.by_utt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_utt.is_empty()
    }
}

pub fn build_embedding_bank(exec: Exec, corpus: &Corpus, phase1: &Checkpoint) -> Result<SourceEmbeddingBank> {
    phase1.require(Phase::I)?;
    let ids: Vec<&str> = corpus
        .manifest
        .utterances_in(Split::Train)
        .filter(|u| !u.is_converted())
        .map(|u| u.utt_id.as_str())
        .collect();
    if ids.is_empty() {
        return Err(Error::Data("no unconverted train utterances for the bank".into()));
    }
    let embs = extract_embeddings(exec, corpus, &ids, phase1.params())?;
    let index = corpus.manifest.utterance_index();
    let mut speakers: BTreeMap<String, Vec<Embedding>> = BTreeMap::new();
    for (id, e) in embs {
        speakers.entry(index[id.as_str()].source_speaker.clone()).or_default().push(e);
    }
    for spk in corpus.manifest.source_speakers(Split::Train) {
        if !speakers.contains_key(spk) {
            return Err(Error::Data(format!("train speaker `{spk}` has no source utterances")));
        }
    }
    let by_utt = speakers
        .iter()
        .flat_map(|(spk, list)| list.iter().enumerate().map(move |(i, e)| (e.utt_id.clone(), (spk.clone(), i))))
        .collect();
    Ok(SourceEmbeddingBank { speakers, by_utt })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveSet<'a> {
    pub positive: &'a Embedding,
    pub negatives: Vec<&'a Embedding>,
}

/// Positive: the bank embedding of `source_utt` when present, else a random
/// embedding of `source_speaker`. Negatives: one random embedding from each
/// of `k` distinct other speakers.
pub fn sample_contrastive_set<'a>(
    bank: &'a SourceEmbeddingBank,
    source_speaker: &str,
    source_utt: Option<&str>,
    k: usize,
    rng: &mut Rng,
) -> Result<ContrastiveSet<'a>> {
    let own = bank
        .speakers
        .get(source_speaker)
        .ok_or_else(|| Error::Data(format!("bank has no speaker `{source_speaker}`")))?;
    let exact = source_utt.and_then(|u| bank.utterance(u)).filter(|e| {
        bank.by_utt
            .get(&e.utt_id)
            .is_some_and(|(spk, _)| spk == source_speaker)
    });
    let positive = match exact {
        Some(e) => e,
        None => own.choose(rng).expect("bank speakers are non-empty"),
    };
    let others: Vec<&String> = bank.speakers.keys().filter(|s| *s != source_speaker).collect();
    if others.len() < k {
        return Err(Error::Sampling(format!(
            "{k} negatives requested but only {} other speakers in the bank",
            others.len()
        )));
    }
    let negatives = others
        .choose_multiple(rng, k)
        .map(|spk| bank.speakers[*spk].choose(rng).expect("bank speakers are non-empty"))
        .collect();
    Ok(ContrastiveSet { positive, negatives })
}

/// Mean loss terms over one optimizer step or epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossStats {
    pub loss: f64,
    pub aam: f64,
    pub con: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub phase: Phase,
    pub epoch: usize,
    pub stats: LossStats,
    pub learning_rate: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!(
            "phase={} epoch={} loss={} aam={} con={} lr={}",
            self.phase,
            self.epoch,
            sig6(self.stats.loss),
            sig6(self.stats.aam),
            self.stats.con.map_or_else(|| "-".to_string(), sig6),
            sig6(self.learning_rate)
        )
    }
}

pub fn format_run_log(epochs: &[EpochLog]) -> String {
    epochs.iter().map(|e| e.line() + "\n").collect()
}

/// 6 significant digits: fixed notation for moderate magnitudes, scientific
/// otherwise.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let s = format!("{:.*}", (5 - exp) as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<LossStats>,
}

impl TrainOutput {
    pub fn run_log(&self) -> String {
        format_run_log(&self.epochs)
    }
}

struct ItemResult {
    aam: f64,
    con: Option<f64>,
    grads: ExtractorParams,
}

struct ContrastiveTerm {
    candidates: Matrix,
    temperature: f64,
    alpha: f64,
}

fn item_step(
    params: &ExtractorParams,
    features: &Matrix,
    label: usize,
    aam: &AamConfig,
    con: Option<&ContrastiveTerm>,
) -> Result<ItemResult> {
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape, true);
    let x = tape.constant(features.clone());
    let e = embed_on(&mut tape, x, &pv, &params.dims)?;
    let aam_node = aam_loss_on(&mut tape, e, pv.speaker_head, label, aam)?;
    let (total, con_value) = match con {
        Some(term) => {
            let c = tape.constant(term.candidates.clone());
            let con_node = contrastive_loss_on(&mut tape, e, c, term.temperature)?;
            let total = combined_loss_on(&mut tape, aam_node, con_node, term.alpha)?;
            (total, Some(tape.scalar(con_node)))
        }
        None => (aam_node, None),
    };
    let loss = tape.scalar(total);
    if !loss.is_finite() {
        return Err(Error::Evaluation(format!("non-finite training loss {loss}")));
    }
    let mut g = tape.backward(total)?;
    Ok(ItemResult {
        aam: tape.scalar(aam_node),
        con: con_value,
        grads: pv.collect_grads(&mut g, params),
    })
}

struct Trainer<'a> {
    corpus: &'a Corpus,
    plan: PhasePlan,
    aam: AamConfig,
    contrastive: Option<(&'a SourceEmbeddingBank, ContrastiveConfig)>,
    seed: u64,
}

impl Trainer<'_> {
    fn run(&self, mut params: ExtractorParams) -> Result<TrainOutput> {
        self.aam.validate()?;
        let items = training_items(self.corpus, self.plan.data_selection())?;
        if let Some((_, cfg)) = &self.contrastive {
            cfg.validate()?;
        }
        let phase = self.plan.phase;
        let mut shuffle_rng = substream(self.seed, &format!("phase{}/shuffle", phase.number()));
        let mut negative_rng = substream(self.seed, &format!("phase{}/negatives", phase.number()));
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut epochs = Vec::with_capacity(self.plan.epochs);
        let mut steps = Vec::new();
        for epoch in 1..=self.plan.epochs {
            order.shuffle(&mut shuffle_rng);
            let (mut sum_loss, mut sum_aam, mut sum_con) = (0.0, 0.0, 0.0);
            for batch in order.chunks(self.plan.batch_size) {
                let mut batch: Vec<usize> = batch.to_vec();
                let terms = self.contrastive_terms(&items, &batch, &mut negative_rng)?;
                let mut jobs: Vec<(usize, Option<ContrastiveTerm>)> = batch.drain(..).zip(terms).collect();
                // Reduction runs in utterance-id order, independent of the shuffle.
                jobs.sort_by_key(|(i, _)| *i);
                let results = self.plan.exec.try_map(&jobs, |(i, term)| {
                    let item = &items[*i];
                    item_step(
                        &params,
                        self.corpus.features(&item.utt_id)?,
                        item.label,
                        &self.aam,
                        term.as_ref(),
                    )
                })?;
                let n = results.len() as f64;
                let mut grads = ExtractorParams::zeros(params.dims);
                let (mut b_loss, mut b_aam, mut b_con) = (0.0, 0.0, 0.0);
                let alpha = self.contrastive.map_or(0.0, |(_, c)| c.alpha);
                for r in &results {
                    grads.axpy(1.0, &r.grads)?;
                    let con = r.con.unwrap_or(0.0);
                    b_aam += r.aam;
                    b_con += con;
                    b_loss += if r.con.is_some() { r.aam + alpha * con } else { r.aam };
                }
                grads.scale_in_place(1.0 / n);
                sgd_step(&mut params, &grads, self.plan.learning_rate)?;
                steps.push(LossStats {
                    loss: b_loss / n,
                    aam: b_aam / n,
                    con: self.contrastive.map(|_| b_con / n),
                });
                sum_loss += b_loss;
                sum_aam += b_aam;
                sum_con += b_con;
            }
            let n = items.len() as f64;
            epochs.push(EpochLog {
                phase,
                epoch,
                stats: LossStats {
                    loss: sum_loss / n,
                    aam: sum_aam / n,
                    con: self.contrastive.map(|_| sum_con / n),
                },
                learning_rate: self.plan.learning_rate,
            });
        }
        Ok(TrainOutput {
            checkpoint: Checkpoint::new(phase, &params),
            epochs,
            steps,
        })
    }

    fn contrastive_terms(
        &self,
        items: &[TrainItem],
        batch: &[usize],
        rng: &mut Rng,
    ) -> Result<Vec<Option<ContrastiveTerm>>> {
        let Some((bank, cfg)) = self.contrastive else {
            return Ok(batch.iter().map(|_| None).collect());
        };
        batch
            .iter()
            .map(|&i| {
                let item = &items[i];
                let set = sample_contrastive_set(bank, &item.source_speaker, item.source_utt.as_deref(), cfg.negatives, rng)?;
                let negs: Vec<&[f64]> = set.negatives.iter().map(|e| e.values.as_slice()).collect();
                Ok(Some(ContrastiveTerm {
                    candidates: candidate_matrix(&set.positive.values, &negs)?,
                    temperature: cfg.temperature,
                    alpha: cfg.alpha,
                }))
            })
            .collect()
    }
}

/// Phase I: AAM over unconverted train speech, from a seeded initialisation.
pub fn train_phase1(
    corpus: &Corpus,
    model: &ModelConfig,
    plan: &PhasePlan,
    aam: &AamConfig,
    seed: u64,
) -> Result<TrainOutput> {
    plan.check(Phase::I)?;
    model.validate()?;
    let labels = SpeakerLabels::from_corpus(corpus);
    if labels.is_empty() {
        return Err(Error::Data("corpus has no train source speakers".into()));
    }
    let dims = ModelDims {
        feat_dim: corpus.manifest.dims.feat_dim,
        hidden_dim: model.hidden_dim,
        attention_dim: model.attention_dim,
        embedding_dim: model.embedding_dim,
        num_classes: labels.len(),
    };
    let params = ExtractorParams::init(dims, &mut substream(seed, "phase1/init"));
    Trainer {
        corpus,
        plan: *plan,
        aam: *aam,
        contrastive: None,
        seed,
    }
    .run(params)
}

fn check_classes(corpus: &Corpus, ckpt: &Checkpoint) -> Result<()> {
    let n = SpeakerLabels::from_corpus(corpus).len();
    if ckpt.params().dims.num_classes != n {
        return Err(Error::Data(format!(
            "checkpoint has {} speaker classes, corpus has {n} train speakers",
            ckpt.params().dims.num_classes
        )));
    }
    Ok(())
}

/// Phase II: AAM fine-tuning over converted and unconverted train speech,
/// every utterance labelled with its source speaker.
pub fn train_phase2(
    corpus: &Corpus,
    phase1: &Checkpoint,
    plan: &PhasePlan,
    aam: &AamConfig,
    seed: u64,
) -> Result<TrainOutput> {
    plan.check(Phase::II)?;
    phase1.require(Phase::I)?;
    check_classes(corpus, phase1)?;
    Trainer {
        corpus,
        plan: *plan,
        aam: *aam,
        contrastive: None,
        seed,
    }
    .run(phase1.params().clone())
}

/// Phase III: converted train speech only, AAM plus `α ·` contrastive loss
/// against `bank`. `contrastive = None` trains with AAM alone.
pub fn train_phase3(
    corpus: &Corpus,
    phase2: &Checkpoint,
    bank: &SourceEmbeddingBank,
    plan: &PhasePlan,
    aam: &AamConfig,
    contrastive: Option<&ContrastiveConfig>,
    seed: u64,
) -> Result<TrainOutput> {
    plan.check(Phase::III)?;
    phase2.require(Phase::II)?;
    check_classes(corpus, phase2)?;
    Trainer {
        corpus,
        plan: *plan,
        aam: *aam,
        contrastive: contrastive.map(|c| (bank, *c)),
        seed,
    }
    .run(phase2.params().clone())
}

/// Mean cosine between converted train embeddings under `params` and their
/// bank positives.
pub fn mean_positive_cosine(
    exec: Exec,
    corpus: &Corpus,
    params: &ExtractorParams,
    bank: &SourceEmbeddingBank,
) -> Result<f64> {
    let items = training_items(corpus, DataSelection::ConvertedOnly)?;
    let ids: Vec<&str> = items.iter().map(|i| i.utt_id.as_str()).collect();
    let embs = extract_embeddings(exec, corpus, &ids, params)?;
    let mut total = 0.0;
    for item in &items {
        let src = item
            .source_utt
            .as_deref()
            .and_then(|u| bank.utterance(u))
            .ok_or_else(|| Error::Data(format!("`{}` has no bank positive", item.utt_id)))?;
        total += cosine(&embs[&item.utt_id].values, &src.values)?;
    }
    Ok(total / items.len() as f64)
}

/// Extracts, scores and reports `trials` under `params`.
pub fn evaluate_trials(
    exec: Exec,
    corpus: &Corpus,
    params: &ExtractorParams,
    trials: &[Trial],
) -> Result<(Vec<ScoredTrial>, EvalReport)> {
    let mut ids: Vec<&str> = trials
        .iter()
        .flat_map(|t| [t.enroll_id.as_str(), t.test_id.as_str()])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let unknown: Vec<&str> = ids
        .iter()
        .copied()
        .filter(|id| !corpus.features.contains_key(*id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Lookup(format!("unknown utterances: {}", unknown.join(", "))));
    }
    let embs = extract_embeddings(exec, corpus, &ids, params)?;
    let scored = score_trials_with(exec, trials, &embs)?;
    let report = per_method_report(&scored, &corpus.manifest)?;
    Ok((scored, report))
}

/// Every knob of a three-phase run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub aam: AamConfig,
    pub contrastive: ContrastiveConfig,
    pub phase1: PhasePlan,
    pub phase2: PhasePlan,
    pub phase3: PhasePlan,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            aam: AamConfig::default(),
            contrastive: ContrastiveConfig::default(),
            phase1: PhasePlan::default_for(Phase::I),
            phase2: PhasePlan::default_for(Phase::II),
            phase3: PhasePlan::default_for(Phase::III),
        }
    }
}

impl PipelineConfig {
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.phase1.exec = exec;
        self.phase2.exec = exec;
        self.phase3.exec = exec;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineRun {
    pub phase1: TrainOutput,
    pub phase2: TrainOutput,
    pub bank: SourceEmbeddingBank,
    pub phase3: TrainOutput,
}

impl PipelineRun {
    pub fn checkpoint(&self, phase: Phase) -> &Checkpoint {
        match phase {
            Phase::I => &self.phase1.checkpoint,
            Phase::II => &self.phase2.checkpoint,
            Phase::III => &self.phase3.checkpoint,
        }
    }
}

pub fn run_pipeline(corpus: &Corpus, cfg: &PipelineConfig, seed: u64) -> Result<PipelineRun> {
    let phase1 = train_phase1(corpus, &cfg.model, &cfg.phase1, &cfg.aam, seed)?;
    let phase2 = train_phase2(corpus, &phase1.checkpoint, &cfg.phase2, &cfg.aam, seed)?;
    let bank = build_embedding_bank(cfg.phase3.exec, corpus, &phase1.checkpoint)?;
    let phase3 = train_phase3(
        corpus,
        &phase2.checkpoint,
        &bank,
        &cfg.phase3,
        &cfg.aam,
        Some(&cfg.contrastive),
        seed,
    )?;
    Ok(PipelineRun {
        phase1,
        phase2,
        bank,
        phase3,
    })
}
