//! Flat `key = value` run configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Phase;
use crate::par::Exec;
use crate::pipeline::{PhasePlan, PipelineConfig};
use crate::synthcorpus::CorpusConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub corpus_seed: u64,
    pub pairs_per_condition: usize,
    pub pipeline: PipelineConfig,
    pub train_seed: u64,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            corpus_seed: 42,
            pairs_per_condition: 75,
            pipeline: PipelineConfig::default(),
            train_seed: 42,
            parallel: true,
        }
    }
}

/// Every key, in echo order, with its meaning.
pub const KEYS: &[(&str, &str)] = &[
    ("corpus_seed", "seed of corpus generation and trial sampling"),
    ("style_dim", "dimension of the latent speaker style"),
    ("feat_dim", "feature dimension per frame"),
    ("min_frames", "shortest utterance, in frames"),
    ("max_frames", "longest utterance, in frames"),
    ("train_speakers", "source speakers in train"),
    ("train_utts", "utterances per train source speaker"),
    ("dev_speakers", "source speakers in dev"),
    ("dev_utts", "utterances per dev source speaker"),
    ("test_speakers", "source speakers in test"),
    ("test_utts", "utterances per test source speaker"),
    ("train_targets", "conversion target speakers in train"),
    ("dev_targets", "conversion target speakers in dev"),
    ("test_targets", "conversion target speakers in test"),
    ("train_methods", "conversion methods seen in train (and later splits)"),
    ("dev_methods", "methods introduced in dev"),
    ("test_methods", "methods introduced in test"),
    ("train_conversions", "converted copies per train source utterance"),
    ("leak_min", "lower end of the per-method leak strength range"),
    ("leak_max", "upper end of the per-method leak strength range"),
    ("noise_min", "lower end of the per-method frame noise range"),
    ("noise_max", "upper end of the per-method frame noise range"),
    ("source_noise", "frame noise of unconverted speech"),
    ("timbre_gain", "scale of the timbre projection relative to the style"),
    ("method_spread", "deviation of method projections from the natural voice"),
    ("style_jitter", "per-utterance deviation from the speaker style"),
    ("content_scale", "standard deviation of the content trajectory"),
    ("content_corr", "frame-to-frame correlation of the content trajectory"),
    ("pairs_per_condition", "trials per (target|nontarget) x (same|cross method) condition"),
    ("train_seed", "seed of initialisation, shuffling and negative sampling"),
    ("hidden_dim", "frame encoder width"),
    ("attention_dim", "attention width of the pooling layer"),
    ("embedding_dim", "embedding dimension"),
    ("aam_scale", "AAM-softmax scale"),
    ("aam_margin", "AAM-softmax angular margin (radians)"),
    ("con_temperature", "contrastive temperature"),
    ("con_negatives", "contrastive negatives per converted utterance"),
    ("con_alpha", "weight of the contrastive loss in phase III"),
    ("phase1_epochs", "phase I epochs"),
    ("phase1_batch", "phase I batch size"),
    ("phase1_lr", "phase I learning rate"),
    ("phase2_epochs", "phase II epochs"),
    ("phase2_batch", "phase II batch size"),
    ("phase2_lr", "phase II learning rate"),
    ("phase3_epochs", "phase III epochs"),
    ("phase3_batch", "phase III batch size"),
    ("phase3_lr", "phase III learning rate"),
    ("parallel", "fan per-utterance work out over threads (true|false)"),
];

fn value<T: FromStr>(key: &str, raw: &str, at: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::parse(at, format!("invalid value `{raw}` for `{key}`")))
}

impl RunConfig {
    fn plan_mut(&mut self, phase: Phase) -> &mut PhasePlan {
        match phase {
            Phase::I => &mut self.pipeline.phase1,
            Phase::II => &mut self.pipeline.phase2,
            Phase::III => &mut self.pipeline.phase3,
        }
    }

    fn plan(&self, phase: Phase) -> &PhasePlan {
        match phase {
            Phase::I => &self.pipeline.phase1,
            Phase::II => &self.pipeline.phase2,
            Phase::III => &self.pipeline.phase3,
        }
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    /// Pipeline settings with the configured execution mode applied.
    pub fn pipeline(&self) -> PipelineConfig {
        self.pipeline.with_exec(self.exec())
    }

    pub fn set(&mut self, key: &str, raw: &str, at: &str) -> Result<()> {
        let c = &mut self.corpus;
        match key {
            "corpus_seed" => self.corpus_seed = value(key, raw, at)?,
            "style_dim" => c.style_dim = value(key, raw, at)?,
            "feat_dim" => c.feat_dim = value(key, raw, at)?,
            "min_frames" => c.min_frames = value(key, raw, at)?,
            "max_frames" => c.max_frames = value(key, raw, at)?,
            "train_speakers" => c.train_speakers = value(key, raw, at)?,
            "train_utts" => c.train_utts = value(key, raw, at)?,
            "dev_speakers" => c.dev_speakers = value(key, raw, at)?,
            "dev_utts" => c.dev_utts = value(key, raw, at)?,
            "test_speakers" => c.test_speakers = value(key, raw, at)?,
            "test_utts" => c.test_utts = value(key, raw, at)?,
            "train_targets" => c.train_targets = value(key, raw, at)?,
            "dev_targets" => c.dev_targets = value(key, raw, at)?,
            "test_targets" => c.test_targets = value(key, raw, at)?,
            "train_methods" => c.train_methods = value(key, raw, at)?,
            "dev_methods" => c.dev_methods = value(key, raw, at)?,
            "test_methods" => c.test_methods = value(key, raw, at)?,
            "train_conversions" => c.train_conversions = value(key, raw, at)?,
            "leak_min" => c.leak_range.0 = value(key, raw, at)?,
            "leak_max" => c.leak_range.1 = value(key, raw, at)?,
            "noise_min" => c.noise_range.0 = value(key, raw, at)?,
            "noise_max" => c.noise_range.1 = value(key, raw, at)?,
            "source_noise" => c.source_noise = value(key, raw, at)?,
            "timbre_gain" => c.timbre_gain = value(key, raw, at)?,
            "method_spread" => c.method_spread = value(key, raw, at)?,
            "style_jitter" => c.style_jitter = value(key, raw, at)?,
            "content_scale" => c.content_scale = value(key, raw, at)?,
            "content_corr" => c.content_corr = value(key, raw, at)?,
            "pairs_per_condition" => self.pairs_per_condition = value(key, raw, at)?,
            "train_seed" => self.train_seed = value(key, raw, at)?,
            "hidden_dim" => self.pipeline.model.hidden_dim = value(key, raw, at)?,
            "attention_dim" => self.pipeline.model.attention_dim = value(key, raw, at)?,
            "embedding_dim" => self.pipeline.model.embedding_dim = value(key, raw, at)?,
            "aam_scale" => self.pipeline.aam.scale = value(key, raw, at)?,
            "aam_margin" => self.pipeline.aam.margin = value(key, raw, at)?,
            "con_temperature" => self.pipeline.contrastive.temperature = value(key, raw, at)?,
            "con_negatives" => self.pipeline.contrastive.negatives = value(key, raw, at)?,
            "con_alpha" => self.pipeline.contrastive.alpha = value(key, raw, at)?,
            "parallel" => self.parallel = value(key, raw, at)?,
            _ => {
                let phase_key = key
                    .strip_prefix("phase")
                    .and_then(|r| r.split_once('_'))
                    .and_then(|(n, field)| Some((Phase::from_number(n.parse().ok()?)?, field)));
                match phase_key {
                    Some((phase, "epochs")) => self.plan_mut(phase).epochs = value(key, raw, at)?,
                    Some((phase, "batch")) => self.plan_mut(phase).batch_size = value(key, raw, at)?,
                    Some((phase, "lr")) => self.plan_mut(phase).learning_rate = value(key, raw, at)?,
                    _ => return Err(Error::Config(format!("{at}: unknown key `{key}`"))),
                }
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let c = &self.corpus;
        let p = &self.pipeline;
        match key {
            "corpus_seed" => self.corpus_seed.to_string(),
            "style_dim" => c.style_dim.to_string(),
            "feat_dim" => c.feat_dim.to_string(),
            "min_frames" => c.min_frames.to_string(),
            "max_frames" => c.max_frames.to_string(),
            "train_speakers" => c.train_speakers.to_string(),
            "train_utts" => c.train_utts.to_string(),
            "dev_speakers" => c.dev_speakers.to_string(),
            "dev_utts" => c.dev_utts.to_string(),
            "test_speakers" => c.test_speakers.to_string(),
            "test_utts" => c.test_utts.to_string(),
            "train_targets" => c.train_targets.to_string(),
            "dev_targets" => c.dev_targets.to_string(),
            "test_targets" => c.test_targets.to_string(),
            "train_methods" => c.train_methods.to_string(),
            "dev_methods" => c.dev_methods.to_string(),
            "test_methods" => c.test_methods.to_string(),
            "train_conversions" => c.train_conversions.to_string(),
            "leak_min" => c.leak_range.0.to_string(),
            "leak_max" => c.leak_range.1.to_string(),
            "noise_min" => c.noise_range.0.to_string(),
            "noise_max" => c.noise_range.1.to_string(),
            "source_noise" => c.source_noise.to_string(),
            "timbre_gain" => c.timbre_gain.to_string(),
            "method_spread" => c.method_spread.to_string(),
            "style_jitter" => c.style_jitter.to_string(),
            "content_scale" => c.content_scale.to_string(),
            "content_corr" => c.content_corr.to_string(),
            "pairs_per_condition" => self.pairs_per_condition.to_string(),
            "train_seed" => self.train_seed.to_string(),
            "hidden_dim" => p.model.hidden_dim.to_string(),
            "attention_dim" => p.model.attention_dim.to_string(),
            "embedding_dim" => p.model.embedding_dim.to_string(),
            "aam_scale" => p.aam.scale.to_string(),
            "aam_margin" => p.aam.margin.to_string(),
            "con_temperature" => p.contrastive.temperature.to_string(),
            "con_negatives" => p.contrastive.negatives.to_string(),
            "con_alpha" => p.contrastive.alpha.to_string(),
            "parallel" => self.parallel.to_string(),
            other => {
                let (n, field) = other["phase".len()..].split_once('_').expect("phase key");
                let plan = self.plan(Phase::from_number(n.parse().expect("phase number")).expect("phase"));
                match field {
                    "epochs" => plan.epochs.to_string(),
                    "batch" => plan.batch_size.to_string(),
                    _ => plan.learning_rate.to_string(),
                }
            }
        }
    }

    pub fn from_text(text: &str, name: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let at = format!("{name}:{}", i + 1);
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(&at, "expected `key = value`"))?;
            let (key, raw) = (key.trim(), raw.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("{at}: duplicate key `{key}`")));
            }
            cfg.set(key, raw, &at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.pipeline.model.validate()?;
        self.pipeline.aam.validate()?;
        self.pipeline.contrastive.validate()?;
        if self.pairs_per_condition == 0 {
            return Err(Error::Config("pairs_per_condition must be positive".into()));
        }
        for phase in [Phase::I, Phase::II, Phase::III] {
            let plan = self.plan(phase);
            if plan.batch_size == 0 || !(plan.learning_rate > 0.0 && plan.learning_rate.is_finite()) {
                return Err(Error::Config(format!(
                    "phase {phase} needs a positive batch size and learning rate"
                )));
            }
        }
        Ok(())
    }

    /// Every key with its current value, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# source-trace run configuration\n");
        for (key, doc) in KEYS {
            let _ = writeln!(s, "{key} = {}  # {doc}", self.get(key));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_parses_back_to_the_same_config() {
        let mut cfg = RunConfig::default();
        cfg.corpus.leak_range = (0.2, 0.4);
        cfg.pipeline.phase3.learning_rate = 0.003;
        cfg.parallel = false;
        let back = RunConfig::from_text(&cfg.to_text(), "echo").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_key_is_settable() {
        let mut cfg = RunConfig::default();
        for (key, _) in KEYS {
            let v = cfg.get(key);
            cfg.set(key, &v, "t").unwrap();
        }
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::from_text("# header\n\ntrain_seed = 7 # trailing\n  phase2_epochs=3\n", "t").unwrap();
        assert_eq!(cfg.train_seed, 7);
        assert_eq!(cfg.pipeline.phase2.epochs, 3);
    }

    #[test]
    fn unknown_duplicate_and_malformed_keys_are_rejected() {
        assert!(matches!(RunConfig::from_text("bogus = 1", "t"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("phase4_lr = 1", "t"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_text("train_seed = 1\ntrain_seed = 2", "t"),
            Err(Error::Config(_))
        ));
        assert!(matches!(RunConfig::from_text("train_seed", "t"), Err(Error::Parse { .. })));
        assert!(matches!(RunConfig::from_text("train_seed = x", "t"), Err(Error::Parse { .. })));
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(matches!(RunConfig::from_text("train_speakers = 0", "t"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("phase1_lr = 0", "t"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("con_negatives = 0", "t"), Err(Error::Config(_))));
    }
}
