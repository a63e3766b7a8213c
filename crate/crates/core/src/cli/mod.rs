//! Command-line front end: `generate`, `train` and `evaluate`.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, KEYS};

use crate::error::{Error, Result};
use crate::eval::{format_report, format_scores, format_trials, parse_trials};
use crate::model::{extract_embeddings, format_embeddings, Checkpoint, Phase};
use crate::pipeline::{build_embedding_bank, evaluate_trials, train_phase1, train_phase2, train_phase3, TrainOutput};
use crate::synthcorpus::{generate_corpus, split_trials, Corpus, Split};

pub const TRIALS_DEV_FILE: &str = "trials_dev.txt";
pub const TRIALS_TEST_FILE: &str = "trials_test.txt";

pub fn checkpoint_file(phase: Phase) -> String {
    format!("ckpt_phase{}.txt", phase.number())
}

pub fn log_file(phase: Phase) -> String {
    format!("train_phase{}.log", phase.number())
}

#[derive(Debug, Parser)]
#[command(name = "source-trace", version, about = "Source speaker tracing on a synthetic converted-speech corpus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a corpus plus dev and test trial lists.
    Generate(GenerateArgs),
    /// Run training phases and write phase-tagged checkpoints and logs.
    Train(TrainArgs),
    /// Score a trial list with a checkpoint and write scores and a report.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `corpus_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus directory; defaults to `--out`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "1,2,3")]
    pub phases: String,
    /// Overrides `train_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    /// Corpus directory; defaults to the directory holding the trial list.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory; defaults to the directory holding the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn parent_or_dot(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Runs a parsed command line; returns what should go to standard output.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate(a) => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                cfg.corpus_seed = seed;
            }
            cmd_generate(&cfg, &a.out)
        }
        Command::Train(a) => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                cfg.train_seed = seed;
            }
            let phases = parse_phases(&a.phases)?;
            let corpus = a.corpus.unwrap_or_else(|| a.out.clone());
            cmd_train(&cfg, &corpus, &a.out, &phases)
        }
        Command::Evaluate(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let corpus = a.corpus.unwrap_or_else(|| parent_or_dot(&a.trials));
            let out = a.out.unwrap_or_else(|| parent_or_dot(&a.checkpoint));
            cmd_evaluate(&cfg, &a.checkpoint, &corpus, &a.trials, &out)
        }
    }
}

/// Writes the corpus, `trials_dev.txt`, `trials_test.txt` and the echoed
/// configuration into `out`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<String> {
    cfg.validate()?;
    let corpus = generate_corpus(&cfg.corpus, cfg.corpus_seed)?;
    let dev = split_trials(&corpus.manifest, Split::Dev, cfg.pairs_per_condition, cfg.corpus_seed)?;
    let test = split_trials(&corpus.manifest, Split::Test, cfg.pairs_per_condition, cfg.corpus_seed)?;
    create_dir(out)?;
    write(&out.join("generate.config"), &cfg.to_text())?;
    corpus.save(out)?;
    write(&out.join(TRIALS_DEV_FILE), &format_trials(&dev))?;
    write(&out.join(TRIALS_TEST_FILE), &format_trials(&test))?;
    Ok(format!(
        "generated {} utterances, {} dev and {} test trials in {}\n",
        corpus.manifest.utterances.len(),
        dev.len(),
        test.len(),
        out.display()
    ))
}

/// Parses `1,2,3`-style phase lists; phases must be distinct and contiguous.
pub fn parse_phases(spec: &str) -> Result<Vec<Phase>> {
    let mut phases = spec
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<u8>()
                .ok()
                .and_then(Phase::from_number)
                .ok_or_else(|| Error::Config(format!("unknown phase `{}` (expected 1, 2 or 3)", t.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    phases.sort();
    let n = phases.len();
    phases.dedup();
    if phases.len() != n {
        return Err(Error::Config(format!("phase listed twice in `{spec}`")));
    }
    if phases.windows(2).any(|w| w[1].number() != w[0].number() + 1) {
        return Err(Error::Config(format!("phases `{spec}` are not contiguous")));
    }
    Ok(phases)
}

fn prerequisite(out: &Path, phase: Phase, needed_by: Phase) -> Result<Checkpoint> {
    let path = out.join(checkpoint_file(phase));
    if !path.exists() {
        return Err(Error::Dependency(format!(
            "phase {needed_by} needs the phase {phase} checkpoint {}",
            path.display()
        )));
    }
    let ckpt = Checkpoint::load(&path)?;
    ckpt.require(phase)?;
    Ok(ckpt)
}

/// Runs `phases` in order, loading missing prerequisites from `out`.
pub fn cmd_train(cfg: &RunConfig, corpus_dir: &Path, out: &Path, phases: &[Phase]) -> Result<String> {
    cfg.validate()?;
    let Some(&first) = phases.first() else {
        return Err(Error::Config("no phases requested".into()));
    };
    let mut p1 = if first > Phase::I {
        Some(prerequisite(out, Phase::I, first)?)
    } else {
        None
    };
    let mut p2 = if first > Phase::II {
        Some(prerequisite(out, Phase::II, first)?)
    } else {
        None
    };
    let corpus = Corpus::load(corpus_dir)?;
    create_dir(out)?;
    write(&out.join("train.config"), &cfg.to_text())?;
    let pc = cfg.pipeline();
    let seed = cfg.train_seed;
    let mut stdout = String::new();
    let mut emit = |phase: Phase, result: &TrainOutput| -> Result<()> {
        result.checkpoint.save(&out.join(checkpoint_file(phase)))?;
        write(&out.join(log_file(phase)), &result.run_log())?;
        stdout.push_str(&result.run_log());
        Ok(())
    };
    for &phase in phases {
        match phase {
            Phase::I => {
                let r = train_phase1(&corpus, &pc.model, &pc.phase1, &pc.aam, seed)?;
                emit(phase, &r)?;
                p1 = Some(r.checkpoint);
            }
            Phase::II => {
                let ckpt1 = p1.as_ref().expect("phase I available");
                let r = train_phase2(&corpus, ckpt1, &pc.phase2, &pc.aam, seed)?;
                emit(phase, &r)?;
                p2 = Some(r.checkpoint);
            }
            Phase::III => {
                let ckpt1 = p1.as_ref().expect("phase I available");
                let ckpt2 = p2.as_ref().expect("phase II available");
                let bank = build_embedding_bank(pc.phase3.exec, &corpus, ckpt1)?;
                let r = train_phase3(&corpus, ckpt2, &bank, &pc.phase3, &pc.aam, Some(&pc.contrastive), seed)?;
                emit(phase, &r)?;
            }
        }
    }
    Ok(stdout)
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "out".to_string(), |s| s.to_string_lossy().into_owned())
}

/// Scores `trials_path` with the checkpoint; writes
/// `<checkpoint>.<trials>.{scores,report,emb}` into `out` and returns the report.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, corpus_dir: &Path, trials_path: &Path, out: &Path) -> Result<String> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let text = fs::read_to_string(trials_path).map_err(|e| Error::io(trials_path, e))?;
    let trials = parse_trials(&text, &trials_path.display().to_string())?;
    let corpus = Corpus::load(corpus_dir)?;
    let (scored, report) = evaluate_trials(cfg.exec(), &corpus, ckpt.params(), &trials)?;
    let mut ids: Vec<&str> = trials
        .iter()
        .flat_map(|t| [t.enroll_id.as_str(), t.test_id.as_str()])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let embs = extract_embeddings(cfg.exec(), &corpus, &ids, ckpt.params())?;
    create_dir(out)?;
    let base = format!("{}.{}", stem(checkpoint), stem(trials_path));
    let report_text = format_report(&report);
    write(&out.join(format!("{base}.scores")), &format_scores(&scored))?;
    write(&out.join(format!("{base}.report")), &report_text)?;
    write(&out.join(format!("{base}.emb")), &format_embeddings(&embs))?;
    Ok(report_text)
}
