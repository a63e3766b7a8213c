//! Cosine trial scoring, EER and per-method reports.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Embedding;
use crate::numerics::cosine;
use crate::par::Exec;
use crate::synthcorpus::{CorpusManifest, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl TrialLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialLabel::Target => "target",
            TrialLabel::Nontarget => "nontarget",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            TrialLabel::Target => TrialLabel::Nontarget,
            TrialLabel::Nontarget => TrialLabel::Target,
        }
    }
}

impl fmt::Display for TrialLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrialLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(TrialLabel::Target),
            "nontarget" => Ok(TrialLabel::Nontarget),
            other => Err(Error::parse("trial label", format!("`{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub label: TrialLabel,
    pub enroll_id: String,
    pub test_id: String,
}

impl Trial {
    pub fn new(label: TrialLabel, enroll_id: impl Into<String>, test_id: impl Into<String>) -> Result<Self> {
        let (enroll_id, test_id) = (enroll_id.into(), test_id.into());
        if enroll_id == test_id {
            return Err(Error::TrialConstruction(format!(
                "utterance `{enroll_id}` paired with itself"
            )));
        }
        Ok(Self {
            label,
            enroll_id,
            test_id,
        })
    }

    pub fn swapped(&self) -> Self {
        Self {
            label: self.label,
            enroll_id: self.test_id.clone(),
            test_id: self.enroll_id.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTrial {
    pub trial: Trial,
    pub score: f64,
}

/// Cosine score for every trial, in input order.
pub fn score_trials(trials: &[Trial], embeddings: &BTreeMap<String, Embedding>) -> Result<Vec<ScoredTrial>> {
    score_trials_with(Exec::default(), trials, embeddings)
}

pub fn score_trials_with(
    exec: Exec,
    trials: &[Trial],
    embeddings: &BTreeMap<String, Embedding>,
) -> Result<Vec<ScoredTrial>> {
    let missing: Vec<&str> = trials
        .iter()
        .flat_map(|t| [t.enroll_id.as_str(), t.test_id.as_str()])
        .filter(|id| !embeddings.contains_key(*id))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if !missing.is_empty() {
        return Err(Error::Lookup(format!("no embedding for: {}", missing.join(", "))));
    }
    exec.try_map(trials, |t| {
        let score = cosine(&embeddings[&t.enroll_id].values, &embeddings[&t.test_id].values)?;
        Ok(ScoredTrial {
            trial: t.clone(),
            score,
        })
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eer {
    /// Fraction in `[0, 1]`.
    pub rate: f64,
    pub threshold: f64,
}

pub fn compute_eer(scored: &[ScoredTrial]) -> Result<Eer> {
    let (mut tar, mut non) = (Vec::new(), Vec::new());
    for s in scored {
        match s.trial.label {
            TrialLabel::Target => tar.push(s.score),
            TrialLabel::Nontarget => non.push(s.score),
        }
    }
    eer_from_scores(&tar, &non)
}

/// Interpolated equal error rate.
///
/// Operating points are taken at every distinct score `t`, with
/// `FAR(t) = #{nontarget ≥ t} / N_non` and `FRR(t) = #{target < t} / N_tar`.
/// `FAR − FRR` starts at 1 and is non-increasing; the EER is read off the
/// straight line joining the two adjacent operating points where it changes
/// sign, and the threshold is interpolated with the same weight. A final
/// point above the highest score (FAR 0, FRR 1) closes the curve when the
/// highest score is tied across classes.
pub fn eer_from_scores(target: &[f64], nontarget: &[f64]) -> Result<Eer> {
    if target.is_empty() || nontarget.is_empty() {
        return Err(Error::DegenerateEvaluation(format!(
            "need both classes, got {} target and {} nontarget scores",
            target.len(),
            nontarget.len()
        )));
    }
    if target.iter().chain(nontarget).any(|s| !s.is_finite()) {
        return Err(Error::Evaluation("non-finite score".into()));
    }
    let mut all: Vec<(f64, bool)> = target
        .iter()
        .map(|&s| (s, true))
        .chain(nontarget.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (n_tar, n_non) = (target.len() as f64, nontarget.len() as f64);

    // Operating points at each distinct score, then one above the maximum
    // (FAR = 0, FRR = 1), which carries the maximum as its threshold.
    let mut points: Vec<(f64, f64, f64)> = Vec::with_capacity(all.len() + 1);
    let (mut tar_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        let far = (nontarget.len() - non_below) as f64 / n_non;
        let frr = tar_below as f64 / n_tar;
        points.push((t, far, frr));
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tar_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    points.push((all[all.len() - 1].0, 0.0, 1.0));

    let mut prev: Option<(f64, f64, f64)> = None;
    for (t, far, frr) in points {
        let d = far - frr;
        if d <= 0.0 {
            return Ok(match prev {
                Some((pt, pfar, pfrr)) if d < 0.0 => {
                    let pd = pfar - pfrr;
                    let w = pd / (pd - d);
                    Eer {
                        rate: pfar + w * (far - pfar),
                        threshold: pt + w * (t - pt),
                    }
                }
                _ => Eer { rate: far, threshold: t },
            });
        }
        prev = Some((t, far, frr));
    }
    unreachable!("the final operating point has FAR - FRR = -1")
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodBucket {
    pub method_id: u32,
    /// Split that introduced the method (`Train` for known methods); `None`
    /// for unconverted speech or methods unknown to the manifest.
    pub introduced: Option<Split>,
    /// `None` when the bucket has fewer than 2 trials of either class.
    pub eer: Option<f64>,
    pub n_target: usize,
    pub n_nontarget: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub overall: Eer,
    pub n_target: usize,
    pub n_nontarget: usize,
    /// Ordered by introducing split, then method id.
    pub buckets: Vec<MethodBucket>,
}

impl EvalReport {
    pub fn bucket(&self, method_id: u32) -> Option<&MethodBucket> {
        self.buckets.iter().find(|b| b.method_id == method_id)
    }

    /// Mean EER over present buckets introduced by `split`.
    pub fn mean_eer_introduced_in(&self, split: Split) -> Option<f64> {
        let v: Vec<f64> = self
            .buckets
            .iter()
            .filter(|b| b.introduced == Some(split))
            .filter_map(|b| b.eer)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Overall EER plus one bucket per method of the trials' test utterances.
pub fn per_method_report(scored: &[ScoredTrial], manifest: &CorpusManifest) -> Result<EvalReport> {
    let index = manifest.utterance_index();
    let overall = compute_eer(scored)?;
    let mut buckets: BTreeMap<u32, Vec<ScoredTrial>> = BTreeMap::new();
    for s in scored {
        for id in [&s.trial.enroll_id, &s.trial.test_id] {
            if !index.contains_key(id.as_str()) {
                return Err(Error::Lookup(format!("utterance `{id}` is not in the manifest")));
            }
        }
        let method = index[s.trial.test_id.as_str()].method_id;
        buckets.entry(method).or_default().push(s.clone());
    }
    let mut out = Vec::with_capacity(buckets.len());
    for (method_id, items) in buckets {
        let n_target = items.iter().filter(|s| s.trial.label == TrialLabel::Target).count();
        let n_nontarget = items.len() - n_target;
        let eer = if n_target >= 2 && n_nontarget >= 2 {
            Some(compute_eer(&items)?.rate)
        } else {
            None
        };
        out.push(MethodBucket {
            method_id,
            introduced: manifest.method(method_id).map(|m| m.introduced),
            eer,
            n_target,
            n_nontarget,
        });
    }
    out.sort_by_key(|b| (b.introduced.map_or(0, |s| s as u8 + 1), b.method_id));
    Ok(EvalReport {
        overall,
        n_target: scored.iter().filter(|s| s.trial.label == TrialLabel::Target).count(),
        n_nontarget: scored.iter().filter(|s| s.trial.label == TrialLabel::Nontarget).count(),
        buckets: out,
    })
}

fn pct(rate: f64) -> String {
    format!("{:.3}", 100.0 * rate)
}

/// Line-oriented report; method groups are separated by `#` comment lines.
pub fn format_report(r: &EvalReport) -> String {
    let mut s = String::new();
    writeln!(s, "overall eer={} thr={:.6}", pct(r.overall.rate), r.overall.threshold).unwrap();
    let mut group: Option<Option<Split>> = None;
    for b in &r.buckets {
        if group != Some(b.introduced) {
            let title = match b.introduced {
                None => "unconverted or unknown methods",
                Some(Split::Train) => "methods seen in training",
                Some(Split::Dev) => "methods introduced in dev",
                Some(Split::Test) => "methods introduced in test",
            };
            writeln!(s, "# {title}").unwrap();
            group = Some(b.introduced);
        }
        let eer = b.eer.map_or_else(|| "-".to_string(), pct);
        writeln!(
            s,
            "method {} eer={} n_target={} n_nontarget={}",
            b.method_id, eer, b.n_target, b.n_nontarget
        )
        .unwrap();
    }
    s
}

pub fn format_scores(scored: &[ScoredTrial]) -> String {
    let mut s = String::new();
    for t in scored {
        writeln!(s, "{} {} {:.6}", t.trial.enroll_id, t.trial.test_id, t.score).unwrap();
    }
    s
}

pub fn format_trials(trials: &[Trial]) -> String {
    let mut s = String::new();
    for t in trials {
        writeln!(s, "{} {} {}", t.label, t.enroll_id, t.test_id).unwrap();
    }
    s
}

pub fn parse_trials(text: &str, name: &str) -> Result<Vec<Trial>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::parse(
                format!("{name}:{}", i + 1),
                "expected `target|nontarget <enroll> <test>`",
            ));
        }
        let label = toks[0]
            .parse()
            .map_err(|_| Error::parse(format!("{name}:{}", i + 1), format!("bad label `{}`", toks[0])))?;
        out.push(Trial::new(label, toks[1], toks[2])?);
    }
    Ok(out)
}
