use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use super::{CorpusManifest, Split, Utterance};
use crate::error::{Error, Result};
use crate::eval::{Trial, TrialLabel};
use crate::numerics::rng::substream;

/// Samples balanced verification trials among the converted utterances of
/// `split`.
///
/// Four conditions are drawn, `pairs_per_condition` trials each and without
/// repeated pairs: target and nontarget, each split into same-method and
/// cross-method pairs. A trial is target iff both utterances share their
/// source speaker. Enrollment/test orientation is randomised so that
/// per-method buckets (keyed on the test side) see both roles.
pub fn split_trials(
    manifest: &CorpusManifest,
    split: Split,
    pairs_per_condition: usize,
    seed: u64,
) -> Result<Vec<Trial>> {
    if split == Split::Train {
        return Err(Error::TrialConstruction("trials are drawn from dev or test only".into()));
    }
    if pairs_per_condition == 0 {
        return Err(Error::TrialConstruction("pairs_per_condition must be positive".into()));
    }
    let mut utts: Vec<&Utterance> = manifest.utterances_in(split).filter(|u| u.is_converted()).collect();
    utts.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));

    let mut per_speaker = std::collections::BTreeMap::<&str, usize>::new();
    for u in &utts {
        *per_speaker.entry(u.source_speaker.as_str()).or_default() += 1;
    }
    let eligible = per_speaker.values().filter(|&&n| n >= 2).count();
    if eligible < 2 {
        return Err(Error::TrialConstruction(format!(
            "{split} has {eligible} source speakers with at least 2 converted utterances; need 2"
        )));
    }

    // pools[label][same_method]
    let mut pools: [[Vec<(usize, usize)>; 2]; 2] = Default::default();
    for i in 0..utts.len() {
        for j in i + 1..utts.len() {
            let (a, b) = (utts[i], utts[j]);
            let target = usize::from(a.source_speaker == b.source_speaker);
            let same = usize::from(a.method_id == b.method_id);
            pools[target][same].push((i, j));
        }
    }

    let mut rng = substream(seed, &format!("trials/{split}"));
    let mut trials = Vec::with_capacity(4 * pairs_per_condition);
    for (target, label) in [(1, TrialLabel::Target), (0, TrialLabel::Nontarget)] {
        for (same, kind) in [(1, "same-method"), (0, "cross-method")] {
            let pool = &pools[target][same];
            if pool.len() < pairs_per_condition {
                return Err(Error::TrialConstruction(format!(
                    "{split} {label} {kind}: {} pairs available, {pairs_per_condition} requested (short by {})",
                    pool.len(),
                    pairs_per_condition - pool.len()
                )));
            }
            for &(i, j) in pool.choose_multiple(&mut rng, pairs_per_condition) {
                let (e, t) = if rng.random::<bool>() { (i, j) } else { (j, i) };
                trials.push(Trial::new(label, utts[e].utt_id.clone(), utts[t].utt_id.clone())?);
            }
        }
    }
    trials.shuffle(&mut rng);
    Ok(trials)
}
