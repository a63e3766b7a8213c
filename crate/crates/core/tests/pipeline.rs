use source_trace::model::Phase;
use source_trace::pipeline::{mean_positive_cosine, run_pipeline, ModelConfig, PhasePlan, PipelineConfig};
use source_trace::synthcorpus::{generate_corpus, CorpusConfig};
use source_trace::Exec;

fn small_corpus(seed: u64) -> source_trace::synthcorpus::Corpus {
    let cfg = CorpusConfig {
        train_speakers: 10,
        train_utts: 6,
        dev_speakers: 4,
        dev_utts: 4,
        test_speakers: 4,
        test_utts: 4,
        min_frames: 10,
        max_frames: 16,
        ..CorpusConfig::default()
    };
    generate_corpus(&cfg, seed).unwrap()
}

fn small_pipeline(epochs: [usize; 3]) -> PipelineConfig {
    let plan = |phase, epochs| PhasePlan {
        epochs,
        batch_size: 8,
        ..PhasePlan::default_for(phase)
    };
    PipelineConfig {
        model: ModelConfig {
            hidden_dim: 16,
            attention_dim: 8,
            embedding_dim: 8,
        },
        phase1: plan(Phase::I, epochs[0]),
        phase2: plan(Phase::II, epochs[1]),
        phase3: plan(Phase::III, epochs[2]),
        ..PipelineConfig::default()
    }
}

#[test]
fn phase_three_pulls_converted_embeddings_toward_their_source() {
    for seed in [1, 2, 3] {
        let corpus = small_corpus(seed);
        let cfg = small_pipeline([4, 2, 4]);
        let run = run_pipeline(&corpus, &cfg, seed).unwrap();
        let before = mean_positive_cosine(Exec::default(), &corpus, run.checkpoint(Phase::II).params(), &run.bank).unwrap();
        let after = mean_positive_cosine(Exec::default(), &corpus, run.checkpoint(Phase::III).params(), &run.bank).unwrap();
        assert!(after > before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn checkpoints_are_reproducible_from_seeds() {
    let corpus = small_corpus(4);
    let cfg = small_pipeline([1, 1, 1]);
    let a = run_pipeline(&corpus, &cfg, 11).unwrap();
    let b = run_pipeline(&small_corpus(4), &cfg, 11).unwrap();
    for phase in [Phase::I, Phase::II, Phase::III] {
        assert_eq!(a.checkpoint(phase).to_text(), b.checkpoint(phase).to_text());
    }
    let c = run_pipeline(&corpus, &cfg, 12).unwrap();
    assert_ne!(a.checkpoint(Phase::I).to_text(), c.checkpoint(Phase::I).to_text());
}
