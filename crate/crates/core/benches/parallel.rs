use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use source_trace::eval::score_trials_with;
use source_trace::model::{extract_embeddings, ExtractorParams, ModelDims, Phase};
use source_trace::numerics::rng::seeded;
use source_trace::pipeline::{train_phase1, PhasePlan, PipelineConfig, SpeakerLabels};
use source_trace::synthcorpus::{generate_corpus, split_trials, CorpusConfig, Split};
use source_trace::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn corpus() -> source_trace::synthcorpus::Corpus {
    let cfg = CorpusConfig {
        train_speakers: 16,
        train_utts: 8,
        ..CorpusConfig::default()
    };
    generate_corpus(&cfg, 1).unwrap()
}

fn extraction(c: &mut Criterion) {
    let corpus = corpus();
    let classes = SpeakerLabels::from_corpus(&corpus).len();
    let params = ExtractorParams::init(ModelDims::new(corpus.manifest.dims.feat_dim, classes), &mut seeded(1));
    let ids: Vec<&str> = corpus.manifest.utterances_in(Split::Dev).map(|u| u.utt_id.as_str()).collect();
    let mut group = c.benchmark_group("extract_dev_embeddings");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| extract_embeddings(exec, &corpus, &ids, &params).unwrap())
        });
    }
    group.finish();
}

fn training_epoch(c: &mut Criterion) {
    let corpus = corpus();
    let cfg = PipelineConfig::default();
    let mut group = c.benchmark_group("phase1_epoch");
    group.sample_size(10);
    for (name, exec) in MODES {
        let plan = PhasePlan {
            epochs: 1,
            exec,
            ..PhasePlan::default_for(Phase::I)
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &plan, |b, plan| {
            b.iter(|| train_phase1(&corpus, &cfg.model, plan, &cfg.aam, 1).unwrap())
        });
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let corpus = corpus();
    let classes = SpeakerLabels::from_corpus(&corpus).len();
    let params = ExtractorParams::init(ModelDims::new(corpus.manifest.dims.feat_dim, classes), &mut seeded(1));
    let trials = split_trials(&corpus.manifest, Split::Dev, 75, 1).unwrap();
    let ids: Vec<&str> = corpus.manifest.utterances_in(Split::Dev).map(|u| u.utt_id.as_str()).collect();
    let embs = extract_embeddings(Exec::Sequential, &corpus, &ids, &params).unwrap();
    let mut group = c.benchmark_group("score_dev_trials");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| score_trials_with(exec, &trials, &embs).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, extraction, training_epoch, scoring);
criterion_main!(benches);
