use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use pairmine_core::corpus::CorpusHandle;
use pairmine_core::crossfilter::{rerank, CrossMode, CrossModel, PairResolver, NUM_FEATURES};
use pairmine_core::encoder::{embed, featurize, BiencoderModel};
use pairmine_core::evalharness::{generate, SyntheticCorpus, SyntheticSpec};
use pairmine_core::knn::{build, IndexKind, VectorStore};
use pairmine_core::miner::{mine, MarginConfig};

const BUCKETS: u32 = 1 << 14;
const DIM: u32 = 64;

fn corpus() -> SyntheticCorpus {
    let spec = SyntheticSpec {
        num_pairs: 500,
        distractor_count: 2000,
        ..SyntheticSpec::separable()
    };
    generate(&spec).expect("valid spec")
}

fn vectors(model: &BiencoderModel, corpus: &CorpusHandle) -> VectorStore {
    let rows: Vec<Vec<f32>> = corpus
        .iter()
        .map(|r| embed(model, &featurize(&r.text, BUCKETS)).expect("finite").to_f32())
        .collect();
    VectorStore::from_rows(corpus.ids(), &rows).expect("consistent rows")
}

fn benches(c: &mut Criterion) {
    let data = corpus();
    let model = BiencoderModel::new(BUCKETS, DIM, 1);
    let text = &data.inputs.records()[0].text;

    c.bench_function("featurize", |b| b.iter(|| featurize(black_box(text), BUCKETS)));
    let feats = featurize(text, BUCKETS);
    c.bench_function("embed", |b| b.iter(|| embed(&model, black_box(&feats)).unwrap()));

    let xs = vectors(&model, &data.inputs);
    let ys = vectors(&model, &data.outputs);
    let x_exact = build(&xs, IndexKind::Exact, 0, 0).unwrap();
    let y_exact = build(&ys, IndexKind::Exact, 0, 0).unwrap();
    let y_ivf = build(&ys, IndexKind::Ivf, 32, 3).unwrap();

    let mut group = c.benchmark_group("search");
    group.sample_size(10);
    group.bench_function("exact k=8", |b| b.iter(|| y_exact.search(&xs, 8, 1).unwrap()));
    group.bench_function("ivf k=8 nprobe=8", |b| b.iter(|| y_ivf.search(&xs, 8, 8).unwrap()));
    group.bench_function("ivf build nlist=32", |b| {
        b.iter(|| build(&ys, IndexKind::Ivf, 32, 3).unwrap())
    });
    group.finish();

    let cfg = MarginConfig::default();
    let mut group = c.benchmark_group("mine");
    group.sample_size(10);
    group.bench_function("exact", |b| {
        b.iter(|| mine(&xs, &x_exact, &y_exact, &cfg, |_, _| false).unwrap())
    });
    group.finish();

    let mined = mine(&xs, &x_exact, &y_exact, &cfg, |_, _| false).unwrap().candidates;
    let cross = CrossModel::new(CrossMode::Binary, NUM_FEATURES, 16, 2);
    let resolver = PairResolver {
        inputs: &data.inputs,
        outputs: &data.outputs,
        x_vectors: &xs,
        y_vectors: &ys,
    };
    let mut group = c.benchmark_group("rerank");
    group.sample_size(10);
    group.bench_function(format!("{} candidates", mined.len()), |b| {
        b.iter_batched(|| mined.clone(), |m| rerank(&cross, &m, &resolver, 500).unwrap(), BatchSize::LargeInput)
    });
    group.finish();
}

criterion_group!(pipeline, benches);
criterion_main!(pipeline);
