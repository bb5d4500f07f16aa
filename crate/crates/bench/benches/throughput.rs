use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ultralong_bench::synthetic_corpus;
use ultralong_core::evalgen::{NiahConfig, PasskeyGenerator};
use ultralong_core::packer::{pack, resample_and_pack, PackConfig, SamplingPlan};
use ultralong_core::rope::{frequencies, CosSinTable, RopeSpec, ScalingMethod};
use ultralong_core::toylab::corpus::{make_toy_corpus, ToyCorpusSpec};
use ultralong_core::toylab::train::shift;
use ultralong_core::toylab::train::TargetMask;
use ultralong_core::toylab::{ToyModel, ToyModelConfig};

fn rope(c: &mut Criterion) {
    let spec = RopeSpec::default();
    let mut g = c.benchmark_group("rope");
    for (name, m) in [
        ("yarn", ScalingMethod::yarn(128.0)),
        ("ntk", ScalingMethod::ntk_factor(128.0)),
        ("pi", ScalingMethod::PositionInterpolation { s: 128.0 }),
    ] {
        g.bench_function(BenchmarkId::new("table", name), |b| b.iter(|| frequencies(black_box(&spec), &m).unwrap()));
    }
    let table = frequencies(&spec, &ScalingMethod::yarn(128.0)).unwrap();
    g.throughput(Throughput::Elements(4096));
    g.bench_function("cos_sin_4096", |b| b.iter(|| CosSinTable::new(0..4096, black_box(&table)).unwrap()));
    g.finish();
}

fn packing(c: &mut Criterion) {
    let docs = synthetic_corpus(2000, 20_000, 1);
    let total: u64 = docs.iter().map(|d| d.len() as u64).sum();
    let cfg = PackConfig::with_separator(8192, 0);
    let mut g = c.benchmark_group("packer");
    g.throughput(Throughput::Elements(total));
    g.bench_function("pack", |b| b.iter(|| pack(black_box(&docs), &cfg).unwrap()));
    let plan = SamplingPlan::with_defaults(total / 2, 3);
    g.bench_function("resample_and_pack", |b| b.iter(|| resample_and_pack(black_box(&docs), &plan, &cfg, 1).unwrap()));
    g.finish();
}

fn cases(c: &mut Criterion) {
    let gen = PasskeyGenerator::new(&NiahConfig::default()).unwrap();
    let mut g = c.benchmark_group("evalgen");
    for len in [4_000u64, 64_000] {
        g.throughput(Throughput::Elements(len));
        g.bench_with_input(BenchmarkId::new("passkey_case", len), &len, |b, &len| {
            b.iter(|| gen.case("b".into(), len, 0.5, 7).unwrap())
        });
    }
    g.finish();
}

fn toy(c: &mut Criterion) {
    let model = ToyModel::new(ToyModelConfig::default()).unwrap();
    let corpus = make_toy_corpus(&ToyCorpusSpec {
        sequences: 4,
        ..Default::default()
    })
    .unwrap();
    let (inputs, targets): (Vec<_>, Vec<_>) =
        corpus.token_sequences().iter().map(|s| shift(s, TargetMask::AllTokens)).unzip();
    let mut g = c.benchmark_group("toylab");
    g.sample_size(20);
    g.bench_function("forward_b4_t256", |b| b.iter(|| model.forward(black_box(&inputs)).unwrap()));
    g.bench_function("forward_backward_b4_t256", |b| {
        b.iter(|| model.loss_and_gradients(black_box(&inputs), &targets).unwrap())
    });
    g.finish();
}

criterion_group!(benches, rope, packing, cases, toy);
criterion_main!(benches);
