use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ttvd_core::experiment::{adapt_config_for, SourceModel};
use ttvd_core::{AdaptConfig, Exec, Mode, StreamConfig};

fn bench_stream(c: &mut Criterion) {
    let cfg = StreamConfig {
        n_train_per_class: 2000,
        n_batches: 10,
        ..StreamConfig::default()
    };
    let model = SourceModel::build(&cfg, 1.0).expect("source model");
    let batches = model.stream(&cfg).expect("stream");
    let mut group = c.benchmark_group("run_stream");
    group.sample_size(10);
    for mode in [Mode::Vd, Mode::Civd, Mode::Cipd] {
        for exec in [Exec::Sequential, Exec::Parallel] {
            let acfg = AdaptConfig {
                exec,
                ..adapt_config_for(&AdaptConfig::default(), mode, None)
            };
            group.bench_with_input(
                BenchmarkId::new(mode.name(), format!("{exec:?}").to_lowercase()),
                &acfg,
                |b, acfg| b.iter(|| model.run(&batches, acfg).expect("run")),
            );
        }
    }
    group.finish();
}

criterion_group!(benches, bench_stream);
criterion_main!(benches);
