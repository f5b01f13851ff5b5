use criterion::{criterion_group, criterion_main, Criterion};

use tidal_drmpc::sim::{monte_carlo, monte_carlo_sequential, PreparedScenario};
use tidal_drmpc::verify::small_scenario;

fn batch_paths(c: &mut Criterion) {
    let cfg = small_scenario();
    let prep = PreparedScenario::new(&cfg).expect("small scenario builds");
    let controller = cfg.controller().expect("default controller");
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| monte_carlo(&prep, &controller, cfg.n_samples).unwrap()));
    group.bench_function("sequential", |b| {
        b.iter(|| monte_carlo_sequential(&prep, &controller, cfg.n_samples).unwrap())
    });
    group.finish();
}

criterion_group!(benches, batch_paths);
criterion_main!(benches);
