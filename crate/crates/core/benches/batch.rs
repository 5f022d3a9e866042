use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use beacon_rpl::analysis::{monte_carlo_delay, TrickleChainParams};
use beacon_rpl::exec::Execution;
use beacon_rpl::harness::run_scenario;
use beacon_rpl::scenario::default_scenario;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn seeds(c: &mut Criterion) {
    let mut g = c.benchmark_group("seed_batch");
    g.sample_size(10);
    let mut s = default_scenario();
    s.set("run.seeds", "32").unwrap();
    s.steady_ticks = 20 * 30720;
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, 32), &s, |b, s| {
            b.iter(|| run_scenario(s, exec).unwrap())
        });
    }
    g.finish();
}

fn delay(c: &mut Criterion) {
    let mut g = c.benchmark_group("monte_carlo_delay");
    g.sample_size(10);
    let params = TrickleChainParams::new(0.5, 8, 26880, 30720).unwrap();
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, 200_000), &params, |b, p| {
            b.iter(|| monte_carlo_delay(p, 200_000, 1, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, seeds, delay);
criterion_main!(benches);
