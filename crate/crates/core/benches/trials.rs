use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use speckernel::analysis::{estimate_unsafe_probability, TransformKind};
use speckernel::par::Exec;
use speckernel::scenarios::{fixture, probe_attacker};
use speckernel::syntax::parse_attacker;
use speckernel::transform::{check_imposes_sks, check_sem_preservation, fence_system};
use speckernel::{Layout, SlotScheme};

fn strategies() -> Vec<(&'static str, Exec)> {
    let mut out = vec![("sequential", Exec::Sequential)];
    if cfg!(feature = "parallel") {
        out.push(("parallel", Exec::Parallel));
    }
    out
}

fn experiment(c: &mut Criterion) {
    let sys = fixture("s_probe").unwrap();
    let scheme = SlotScheme::for_system(&sys).unwrap();
    let prog = parse_attacker(&probe_attacker(sys.kappa_user), &sys).unwrap();
    let mut g = c.benchmark_group("experiment_10k");
    for (name, exec) in strategies() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| estimate_unsafe_probability(&sys, &prog, &scheme, 10_000, 10_000, 7, exec).unwrap())
        });
    }
    g.finish();
}

fn preservation(c: &mut Criterion) {
    let sys = fixture("s_msg").unwrap();
    let mut g = c.benchmark_group("sem_preservation_1k");
    g.sample_size(10);
    for (name, exec) in strategies() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| check_sem_preservation(&sys, TransformKind::Fence, 1000, 500, 7, exec).unwrap())
        });
    }
    g.finish();
}

fn imposition(c: &mut Criterion) {
    let sys = fence_system(&fixture("s_msg").unwrap());
    let layout = Layout::canonical(&sys);
    let mut g = c.benchmark_group("imposes_sks_depth6");
    g.sample_size(10);
    for (name, exec) in strategies() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| check_imposes_sks(&sys, &layout, 6, 1_000_000, 10_000, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, experiment, preservation, imposition);
criterion_main!(benches);
