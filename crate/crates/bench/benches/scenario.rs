use agentseal::sim::{catalog, run_scenario, ScenarioConfig, ScenarioKeys};
use agentseal::{HostId, ProtectionMode};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn keys_for(cfg: &ScenarioConfig) -> ScenarioKeys {
    let hosts: Vec<HostId> = std::iter::once(cfg.server.clone())
        .chain(cfg.route.iter().cloned())
        .collect();
    ScenarioKeys::derive(cfg.seed, &hosts).unwrap()
}

fn honest_routes(c: &mut Criterion) {
    let mut group = c.benchmark_group("honest_route");
    for len in [1usize, 3, 6] {
        for mode in [
            ProtectionMode::PlainSigned,
            ProtectionMode::ImprovedSigned,
            ProtectionMode::PartialEncrypted,
        ] {
            let cfg = catalog::honest(1, mode, len);
            let keys = keys_for(&cfg);
            group.bench_with_input(BenchmarkId::new(mode.as_str(), len), &cfg, |b, cfg| {
                b.iter(|| run_scenario(cfg, &keys).unwrap())
            });
        }
    }
    group.finish();
}

fn attacks(c: &mut Criterion) {
    let mut group = c.benchmark_group("attack");
    group.sample_size(20);
    for name in catalog::ATTACK_NAMES {
        let (cfg, _) = catalog::attack(name, 1).unwrap();
        let keys = keys_for(&cfg);
        group.bench_function(name, |b| b.iter(|| run_scenario(&cfg, &keys).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, honest_routes, attacks);
criterion_main!(benches);
