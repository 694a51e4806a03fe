use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nmarl::config::ExperimentConfig;
use nmarl::learner::{critic_lr, critic_round, Problem};
use nmarl::oracle::{self, PolicyTable};
use nmarl::par;

fn network_1_1() -> Problem {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/network-1-1.cfg");
    let (cfg, _) = ExperimentConfig::load(&path).unwrap();
    let env = cfg.build_env().unwrap();
    cfg.build_problem(&env, 1).unwrap()
}

/// Runs `f` on a 1-thread pool and on the global pool under the same group.
fn both_pools(c: &mut Criterion, name: &str, mut f: impl FnMut() + Send) {
    let mut group = c.benchmark_group(name);
    group.sample_size(20);
    group.bench_function(BenchmarkId::new("pool", "1-thread"), |b| {
        par::with_threads(1, || b.iter(&mut f))
    });
    group.bench_function(BenchmarkId::new("pool", "global"), |b| b.iter(&mut f));
    group.finish();
}

fn kernels(c: &mut Criterion) {
    let p = network_1_1();
    let thetas = p.initial_thetas();
    let critics = vec![p.net.init().weights().to_vec(); p.num_agents()];
    let (s, a) = (0, p.env.num_actions() / 2);
    let x = p.joint_features(s, a);
    let x_next = p.joint_features(s, 0);
    let rewards = p.env.rewards(s, a);

    both_pools(c, "critic_round", || {
        black_box(
            critic_round(
                &p.net,
                &p.sched,
                0,
                &critics,
                &x,
                &x_next,
                &rewards,
                0.9,
                critic_lr(0, 0.9),
            )
            .unwrap(),
        );
    });
    both_pools(c, "policy_table", || {
        black_box(PolicyTable::from_actors(&p.env, &p.net, &p.features, &thetas).unwrap());
    });
    both_pools(c, "oracle_solve", || {
        black_box(oracle::solve(&p.env, &p.net, &p.features, &thetas).unwrap());
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
