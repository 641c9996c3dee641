use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use posehunt_core::classifier::SyntheticConfig;
use posehunt_core::geometry::{PoseParams, TrigPose};
use posehunt_core::parallel::ExecPolicy;
use posehunt_core::search::{fd_gradient_scene, run_random_search, Evaluator, SceneObjective, SearchConfig, SearchMode};
use posehunt_core::testkit::{cube_scene, synthetic};

const POLICIES: [(&str, ExecPolicy); 2] = [("sequential", ExecPolicy::Sequential), ("parallel", ExecPolicy::Parallel)];

fn evaluator() -> Evaluator {
    let backend = SyntheticConfig {
        pixel_scale: 1.0,
        ..SyntheticConfig::uniform(1000)
    };
    Evaluator::new(cube_scene(64, Some(0)), synthetic(backend))
}

fn random_search_batch(c: &mut Criterion) {
    let eval = evaluator();
    let mut group = c.benchmark_group("random_search_256");
    for (name, policy) in POLICIES {
        let mut cfg = SearchConfig::new(SearchMode::Rs);
        cfg.budget = 256;
        cfg.execution = policy;
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| run_random_search(&eval, cfg).unwrap())
        });
    }
    group.finish();
}

fn fd_gradient(c: &mut Criterion) {
    let eval = evaluator();
    let obj = SceneObjective::new(&eval, eval.scene().frustum());
    let w = TrigPose::encode(&PoseParams::new(0.1, -0.2, -4.0, 0.7, 0.3, 0.2));
    let h = [1e-3; 9];
    let mut group = c.benchmark_group("fd_gradient");
    for (name, policy) in POLICIES {
        group.bench_function(name, |b| b.iter(|| fd_gradient_scene(&obj, 0, &w, 7, &h, policy).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, random_search_batch, fd_gradient);
criterion_main!(benches);
