//! Sequential vs rayon execution of the three data-parallel workloads:
//! mini-batch gradients, batched reconstruction and wavelet CS solves.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use npgd::baselines::{solve, CsConfig};
use npgd::experiment::{evaluate, initial_checkpoint, prepare, ExperimentConfig, Splits};
use npgd::parallel::{try_par_map, with_threads, Execution};
use npgd::unroll::{train, TrainConfig};

const CONFIG: &str = "
image_size = 32
data.count = 16
data.test_count = 8
unroll.iterations = 4
prox.features = 8
prox.normalization = none
train.batch_size = 8
train.epochs = 1
cs.iterations = 50
";

fn setup() -> (ExperimentConfig, Splits) {
    let cfg = ExperimentConfig::parse(CONFIG).expect("bench config");
    let splits = prepare(&cfg).expect("bench data");
    (cfg, splits)
}

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn bench_training(c: &mut Criterion) {
    let (cfg, splits) = setup();
    let init = initial_checkpoint(&cfg, &cfg.prox).expect("init");
    let tc = TrainConfig { epochs: 1, ..cfg.train.clone() };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_function(name, |b| {
            b.iter(|| {
                with_threads(threads, || {
                    black_box(train(&splits.train, init.clone(), &cfg.unroll, &tc, exec).expect("train"))
                })
            })
        });
    }
    group.finish();
}

fn bench_reconstruction(c: &mut Criterion) {
    let (cfg, splits) = setup();
    let ck = initial_checkpoint(&cfg, &cfg.prox).expect("init");
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut group = c.benchmark_group("reconstruct_test_split");
    for (name, exec) in modes() {
        group.bench_function(name, |b| {
            b.iter(|| {
                with_threads(threads, || {
                    black_box(
                        evaluate(&ck.net, ck.alpha, cfg.unroll.iterations, &splits.test_names, &splits.test, None, exec)
                            .expect("evaluate"),
                    )
                })
            })
        });
    }
    group.finish();
}

fn bench_wavelet_cs(c: &mut Criterion) {
    let (cfg, splits) = setup();
    let cs = CsConfig { lambda: 1e-3, ..cfg.cs.clone() };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut group = c.benchmark_group("fista_test_split");
    for (name, exec) in modes() {
        group.bench_function(name, |b| {
            b.iter(|| {
                with_threads(threads, || {
                    black_box(try_par_map(exec, &splits.test, |_, s| solve(&s.measurement, s.op.as_ref(), &cs)).expect("solve"))
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_training, bench_reconstruction, bench_wavelet_cs);
criterion_main!(benches);
