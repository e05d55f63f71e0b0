//! Hot paths on a 10k-transaction synthetic ledger.
//!
//! With the default `parallel` feature every benchmark runs twice: on a
//! one-thread rayon pool and on the default pool. Build with
//! `--no-default-features` to time the plain sequential code instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use chaintrace::detectors::{detect_mixing, detect_peeling, detect_ransom, MixingParams, PeelingParams, RansomParams};
use chaintrace::graph::{cluster_multi_input, taint_distance, ClusterOptions};
use chaintrace::ingest::BlackAddressSet;
use chaintrace::metrics::{amount_anonymity, chainlet_matrix};
use chaintrace::model::SATS_PER_BTC;
use chaintrace::synthgen::{gen_background, GenParams, MixingSpec, RansomSpec};
use chaintrace::{build_graph, Amount, Ledger, Window};

const T0: i64 = 1_420_070_400;
const DAY: i64 = 86_400;

fn fixture() -> (Ledger, BlackAddressSet) {
    let mut s = gen_background(&GenParams::new(1, 10_000, Window::new(T0, T0 + 30 * DAY))).unwrap();
    let mut black = Vec::new();
    for k in 0..10 {
        let id = s
            .inject_ransom_pattern(&RansomSpec::new(Amount::from_sat(SATS_PER_BTC), 80, DAY), k)
            .unwrap();
        black.push(s.labels().patterns[&id].params["black_address"].as_str().unwrap().to_owned());
        s.inject_mixing_rounds(
            MixingSpec {
                participants: 10,
                rounds: 2,
                denomination: Amount::from_sat(10_000_000),
            },
            100 + k,
        )
        .unwrap();
    }
    // seed taint from a slice of the background as well
    let (ledger, _) = s.into_parts().unwrap();
    for tx in ledger.transactions().iter().step_by(500) {
        black.push(tx.outputs[0].address.clone());
    }
    (ledger, BlackAddressSet::new("bench", black).unwrap())
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let n = default.current_num_threads();
    vec![
        ("1-thread".into(), rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        (format!("{n}-threads"), default),
    ]
}

#[cfg(feature = "parallel")]
fn run_in<R: Send>(pool: &rayon::ThreadPool, f: impl FnOnce() -> R + Send) -> R {
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
struct Sequential;

#[cfg(not(feature = "parallel"))]
fn pools() -> Vec<(String, Sequential)> {
    vec![("sequential".into(), Sequential)]
}

#[cfg(not(feature = "parallel"))]
fn run_in<R>(_: &Sequential, f: impl FnOnce() -> R) -> R {
    f()
}

fn benches(c: &mut Criterion) {
    let (ledger, black) = fixture();
    let window = ledger.window();
    let graph = build_graph(&ledger, window);
    let probe = Amount::from_sat(10_000_000);

    let mut group = c.benchmark_group("analytics");
    group.sample_size(20);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("build_graph", &name), |b| {
            b.iter(|| run_in(&pool, || build_graph(&ledger, window).tx_count()))
        });
        group.bench_function(BenchmarkId::new("taint_distance", &name), |b| {
            b.iter(|| run_in(&pool, || taint_distance(&graph, &black, 8).len()))
        });
        group.bench_function(BenchmarkId::new("cluster_multi_input", &name), |b| {
            b.iter(|| run_in(&pool, || cluster_multi_input(&graph, ClusterOptions::default()).len()))
        });
        group.bench_function(BenchmarkId::new("metrics", &name), |b| {
            b.iter(|| {
                run_in(&pool, || {
                    (
                        amount_anonymity(&ledger, window, probe, Amount::ZERO),
                        chainlet_matrix(&ledger, window, 6).total,
                    )
                })
            })
        });
        group.bench_function(BenchmarkId::new("detectors", &name), |b| {
            b.iter(|| {
                run_in(&pool, || {
                    detect_ransom(&graph, &RansomParams::default()).len()
                        + detect_peeling(&graph, &PeelingParams::default()).len()
                        + detect_mixing(&graph, &MixingParams::default()).len()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(analytics, benches);
criterion_main!(analytics);
