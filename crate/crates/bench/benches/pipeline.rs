use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use ordnet::netmodel::{
    complexify, encode_features, fit_stats, message_passing, readout, routenet_as_ordgccn,
    Hyperparams,
};
use ordnet::netsim::simulate;
use ordnet::tensornn::{ParamStore, Tape};
use ordnet::wl::{ccwl_refine, counterexample_fixture, ord_ccwl_refine};
use ordnet_bench::bench_scenario;

fn bench_wl(c: &mut Criterion) {
    let fx = counterexample_fixture();
    c.bench_function("wl/ccwl_fixture", |b| {
        b.iter(|| ccwl_refine(black_box(&fx.left), black_box(&fx.right), &fx.specs).unwrap())
    });
    c.bench_function("wl/ord_ccwl_fixture", |b| {
        b.iter(|| {
            ord_ccwl_refine(
                black_box(&fx.left),
                black_box(&fx.right),
                &fx.specs,
                fx.left.orders(),
                fx.right.orders(),
            )
            .unwrap()
        })
    });
}

fn bench_complexify(c: &mut Criterion) {
    let scenario = bench_scenario();
    c.bench_function("topology/complexify_validate", |b| {
        b.iter(|| {
            let cx = complexify(black_box(&scenario)).unwrap();
            assert!(cx.complex.validate().is_empty());
            cx
        })
    });
}

fn bench_forward(c: &mut Criterion) {
    let scenario = bench_scenario();
    let stats = fit_stats(std::slice::from_ref(&scenario)).unwrap();
    let hyper = Hyperparams {
        dim: 16,
        iterations: 8,
        head_scale: 15.0,
    };
    let cx = complexify(&scenario).unwrap();

    c.bench_function("model/forward_t8", |b| {
        b.iter(|| {
            let mut params = ParamStore::new(1);
            let mut tape = Tape::new();
            let h0 =
                encode_features(&mut params, &hyper, Some(&stats), &mut tape, &scenario).unwrap();
            let mp = message_passing(&mut params, &hyper, &mut tape, &scenario, &h0).unwrap();
            readout(&mut params, &hyper, &mut tape, &scenario, &mp).unwrap()
        })
    });
    c.bench_function("model/forward_backward_t8", |b| {
        b.iter(|| {
            let mut params = ParamStore::new(1);
            let mut tape = Tape::new();
            let h0 =
                encode_features(&mut params, &hyper, Some(&stats), &mut tape, &scenario).unwrap();
            let mp = message_passing(&mut params, &hyper, &mut tape, &scenario, &h0).unwrap();
            let heads = readout(&mut params, &hyper, &mut tape, &scenario, &mp).unwrap();
            let mut acc = tape.constant(ordnet::tensornn::Tensor::scalar(0.0));
            for &d in &heads.delay {
                acc = tape.add(acc, d).unwrap();
            }
            tape.backward(acc).unwrap()
        })
    });
    c.bench_function("model/ordgccn_path_t8", |b| {
        b.iter(|| {
            let mut params = ParamStore::new(1);
            let mut tape = Tape::new();
            let h0 =
                encode_features(&mut params, &hyper, Some(&stats), &mut tape, &scenario).unwrap();
            routenet_as_ordgccn(&mut params, &hyper, &mut tape, &scenario, &cx, &h0).unwrap()
        })
    });
}

fn bench_simulate(c: &mut Criterion) {
    let scenario = bench_scenario();
    c.bench_function("netsim/simulate_2s", |b| {
        b.iter(|| simulate(black_box(&scenario), 3, 2.0, 0.2).unwrap())
    });
}

criterion_group!(
    benches,
    bench_wl,
    bench_complexify,
    bench_forward,
    bench_simulate
);
criterion_main!(benches);
