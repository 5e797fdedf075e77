use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use std::hint::black_box;
use tgee_bench::square_dataset;
use tgee_core::correlation::{CorrKind, WorkingCorrelation};
use tgee_core::inference::sandwich;
use tgee_core::penalty::Penalty;
use tgee_core::solver::{block_update, fit, fit_independence_init, random_init, Block, FitConfig};
use tgee_core::tensor::{khatri_rao_chain, reconstruct};
use tgee_core::Family;

fn tensor_ops(c: &mut Criterion) {
    let model = random_init(&[64, 64, 8], 4, 1).unwrap();
    c.bench_function("khatri_rao_chain 64x64x8 R4", |b| {
        b.iter(|| khatri_rao_chain(black_box(model.factors()), None))
    });
    c.bench_function("reconstruct 64x64x8 R4", |b| b.iter(|| reconstruct(black_box(&model))));
}

fn block_updates(c: &mut Criterion) {
    let data = square_dataset(200, 4, 32, 3);
    let model = random_init(data.dims(), 2, 5).unwrap();
    let gamma = vec![0.0; data.p0()];
    let wc = WorkingCorrelation::exchangeable(4, 0.5);
    let mut group = c.benchmark_group("block_update");
    for (name, pen, lambda) in [("none", Penalty::None, 0.0), ("lasso", Penalty::Lasso, 5.0)] {
        group.bench_function(BenchmarkId::new("factor0", name), |b| {
            b.iter(|| {
                block_update(&data, &model, &gamma, Block::Factor(0), &wc, Family::Gaussian, &pen, lambda).unwrap()
            })
        });
    }
    group.finish();
}

fn full_fits(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    for n in [100, 300] {
        let data = square_dataset(n, 4, 32, 11);
        group.bench_with_input(BenchmarkId::new("exchangeable_r1", n), &data, |b, d| {
            let cfg = FitConfig::new(1).corr(CorrKind::Exchangeable).seed(1);
            b.iter(|| fit(d, &cfg).unwrap())
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let data = square_dataset(300, 4, 16, 2);
    let res = fit_independence_init(&data, 1, Family::Gaussian, 0).unwrap();
    c.bench_function("sandwich 16x16 R1", |b| b.iter(|| sandwich(&data, &res).unwrap()));
    let h = DMatrix::<f64>::from_fn(64, 64, |i, j| if i == j { 65.0 } else { 1.0 });
    c.bench_function("psd_pinv 64", |b| b.iter(|| tgee_core::inference::psd_pinv(black_box(&h))));
}

criterion_group!(benches, tensor_ops, block_updates, full_fits, inference);
criterion_main!(benches);
