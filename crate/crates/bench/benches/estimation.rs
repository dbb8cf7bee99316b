use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use evnet_core::modelspec::columns::LOG_STATIONS;
use evnet_core::{
    build_demand_design, fit_gmm, fit_ols, fit_tsls, generate_panel, FitOptions, ModelOptions,
    Panel, SynthConfig,
};
use std::hint::black_box;

fn panel(n_zips: usize) -> Panel {
    generate_panel(&SynthConfig { n_zips, ..SynthConfig::default() })
        .unwrap()
        .panel
}

fn estimators(c: &mut Criterion) {
    let opts = FitOptions::default();
    let mut group = c.benchmark_group("demand_fit");
    for n_zips in [50, 400] {
        let design = build_demand_design(&panel(n_zips), &ModelOptions::default()).unwrap();
        group.bench_with_input(BenchmarkId::new("ols", n_zips), &design, |b, d| {
            b.iter(|| fit_ols(black_box(d), &opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("tsls", n_zips), &design, |b, d| {
            b.iter(|| fit_tsls(black_box(d), &[LOG_STATIONS], &opts).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("gmm2", n_zips), &design, |b, d| {
            b.iter(|| fit_gmm(black_box(d), &[LOG_STATIONS], 2, &opts).unwrap())
        });
    }
    group.finish();
}

fn panel_build(c: &mut Criterion) {
    let records: Vec<_> = panel(400).records().cloned().collect();
    c.bench_function("panel_from_records_400_zips", |b| {
        b.iter(|| Panel::from_records(black_box(records.clone())).unwrap())
    });
    c.bench_function("synth_50_zips", |b| {
        b.iter(|| generate_panel(black_box(&SynthConfig::default())).unwrap())
    });
}

criterion_group!(benches, estimators, panel_build);
criterion_main!(benches);
