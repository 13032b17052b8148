use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use ubem_gp_core::calibration::{calibrate_candidates, sample_params, ParamRanges};
use ubem_gp_core::gp::{FitOptions, GPModel, KernelParams};
use ubem_gp_core::select::dcor;
use ubem_gp_core::synth::{synthesize_measurements, DistrictConfig, DistrictScenario};
use ubem_gp_core::ve::{enumerate_windows, WindowMode};

fn problem(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
    let y = x.iter().map(|r| r.iter().map(|v| (3.0 * v).sin()).sum::<f64>() + 0.05 * rng.random::<f64>()).collect();
    (x, y)
}

fn gp(c: &mut Criterion) {
    let mut g = c.benchmark_group("gp");
    g.sample_size(10);
    for n in [250usize, 1000] {
        let (x, y) = problem(n, 5, 1);
        let alpha = vec![1e-3; n];
        let opts = FitOptions { restarts: 2, ..FitOptions::default() };
        g.bench_with_input(BenchmarkId::new("fit", n), &n, |b, _| {
            b.iter(|| GPModel::fit(x.clone(), y.clone(), alpha.clone(), &opts, 3).unwrap())
        });
        let model = GPModel::new(KernelParams::isotropic(1.0, 0.5, 1e-3), x.clone(), y.clone(), alpha.clone()).unwrap();
        let (xt, _) = problem(500, 5, 2);
        g.bench_with_input(BenchmarkId::new("predict_500", n), &n, |b, _| {
            b.iter(|| model.predict_batch(black_box(&xt), true).unwrap())
        });
    }
    g.finish();
}

fn distance_correlation(c: &mut Criterion) {
    let mut g = c.benchmark_group("dcor");
    for n in [500usize, 2000] {
        let (x, y) = problem(n, 1, 4);
        let x: Vec<f64> = x.into_iter().map(|r| r[0]).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| dcor(black_box(&x), black_box(&y)).unwrap()));
    }
    g.finish();
}

fn calibration(c: &mut Criterion) {
    let config = DistrictConfig { substations: 1, days: 28, ..DistrictConfig::default() };
    let sc = DistrictScenario::generate(1, &config).unwrap();
    let meas = synthesize_measurements(&sc).unwrap();
    let sub = &sc.substations[0];
    let load = &meas[&sub.id].power;
    let windows = enumerate_windows(sc.first_date(), sc.days(), WindowMode::Calibration).unwrap();
    let candidates = sample_params(&ParamRanges::for_floor_area(sub.params.floor_area), 200, 5).unwrap();
    let bills = vec![sub.params.dhw_daily_kwh * 30.0; 6];
    let mut g = c.benchmark_group("calibration");
    g.sample_size(10);
    g.bench_function("200_candidates_4_windows", |b| {
        b.iter(|| calibrate_candidates(load, &sc.weather, &windows, &candidates, &bills).unwrap())
    });
    g.finish();
}

criterion_group!(benches, gp, distance_correlation, calibration);
criterion_main!(benches);
