use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use plfilter_bench::{example_problem, localization_step, skewed_density};
use plfilter_core::experiments::Scenario;
use plfilter_core::filter::filter_step;
use plfilter_core::quadrature::convolve_on_grid;
use plfilter_core::solver::{self, SolverOptions};
use plfilter_core::{Density, GridSpec};

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    for (name, scenario) in [("example1", Scenario::Example1), ("example2", Scenario::Example2)] {
        let m = example_problem(scenario);
        let opts = SolverOptions::default();
        group.bench_function(BenchmarkId::new("dpbm", name), |b| {
            b.iter(|| solver::solve(&m.sigma, &m.xi, &m.theta, m.grid, &opts).or_else(plfilter_core::Error::into_best_fit).unwrap())
        });
        group.bench_function(BenchmarkId::new("dppm", name), |b| {
            b.iter(|| solver::solve_power_only(&m.sigma, &m.theta, m.grid, &opts).or_else(plfilter_core::Error::into_best_fit).unwrap())
        });
    }
    group.finish();
}

fn step(c: &mut Criterion) {
    let f = localization_step();
    let mut group = c.benchmark_group("filter");
    group.sample_size(10);
    group.bench_function("dpbm_step", |b| b.iter(|| filter_step(&f.state, f.y, &f.model, &f.config).unwrap()));
    group.finish();
}

fn convolution(c: &mut Criterion) {
    let eta = Density::gaussian(1.0, 0.2).unwrap();
    let mut group = c.benchmark_group("convolve");
    for n in [501, 2001] {
        let grid = GridSpec::new(-15.0, 15.0, n).unwrap();
        let post = skewed_density(grid);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| convolve_on_grid(&post, |x| eta.eval(x).unwrap_or(0.0), grid))
        });
    }
    group.finish();
}

criterion_group!(benches, solve, step, convolution);
criterion_main!(benches);
