use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fbx_core::fixtures::fixture;
use fbx_core::monotonicity::{radial_profile, radius_schedule, RADIUS_RATIO};
use fbx_core::rayleigh::{rayleigh_min, Boundary};
use fbx_core::solver::{solve_active_set, solve_psor, ActiveSetOptions, ObstacleProblem, PsorOptions};
use fbx_core::grid::sphere_integral;
use fbx_core::{BoxDomain, CartesianProbe, GridField, SphereSampleSet};

fn problem(h: f64) -> (ObstacleProblem, fbx_core::fixtures::Fixture) {
    let fx = fixture("poly-diag-0.3-0.7").unwrap();
    let domain = BoxDomain::cube(2, 1.0).unwrap();
    (ObstacleProblem::classical(domain, h, fx.f.clone()), fx)
}

fn solvers(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve h=1/64");
    g.sample_size(10);
    let (p, _) = problem(1.0 / 64.0);
    let omega = PsorOptions::optimal_omega(&p).unwrap();
    g.bench_function("psor", |b| {
        b.iter(|| solve_psor(black_box(&p), &PsorOptions { omega, ..Default::default() }, None).unwrap())
    });
    g.bench_function("active set", |b| {
        b.iter(|| solve_active_set(black_box(&p), &ActiveSetOptions::default(), None).unwrap())
    });
    g.finish();
}

fn diagnostics(c: &mut Criterion) {
    let (p, fx) = problem(1.0 / 128.0);
    let u = GridField::build(p.domain.clone(), p.h, |x| fx.eval(x)).unwrap();
    let samples = SphereSampleSet::default_for(2);
    c.bench_function("sphere integral r=0.3", |b| {
        b.iter(|| sphere_integral(black_box(&u), &[0.0, 0.0], 0.3, &samples).unwrap())
    });
    let a = fx.blowup.clone().unwrap();
    let pref = move |x: &[f64]| a.eval(x);
    let probe = CartesianProbe::new(&u);
    let radii = radius_schedule(0.4, RADIUS_RATIO, u.h());
    let mut g = c.benchmark_group("profile");
    g.sample_size(10);
    g.bench_function("radial profile h=1/128", |b| {
        b.iter(|| radial_profile(&probe, black_box(&u), Some(&pref), &[0.0, 0.0], &radii).unwrap())
    });
    g.finish();
}

fn eigen(c: &mut Criterion) {
    c.bench_function("rayleigh a=1 delta=0.1", |b| b.iter(|| rayleigh_min(1.0, black_box(0.1), Boundary::OneSided).unwrap()));
}

criterion_group!(benches, solvers, diagnostics, eigen);
criterion_main!(benches);
