use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mhtrack::{fit_template, solve_linear, suite, FitOptions, TemplateParams, WeightWindow};

fn fitting(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit");
    for r in [1.0, 2.0, 4.0, 8.0] {
        let p = suite::straight_tube(r, suite::DEFAULT_NOISE, 1).prepare().unwrap();
        let b = &p.truth.branches[0];
        let mid = b.points.len() / 2;
        let dir = (b.points[mid + 1] - b.points[mid - 1]).normalize();
        let truth = TemplateParams::new(b.points[mid], dir, r).unwrap();
        let start = TemplateParams::new(b.points[mid] + dir.cross(&mhtrack::Point3::x()).normalize() * 0.3 * r, dir, 1.2 * r).unwrap();
        let win = WeightWindow::new(1.0, 1.1).unwrap();
        let opts = FitOptions::default();
        g.bench_with_input(BenchmarkId::new("linear", r), &truth, |bench, t| bench.iter(|| solve_linear(&p.volume, t, &win, &opts).unwrap()));
        g.bench_with_input(BenchmarkId::new("full", r), &start, |bench, t| bench.iter(|| fit_template(&p.volume, t, &win, &opts).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, fitting);
criterion_main!(benches);
