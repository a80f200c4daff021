use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use latsurv::coxph::CoxObjective;
use latsurv::evaluation::concordance_index;
use latsurv::numerics::Rng;
use latsurv_bench::{cohort, network_and_batch};

fn cox_objective(c: &mut Criterion) {
    let mut group = c.benchmark_group("cox_nll");
    for (n, d) in [(2000, 10), (4000, 512)] {
        let objective = CoxObjective::new(&cohort(n, d), 1e-4).unwrap();
        let w = vec![0.01; d];
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("n{n}_d{d}")),
            &w,
            |b, w| b.iter(|| objective.evaluate(w).unwrap()),
        );
    }
    group.finish();
}

fn c_index(c: &mut Criterion) {
    let mut group = c.benchmark_group("concordance_index");
    for n in [1000, 10000] {
        let data = cohort(n, 2);
        let risks: Vec<f64> = data.records().iter().map(|r| r.features[0]).collect();
        let (times, events) = (data.times(), data.events());
        group.bench_with_input(BenchmarkId::from_parameter(n), &risks, |b, risks| {
            b.iter(|| concordance_index(&times, &events, risks).unwrap())
        });
    }
    group.finish();
}

fn mlp(c: &mut Criterion) {
    let (net, x) = network_and_batch(519, 128);
    c.bench_function("mlp_predict_batch128", |b| {
        b.iter(|| net.predict(&x).unwrap())
    });
    c.bench_function("mlp_train_step_batch128", |b| {
        let mut rng = Rng::new(3);
        let upstream = ndarray::Array2::ones((128, 1));
        b.iter(|| {
            let (_, cache) = net.forward_train(&x, &mut rng).unwrap();
            net.backward(&cache, &upstream).unwrap()
        })
    });
}

criterion_group!(benches, cox_objective, c_index, mlp);
criterion_main!(benches);
