use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use splinehmm::hmm::{log_likelihood, padded_bounds, smoothed_probs, viterbi, Dataset};
use splinehmm::sampler::{ChainConfig, Schedule, TuningParams};
use splinehmm::simgen::simulate_model1;

fn fitted_state(n_states: usize, n: usize) -> (splinehmm::HmmParams, Dataset) {
    let truth = simulate_model1(n, 3).unwrap();
    let values: Vec<Option<f64>> = truth.obs.iter().map(|&y| Some(y)).collect();
    let (a, b) = padded_bounds(&values, 0.05, None).unwrap();
    let data = Dataset::from_options(&values, a, b).unwrap();
    let cfg = ChainConfig {
        tuning: TuningParams::for_bounds(a, b),
        schedule: Schedule {
            burn_in: 0,
            iters: 0,
            thin: 1,
            check_every: None,
        },
        ..ChainConfig::default()
    };
    let trace = splinehmm::sampler::run_chain(&data, n_states, &cfg, 1).unwrap();
    (trace.draws[0].params.clone(), data)
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("log_likelihood");
    for n_states in [2, 3, 5] {
        let (params, data) = fitted_state(n_states, 800);
        group.bench_with_input(BenchmarkId::from_parameter(n_states), &n_states, |b, _| {
            b.iter(|| log_likelihood(black_box(&params), black_box(&data)).unwrap())
        });
    }
    group.finish();
}

fn decoding(c: &mut Criterion) {
    let (params, data) = fitted_state(2, 800);
    c.bench_function("viterbi/2", |b| b.iter(|| viterbi(black_box(&params), black_box(&data)).unwrap()));
    c.bench_function("smoothed/2", |b| {
        b.iter(|| smoothed_probs(black_box(&params), black_box(&data)).unwrap())
    });
}

criterion_group!(benches, forward, decoding);
criterion_main!(benches);
