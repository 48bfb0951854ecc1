//! Seeded Monte Carlo checks of how combination shrinks spread and moves the mean.

use wpsgd::aggregation::{compute_weights, DelayProfile};
use wpsgd::cluster::{run_simuparallel, run_wpsgd, ClusterSpec, ParallelRunResult};
use wpsgd::data::{generate_analog, GenSpec};
use wpsgd::objective::LossParams;
use wpsgd::sparse::Dataset;
use wpsgd::trainer::TrainConfig;

const RUNS: u64 = 200;

fn data() -> Dataset {
    generate_analog(&GenSpec {
        n_train: 3200,
        n_test: 1,
        dim: 30,
        nnz_min: 4,
        nnz_max: 8,
        seed: 21,
        normalize: true,
    })
    .unwrap()
    .0
}

fn runs(spec: impl Fn(u64) -> ClusterSpec, go: impl Fn(&Dataset, &ClusterSpec, &TrainConfig) -> ParallelRunResult) -> Vec<ParallelRunResult> {
    let d = data();
    (0..RUNS)
        .map(|run| {
            let mut cfg = TrainConfig::new(LossParams::new(0.02, 0.1).unwrap(), 400, run);
            cfg.init_value = 0.2;
            go(&d, &spec(run), &cfg)
        })
        .collect()
}

fn column_mean(rows: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = rows.collect();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; rows[0].len()];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    mean
}

fn column_std(rows: &[Vec<f64>]) -> Vec<f64> {
    let mean = column_mean(rows.iter().cloned());
    let n = rows.len() as f64;
    (0..mean.len())
        .map(|i| (rows.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn averaging_equal_nodes_shrinks_spread_by_root_k() {
    let k = 8;
    let results = runs(|run| ClusterSpec::balanced(k, 500 + run), |d, s, c| run_simuparallel(d, s, c).unwrap());
    let single: Vec<Vec<f64>> = results.iter().map(|r| r.per_node_models[0].weights.clone()).collect();
    let combined: Vec<Vec<f64>> = results.iter().map(|r| r.final_model.weights.clone()).collect();
    let (s1, sc) = (column_std(&single), column_std(&combined));
    let limit = 1.25 / (k as f64).sqrt();
    let sampled: Vec<f64> = s1.iter().zip(&sc).filter(|(a, _)| **a > 0.0).map(|(a, c)| c / a).collect();
    let within = sampled.iter().filter(|r| **r <= limit).count();
    assert!(!sampled.is_empty());
    assert!(within as f64 >= 0.95 * sampled.len() as f64, "{within}/{} within {limit}", sampled.len());
}

#[test]
fn combined_mean_stays_within_weighted_node_distances() {
    let delays = vec![0, 0, 100, 250];
    let rate = 0.995;
    let profile = DelayProfile::new(delays.clone()).unwrap();
    let results = runs(
        |run| ClusterSpec::new(profile.clone(), 900 + run),
        |d, s, c| run_wpsgd(d, s, c, rate).unwrap(),
    );
    let weights = compute_weights(&profile, rate).unwrap();
    let fastest = column_mean(results.iter().map(|r| r.per_node_models[0].weights.clone()));
    let combined = column_mean(results.iter().map(|r| r.final_model.weights.clone()));
    let bound: f64 = (0..delays.len())
        .map(|i| {
            let node = column_mean(results.iter().map(|r| r.per_node_models[i].weights.clone()));
            weights.as_slice()[i] * dist(&node, &fastest)
        })
        .sum();
    let gap = dist(&combined, &fastest);
    assert!(gap <= bound + 1e-9, "{gap} > {bound}");
    // The slower nodes pull the mean away from the fastest node.
    assert!(gap > 0.0);
}
