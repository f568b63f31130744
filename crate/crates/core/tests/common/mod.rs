#![allow(dead_code)]

use splitpar::engine::{Cooperative, Executor, ModelConfig, ModelKind, ModelParams};
use splitpar::graph::{generate_planted_partition, PlantedPartition};
use splitpar::partition::{build_cache, partition_graph};
use splitpar::sampler::sample_minibatch;
use splitpar::scheduler::{split_minibatch, LocalSplit, ShufflePlan};
use splitpar::{CacheState, Graph, Matrix, MiniBatchSample, PartitionMap};

pub struct Setup {
    pub planted: PlantedPartition,
    pub pm: PartitionMap,
    pub cache: CacheState,
}

pub fn setup(n: usize, g: usize, feat_dim: usize, seed: u64) -> Setup {
    let planted = generate_planted_partition(n, 4, 0.15, 0.01, feat_dim, seed).unwrap();
    let pm = partition_graph(&planted.graph, g, 0.05, seed).unwrap();
    let cache = build_cache(&planted.graph, &pm, 0.25).unwrap();
    Setup { planted, pm, cache }
}

pub fn model(kind: ModelKind, in_dim: usize, layers: usize, seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        hidden: 6,
        ..ModelConfig::new(kind, in_dim, layers, 4)
    };
    ModelParams::init(&cfg, seed).unwrap()
}

pub fn inputs(graph: &Graph, splits: &[LocalSplit]) -> Vec<Matrix> {
    let f = graph.features().unwrap();
    splits
        .iter()
        .map(|sp| f.select_rows(&sp.layer(0).owned_ids))
        .collect()
}

pub fn target_labels(labels: &[usize], splits: &[LocalSplit]) -> Vec<Vec<usize>> {
    let top = splits[0].num_layers();
    splits
        .iter()
        .map(|sp| sp.layer(top).owned_ids.iter().map(|&v| labels[v]).collect())
        .collect()
}

pub fn sample_and_split(
    s: &Setup,
    targets: &[usize],
    fanouts: &[usize],
    seed: u64,
) -> (MiniBatchSample, Vec<LocalSplit>, ShufflePlan) {
    let sample = sample_minibatch(&s.planted.graph, targets, fanouts, seed).unwrap();
    let (splits, plan) = split_minibatch(&sample, &s.pm, &s.cache).unwrap();
    (sample, splits, plan)
}

/// Runs the cooperative pass and returns (loss, summed gradient, per-device gradients).
pub fn cooperative_grads(
    exec: &Executor,
    params: &ModelParams,
    graph: &Graph,
    labels: &[usize],
    splits: &[LocalSplit],
    plan: &ShufflePlan,
) -> (f64, ModelParams, Vec<ModelParams>) {
    let replicas = vec![params.clone(); splits.len()];
    let mut coop = Cooperative::new(exec, splits, plan, &replicas, inputs(graph, splits)).unwrap();
    coop.forward().unwrap();
    let loss = coop
        .loss_and_backward(target_labels(labels, splits))
        .unwrap();
    let grads = coop.into_grads();
    let mut total = grads[0].clone();
    for g in &grads[1..] {
        total.add_assign(g).unwrap();
    }
    (loss, total, grads)
}

/// Directed Erdős–Rényi graph with uniform features and random labels.
pub fn random_graph(
    n: usize,
    p: f64,
    feat_dim: usize,
    classes: usize,
    seed: u64,
) -> (Graph, Vec<usize>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let feats: Vec<f64> = (0..n * feat_dim)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let graph = Graph::from_edges(n, &edges)
        .unwrap()
        .with_features(Matrix::from_vec(n, feat_dim, feats).unwrap())
        .unwrap();
    (graph, labels)
}

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;
/// Keeps exact-zero gradients from dividing by zero.
pub const FD_FLOOR: f64 = 1e-8;

pub struct FdReport {
    pub worst: f64,
    pub checked: usize,
    pub failures: Vec<String>,
}

fn fd_loss(
    params: &ModelParams,
    graph: &Graph,
    labels: &[usize],
    sample: &MiniBatchSample,
    split: Option<(&PartitionMap, &CacheState)>,
) -> (f64, ModelParams) {
    match split {
        None => {
            let x0 = graph.features().unwrap().select_rows(sample.vertices(0));
            let y: Vec<usize> = sample.targets().iter().map(|&v| labels[v]).collect();
            let ev = splitpar::engine::reference_loss_and_grad(params, sample, &x0, &y).unwrap();
            (ev.loss_sum, ev.grads)
        }
        Some((pm, cache)) => {
            let (splits, plan) = split_minibatch(sample, pm, cache).unwrap();
            let (l, g, _) = cooperative_grads(
                &Executor::sequential(),
                params,
                graph,
                labels,
                &splits,
                &plan,
            );
            (l, g)
        }
    }
}

/// Central differences against the analytic gradient on a 30-vertex random graph.
pub fn finite_difference(kind: ModelKind, split: bool) -> FdReport {
    let (graph, labels) = random_graph(30, 0.12, 3, 3, 17);
    let cfg = ModelConfig {
        hidden: 4,
        ..ModelConfig::new(kind, 3, 2, 3)
    };
    let params = ModelParams::init(&cfg, 23).unwrap();
    let targets: Vec<usize> = (0..30).step_by(3).collect();
    let sample = sample_minibatch(&graph, &targets, &[3, 3], 4).unwrap();
    let pm = partition_graph(&graph, 3, 0.1, 1).unwrap();
    let cache = build_cache(&graph, &pm, 0.1).unwrap();
    let path = split.then_some((&pm, &cache));
    let (_, analytic) = fd_loss(&params, &graph, &labels, &sample, path);
    let mut report = FdReport {
        worst: 0.0,
        checked: 0,
        failures: Vec::new(),
    };
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    for (ti, name) in names.iter().enumerate() {
        let len = params.tensors()[ti].1.len();
        for k in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].1[k] += FD_STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].1[k] -= FD_STEP;
            let lp = fd_loss(&plus, &graph, &labels, &sample, path).0;
            let lm = fd_loss(&minus, &graph, &labels, &sample, path).0;
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let a = analytic.tensors()[ti].1[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            if rel > FD_TOL {
                report.failures.push(format!(
                    "{name}[{k}]: analytic {a} numeric {numeric} rel {rel}"
                ));
            }
            report.worst = report.worst.max(rel);
            report.checked += 1;
        }
    }
    report
}
