mod common;

use std::collections::{HashMap, HashSet};

use proptest::prelude::*;

use common::*;
use splitpar::engine::{reference_forward, Cooperative, Executor, ModelKind};
use splitpar::metrics::{redundancy_report, union_edge_count};
use splitpar::partition::{build_cache, cut_size, partition_graph, refine_assignment};
use splitpar::sampler::{sample_microbatches, sample_minibatch};
use splitpar::scheduler::{split_minibatch, transfer_manifest, validate_split};
use splitpar::{CacheState, Graph, Matrix, PartitionMap};

fn arb_graph() -> impl Strategy<Value = (Graph, u64)> {
    (2usize..36).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((0..n, 0..n), 0..n * 4),
            prop::collection::vec(-1.0f64..1.0, n * 3),
            any::<u64>(),
        )
            .prop_map(|(n, edges, feats, seed)| {
                let g = Graph::from_edges(n, &edges)
                    .unwrap()
                    .with_features(Matrix::from_vec(n, 3, feats).unwrap())
                    .unwrap();
                (g, seed)
            })
    })
}

fn targets_of(n: usize, seed: u64) -> Vec<usize> {
    let step = 1 + (seed % 3) as usize;
    (0..n).step_by(step).collect()
}

fn random_assignment(n: usize, g: usize, seed: u64) -> PartitionMap {
    let a: Vec<usize> = (0..n)
        .map(|v| ((v as u64).wrapping_mul(0x9E37) ^ seed) as usize % g)
        .collect();
    PartitionMap::from_assignment(a, g, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn samples_are_well_formed((graph, seed) in arb_graph(), fan in 0usize..4) {
        let t = targets_of(graph.num_vertices(), seed);
        let s = sample_minibatch(&graph, &t, &[fan, fan + 1], seed).unwrap();
        s.validate().unwrap();
        prop_assert_eq!(s.targets(), &t[..]);
        for l in 1..=2 {
            // every destination keeps its self-edge and at most `fanout` others
            let mut per_dst = vec![0usize; s.vertices(l).len()];
            for &(_, d) in s.edges(l) {
                per_dst[d] += 1;
            }
            let cap = if l == 1 { fan } else { fan + 1 };
            prop_assert!(per_dst.iter().all(|&c| c >= 1 && c <= cap + 1));
        }
    }

    #[test]
    fn split_has_zero_redundancy((graph, seed) in arb_graph(), g in 1usize..5, f in 0.0f64..0.6) {
        let n = graph.num_vertices();
        let g = g.min(n);
        let t = targets_of(n, seed);
        let s = sample_minibatch(&graph, &t, &[2, 3], seed).unwrap();
        let pm = random_assignment(n, g, seed);
        let cache = build_cache(&graph, &pm, f).unwrap();
        let (splits, plan) = split_minibatch(&s, &pm, &cache).unwrap();
        validate_split(&s, &pm, &splits, &plan).unwrap();
        for l in 1..=2 {
            let per_layer: usize = splits.iter().map(|sp| sp.layer(l).edges.len()).sum();
            prop_assert_eq!(per_layer, s.edges(l).len());
        }
        // each layer-0 vertex is loaded onto at most one device, and never when cached there
        let mut loaded = HashSet::new();
        for sp in &splits {
            for &v in &sp.load_set {
                prop_assert!(loaded.insert(v));
                prop_assert!(!cache.is_cached_on(sp.device, v));
            }
        }
        let uncached: HashSet<usize> = s.vertices(0).iter().copied().filter(|&v| cache.holder(v).is_none()).collect();
        prop_assert_eq!(&loaded, &uncached);
        let manifest = transfer_manifest(&splits, &cache, 3).unwrap();
        prop_assert_eq!(manifest.total_host_bytes(), 8 * 3 * uncached.len() as u64);
    }

    #[test]
    fn cooperative_forward_matches_reference((graph, seed) in arb_graph(), g in 1usize..5, gat in any::<bool>()) {
        let n = graph.num_vertices();
        let g = g.min(n);
        let kind = if gat { ModelKind::Gat } else { ModelKind::GraphSage };
        let t = targets_of(n, seed);
        let s = sample_minibatch(&graph, &t, &[3, 2], seed).unwrap();
        let pm = random_assignment(n, g, seed >> 7);
        let cache = CacheState::empty(n, g);
        let (splits, plan) = split_minibatch(&s, &pm, &cache).unwrap();
        let params = model(kind, 3, 2, seed);
        let trace = reference_forward(&params, &s, &graph.features().unwrap().select_rows(s.vertices(0))).unwrap();
        let exec = Executor::sequential();
        let reps = vec![params.clone(); g];
        let mut coop = Cooperative::new(&exec, &splits, &plan, &reps, inputs(&graph, &splits)).unwrap();
        coop.forward().unwrap();
        for (d, sp) in splits.iter().enumerate() {
            for l in 0..=2 {
                for (r, &pos) in sp.layer(l).owned_positions.iter().enumerate() {
                    for (a, b) in coop.hidden(d, l).row(r).iter().zip(trace.hidden[l].row(pos)) {
                        prop_assert!((a - b).abs() <= 1e-10);
                    }
                }
            }
        }
        if gat {
            for l in 1..=2 {
                let mut sums = vec![0.0; s.vertices(l).len()];
                for (d, sp) in splits.iter().enumerate() {
                    let alpha = coop.attention(d, l).unwrap();
                    for (k, e) in sp.layer(l).edges.iter().enumerate() {
                        sums[s.edges(l)[e.sample_edge].1] += alpha[k];
                    }
                }
                prop_assert!(sums.iter().all(|x| (x - 1.0).abs() <= 1e-12));
            }
        }
    }

    #[test]
    fn forward_meter_counts_transported_vectors((graph, seed) in arb_graph(), g in 2usize..5, gat in any::<bool>()) {
        let n = graph.num_vertices();
        let g = g.min(n);
        let kind = if gat { ModelKind::Gat } else { ModelKind::GraphSage };
        let s = sample_minibatch(&graph, &targets_of(n, seed), &[3, 3], seed).unwrap();
        let pm = random_assignment(n, g, seed);
        let (splits, plan) = split_minibatch(&s, &pm, &CacheState::empty(n, g)).unwrap();
        let params = model(kind, 3, 2, 0);
        let exec = Executor::sequential();
        let reps = vec![params; g];
        let mut coop = Cooperative::new(&exec, &splits, &plan, &reps, inputs(&graph, &splits)).unwrap();
        coop.forward().unwrap();
        for l in 1..=2 {
            let din = if l == 1 { 3 } else { 6 };
            let vol = plan.layer(l).volume() as u64;
            let expect = if gat {
                // scatter of inputs, max and denominator round trips, numerator push
                8 * vol * (din + 4 + 6)
            } else {
                // partial sums plus a count column
                8 * vol * (din + 1)
            };
            prop_assert_eq!(coop.fabric().layer_bytes(l), expect);
        }
    }

    #[test]
    fn sage_mean_ignores_edge_order((graph, seed) in arb_graph()) {
        let n = graph.num_vertices();
        let mut edges: Vec<(usize, usize)> = graph.edges().collect();
        let shuffled = {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            edges.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            Graph::from_edges(n, &edges).unwrap().with_features(graph.features().unwrap().clone()).unwrap()
        };
        let t = targets_of(n, seed);
        // fanouts above every degree keep the full neighborhoods
        let fan = [edges.len() + 1; 2];
        let params = model(ModelKind::GraphSage, 3, 2, seed);
        let by_vertex = |gr: &Graph| -> HashMap<usize, Vec<f64>> {
            let s = sample_minibatch(gr, &t, &fan, seed).unwrap();
            let x0 = gr.features().unwrap().select_rows(s.vertices(0));
            let tr = reference_forward(&params, &s, &x0).unwrap();
            s.targets().iter().enumerate().map(|(i, &v)| (v, tr.hidden[2].row(i).to_vec())).collect()
        };
        let a = by_vertex(&graph);
        let b = by_vertex(&shuffled);
        for (v, row) in &a {
            for (x, y) in row.iter().zip(&b[v]) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn micro_batches_cover_the_mini_batch((graph, seed) in arb_graph(), g in 1usize..5) {
        let n = graph.num_vertices();
        let t = targets_of(n, seed);
        let mini = sample_minibatch(&graph, &t, &[2, 2], seed).unwrap();
        let micro = sample_microbatches(&graph, &t, g, &[2, 2], seed).unwrap();
        let rep = redundancy_report(&micro, &mini);
        prop_assert!(rep.redundancy_pct >= 0.0);
        prop_assert!(rep.micro_total_edges >= rep.mini_edges);
        prop_assert_eq!(union_edge_count(&micro), mini.total_edges());
    }

    #[test]
    fn partition_is_balanced_and_refinement_monotone((graph, seed) in arb_graph(), g in 1usize..5) {
        let n = graph.num_vertices();
        let g = g.min(n);
        let pm = partition_graph(&graph, g, 0.05, seed).unwrap();
        prop_assert!(pm.is_balanced());
        prop_assert!(pm.max_part_size() <= ((1.05 * n as f64) / g as f64).ceil() as usize);
        let mut a: Vec<usize> = (0..n).map(|v| v % g).collect();
        let trace = refine_assignment(&graph, &mut a, g, 0.05);
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        let refined = PartitionMap::from_assignment(a, g, 1.0).unwrap();
        prop_assert_eq!(*trace.last().unwrap(), cut_size(&graph, &refined));
    }
}
