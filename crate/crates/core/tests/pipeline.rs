mod common;

use common::*;
use splitpar::engine::{ModelConfig, ModelKind, ModelParams, TrainConfig, Trainer};
use splitpar::metrics::{csv_rows, CsvRow, MetricsRecord, Mode};
use splitpar::partition::build_cache;
use splitpar::CacheState;

fn config(kind: ModelKind, mode: Mode, workers: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            hidden: 6,
            ..ModelConfig::new(kind, 5, 2, 4)
        },
        fanouts: vec![4, 3],
        batch_size: 32,
        lr: 0.2,
        seed: 11,
        mode,
        workers,
    }
}

fn train(
    s: &Setup,
    cache: &CacheState,
    cfg: TrainConfig,
    epochs: usize,
) -> (MetricsRecord, Vec<ModelParams>) {
    let n = s.planted.graph.num_vertices();
    let train: Vec<usize> = (0..n).collect();
    let init = ModelParams::init(&cfg.model, 3).unwrap();
    let mut t = Trainer::new(
        &s.planted.graph,
        &s.planted.communities,
        &train,
        &s.pm,
        cache,
        cfg,
        init,
    )
    .unwrap();
    let record = t.run(epochs).unwrap();
    (record, t.replicas().to_vec())
}

fn untimed(rows: Vec<CsvRow>) -> Vec<CsvRow> {
    rows.into_iter()
        .map(|r| CsvRow {
            sample_ms: 0.0,
            split_ms: 0.0,
            train_ms: 0.0,
            ..r
        })
        .collect()
}

#[test]
fn full_cache_needs_no_host_transfer() {
    let s = setup(160, 4, 5, 1);
    let full = build_cache(&s.planted.graph, &s.pm, 1.0).unwrap();
    for mode in [Mode::Split, Mode::Single] {
        let (rec, _) = train(&s, &full, config(ModelKind::GraphSage, mode, 1), 1);
        assert!(rec.iterations.iter().all(|m| m.host_bytes == 0), "{mode}");
    }
    // caches are partition-local, so micro-batches still fetch foreign inputs
    let (dp, _) = train(
        &s,
        &full,
        config(ModelKind::GraphSage, Mode::DataParallel, 1),
        1,
    );
    assert!(dp.iterations.iter().all(|m| m.host_bytes > 0));
    let small = build_cache(&s.planted.graph, &s.pm, 0.1).unwrap();
    let (rec, _) = train(&s, &small, config(ModelKind::GraphSage, Mode::Split, 1), 1);
    assert!(rec.iterations.iter().any(|m| m.host_bytes > 0));
}

#[test]
fn records_are_deterministic_across_schedules() {
    let s = setup(160, 4, 5, 2);
    for kind in [ModelKind::GraphSage, ModelKind::Gat] {
        for mode in [Mode::Split, Mode::DataParallel, Mode::Single] {
            let (a, pa) = train(&s, &s.cache, config(kind, mode, 1), 2);
            let (b, pb) = train(&s, &s.cache, config(kind, mode, 4), 2);
            assert_eq!(untimed(csv_rows(&a)), untimed(csv_rows(&b)), "{mode}");
            assert_eq!(pa, pb);
        }
    }
}

#[test]
fn split_matches_single_device_training() {
    let s = setup(160, 4, 5, 3);
    for kind in [ModelKind::GraphSage, ModelKind::Gat] {
        let (split, ps) = train(&s, &s.cache, config(kind, Mode::Split, 1), 2);
        let (single, p1) = train(&s, &s.cache, config(kind, Mode::Single, 1), 2);
        assert_eq!(split.iterations.len(), single.iterations.len());
        for (a, b) in split.iterations.iter().zip(&single.iterations) {
            assert!(
                (a.loss - b.loss).abs() <= 1e-8 * b.loss.abs().max(1.0),
                "{} vs {}",
                a.loss,
                b.loss
            );
            assert_eq!(a.edges_total(), b.edges_total());
        }
        assert!(ps[0].max_relative_diff(&p1[0]).unwrap() <= 1e-8);
        // replicas stay in lockstep
        assert!(ps.iter().all(|p| *p == ps[0]));
    }
}

#[test]
fn data_parallel_samples_at_least_as_many_edges() {
    let s = setup(200, 4, 5, 4);
    let (split, _) = train(
        &s,
        &s.cache,
        config(ModelKind::GraphSage, Mode::Split, 1),
        1,
    );
    let (dp, reps) = train(
        &s,
        &s.cache,
        config(ModelKind::GraphSage, Mode::DataParallel, 1),
        1,
    );
    for (a, b) in split.iterations.iter().zip(&dp.iterations) {
        assert_eq!(a.redundant_edges, 0);
        assert_eq!(b.edges_total() - b.redundant_edges, a.edges_total());
    }
    assert!(
        dp.iterations
            .iter()
            .map(|m| m.redundant_edges)
            .sum::<usize>()
            > 0
    );
    assert!(reps.iter().all(|p| *p == reps[0]));
}

#[test]
fn losses_fall_on_planted_communities() {
    let s = setup(200, 2, 5, 5);
    let (rec, _) = train(
        &s,
        &s.cache,
        config(ModelKind::GraphSage, Mode::Split, 1),
        8,
    );
    let sums = rec.epoch_summaries();
    assert!(sums.last().unwrap().mean_loss < sums[0].mean_loss);
}
