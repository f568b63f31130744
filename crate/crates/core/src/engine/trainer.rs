//! Epoch driver for the three execution modes.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ids::{DeviceId, VertexId};
use crate::metrics::{
    account_transfer, union_edge_count, IterationMetrics, MetricsRecord, Mode, TransferKind,
};
use crate::partition::{CacheState, PartitionMap};
use crate::sampler::{
    derive_seed, epoch_batches, sample_microbatches, sample_minibatch, MiniBatchSample,
};
use crate::scheduler::{edge_skew, split_minibatch, transfer_manifest};
use crate::tensor::Matrix;

use super::cluster::Executor;
use super::cooperative::Cooperative;
use super::model::{ModelConfig, ModelParams};
use super::reference::reference_loss_and_grad;

const BATCH_TAG: u64 = 0xBA7C;
const SAMPLE_TAG: u64 = 0x5A3B;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// `fanouts[l - 1]` bounds sampled in-neighbors per vertex at layer `l`.
    pub fanouts: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub mode: Mode,
    pub workers: usize,
}

/// Sums per-device gradients in device order, divides by the mini-batch
/// target count and applies one SGD step to every replica. Returns the
/// applied gradient.
pub fn allreduce_and_step(
    replicas: &mut [ModelParams],
    grads: &[ModelParams],
    num_targets: usize,
    lr: f64,
) -> Result<ModelParams> {
    let Some(first) = grads.first() else {
        return Err(Error::InvalidArgument("no gradients to reduce".into()));
    };
    if num_targets == 0 {
        return Err(Error::InvalidArgument("mini-batch has no targets".into()));
    }
    let mut total = first.clone();
    for g in &grads[1..] {
        total.add_assign(g)?;
    }
    total.scale(1.0 / num_targets as f64);
    for r in replicas.iter_mut() {
        r.sgd_step(&total, lr)?;
    }
    Ok(total)
}

/// One finished iteration.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub metrics: IterationMetrics,
    /// Mini-batch gradient that was applied (divided by the target count).
    pub grad: ModelParams,
}

pub struct Trainer<'a> {
    graph: &'a Graph,
    labels: &'a [usize],
    train: &'a [VertexId],
    pm: &'a PartitionMap,
    cache: &'a CacheState,
    cfg: TrainConfig,
    exec: Executor,
    replicas: Vec<ModelParams>,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl<'a> Trainer<'a> {
    pub fn new(
        graph: &'a Graph,
        labels: &'a [usize],
        train: &'a [VertexId],
        pm: &'a PartitionMap,
        cache: &'a CacheState,
        cfg: TrainConfig,
        init: ModelParams,
    ) -> Result<Self> {
        let n = graph.num_vertices();
        let Some(features) = graph.features() else {
            return Err(Error::Config("training needs vertex features".into()));
        };
        if labels.len() != n {
            return Err(Error::Config(format!(
                "{} labels for {n} vertices",
                labels.len()
            )));
        }
        if pm.num_vertices() != n || cache.num_devices() != pm.num_devices() {
            return Err(Error::Config(
                "partition map or cache does not match the graph".into(),
            ));
        }
        cache.validate(pm)?;
        if let Some(&v) = train.iter().find(|&&v| v >= n) {
            return Err(Error::VertexOutOfRange { id: v, n });
        }
        if cfg.fanouts.len() != init.num_layers() {
            return Err(Error::Config(format!(
                "{} fanouts for a {}-layer model",
                cfg.fanouts.len(),
                init.num_layers()
            )));
        }
        if features.cols() != init.input_dim() {
            return Err(Error::Config(format!(
                "features have {} columns, model expects {}",
                features.cols(),
                init.input_dim()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= init.num_classes()) {
            return Err(Error::Config(format!(
                "label {y} >= {} classes",
                init.num_classes()
            )));
        }
        if cfg.batch_size == 0 || !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
            return Err(Error::Config(
                "batch_size must be >= 1 and lr finite and >= 0".into(),
            ));
        }
        let copies = match cfg.mode {
            Mode::Single => 1,
            _ => pm.num_devices(),
        };
        Ok(Self {
            graph,
            labels,
            train,
            pm,
            cache,
            exec: Executor::new(cfg.workers)?,
            replicas: vec![init; copies],
            cfg,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.replicas[0]
    }

    pub fn replicas(&self) -> &[ModelParams] {
        &self.replicas
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn features(&self) -> &'a Matrix {
        self.graph.features().expect("checked in new")
    }

    /// Target lists of epoch `epoch`, identical in every mode.
    pub fn epoch_plan(&self, epoch: usize) -> Result<Vec<Vec<VertexId>>> {
        if self.train.is_empty() {
            return Ok(Vec::new());
        }
        epoch_batches(
            self.train,
            self.cfg.batch_size,
            derive_seed(self.cfg.seed, &[epoch as u64, BATCH_TAG]),
        )
    }

    pub fn sample_seed(&self, epoch: usize, iter: usize) -> u64 {
        derive_seed(self.cfg.seed, &[epoch as u64, iter as u64, SAMPLE_TAG])
    }

    pub fn run_epoch(&mut self, epoch: usize, record: &mut MetricsRecord) -> Result<()> {
        for (i, targets) in self.epoch_plan(epoch)?.into_iter().enumerate() {
            let out = self.step(epoch, i, &targets)?;
            record.push(out.metrics);
        }
        Ok(())
    }

    pub fn run(&mut self, epochs: usize) -> Result<MetricsRecord> {
        let mut record = MetricsRecord::new(self.cfg.mode, self.pm.num_devices());
        for e in 0..epochs {
            self.run_epoch(e, &mut record)?;
        }
        Ok(record)
    }

    /// Samples, executes and applies one iteration.
    pub fn step(
        &mut self,
        epoch: usize,
        iter: usize,
        targets: &[VertexId],
    ) -> Result<IterationOutcome> {
        let seed = self.sample_seed(epoch, iter);
        match self.cfg.mode {
            Mode::Split => self.step_split(epoch, iter, targets, seed),
            Mode::DataParallel => self.step_data_parallel(epoch, iter, targets, seed),
            Mode::Single => self.step_single(epoch, iter, targets, seed),
        }
    }

    fn step_split(
        &mut self,
        epoch: usize,
        iter: usize,
        targets: &[VertexId],
        seed: u64,
    ) -> Result<IterationOutcome> {
        let g = self.pm.num_devices();
        let mut m = IterationMetrics::new(epoch, iter, Mode::Split, g);
        let t = Instant::now();
        let sample = sample_minibatch(self.graph, targets, &self.cfg.fanouts, seed)?;
        m.sample_ms = elapsed_ms(t);

        let t = Instant::now();
        let (splits, plan) = split_minibatch(&sample, self.pm, self.cache)?;
        m.split_ms = elapsed_ms(t);

        let feats = self.features();
        let manifest = transfer_manifest(&splits, self.cache, feats.cols())?;
        account_transfer(&mut m, TransferKind::Host, manifest.total_host_bytes());
        let mut cross = 0usize;
        let mut non_self = 0usize;
        for (d, sp) in splits.iter().enumerate() {
            m.edges_per_device[d] = sp.edges_processed();
            for (l, ls) in sp.layers.iter().enumerate().skip(1) {
                let edges = sample.edges(l);
                for e in &ls.edges {
                    let (s, dst) = edges[e.sample_edge];
                    if s != dst {
                        non_self += 1;
                        if ls.is_reference_slot(e.dst) {
                            cross += 1;
                        }
                    }
                }
            }
        }
        m.skew = edge_skew(&m.edges_per_device);
        m.local_frac = if non_self == 0 {
            1.0
        } else {
            (non_self - cross) as f64 / non_self as f64
        };

        let t = Instant::now();
        let inputs: Vec<Matrix> = splits
            .iter()
            .map(|sp| feats.select_rows(&sp.layer(0).owned_ids))
            .collect();
        let top = sample.num_layers();
        let labels: Vec<Vec<usize>> = splits
            .iter()
            .map(|sp| {
                sp.layer(top)
                    .owned_ids
                    .iter()
                    .map(|&v| self.labels[v])
                    .collect()
            })
            .collect();
        let mut coop = Cooperative::new(&self.exec, &splits, &plan, &self.replicas, inputs)?;
        coop.forward()?;
        let loss = coop.loss_and_backward(labels)?;
        let (fabric, grads) = coop.finish();
        let grad = allreduce_and_step(&mut self.replicas, &grads, targets.len(), self.cfg.lr)?;
        m.train_ms = elapsed_ms(t);
        account_transfer(&mut m, TransferKind::Peer, fabric.total_bytes());
        m.loss = loss / targets.len() as f64;
        Ok(IterationOutcome { metrics: m, grad })
    }

    fn step_data_parallel(
        &mut self,
        epoch: usize,
        iter: usize,
        targets: &[VertexId],
        seed: u64,
    ) -> Result<IterationOutcome> {
        let g = self.pm.num_devices();
        let mut m = IterationMetrics::new(epoch, iter, Mode::DataParallel, g);
        let t = Instant::now();
        let micro = sample_microbatches(self.graph, targets, g, &self.cfg.fanouts, seed)?;
        m.sample_ms = elapsed_ms(t);

        let feats = self.features();
        for (d, s) in micro.iter().enumerate() {
            m.edges_per_device[d] = s.total_edges();
            let dev = DeviceId::new(d, g)?;
            let loads = s
                .vertices(0)
                .iter()
                .filter(|&&v| !self.cache.is_cached_on(dev, v))
                .count();
            account_transfer(
                &mut m,
                TransferKind::Host,
                (loads * feats.cols() * 8) as u64,
            );
        }
        m.redundant_edges = m.edges_total() - union_edge_count(&micro);
        m.skew = edge_skew(&m.edges_per_device);

        let t = Instant::now();
        let labels = self.labels;
        let results = self
            .exec
            .phase(&mut self.replicas, micro, |params, s: MiniBatchSample| {
                if s.targets().is_empty() {
                    return Ok((0.0, params.zeros_like()));
                }
                let x0 = feats.select_rows(s.vertices(0));
                let y: Vec<usize> = s.targets().iter().map(|&v| labels[v]).collect();
                let ev = reference_loss_and_grad(params, &s, &x0, &y)?;
                Ok((ev.loss_sum, ev.grads))
            });
        let results: Vec<(f64, ModelParams)> = results.into_iter().collect::<Result<_>>()?;
        let loss: f64 = results.iter().map(|r| r.0).sum();
        let grads: Vec<ModelParams> = results.into_iter().map(|r| r.1).collect();
        let grad = allreduce_and_step(&mut self.replicas, &grads, targets.len(), self.cfg.lr)?;
        m.train_ms = elapsed_ms(t);
        m.loss = loss / targets.len() as f64;
        Ok(IterationOutcome { metrics: m, grad })
    }

    fn step_single(
        &mut self,
        epoch: usize,
        iter: usize,
        targets: &[VertexId],
        seed: u64,
    ) -> Result<IterationOutcome> {
        let mut m = IterationMetrics::new(epoch, iter, Mode::Single, self.pm.num_devices());
        let t = Instant::now();
        let sample = sample_minibatch(self.graph, targets, &self.cfg.fanouts, seed)?;
        m.sample_ms = elapsed_ms(t);
        m.edges_per_device[0] = sample.total_edges();

        let feats = self.features();
        let loads = sample
            .vertices(0)
            .iter()
            .filter(|&&v| self.cache.holder(v).is_none())
            .count();
        account_transfer(
            &mut m,
            TransferKind::Host,
            (loads * feats.cols() * 8) as u64,
        );

        let t = Instant::now();
        let x0 = feats.select_rows(sample.vertices(0));
        let y: Vec<usize> = sample.targets().iter().map(|&v| self.labels[v]).collect();
        let ev = reference_loss_and_grad(&self.replicas[0], &sample, &x0, &y)?;
        let grad = allreduce_and_step(&mut self.replicas, &[ev.grads], targets.len(), self.cfg.lr)?;
        m.train_ms = elapsed_ms(t);
        m.loss = ev.loss_sum / targets.len() as f64;
        Ok(IterationOutcome { metrics: m, grad })
    }
}
