//! Run configuration assembly and the shared load/train pipeline.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;

use splitpar::config::RunConfig;
use splitpar::engine::{ModelConfig, ModelParams, TrainConfig, Trainer};
use splitpar::graph::io::{load_binary, load_labels};
use splitpar::graph::{load_graph, GraphFormat};
use splitpar::metrics::{MetricsRecord, Mode};
use splitpar::partition::{build_cache, partition_graph};
use splitpar::sampler::training_vertices;
use splitpar::{Graph, PartitionMap, VertexId};

use crate::usage;

/// Config file plus per-key flag overrides.
#[derive(Args, Default)]
pub struct RunArgs {
    /// `key = value` file; flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub fanouts: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub cache_fraction: Option<String>,
    #[arg(long)]
    pub devices: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub workers: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub balance_eps: Option<String>,
    #[arg(long)]
    pub train_fraction: Option<String>,
    #[arg(long)]
    pub graph: Option<String>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long)]
    pub labels: Option<String>,
    #[arg(long)]
    pub partition: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> [(&'static str, &Option<String>); 20] {
        [
            ("model", &self.model),
            ("layers", &self.layers),
            ("hidden", &self.hidden),
            ("fanouts", &self.fanouts),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("cache_fraction", &self.cache_fraction),
            ("devices", &self.devices),
            ("seed", &self.seed),
            ("mode", &self.mode),
            ("workers", &self.workers),
            ("balance_eps", &self.balance_eps),
            ("train_fraction", &self.train_fraction),
            ("graph", &self.graph),
            ("format", &self.format),
            ("features", &self.features),
            ("labels", &self.labels),
            ("partition", &self.partition),
            ("out", &self.out),
        ]
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_graph_from(
    path: &Path,
    format: Option<GraphFormat>,
    features: Option<&Path>,
) -> Result<Graph> {
    let format = format.unwrap_or_else(|| GraphFormat::from_path(path));
    let graph = match (format, features) {
        (GraphFormat::BinaryCsr, None) => load_binary(path),
        _ => load_graph(path, format, features, None),
    };
    graph.with_context(|| format!("loading graph {}", path.display()))
}

pub struct Session {
    pub graph: Graph,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<VertexId>,
    pub pm: PartitionMap,
}

impl Session {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let gpath = cfg
            .graph
            .as_deref()
            .ok_or_else(|| usage("no graph given (set graph or --graph)"))?;
        let lpath = cfg
            .labels
            .as_deref()
            .ok_or_else(|| usage("no labels given (set labels or --labels)"))?;
        let graph = load_graph_from(gpath, cfg.format, cfg.features.as_deref())?;
        if graph.features().is_none() {
            return Err(usage("graph has no features; pass --features"));
        }
        let labels =
            load_labels(lpath).with_context(|| format!("loading labels {}", lpath.display()))?;
        if labels.len() != graph.num_vertices() {
            return Err(usage(format!(
                "{} labels for {} vertices",
                labels.len(),
                graph.num_vertices()
            )));
        }
        let num_classes = labels.iter().max().map_or(1, |&m| m + 1);
        let pm = match &cfg.partition {
            Some(p) => PartitionMap::load(p, Some(cfg.devices), cfg.balance_eps)
                .with_context(|| format!("loading partition {}", p.display()))?,
            None => partition_graph(&graph, cfg.devices, cfg.balance_eps, cfg.seed)?,
        };
        if pm.num_vertices() != graph.num_vertices() {
            return Err(usage("partition map does not match the graph"));
        }
        let train = training_vertices(graph.num_vertices(), cfg.train_fraction, cfg.seed)?;
        Ok(Self {
            graph,
            labels,
            num_classes,
            train,
            pm,
        })
    }

    pub fn initial_params(&self, cfg: &RunConfig) -> Result<ModelParams> {
        let model = ModelConfig {
            hidden: cfg.hidden,
            ..ModelConfig::new(
                cfg.model,
                self.graph.feat_dim(),
                cfg.layers,
                self.num_classes,
            )
        };
        Ok(ModelParams::init(&model, cfg.seed)?)
    }

    pub fn train(
        &self,
        cfg: &RunConfig,
        cache_fraction: f64,
        mode: Mode,
    ) -> Result<(MetricsRecord, ModelParams)> {
        let cache = build_cache(&self.graph, &self.pm, cache_fraction)?;
        let init = self.initial_params(cfg)?;
        let tc = TrainConfig {
            model: ModelConfig {
                hidden: cfg.hidden,
                ..ModelConfig::new(
                    cfg.model,
                    self.graph.feat_dim(),
                    cfg.layers,
                    self.num_classes,
                )
            },
            fanouts: cfg.fanouts.clone(),
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            seed: cfg.seed,
            mode,
            workers: cfg.workers,
        };
        let mut trainer = Trainer::new(
            &self.graph,
            &self.labels,
            &self.train,
            &self.pm,
            &cache,
            tc,
            init,
        )?;
        let record = trainer.run(cfg.epochs)?;
        Ok((record, trainer.params().clone()))
    }
}
