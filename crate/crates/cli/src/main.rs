//! `splitpar` command-line driver.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors.

mod bench;
mod session;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use splitpar::graph::io::{save_binary, save_edge_list, save_features_text, save_labels};
use splitpar::graph::{generate_planted_partition, GraphFormat};
use splitpar::partition::{cut_size, partition_graph};
use splitpar::sampler::{epoch_batches, sample_minibatch};

use session::{load_graph_from, RunArgs, Session};

#[derive(Parser)]
#[command(
    name = "splitpar",
    version,
    about = "Split-parallel GNN training on simulated devices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-partition graph, its features and community labels.
    Generate(GenerateArgs),
    /// Partition a graph offline and print cut statistics.
    Partition(PartitionArgs),
    /// Dump one sampled mini-batch.
    Sample(SampleArgs),
    /// Train and write metrics.csv, model.ckpt and config.txt.
    Train(RunArgs),
    /// Sweep modes and cache fractions, one epoch summary per setting.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    communities: usize,
    #[arg(long, default_value_t = 0.02)]
    p_in: f64,
    #[arg(long, default_value_t = 0.0005)]
    p_out: f64,
    #[arg(long, default_value_t = 16)]
    feat_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `binary-csr` writes graph.splg; `edge-list` writes graph.txt and features.txt.
    #[arg(long, default_value = "binary-csr")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    input: GraphArgs,
    #[arg(long)]
    devices: usize,
    #[arg(long, default_value_t = splitpar::partition::DEFAULT_BALANCE_EPS, allow_hyphen_values = true)]
    balance_eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes partition.txt here when given.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    input: GraphArgs,
    /// Comma-separated target ids; defaults to the first shuffled batch.
    #[arg(long)]
    targets: Option<String>,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value = "5,5,5")]
    fanouts: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes sample.txt here when given.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "0,0.1,0.25")]
    cache_fractions: String,
    #[arg(long, default_value = "split,data_parallel,single")]
    modes: String,
}

/// Errors that map to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<splitpar::Error>() {
            return match e {
                splitpar::Error::Config(_) | splitpar::Error::InvalidArgument(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| usage(format!("invalid {what} entry {t:?}")))
        })
        .collect()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let format: GraphFormat = a.format.parse()?;
    let pp = generate_planted_partition(a.n, a.communities, a.p_in, a.p_out, a.feat_dim, a.seed)?;
    ensure_dir(&a.out)?;
    match format {
        GraphFormat::BinaryCsr => save_binary(&pp.graph, &a.out.join("graph.splg"))?,
        GraphFormat::EdgeList => {
            save_edge_list(&pp.graph, &a.out.join("graph.txt"))?;
            if let Some(f) = pp.graph.features() {
                save_features_text(f, &a.out.join("features.txt"))?;
            }
        }
    }
    save_labels(&pp.communities, &a.out.join("labels.txt"))?;
    println!(
        "generated n={} m={} communities={} feat_dim={} in {}",
        pp.graph.num_vertices(),
        pp.graph.num_edges(),
        pp.num_communities,
        pp.graph.feat_dim(),
        a.out.display()
    );
    Ok(())
}

fn graph_from(input: &GraphArgs) -> Result<splitpar::Graph> {
    let format = input.format.as_deref().map(str::parse).transpose()?;
    load_graph_from(&input.graph, format, input.features.as_deref())
}

fn cmd_partition(a: PartitionArgs) -> Result<()> {
    let graph = graph_from(&a.input)?;
    let pm = partition_graph(&graph, a.devices, a.balance_eps, a.seed)?;
    println!("cut {}", cut_size(&graph, &pm));
    let sizes: Vec<String> = pm.part_sizes().iter().map(usize::to_string).collect();
    println!("part_sizes {}", sizes.join(","));
    println!("max_part_fraction {:.6}", pm.max_part_fraction());
    println!("balanced {}", pm.is_balanced());
    if let Some(out) = a.out {
        ensure_dir(&out)?;
        pm.save(&out.join("partition.txt"))?;
    }
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let graph = graph_from(&a.input)?;
    let fanouts: Vec<usize> = parse_list(&a.fanouts, "fanout")?;
    let targets: Vec<usize> = match &a.targets {
        Some(t) => parse_list(t, "target")?,
        None => {
            let all: Vec<usize> = (0..graph.num_vertices()).collect();
            epoch_batches(&all, a.batch_size, a.seed)?
                .into_iter()
                .next()
                .unwrap_or_default()
        }
    };
    let sample = sample_minibatch(&graph, &targets, &fanouts, a.seed)?;
    for l in 0..=sample.num_layers() {
        let edges = if l == 0 { 0 } else { sample.edges(l).len() };
        println!(
            "layer {l}: vertices {} edges {edges}",
            sample.vertices(l).len()
        );
    }
    println!("total_edges {}", sample.total_edges());
    if let Some(out) = a.out {
        ensure_dir(&out)?;
        let f = std::fs::File::create(out.join("sample.txt"))?;
        sample.write_text(std::io::BufWriter::new(f))?;
    }
    Ok(())
}

fn cmd_train(a: RunArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let out = cfg.out.clone().ok_or_else(|| usage("train needs --out"))?;
    let session = Session::load(&cfg)?;
    ensure_dir(&out)?;
    let (record, params) = session.train(&cfg, cfg.cache_fraction, cfg.mode)?;
    splitpar::metrics::emit_csv(&record, &out.join("metrics.csv"))?;
    params.save(&out.join("model.ckpt"))?;
    std::fs::write(out.join("config.txt"), cfg.to_text())?;
    let summaries = record.epoch_summaries();
    for s in &summaries {
        println!(
            "epoch {} mode {} iterations {} loss {:.6} host_bytes {} peer_bytes {} edges {}",
            s.epoch,
            cfg.mode,
            s.iterations,
            s.mean_loss,
            s.host_bytes,
            s.peer_bytes,
            s.edges_total()
        );
    }
    if summaries.is_empty() {
        println!("no iterations run");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Partition(a) => cmd_partition(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => {
            let fractions: Vec<f64> = parse_list(&a.cache_fractions, "cache fraction")?;
            let modes: Vec<splitpar::metrics::Mode> = parse_list(&a.modes, "mode")?;
            bench::cmd_bench(a.run, &fractions, &modes)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
