//! Mode × cache-fraction sweep.

use std::fmt::Write as _;

use anyhow::Result;

use splitpar::metrics::{MetricsRecord, Mode};

use crate::session::{RunArgs, Session};
use crate::usage;

pub const BENCH_HEADER: &str =
    "mode,cache_fraction,iterations,host_bytes,peer_bytes,edges_total,redundant_edges,\
redundancy_pct,skew,local_frac,sample_ms,split_ms,split_over_sample,train_ms,loss";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub mode: Mode,
    pub cache_fraction: f64,
    pub iterations: usize,
    pub host_bytes: u64,
    pub peer_bytes: u64,
    pub edges_total: usize,
    pub redundant_edges: usize,
    pub redundancy_pct: f64,
    pub skew: f64,
    pub local_frac: f64,
    pub sample_ms: f64,
    pub split_ms: f64,
    pub train_ms: f64,
    pub loss: f64,
}

impl BenchRow {
    fn from_record(mode: Mode, cache_fraction: f64, record: &MetricsRecord) -> Self {
        let its = &record.iterations;
        let n = its.len();
        let mean = |f: &dyn Fn(&splitpar::metrics::IterationMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                its.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let edges_total: usize = its.iter().map(|i| i.edges_total()).sum();
        let redundant_edges: usize = its.iter().map(|i| i.redundant_edges).sum();
        let unique = edges_total - redundant_edges;
        Self {
            mode,
            cache_fraction,
            iterations: n,
            host_bytes: its.iter().map(|i| i.host_bytes).sum(),
            peer_bytes: its.iter().map(|i| i.peer_bytes).sum(),
            edges_total,
            redundant_edges,
            redundancy_pct: if unique == 0 {
                0.0
            } else {
                redundant_edges as f64 / unique as f64 * 100.0
            },
            skew: mean(&|i| i.skew),
            local_frac: mean(&|i| i.local_frac),
            sample_ms: its.iter().map(|i| i.sample_ms).sum(),
            split_ms: its.iter().map(|i| i.split_ms).sum(),
            train_ms: its.iter().map(|i| i.train_ms).sum(),
            loss: mean(&|i| i.loss),
        }
    }

    pub fn split_over_sample(&self) -> f64 {
        if self.sample_ms > 0.0 {
            self.split_ms / self.sample_ms
        } else {
            0.0
        }
    }

    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.mode,
            self.cache_fraction,
            self.iterations,
            self.host_bytes,
            self.peer_bytes,
            self.edges_total,
            self.redundant_edges,
            self.redundancy_pct,
            self.skew,
            self.local_frac,
            self.sample_ms,
            self.split_ms,
            self.split_over_sample(),
            self.train_ms,
            self.loss
        )
    }
}

pub fn render_table(rows: &[BenchRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>6} {:>5} {:>12} {:>12} {:>10} {:>8} {:>6} {:>6} {:>10} {:>10} {:>7} {:>10} {:>8}",
        "mode",
        "cache",
        "iters",
        "host_MB",
        "peer_MB",
        "edges",
        "redund%",
        "skew",
        "local",
        "sample_ms",
        "split_ms",
        "split/s",
        "train_ms",
        "loss"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<14} {:>6.3} {:>5} {:>12.3} {:>12.3} {:>10} {:>8.2} {:>6.3} {:>6.3} {:>10.2} {:>10.2} {:>7.3} {:>10.2} {:>8.4}",
            r.mode.name(),
            r.cache_fraction,
            r.iterations,
            r.host_bytes as f64 / 1e6,
            r.peer_bytes as f64 / 1e6,
            r.edges_total,
            r.redundancy_pct,
            r.skew,
            r.local_frac,
            r.sample_ms,
            r.split_ms,
            r.split_over_sample(),
            r.train_ms,
            r.loss
        );
    }
    s
}

pub fn cmd_bench(args: RunArgs, fractions: &[f64], modes: &[Mode]) -> Result<()> {
    let cfg = args.resolve()?;
    if fractions.is_empty() || modes.is_empty() {
        return Err(usage(
            "bench needs at least one cache fraction and one mode",
        ));
    }
    if let Some(&f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(usage(format!("cache fraction {f} outside [0, 1]")));
    }
    let session = Session::load(&cfg)?;
    let mut rows = Vec::new();
    for &mode in modes {
        for &f in fractions {
            let (record, _) = session.train(&cfg, f, mode)?;
            rows.push(BenchRow::from_record(mode, f, &record));
        }
    }
    let table = render_table(&rows);
    print!("{table}");
    if let Some(out) = &cfg.out {
        std::fs::create_dir_all(out)?;
        let mut csv = String::from(BENCH_HEADER);
        csv.push('\n');
        for r in &rows {
            csv.push_str(&r.csv());
            csv.push('\n');
        }
        std::fs::write(out.join("bench.csv"), csv)?;
        std::fs::write(out.join("bench.txt"), table)?;
    }
    Ok(())
}
