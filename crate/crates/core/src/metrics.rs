//! Per-iteration counters, redundancy accounting and the metrics CSV.
//!
//! CSV columns, in order:
//!
//! ```text
//! iter,mode,host_bytes,peer_bytes,edges_total,edges_dev0..edges_dev{g-1},
//! redundant_edges,skew,local_frac,sample_ms,split_ms,train_ms,loss
//! ```
//!
//! Iteration rows carry `epoch:iter` in the first column; each epoch ends with
//! a summary row labelled `epoch:total` holding sums of the counters and
//! timings and the means of `skew`, `local_frac` and `loss`.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sampler::MiniBatchSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Split,
    DataParallel,
    Single,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Split => "split",
            Self::DataParallel => "data_parallel",
            Self::Single => "single",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" => Ok(Self::Split),
            "data_parallel" | "dp" => Ok(Self::DataParallel),
            "single" => Ok(Self::Single),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferKind {
    Host,
    Peer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub epoch: usize,
    pub iter: usize,
    pub mode: Mode,
    pub host_bytes: u64,
    pub peer_bytes: u64,
    pub edges_per_device: Vec<usize>,
    pub redundant_edges: usize,
    pub skew: f64,
    pub local_frac: f64,
    pub sample_ms: f64,
    pub split_ms: f64,
    pub train_ms: f64,
    /// Mean cross-entropy over the iteration's targets.
    pub loss: f64,
}

impl IterationMetrics {
    pub fn new(epoch: usize, iter: usize, mode: Mode, num_devices: usize) -> Self {
        Self {
            epoch,
            iter,
            mode,
            host_bytes: 0,
            peer_bytes: 0,
            edges_per_device: vec![0; num_devices],
            redundant_edges: 0,
            skew: 0.0,
            local_frac: 1.0,
            sample_ms: 0.0,
            split_ms: 0.0,
            train_ms: 0.0,
            loss: 0.0,
        }
    }

    pub fn edges_total(&self) -> usize {
        self.edges_per_device.iter().sum()
    }
}

pub fn account_transfer(record: &mut IterationMetrics, kind: TransferKind, bytes: u64) {
    match kind {
        TransferKind::Host => record.host_bytes += bytes,
        TransferKind::Peer => record.peer_bytes += bytes,
    }
}

/// All iterations of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub mode: Mode,
    pub num_devices: usize,
    pub iterations: Vec<IterationMetrics>,
}

/// Per-epoch totals.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub iterations: usize,
    pub host_bytes: u64,
    pub peer_bytes: u64,
    pub edges_per_device: Vec<usize>,
    pub redundant_edges: usize,
    pub mean_skew: f64,
    pub mean_local_frac: f64,
    pub sample_ms: f64,
    pub split_ms: f64,
    pub train_ms: f64,
    pub mean_loss: f64,
}

impl EpochSummary {
    pub fn edges_total(&self) -> usize {
        self.edges_per_device.iter().sum()
    }
}

impl MetricsRecord {
    pub fn new(mode: Mode, num_devices: usize) -> Self {
        Self {
            mode,
            num_devices,
            iterations: Vec::new(),
        }
    }

    pub fn push(&mut self, it: IterationMetrics) {
        self.iterations.push(it);
    }

    pub fn epoch_summaries(&self) -> Vec<EpochSummary> {
        let mut out: Vec<EpochSummary> = Vec::new();
        for it in &self.iterations {
            if out.last().is_none_or(|s| s.epoch != it.epoch) {
                out.push(EpochSummary {
                    epoch: it.epoch,
                    iterations: 0,
                    host_bytes: 0,
                    peer_bytes: 0,
                    edges_per_device: vec![0; self.num_devices],
                    redundant_edges: 0,
                    mean_skew: 0.0,
                    mean_local_frac: 0.0,
                    sample_ms: 0.0,
                    split_ms: 0.0,
                    train_ms: 0.0,
                    mean_loss: 0.0,
                });
            }
            let s = out.last_mut().expect("just pushed");
            s.iterations += 1;
            s.host_bytes += it.host_bytes;
            s.peer_bytes += it.peer_bytes;
            for (a, b) in s.edges_per_device.iter_mut().zip(&it.edges_per_device) {
                *a += b;
            }
            s.redundant_edges += it.redundant_edges;
            s.mean_skew += it.skew;
            s.mean_local_frac += it.local_frac;
            s.sample_ms += it.sample_ms;
            s.split_ms += it.split_ms;
            s.train_ms += it.train_ms;
            s.mean_loss += it.loss;
        }
        for s in &mut out {
            let n = s.iterations as f64;
            s.mean_skew /= n;
            s.mean_local_frac /= n;
            s.mean_loss /= n;
        }
        out
    }
}

pub fn csv_header(num_devices: usize) -> Vec<String> {
    let mut h: Vec<String> = ["iter", "mode", "host_bytes", "peer_bytes", "edges_total"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..num_devices).map(|d| format!("edges_dev{d}")));
    h.extend(
        [
            "redundant_edges",
            "skew",
            "local_frac",
            "sample_ms",
            "split_ms",
            "train_ms",
            "loss",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

/// Names of the wall-clock columns.
pub const TIMING_COLUMNS: [&str; 3] = ["sample_ms", "split_ms", "train_ms"];

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub label: String,
    pub mode: Mode,
    pub host_bytes: u64,
    pub peer_bytes: u64,
    pub edges_total: usize,
    pub edges_per_device: Vec<usize>,
    pub redundant_edges: usize,
    pub skew: f64,
    pub local_frac: f64,
    pub sample_ms: f64,
    pub split_ms: f64,
    pub train_ms: f64,
    pub loss: f64,
}

impl CsvRow {
    pub fn is_summary(&self) -> bool {
        self.label.ends_with(":total")
    }

    fn fields(&self) -> Vec<String> {
        let mut f = vec![
            self.label.clone(),
            self.mode.name().to_string(),
            self.host_bytes.to_string(),
            self.peer_bytes.to_string(),
            self.edges_total.to_string(),
        ];
        f.extend(self.edges_per_device.iter().map(usize::to_string));
        f.extend([
            self.redundant_edges.to_string(),
            self.skew.to_string(),
            self.local_frac.to_string(),
            self.sample_ms.to_string(),
            self.split_ms.to_string(),
            self.train_ms.to_string(),
            self.loss.to_string(),
        ]);
        f
    }
}

impl From<&IterationMetrics> for CsvRow {
    fn from(it: &IterationMetrics) -> Self {
        Self {
            label: format!("{}:{}", it.epoch, it.iter),
            mode: it.mode,
            host_bytes: it.host_bytes,
            peer_bytes: it.peer_bytes,
            edges_total: it.edges_total(),
            edges_per_device: it.edges_per_device.clone(),
            redundant_edges: it.redundant_edges,
            skew: it.skew,
            local_frac: it.local_frac,
            sample_ms: it.sample_ms,
            split_ms: it.split_ms,
            train_ms: it.train_ms,
            loss: it.loss,
        }
    }
}

fn summary_row(mode: Mode, s: &EpochSummary) -> CsvRow {
    CsvRow {
        label: format!("{}:total", s.epoch),
        mode,
        host_bytes: s.host_bytes,
        peer_bytes: s.peer_bytes,
        edges_total: s.edges_total(),
        edges_per_device: s.edges_per_device.clone(),
        redundant_edges: s.redundant_edges,
        skew: s.mean_skew,
        local_frac: s.mean_local_frac,
        sample_ms: s.sample_ms,
        split_ms: s.split_ms,
        train_ms: s.train_ms,
        loss: s.mean_loss,
    }
}

/// All rows of `record` in emission order.
pub fn csv_rows(record: &MetricsRecord) -> Vec<CsvRow> {
    let summaries = record.epoch_summaries();
    let mut rows = Vec::new();
    let mut next = summaries.iter().peekable();
    for (i, it) in record.iterations.iter().enumerate() {
        rows.push(CsvRow::from(it));
        let last_of_epoch = record
            .iterations
            .get(i + 1)
            .is_none_or(|n| n.epoch != it.epoch);
        if last_of_epoch {
            if let Some(s) = next.next() {
                rows.push(summary_row(record.mode, s));
            }
        }
    }
    rows
}

pub fn write_csv(record: &MetricsRecord, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(csv_header(record.num_devices))?;
    for row in csv_rows(record) {
        out.write_record(row.fields())?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_csv(record: &MetricsRecord, path: &Path) -> Result<()> {
    write_csv(record, File::create(path)?)
}

pub fn parse_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let n = header.len();
    if n < 12
        || !header
            .iter()
            .eq(csv_header(n - 12).iter().map(String::as_str))
    {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "unexpected metrics header".into(),
        });
    }
    let g = n - 12;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        fn num<T: FromStr>(s: &str, col: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {col} value {s:?}"))
        }
        let get = |k: usize| rec.get(k).unwrap_or("");
        let parsed = (|| -> std::result::Result<CsvRow, String> {
            Ok(CsvRow {
                label: get(0).to_string(),
                mode: get(1).parse().map_err(|e: Error| e.to_string())?,
                host_bytes: num(get(2), "host_bytes")?,
                peer_bytes: num(get(3), "peer_bytes")?,
                edges_total: num(get(4), "edges_total")?,
                edges_per_device: (0..g)
                    .map(|d| num(get(5 + d), "edges_dev"))
                    .collect::<std::result::Result<_, _>>()?,
                redundant_edges: num(get(5 + g), "redundant_edges")?,
                skew: num(get(6 + g), "skew")?,
                local_frac: num(get(7 + g), "local_frac")?,
                sample_ms: num(get(8 + g), "sample_ms")?,
                split_ms: num(get(9 + g), "split_ms")?,
                train_ms: num(get(10 + g), "train_ms")?,
                loss: num(get(11 + g), "loss")?,
            })
        })();
        rows.push(parsed.map_err(bad)?);
    }
    Ok(rows)
}

/// Edge totals of the data-parallel baseline against the mini-batch it
/// replaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RedundancyReport {
    pub micro_total_edges: usize,
    pub mini_edges: usize,
    /// `(micro_total - mini) / mini · 100`.
    pub redundancy_pct: f64,
}

pub fn redundancy_report(micro: &[MiniBatchSample], mini: &MiniBatchSample) -> RedundancyReport {
    let micro_total_edges: usize = micro.iter().map(MiniBatchSample::total_edges).sum();
    let mini_edges = mini.total_edges();
    let redundancy_pct = if mini_edges == 0 {
        0.0
    } else {
        (micro_total_edges as f64 - mini_edges as f64) / mini_edges as f64 * 100.0
    };
    RedundancyReport {
        micro_total_edges,
        mini_edges,
        redundancy_pct,
    }
}

/// Number of distinct `(layer, src, dst)` global edges over all samples.
pub fn union_edge_count(samples: &[MiniBatchSample]) -> usize {
    let mut seen = HashSet::new();
    for s in samples {
        for l in 1..=s.num_layers() {
            for (u, v) in s.global_edges(l) {
                seen.insert((l, u, v));
            }
        }
    }
    seen.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn it(epoch: usize, iter: usize) -> IterationMetrics {
        let mut m = IterationMetrics::new(epoch, iter, Mode::Split, 2);
        m.host_bytes = 10 * iter as u64;
        m.peer_bytes = 3;
        m.edges_per_device = vec![iter, 2];
        m.skew = 0.1 * iter as f64;
        m.local_frac = 2.0 / 3.0;
        m.sample_ms = 1.25;
        m.loss = 1.0 / 3.0 + iter as f64;
        m
    }

    #[test]
    fn transfer_accounting() {
        let mut m = IterationMetrics::new(0, 0, Mode::Split, 1);
        account_transfer(&mut m, TransferKind::Host, 16);
        account_transfer(&mut m, TransferKind::Host, 16);
        assert_eq!(m.host_bytes, 32);
        account_transfer(&mut m, TransferKind::Peer, 8);
        assert_eq!((m.host_bytes, m.peer_bytes), (32, 8));
    }

    #[test]
    fn header_only_when_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        emit_csv(&MetricsRecord::new(Mode::Single, 1), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text
            .starts_with("iter,mode,host_bytes,peer_bytes,edges_total,edges_dev0,redundant_edges"));
        assert!(parse_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rec = MetricsRecord::new(Mode::Split, 2);
        for (e, i) in [(0, 0), (0, 1), (1, 0)] {
            rec.push(it(e, i));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        emit_csv(&rec, &path).unwrap();
        let rows = parse_csv(&path).unwrap();
        assert_eq!(rows, csv_rows(&rec));
        assert_eq!(rows.len(), 5);
        assert!(rows[2].is_summary());
        assert_eq!(rows[2].host_bytes, 10);
        assert_eq!(rows[2].edges_per_device, vec![1, 4]);
        assert_eq!(rows[2].loss, (1.0 / 3.0 + 1.0 / 3.0 + 1.0) / 2.0);
    }
}
