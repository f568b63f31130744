//! Offline balanced min-cut partitioning and per-device feature caches.

mod cache;
mod multilevel;

pub use cache::{build_cache, CacheState};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ids::{DeviceId, VertexId};
use multilevel::{max_part_weight, multilevel_partition, WeightedGraph};

pub const DEFAULT_BALANCE_EPS: f64 = 0.05;

/// Vertex → device assignment for the whole input graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionMap {
    assignment: Vec<DeviceId>,
    num_devices: usize,
    balance_eps: f64,
}

impl PartitionMap {
    /// Wraps an explicit assignment. Balance is not enforced here; see
    /// [`PartitionMap::is_balanced`].
    pub fn from_assignment(
        assignment: Vec<usize>,
        num_devices: usize,
        balance_eps: f64,
    ) -> Result<Self> {
        let assignment = assignment
            .into_iter()
            .map(|d| DeviceId::new(d, num_devices))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            assignment,
            num_devices,
            balance_eps,
        })
    }

    /// Everything on device 0.
    pub fn single(num_vertices: usize) -> Self {
        Self {
            assignment: vec![DeviceId::default(); num_vertices],
            num_devices: 1,
            balance_eps: 0.0,
        }
    }

    pub fn num_devices(&self) -> usize {
        self.num_devices
    }

    pub fn num_vertices(&self) -> usize {
        self.assignment.len()
    }

    pub fn balance_eps(&self) -> f64 {
        self.balance_eps
    }

    pub fn assignment(&self) -> &[DeviceId] {
        &self.assignment
    }

    #[inline]
    pub fn owner(&self, v: VertexId) -> DeviceId {
        self.assignment[v]
    }

    pub fn part_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_devices];
        for d in &self.assignment {
            sizes[d.index()] += 1;
        }
        sizes
    }

    /// Largest allowed part: `ceil((1 + eps) · n / g)`.
    pub fn max_part_size(&self) -> usize {
        max_part_weight(
            self.assignment.len() as u64,
            self.num_devices,
            self.balance_eps,
        ) as usize
    }

    pub fn is_balanced(&self) -> bool {
        let cap = self.max_part_size();
        self.part_sizes().iter().all(|&s| s <= cap)
    }

    /// Largest part as a fraction of all vertices.
    pub fn max_part_fraction(&self) -> f64 {
        let n = self.assignment.len().max(1);
        self.part_sizes().into_iter().max().unwrap_or(0) as f64 / n as f64
    }

    /// Vertex ids of one partition in increasing order.
    pub fn members(&self, d: DeviceId) -> Vec<VertexId> {
        (0..self.assignment.len())
            .filter(|&v| self.assignment[v] == d)
            .collect()
    }

    /// Relabeling that gives every partition a contiguous id range, so that the
    /// owner of a relabeled vertex is found with a range check.
    pub fn contiguous_relabeling(&self) -> Relabeling {
        let sizes = self.part_sizes();
        let mut offsets = vec![0; self.num_devices + 1];
        for (d, s) in sizes.iter().enumerate() {
            offsets[d + 1] = offsets[d] + s;
        }
        let mut next = offsets.clone();
        let mut new_id = vec![0; self.assignment.len()];
        for (v, d) in self.assignment.iter().enumerate() {
            new_id[v] = next[d.index()];
            next[d.index()] += 1;
        }
        Relabeling { new_id, offsets }
    }

    /// One device id per line; line number = vertex id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for d in &self.assignment {
            writeln!(w, "{d}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, num_devices: Option<usize>, balance_eps: f64) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut raw = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            raw.push(t.parse::<usize>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad device id {t:?}"),
            })?);
        }
        let g = num_devices.unwrap_or_else(|| raw.iter().max().map_or(1, |m| m + 1));
        Self::from_assignment(raw, g, balance_eps)
    }
}

/// Output of [`PartitionMap::contiguous_relabeling`].
#[derive(Debug, Clone, PartialEq)]
pub struct Relabeling {
    /// `new_id[v]` is the relabeled id of original vertex `v`.
    pub new_id: Vec<VertexId>,
    /// Partition `d` owns relabeled ids `offsets[d]..offsets[d + 1]`.
    pub offsets: Vec<usize>,
}

impl Relabeling {
    /// Owner of a relabeled id.
    pub fn owner(&self, id: VertexId) -> DeviceId {
        let d = self.offsets.partition_point(|&o| o <= id) - 1;
        DeviceId::from_index(d)
    }
}

/// Balanced k-way min-edge-cut partition of `graph` over `g` devices.
pub fn partition_graph(
    graph: &Graph,
    g: usize,
    balance_eps: f64,
    seed: u64,
) -> Result<PartitionMap> {
    let n = graph.num_vertices();
    if g == 0 {
        return Err(Error::InvalidArgument("need at least one device".into()));
    }
    if g > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} vertices over {g} devices"
        )));
    }
    if !(balance_eps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "balance_eps must be >= 0, got {balance_eps}"
        )));
    }
    let wg = WeightedGraph::symmetrize(graph);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let part = multilevel_partition(&wg, g, balance_eps, &mut rng);
    let pm = PartitionMap::from_assignment(part, g, balance_eps)?;
    debug_assert!(pm.is_balanced());
    Ok(pm)
}

/// Number of arcs whose endpoints sit on different devices.
pub fn cut_size(graph: &Graph, pm: &PartitionMap) -> usize {
    graph
        .edges()
        .filter(|&(u, v)| pm.owner(u) != pm.owner(v))
        .count()
}

/// Boundary refinement on an existing assignment of `graph`, as used between
/// uncoarsening levels. Returns the cut after every pass (the first entry is
/// the cut on entry); the sequence never increases.
pub fn refine_assignment(
    graph: &Graph,
    assignment: &mut [usize],
    g: usize,
    balance_eps: f64,
) -> Vec<usize> {
    let wg = WeightedGraph::symmetrize(graph);
    let max_w = max_part_weight(graph.num_vertices() as u64, g, balance_eps);
    multilevel::refine(&wg, assignment, g, max_w, 20)
        .into_iter()
        .map(|c| c as usize)
        .collect()
}
