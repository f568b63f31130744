use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::PartitionMap;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ids::{DeviceId, VertexId};

/// Per-device sets of vertices whose input features stay resident on that
/// device. A device only caches vertices of its own partition, so the sets are
/// pairwise disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheState {
    cached: Vec<Vec<VertexId>>,
    holder: Vec<Option<DeviceId>>,
    capacity_fraction: f64,
}

impl CacheState {
    /// No device caches anything.
    pub fn empty(num_vertices: usize, num_devices: usize) -> Self {
        Self {
            cached: vec![Vec::new(); num_devices],
            holder: vec![None; num_vertices],
            capacity_fraction: 0.0,
        }
    }

    /// Cached vertices of one device, highest degree first.
    pub fn cached(&self, d: DeviceId) -> &[VertexId] {
        &self.cached[d.index()]
    }

    pub fn num_devices(&self) -> usize {
        self.cached.len()
    }

    pub fn capacity_fraction(&self) -> f64 {
        self.capacity_fraction
    }

    /// Device caching `v`, if any.
    #[inline]
    pub fn holder(&self, v: VertexId) -> Option<DeviceId> {
        self.holder[v]
    }

    #[inline]
    pub fn is_cached_on(&self, d: DeviceId, v: VertexId) -> bool {
        self.holder[v] == Some(d)
    }

    pub fn total_cached(&self) -> usize {
        self.cached.iter().map(Vec::len).sum()
    }

    /// Per-device capacity in vertices: `ceil(capacity_fraction · n)`.
    pub fn capacity(capacity_fraction: f64, num_vertices: usize) -> usize {
        let raw = capacity_fraction * num_vertices as f64;
        ((raw - 1e-9).ceil().max(0.0) as usize).min(num_vertices)
    }

    /// Checks the subset, disjointness and capacity invariants against `pm`.
    pub fn validate(&self, pm: &PartitionMap) -> Result<()> {
        let cap = Self::capacity(self.capacity_fraction, pm.num_vertices());
        for (d, set) in self.cached.iter().enumerate() {
            if set.len() > cap {
                return Err(Error::InvalidArgument(format!(
                    "device {d} caches {} > {cap}",
                    set.len()
                )));
            }
            for &v in set {
                if pm.owner(v).index() != d || self.holder[v] != Some(DeviceId::from_index(d)) {
                    return Err(Error::InvalidArgument(format!(
                        "device {d} caches vertex {v} of another partition"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Text format: a `device <d> <count>` header per device followed by one
    /// cached vertex id per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# capacity_fraction {}", self.capacity_fraction)?;
        for (d, set) in self.cached.iter().enumerate() {
            writeln!(w, "device {d} {}", set.len())?;
            for v in set {
                writeln!(w, "{v}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, num_vertices: usize) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut cached: Vec<Vec<VertexId>> = Vec::new();
        let mut fraction = 0.0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            if let Some(rest) = t.strip_prefix("# capacity_fraction") {
                fraction = rest
                    .trim()
                    .parse()
                    .map_err(|_| err("bad capacity fraction".into()))?;
            } else if t.is_empty() || t.starts_with('#') {
                continue;
            } else if let Some(rest) = t.strip_prefix("device") {
                let d: usize = rest
                    .split_whitespace()
                    .next()
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| err("bad device header".into()))?;
                if d != cached.len() {
                    return Err(err(format!("expected device {}, found {d}", cached.len())));
                }
                cached.push(Vec::new());
            } else {
                let v: usize = t.parse().map_err(|_| err(format!("bad vertex id {t:?}")))?;
                if v >= num_vertices {
                    return Err(Error::VertexOutOfRange {
                        id: v,
                        n: num_vertices,
                    });
                }
                cached
                    .last_mut()
                    .ok_or_else(|| err("vertex before any device header".into()))?
                    .push(v);
            }
        }
        let mut holder = vec![None; num_vertices];
        for (d, set) in cached.iter().enumerate() {
            for &v in set {
                if holder[v].is_some() {
                    return Err(Error::InvalidArgument(format!("vertex {v} cached twice")));
                }
                holder[v] = Some(DeviceId::from_index(d));
            }
        }
        Ok(Self {
            cached,
            holder,
            capacity_fraction: fraction,
        })
    }
}

/// Caches the highest-degree vertices (in + out degree, lower id first on
/// ties) of each partition on the partition's device, up to
/// `ceil(capacity_fraction · n)` vertices per device.
pub fn build_cache(graph: &Graph, pm: &PartitionMap, capacity_fraction: f64) -> Result<CacheState> {
    if !(0.0..=1.0).contains(&capacity_fraction) {
        return Err(Error::InvalidArgument(format!(
            "capacity fraction must lie in [0, 1], got {capacity_fraction}"
        )));
    }
    if pm.num_vertices() != graph.num_vertices() {
        return Err(Error::InvalidArgument(
            "partition map does not cover the graph".into(),
        ));
    }
    let n = graph.num_vertices();
    let cap = CacheState::capacity(capacity_fraction, n);
    let degree = graph.total_degrees();
    let mut per_device: Vec<Vec<VertexId>> = vec![Vec::new(); pm.num_devices()];
    for v in 0..n {
        per_device[pm.owner(v).index()].push(v);
    }
    let mut holder = vec![None; n];
    for (d, members) in per_device.iter_mut().enumerate() {
        members.sort_by_key(|&v| (std::cmp::Reverse(degree[v]), v));
        members.truncate(cap);
        for &v in members.iter() {
            holder[v] = Some(DeviceId::from_index(d));
        }
    }
    Ok(CacheState {
        cached: per_device,
        holder,
        capacity_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(n: usize) -> Graph {
        let e: Vec<_> = (1..n).map(|v| (v, 0)).collect();
        Graph::from_edges(n, &e).unwrap()
    }

    #[test]
    fn zero_and_full_capacity() {
        let g = star(8);
        let pm = PartitionMap::from_assignment(vec![0, 1, 0, 1, 0, 1, 0, 1], 2, 0.0).unwrap();
        let c = build_cache(&g, &pm, 0.0).unwrap();
        assert_eq!(c.total_cached(), 0);
        let c = build_cache(&g, &pm, 1.0).unwrap();
        for d in 0..2 {
            let dev = DeviceId::from_index(d);
            let mut got = c.cached(dev).to_vec();
            got.sort();
            assert_eq!(got, pm.members(dev));
        }
        c.validate(&pm).unwrap();
    }

    #[test]
    fn star_center_first() {
        let n = 10;
        let g = star(n);
        let pm = PartitionMap::from_assignment((0..n).map(|v| v % 2).collect(), 2, 0.0).unwrap();
        let c = build_cache(&g, &pm, 1.0 / n as f64).unwrap();
        assert_eq!(c.cached(DeviceId::from_index(0)), &[0]);
        // ties on degree 1 go to the lowest id
        assert_eq!(c.cached(DeviceId::from_index(1)), &[1]);
        assert!(c.is_cached_on(DeviceId::from_index(0), 0));
        assert!(!c.is_cached_on(DeviceId::from_index(1), 0));
    }

    #[test]
    fn max_partition_fraction_caches_everything() {
        let pp = crate::graph::generate_planted_partition(120, 3, 0.2, 0.01, 0, 4).unwrap();
        let pm = super::super::partition_graph(&pp.graph, 3, 0.05, 1).unwrap();
        let c = build_cache(&pp.graph, &pm, pm.max_part_fraction()).unwrap();
        assert_eq!(c.total_cached(), 120);
        c.validate(&pm).unwrap();
    }

    #[test]
    fn rejects_bad_fraction() {
        let g = star(4);
        let pm = PartitionMap::single(4);
        assert!(build_cache(&g, &pm, 1.5).is_err());
        assert!(build_cache(&g, &pm, -0.1).is_err());
    }

    #[test]
    fn text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = star(6);
        let pm = PartitionMap::from_assignment(vec![0, 0, 0, 1, 1, 1], 2, 0.0).unwrap();
        let c = build_cache(&g, &pm, 0.34).unwrap();
        let p = dir.path().join("cache.txt");
        c.save(&p).unwrap();
        assert_eq!(CacheState::load(&p, 6).unwrap(), c);
    }
}
