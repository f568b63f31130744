//! Split quality: per-vertex shuffle cost, edge skew and local-edge fraction.

use crate::error::{Error, Result};
use crate::ids::DeviceId;
use crate::sampler::MiniBatchSample;

/// `(max - min) / mean` of per-device counts; 0 when the mean is 0.
pub fn edge_skew(counts: &[usize]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    let max = *counts.iter().max().unwrap() as f64;
    let min = *counts.iter().min().unwrap() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    if mean == 0.0 {
        0.0
    } else {
        (max - min) / mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    /// Cost of every `V^(l)` position: foreign partitions with at least one
    /// edge into the vertex.
    pub costs: Vec<u32>,
    pub cost_total: u64,
    pub edges_local: usize,
    pub edges_cross: usize,
    pub self_edges: usize,
    /// Edges routed to each device (by source owner).
    pub edges_per_device: Vec<usize>,
    pub skew: f64,
    pub local_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCostReport {
    /// Indexed by `l - 1`.
    pub layers: Vec<LayerCost>,
    pub total_cost: u64,
    pub edges_per_device: Vec<usize>,
    pub edge_skew: f64,
    /// Local edges over all edges; self-edges count as local.
    pub local_edge_fraction: f64,
    /// Same ratio with self-edges removed from both counts.
    pub local_fraction_excluding_self: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Evaluates a vertex → device assignment on a sample.
pub fn split_cost(
    sample: &MiniBatchSample,
    assignment: &[DeviceId],
    num_devices: usize,
) -> Result<SplitCostReport> {
    let mut layers = Vec::with_capacity(sample.num_layers());
    let mut per_device = vec![0usize; num_devices];
    let (mut local, mut total, mut self_edges) = (0usize, 0usize, 0usize);
    let mut total_cost = 0u64;
    let owner = |v: usize| -> Result<usize> {
        assignment
            .get(v)
            .map(|d| d.index())
            .ok_or_else(|| Error::InvalidArgument(format!("vertex {v} has no assignment")))
    };
    for l in 1..=sample.num_layers() {
        let below = sample.vertices(l - 1);
        let here = sample.vertices(l);
        let src_dev: Vec<usize> = below.iter().map(|&v| owner(v)).collect::<Result<_>>()?;
        let dst_dev: Vec<usize> = here.iter().map(|&v| owner(v)).collect::<Result<_>>()?;
        // foreign[p * g + d] marks partition d contributing to position p
        let mut foreign = vec![false; here.len() * num_devices];
        let mut costs = vec![0u32; here.len()];
        let mut lc = LayerCost {
            costs: Vec::new(),
            cost_total: 0,
            edges_local: 0,
            edges_cross: 0,
            self_edges: 0,
            edges_per_device: vec![0; num_devices],
            skew: 0.0,
            local_fraction: 1.0,
        };
        for &(s, d) in sample.edges(l) {
            let (ps, pd) = (src_dev[s], dst_dev[d]);
            lc.edges_per_device[ps] += 1;
            if s == d {
                lc.self_edges += 1;
            }
            if ps == pd {
                lc.edges_local += 1;
            } else {
                lc.edges_cross += 1;
                let slot = &mut foreign[d * num_devices + ps];
                if !*slot {
                    *slot = true;
                    costs[d] += 1;
                }
            }
        }
        lc.cost_total = costs.iter().map(|&c| c as u64).sum();
        lc.costs = costs;
        lc.skew = edge_skew(&lc.edges_per_device);
        lc.local_fraction = ratio(lc.edges_local, lc.edges_local + lc.edges_cross);
        for (a, b) in per_device.iter_mut().zip(&lc.edges_per_device) {
            *a += b;
        }
        local += lc.edges_local;
        total += lc.edges_local + lc.edges_cross;
        self_edges += lc.self_edges;
        total_cost += lc.cost_total;
        layers.push(lc);
    }
    Ok(SplitCostReport {
        layers,
        total_cost,
        edge_skew: edge_skew(&per_device),
        edges_per_device: per_device,
        local_edge_fraction: ratio(local, total),
        local_fraction_excluding_self: ratio(local - self_edges, total - self_edges),
    })
}
