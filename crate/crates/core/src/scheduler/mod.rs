//! Online splitting of a mini-batch sample into per-device local splits.
//!
//! Every sampled vertex goes to its owner in the offline partition map at
//! every layer. Edges follow their source vertex; a destination owned by
//! another device becomes a reference vertex on the source's device, where it
//! collects partial aggregates. Local destination slots are laid out owned
//! first, then references sorted by global id, so `slot >= num_owned` is the
//! reference range check.

mod cost;

pub use cost::{edge_skew, split_cost, LayerCost, SplitCostReport};

use crate::error::{Error, Result};
use crate::ids::{DeviceId, LayerIndex, VertexId};
use crate::partition::{CacheState, PartitionMap};
use crate::sampler::MiniBatchSample;

/// Placeholder for a destination owned by another device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reference {
    pub vertex: VertexId,
    pub owner: DeviceId,
    /// Position of the vertex in the sample's `V^(l)`.
    pub position: usize,
}

/// An edge of `E^l_g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalEdge {
    /// Row of the source among the device's owned vertices at layer `l - 1`.
    pub src: usize,
    /// Destination slot: `< num_owned` for owned, otherwise a reference.
    pub dst: usize,
    /// Index of this edge in the sample's `E^(l)`.
    pub sample_edge: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerSplit {
    /// Positions in `V^(l)` of vertices owned here, increasing.
    pub owned_positions: Vec<usize>,
    pub owned_ids: Vec<VertexId>,
    pub references: Vec<Reference>,
    /// Empty at layer 0.
    pub edges: Vec<LocalEdge>,
}

impl LayerSplit {
    pub fn num_owned(&self) -> usize {
        self.owned_ids.len()
    }

    pub fn num_slots(&self) -> usize {
        self.owned_ids.len() + self.references.len()
    }

    #[inline]
    pub fn is_reference_slot(&self, slot: usize) -> bool {
        slot >= self.owned_ids.len()
    }
}

/// One device's share of a mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalSplit {
    pub device: DeviceId,
    /// Indexed by layer, `0..=L`.
    pub layers: Vec<LayerSplit>,
    /// Owned layer-0 vertices whose features must come from host memory.
    pub load_set: Vec<VertexId>,
}

impl LocalSplit {
    pub fn layer(&self, l: LayerIndex) -> &LayerSplit {
        &self.layers[l]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Edges processed by this device over all layers.
    pub fn edges_processed(&self) -> usize {
        self.layers.iter().map(|l| l.edges.len()).sum()
    }
}

/// Rows one device sends to one peer in a single exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transfer {
    pub from: DeviceId,
    pub to: DeviceId,
    /// Global ids, sorted.
    pub vertices: Vec<VertexId>,
    /// Row of each vertex in the sender's buffer.
    pub send_rows: Vec<usize>,
    /// Row of each vertex in the receiver's buffer.
    pub recv_rows: Vec<usize>,
}

/// Exchanges of one layer. In `push_to_owner` the sender rows index its
/// reference list and receiver rows its owned list; `push_from_owner` is the
/// reverse of every transfer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerPlan {
    pub push_to_owner: Vec<Transfer>,
    pub push_from_owner: Vec<Transfer>,
}

impl LayerPlan {
    /// Number of vectors moved by one exchange of this layer.
    pub fn volume(&self) -> usize {
        self.push_to_owner.iter().map(|t| t.vertices.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShufflePlan {
    num_devices: usize,
    /// Indexed by layer; entry 0 is always empty.
    layers: Vec<LayerPlan>,
}

impl ShufflePlan {
    pub fn num_devices(&self) -> usize {
        self.num_devices
    }

    pub fn layer(&self, l: LayerIndex) -> &LayerPlan {
        &self.layers[l]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(|l| l.push_to_owner.is_empty())
    }

    /// `counts[s][d]` = vectors device `s` pushes to owner `d` at layer `l`.
    pub fn pair_counts(&self, l: LayerIndex) -> Vec<Vec<usize>> {
        let mut c = vec![vec![0; self.num_devices]; self.num_devices];
        for t in &self.layers[l].push_to_owner {
            c[t.from.index()][t.to.index()] = t.vertices.len();
        }
        c
    }
}

/// Splits `sample` into `g` local splits plus the exchange plan.
pub fn split_minibatch(
    sample: &MiniBatchSample,
    pm: &PartitionMap,
    cache: &CacheState,
) -> Result<(Vec<LocalSplit>, ShufflePlan)> {
    let g = pm.num_devices();
    if cache.num_devices() != g {
        return Err(Error::InvalidArgument(format!(
            "cache covers {} devices, partition map {g}",
            cache.num_devices()
        )));
    }
    let num_layers = sample.num_layers();
    let n = pm.num_vertices();
    let mut splits: Vec<LocalSplit> = (0..g)
        .map(|d| LocalSplit {
            device: DeviceId::from_index(d),
            layers: vec![LayerSplit::default(); num_layers + 1],
            load_set: Vec::new(),
        })
        .collect();

    // owner and owned-row index of every sampled position, per layer
    let mut owner_at: Vec<Vec<u32>> = Vec::with_capacity(num_layers + 1);
    let mut row_at: Vec<Vec<u32>> = Vec::with_capacity(num_layers + 1);
    for l in 0..=num_layers {
        let verts = sample.vertices(l);
        let mut owners = Vec::with_capacity(verts.len());
        let mut rows = Vec::with_capacity(verts.len());
        for (pos, &v) in verts.iter().enumerate() {
            if v >= n {
                return Err(Error::InvalidArgument(format!(
                    "sampled vertex {v} missing from the partition map ({n} vertices)"
                )));
            }
            let d = pm.owner(v);
            let ls = &mut splits[d.index()].layers[l];
            owners.push(d.index() as u32);
            rows.push(ls.owned_ids.len() as u32);
            ls.owned_positions.push(pos);
            ls.owned_ids.push(v);
        }
        owner_at.push(owners);
        row_at.push(rows);
    }

    for split in splits.iter_mut() {
        let d = split.device;
        split.load_set = split.layers[0]
            .owned_ids
            .iter()
            .copied()
            .filter(|&v| !cache.is_cached_on(d, v))
            .collect();
    }

    let mut plan_layers = vec![LayerPlan::default(); num_layers + 1];
    for l in 1..=num_layers {
        let dst_ids = sample.vertices(l);
        // (device, dst position) of cross edges, then per-device reference slots
        let mut cross: Vec<Vec<usize>> = vec![Vec::new(); g];
        for &(s, d) in sample.edges(l) {
            let dev = owner_at[l - 1][s] as usize;
            if owner_at[l][d] as usize != dev {
                cross[dev].push(d);
            }
        }
        let mut per_device_refs: Vec<Vec<usize>> = Vec::with_capacity(g);
        for refs in cross.iter_mut() {
            refs.sort_unstable_by_key(|&p| dst_ids[p]);
            refs.dedup();
            per_device_refs.push(std::mem::take(refs));
        }
        for (dev, refs) in per_device_refs.iter().enumerate() {
            splits[dev].layers[l].references = refs
                .iter()
                .map(|&p| Reference {
                    vertex: dst_ids[p],
                    owner: DeviceId::from_index(owner_at[l][p] as usize),
                    position: p,
                })
                .collect();
        }
        // edges routed to their source's device, in sample order
        for (e, &(s, d)) in sample.edges(l).iter().enumerate() {
            let dev = owner_at[l - 1][s] as usize;
            let ls = &mut splits[dev].layers[l];
            let slot = if owner_at[l][d] as usize == dev {
                row_at[l][d] as usize
            } else {
                let refs = &per_device_refs[dev];
                let j = refs
                    .binary_search_by_key(&dst_ids[d], |&p| dst_ids[p])
                    .expect("cross edge destination registered as reference");
                ls.owned_ids.len() + j
            };
            ls.edges.push(LocalEdge {
                src: row_at[l - 1][s] as usize,
                dst: slot,
                sample_edge: e,
            });
        }

        let mut to_owner: Vec<Transfer> = Vec::new();
        for (s, refs) in per_device_refs.iter().enumerate() {
            let mut by_owner: Vec<Option<Transfer>> = vec![None; g];
            for (j, &p) in refs.iter().enumerate() {
                let d = owner_at[l][p] as usize;
                let t = by_owner[d].get_or_insert_with(|| Transfer {
                    from: DeviceId::from_index(s),
                    to: DeviceId::from_index(d),
                    vertices: Vec::new(),
                    send_rows: Vec::new(),
                    recv_rows: Vec::new(),
                });
                t.vertices.push(dst_ids[p]);
                t.send_rows.push(j);
                t.recv_rows.push(row_at[l][p] as usize);
            }
            to_owner.extend(by_owner.into_iter().flatten());
        }
        let mut from_owner: Vec<Transfer> = to_owner
            .iter()
            .map(|t| Transfer {
                from: t.to,
                to: t.from,
                vertices: t.vertices.clone(),
                send_rows: t.recv_rows.clone(),
                recv_rows: t.send_rows.clone(),
            })
            .collect();
        from_owner.sort_by_key(|t| (t.from, t.to));
        plan_layers[l] = LayerPlan {
            push_to_owner: to_owner,
            push_from_owner: from_owner,
        };
    }

    let plan = ShufflePlan {
        num_devices: g,
        layers: plan_layers,
    };
    debug_assert!(validate_split(sample, pm, &splits, &plan).is_ok());
    Ok((splits, plan))
}

/// Checks every local-split and plan invariant against the sample: owned sets
/// and edge sets partition the sample exactly, sources are owned, references
/// are owned elsewhere, and the plan is consistent and symmetric.
pub fn validate_split(
    sample: &MiniBatchSample,
    pm: &PartitionMap,
    splits: &[LocalSplit],
    plan: &ShufflePlan,
) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidArgument(m));
    let g = pm.num_devices();
    if splits.len() != g || plan.num_devices() != g {
        return bad("device count mismatch".into());
    }
    for l in 0..=sample.num_layers() {
        let verts = sample.vertices(l);
        let mut owned_count = vec![0u32; verts.len()];
        for sp in splits {
            let ls = sp.layer(l);
            for (&p, &v) in ls.owned_positions.iter().zip(&ls.owned_ids) {
                if verts[p] != v || pm.owner(v) != sp.device {
                    return bad(format!("layer {l}: bad owned vertex {v} on {}", sp.device));
                }
                owned_count[p] += 1;
            }
            if l > 0 && sp.layer(l - 1).owned_ids[..ls.num_owned()] != ls.owned_ids[..] {
                return bad(format!(
                    "layer {l}: owned rows are not a prefix of layer {}",
                    l - 1
                ));
            }
            for r in &ls.references {
                if r.owner == sp.device
                    || pm.owner(r.vertex) != r.owner
                    || verts[r.position] != r.vertex
                {
                    return bad(format!(
                        "layer {l}: bad reference {} on {}",
                        r.vertex, sp.device
                    ));
                }
                if ls.owned_ids.contains(&r.vertex) {
                    return bad(format!("layer {l}: {} both owned and referenced", r.vertex));
                }
            }
            if ls.references.windows(2).any(|w| w[0].vertex >= w[1].vertex) {
                return bad(format!("layer {l}: references not sorted by id"));
            }
        }
        if owned_count.iter().any(|&c| c != 1) {
            return bad(format!("layer {l}: owned sets do not partition V^{l}"));
        }
        if l == 0 {
            continue;
        }
        let edges = sample.edges(l);
        let below = sample.vertices(l - 1);
        let mut edge_count = vec![0u32; edges.len()];
        for sp in splits {
            let ls = sp.layer(l);
            let prev = sp.layer(l - 1);
            for e in &ls.edges {
                let (s, d) = edges[e.sample_edge];
                if prev.owned_ids[e.src] != below[s] {
                    return bad(format!("layer {l}: edge source mismatch"));
                }
                let dst_id = if ls.is_reference_slot(e.dst) {
                    ls.references[e.dst - ls.num_owned()].vertex
                } else {
                    ls.owned_ids[e.dst]
                };
                if dst_id != verts[d] {
                    return bad(format!("layer {l}: edge destination mismatch"));
                }
                edge_count[e.sample_edge] += 1;
            }
        }
        if edge_count.iter().any(|&c| c != 1) {
            return bad(format!("layer {l}: local edges do not partition E^{l}"));
        }
        let lp = plan.layer(l);
        for t in &lp.push_to_owner {
            if t.from == t.to {
                return bad("device paired with itself".into());
            }
            let src = splits[t.from.index()].layer(l);
            let want: Vec<VertexId> = src
                .references
                .iter()
                .filter(|r| r.owner == t.to)
                .map(|r| r.vertex)
                .collect();
            if want != t.vertices {
                return bad(format!(
                    "layer {l}: push_to_owner {}→{} mismatch",
                    t.from, t.to
                ));
            }
            let dst = splits[t.to.index()].layer(l);
            for ((&v, &sr), &rr) in t.vertices.iter().zip(&t.send_rows).zip(&t.recv_rows) {
                if src.references[sr].vertex != v || dst.owned_ids[rr] != v {
                    return bad(format!("layer {l}: row mapping mismatch for {v}"));
                }
            }
        }
        let expected_refs: usize = splits.iter().map(|s| s.layer(l).references.len()).sum();
        if lp.volume() != expected_refs {
            return bad(format!("layer {l}: plan misses references"));
        }
        if lp.push_from_owner.len() != lp.push_to_owner.len() {
            return bad(format!("layer {l}: asymmetric plan"));
        }
        for t in &lp.push_from_owner {
            let back = lp
                .push_to_owner
                .iter()
                .find(|x| x.from == t.to && x.to == t.from);
            match back {
                Some(b)
                    if b.vertices == t.vertices
                        && b.send_rows == t.recv_rows
                        && b.recv_rows == t.send_rows => {}
                _ => {
                    return bad(format!(
                        "layer {l}: push_from_owner {}→{} is not a reversal",
                        t.from, t.to
                    ))
                }
            }
        }
    }
    Ok(())
}

/// Feature bytes moved before training starts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferManifest {
    /// Host → device bytes per device.
    pub host_bytes: Vec<u64>,
    /// Layer-0 device → device feature bytes, `[from][to]`; zero because cached
    /// features are consumed where they live.
    pub peer_bytes: Vec<Vec<u64>>,
}

impl TransferManifest {
    pub fn total_host_bytes(&self) -> u64 {
        self.host_bytes.iter().sum()
    }
}

pub fn transfer_manifest(
    splits: &[LocalSplit],
    cache: &CacheState,
    feat_dim: usize,
) -> Result<TransferManifest> {
    let g = splits.len();
    let mut host = vec![0u64; g];
    for (i, sp) in splits.iter().enumerate() {
        if let Some(&v) = sp
            .load_set
            .iter()
            .find(|&&v| cache.is_cached_on(sp.device, v))
        {
            return Err(Error::InvalidArgument(format!(
                "vertex {v} is cached on {} but scheduled for a host load",
                sp.device
            )));
        }
        host[i] = (sp.load_set.len() * feat_dim * 8) as u64;
    }
    Ok(TransferManifest {
        host_bytes: host,
        peer_bytes: vec![vec![0; g]; g],
    })
}
