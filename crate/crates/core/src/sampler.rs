//! k-hop neighbor sampling into layered bipartite blocks.
//!
//! Neighbor choices for a vertex are drawn from an RNG keyed by
//! `(seed, layer, vertex)`. A vertex therefore samples the same neighbors at a
//! given layer no matter which batch it appears in, which makes micro-batch
//! samples exact restrictions of the mini-batch sample drawn with the same
//! seed.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ids::{check_vertex, LayerIndex, VertexId};

/// Layered sample for one iteration.
///
/// `V^(L)` is the target list. Each `V^(l)` is a prefix of `V^(l-1)`, so the
/// copy of `V^(l)[i]` one layer below sits at the same position `i`. Edges of
/// layer `l` are `(src position in V^(l-1), dst position in V^(l))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatchSample {
    layer_vertices: Vec<Vec<VertexId>>,
    layer_edges: Vec<Vec<(usize, usize)>>,
}

impl MiniBatchSample {
    pub fn num_layers(&self) -> usize {
        self.layer_edges.len()
    }

    /// `V^(l)` for `l` in `0..=L`.
    pub fn vertices(&self, l: LayerIndex) -> &[VertexId] {
        &self.layer_vertices[l]
    }

    /// `E^(l)` for `l` in `1..=L`.
    pub fn edges(&self, l: LayerIndex) -> &[(usize, usize)] {
        &self.layer_edges[l - 1]
    }

    pub fn targets(&self) -> &[VertexId] {
        &self.layer_vertices[self.num_layers()]
    }

    /// Total number of sampled edges over all layers, self-edges included.
    pub fn total_edges(&self) -> usize {
        self.layer_edges.iter().map(Vec::len).sum()
    }

    /// `E^(l)` as global `(src, dst)` vertex pairs.
    pub fn global_edges(&self, l: LayerIndex) -> impl Iterator<Item = (VertexId, VertexId)> + '_ {
        let src = &self.layer_vertices[l - 1];
        let dst = &self.layer_vertices[l];
        self.edges(l).iter().map(move |&(s, d)| (src[s], dst[d]))
    }

    fn empty(num_layers: usize) -> Self {
        Self {
            layer_vertices: vec![Vec::new(); num_layers + 1],
            layer_edges: vec![Vec::new(); num_layers],
        }
    }

    /// Checks the structural invariants: prefix layout, one self-edge per
    /// destination, edge endpoints in range, and no duplicate pairs.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for l in 1..=self.num_layers() {
            let below = self.vertices(l - 1);
            let here = self.vertices(l);
            if below.len() < here.len() || below[..here.len()] != *here {
                return bad(format!("V^{l} is not a prefix of V^{}", l - 1));
            }
            let mut seen = std::collections::HashSet::new();
            let mut has_self = vec![false; here.len()];
            for &(s, d) in self.edges(l) {
                if s >= below.len() || d >= here.len() {
                    return bad(format!("edge ({s}, {d}) out of range at layer {l}"));
                }
                if !seen.insert((s, d)) {
                    return bad(format!("duplicate edge ({s}, {d}) at layer {l}"));
                }
                if s == d {
                    has_self[d] = true;
                }
            }
            if let Some(d) = has_self.iter().position(|&x| !x) {
                return bad(format!("destination {d} at layer {l} lacks a self-edge"));
            }
        }
        let mut uniq = std::collections::HashSet::new();
        for l in 0..=self.num_layers() {
            uniq.clear();
            if !self.vertices(l).iter().all(|v| uniq.insert(*v)) {
                return bad(format!("duplicate vertex in V^{l}"));
            }
        }
        Ok(())
    }

    /// Debug dump: a `layer <l>` section per layer listing vertices, then one
    /// `src dst` global pair per line.
    pub fn write_text(&self, mut w: impl Write) -> std::io::Result<()> {
        for l in 0..=self.num_layers() {
            writeln!(w, "layer {l} vertices {}", self.vertices(l).len())?;
            let ids: Vec<String> = self.vertices(l).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", ids.join(" "))?;
            if l > 0 {
                writeln!(w, "layer {l} edges {}", self.edges(l).len())?;
                for (u, v) in self.global_edges(l) {
                    writeln!(w, "{u} {v}")?;
                }
            }
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent RNG keys.
pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(seed), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Draws `k` distinct positions out of `0..len` by a partial Fisher–Yates
/// shuffle that only materializes the swapped slots.
fn partial_fisher_yates(len: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut swapped: Vec<(usize, usize)> = Vec::with_capacity(2 * k);
    let lookup = |sw: &[(usize, usize)], i: usize| {
        sw.iter()
            .rev()
            .find(|(p, _)| *p == i)
            .map_or(i, |(_, v)| *v)
    };
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let j = rng.gen_range(i..len);
        let vi = lookup(&swapped, i);
        let vj = lookup(&swapped, j);
        out.push(vj);
        swapped.push((j, vi));
        swapped.push((i, vj));
    }
    out
}

/// Samples the `L`-hop neighborhood of `targets`; `fanouts[l - 1]` bounds the
/// in-neighbors drawn per vertex for layer `l`.
pub fn sample_minibatch(
    graph: &Graph,
    targets: &[VertexId],
    fanouts: &[usize],
    seed: u64,
) -> Result<MiniBatchSample> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty target list".into()));
    }
    sample_layers(graph, targets, fanouts, seed)
}

fn sample_layers(
    graph: &Graph,
    targets: &[VertexId],
    fanouts: &[usize],
    seed: u64,
) -> Result<MiniBatchSample> {
    if fanouts.is_empty() {
        return Err(Error::InvalidArgument("need at least one fanout".into()));
    }
    let n = graph.num_vertices();
    let num_layers = fanouts.len();
    let mut sample = MiniBatchSample::empty(num_layers);
    let mut position: HashMap<VertexId, usize> = HashMap::with_capacity(targets.len());
    for &t in targets {
        check_vertex(t, n)?;
        if position.insert(t, position.len()).is_some() {
            return Err(Error::InvalidArgument(format!("target {t} listed twice")));
        }
    }
    sample.layer_vertices[num_layers] = targets.to_vec();

    for l in (1..=num_layers).rev() {
        let fanout = fanouts[l - 1];
        let dst = std::mem::take(&mut sample.layer_vertices[l]);
        // V^(l-1) starts as a copy of V^(l); `position` already maps it
        let mut src = dst.clone();
        let mut edges = Vec::with_capacity(dst.len() * (fanout + 1));
        let mut picked: Vec<VertexId> = Vec::with_capacity(fanout);
        for (d, &v) in dst.iter().enumerate() {
            edges.push((d, d));
            let nbrs = graph.in_neighbors(v);
            picked.clear();
            if fanout >= nbrs.len() {
                picked.extend_from_slice(nbrs);
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[l as u64, v as u64]));
                picked.extend(
                    partial_fisher_yates(nbrs.len(), fanout, &mut rng)
                        .into_iter()
                        .map(|i| nbrs[i]),
                );
            }
            for (i, &u) in picked.iter().enumerate() {
                // parallel input edges and input self-loops collapse onto one pair
                if u == v || picked[..i].contains(&u) {
                    continue;
                }
                let s = *position.entry(u).or_insert_with(|| {
                    src.push(u);
                    src.len() - 1
                });
                edges.push((s, d));
            }
        }
        sample.layer_vertices[l] = dst;
        sample.layer_vertices[l - 1] = src;
        sample.layer_edges[l - 1] = edges;
    }
    debug_assert!(sample.validate().is_ok());
    Ok(sample)
}

/// Data-parallel baseline: targets are dealt round-robin into `g` groups and
/// each group is sampled on its own. All groups use the iteration seed, so a
/// vertex present in several micro-batches has identical sampled neighbors in
/// each of them. Groups that receive no target yield empty samples.
pub fn sample_microbatches(
    graph: &Graph,
    targets: &[VertexId],
    g: usize,
    fanouts: &[usize],
    seed: u64,
) -> Result<Vec<MiniBatchSample>> {
    if g == 0 {
        return Err(Error::InvalidArgument("need at least one device".into()));
    }
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty target list".into()));
    }
    let mut groups: Vec<Vec<VertexId>> = vec![Vec::new(); g];
    for (i, &t) in targets.iter().enumerate() {
        groups[i % g].push(t);
    }
    groups
        .iter()
        .map(|grp| {
            if grp.is_empty() {
                Ok(MiniBatchSample::empty(fanouts.len()))
            } else {
                sample_layers(graph, grp, fanouts, seed)
            }
        })
        .collect()
}

/// Shuffles the training vertices and cuts them into batches of
/// `batch_size`; the last batch may be short.
pub fn epoch_batches(
    train_set: &[VertexId],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<VertexId>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let mut order = train_set.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[VertexId]>::to_vec).collect())
}

/// The first `round(fraction · n)` vertices of a seeded permutation, sorted.
pub fn training_vertices(num_vertices: usize, fraction: f64, seed: u64) -> Result<Vec<VertexId>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "training fraction {fraction} outside [0, 1]"
        )));
    }
    let k = (fraction * num_vertices as f64).round() as usize;
    let mut order: Vec<VertexId> = (0..num_vertices).collect();
    if k < num_vertices {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7EA1]));
        order.shuffle(&mut rng);
        order.truncate(k);
        order.sort_unstable();
    }
    Ok(order)
}
