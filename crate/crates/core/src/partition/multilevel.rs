//! Multilevel k-way partitioning: heavy-edge matching coarsening, greedy graph
//! growing on the coarsest level, then projection with boundary refinement.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::Graph;

/// Undirected weighted graph in CSR form with vertex weights.
#[derive(Debug, Clone)]
pub(crate) struct WeightedGraph {
    xadj: Vec<usize>,
    adj: Vec<usize>,
    ewgt: Vec<u64>,
    vwgt: Vec<u64>,
}

impl WeightedGraph {
    /// Symmetrizes a directed graph: each arc adds 1 to the weight of its
    /// unordered endpoint pair. Self-loops are dropped.
    pub(crate) fn symmetrize(graph: &Graph) -> Self {
        let n = graph.num_vertices();
        let mut pairs: Vec<(usize, usize)> = graph
            .edges()
            .filter(|(u, v)| u != v)
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        pairs.sort_unstable();
        let mut merged: Vec<(usize, usize, u64)> = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            match merged.last_mut() {
                Some(last) if last.0 == a && last.1 == b => last.2 += 1,
                _ => merged.push((a, b, 1)),
            }
        }
        Self::from_undirected(vec![1; n], &merged)
    }

    fn from_undirected(vwgt: Vec<u64>, pairs: &[(usize, usize, u64)]) -> Self {
        let n = vwgt.len();
        let mut deg = vec![0usize; n + 1];
        for &(a, b, _) in pairs {
            deg[a + 1] += 1;
            deg[b + 1] += 1;
        }
        for i in 0..n {
            deg[i + 1] += deg[i];
        }
        let xadj = deg.clone();
        let mut cursor = deg;
        let mut adj = vec![0; 2 * pairs.len()];
        let mut ewgt = vec![0; 2 * pairs.len()];
        // pairs are sorted by (a, b), so each adjacency list comes out sorted
        // by neighbor id once both directions are inserted in order.
        let mut both: Vec<(usize, usize, u64)> = Vec::with_capacity(2 * pairs.len());
        for &(a, b, w) in pairs {
            both.push((a, b, w));
            both.push((b, a, w));
        }
        both.sort_unstable();
        for (a, b, w) in both {
            adj[cursor[a]] = b;
            ewgt[cursor[a]] = w;
            cursor[a] += 1;
        }
        Self {
            xadj,
            adj,
            ewgt,
            vwgt,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.vwgt.len()
    }

    fn total_weight(&self) -> u64 {
        self.vwgt.iter().sum()
    }

    fn neighbors(&self, u: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let r = self.xadj[u]..self.xadj[u + 1];
        self.adj[r.clone()]
            .iter()
            .copied()
            .zip(self.ewgt[r].iter().copied())
    }

    pub(crate) fn cut(&self, part: &[usize]) -> u64 {
        let mut cut = 0;
        for u in 0..self.len() {
            for (v, w) in self.neighbors(u) {
                if u < v && part[u] != part[v] {
                    cut += w;
                }
            }
        }
        cut
    }

    fn part_weights(&self, part: &[usize], g: usize) -> Vec<u64> {
        let mut w = vec![0; g];
        for (u, &p) in part.iter().enumerate() {
            w[p] += self.vwgt[u];
        }
        w
    }
}

/// One coarsening step: the coarse graph plus the fine→coarse vertex map.
struct Level {
    graph: WeightedGraph,
    fine_to_coarse: Vec<usize>,
}

fn coarsen_once(g: &WeightedGraph, max_vwgt: u64, rng: &mut ChaCha8Rng) -> Level {
    let n = g.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    const UNMATCHED: usize = usize::MAX;
    let mut mate = vec![UNMATCHED; n];
    for &u in &order {
        if mate[u] != UNMATCHED {
            continue;
        }
        // heaviest edge to an unmatched neighbor, lowest id wins ties
        let mut best: Option<(u64, usize)> = None;
        for (v, w) in g.neighbors(u) {
            if v == u || mate[v] != UNMATCHED || g.vwgt[u] + g.vwgt[v] > max_vwgt {
                continue;
            }
            match best {
                Some((bw, bv)) if bw > w || (bw == w && bv < v) => {}
                _ => best = Some((w, v)),
            }
        }
        match best {
            Some((_, v)) => {
                mate[u] = v;
                mate[v] = u;
            }
            None => mate[u] = u,
        }
    }

    let mut fine_to_coarse = vec![UNMATCHED; n];
    let mut next = 0;
    for &u in &order {
        if fine_to_coarse[u] == UNMATCHED {
            fine_to_coarse[u] = next;
            fine_to_coarse[mate[u]] = next;
            next += 1;
        }
    }
    let mut vwgt = vec![0; next];
    for u in 0..n {
        vwgt[fine_to_coarse[u]] += g.vwgt[u];
    }
    let mut pairs: Vec<(usize, usize, u64)> = Vec::new();
    for u in 0..n {
        let cu = fine_to_coarse[u];
        for (v, w) in g.neighbors(u) {
            let cv = fine_to_coarse[v];
            if u < v && cu != cv {
                pairs.push((cu.min(cv), cu.max(cv), w));
            }
        }
    }
    pairs.sort_unstable();
    let mut merged: Vec<(usize, usize, u64)> = Vec::with_capacity(pairs.len());
    for (a, b, w) in pairs {
        match merged.last_mut() {
            Some(last) if last.0 == a && last.1 == b => last.2 += w,
            _ => merged.push((a, b, w)),
        }
    }
    Level {
        graph: WeightedGraph::from_undirected(vwgt, &merged),
        fine_to_coarse,
    }
}

/// Greedy graph growing: parts are grown one after another from a random seed
/// by repeatedly absorbing the unassigned vertex most connected to the part.
fn grow_partition(g: &WeightedGraph, parts: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.len();
    const NONE: usize = usize::MAX;
    let mut part = vec![NONE; n];
    let total = g.total_weight();
    let mut assigned_weight = 0u64;
    let mut remaining: Vec<usize> = (0..n).collect();

    for p in 0..parts.saturating_sub(1) {
        // cumulative target keeps rounding error from piling up on the last part
        let target = (total * (p as u64 + 1)).div_ceil(parts as u64);
        let mut gain = vec![0u64; n];
        let mut heap: BinaryHeap<(u64, Reverse<usize>)> = BinaryHeap::new();
        while assigned_weight < target {
            let next = loop {
                match heap.pop() {
                    Some((gn, Reverse(v))) if part[v] == NONE && gain[v] == gn => break Some(v),
                    Some(_) => continue,
                    None => break None,
                }
            };
            let v = match next {
                Some(v) => v,
                None => {
                    remaining.retain(|&v| part[v] == NONE);
                    if remaining.is_empty() {
                        break;
                    }
                    remaining[rng.gen_range(0..remaining.len())]
                }
            };
            if assigned_weight + g.vwgt[v] > target && assigned_weight > 0 {
                // too heavy for this part; leave it for later parts
                let overshoot = assigned_weight + g.vwgt[v] - target;
                if overshoot * 2 > g.vwgt[v] {
                    break;
                }
            }
            part[v] = p;
            assigned_weight += g.vwgt[v];
            for (x, w) in g.neighbors(v) {
                if part[x] == NONE {
                    gain[x] += w;
                    heap.push((gain[x], Reverse(x)));
                }
            }
        }
    }
    for x in part.iter_mut() {
        if *x == NONE {
            *x = parts - 1;
        }
    }
    part
}

/// Connectivity of `u` to every part, returned in `conn` (cleared first).
fn connectivity(g: &WeightedGraph, part: &[usize], u: usize, conn: &mut [u64]) {
    conn.iter_mut().for_each(|c| *c = 0);
    for (v, w) in g.neighbors(u) {
        if v != u {
            conn[part[v]] += w;
        }
    }
}

/// Greedy boundary refinement. A vertex moves only when the cut strictly
/// decreases and the destination stays within `max_weight`. Vertices are
/// visited by increasing id; the destination with the largest gain wins, ties
/// going to the lowest part id. Returns the cut after each pass, starting with
/// the cut on entry.
pub(crate) fn refine(
    g: &WeightedGraph,
    part: &mut [usize],
    parts: usize,
    max_weight: u64,
    max_passes: usize,
) -> Vec<u64> {
    let mut weights = g.part_weights(part, parts);
    let mut cut = g.cut(part);
    let mut trace = vec![cut];
    let mut conn = vec![0u64; parts];
    for _ in 0..max_passes {
        let mut moved = false;
        for u in 0..g.len() {
            let from = part[u];
            connectivity(g, part, u, &mut conn);
            let internal = conn[from];
            let mut best: Option<(u64, usize)> = None;
            for to in 0..parts {
                if to == from || conn[to] <= internal {
                    continue;
                }
                if weights[to] + g.vwgt[u] > max_weight {
                    continue;
                }
                let gain = conn[to] - internal;
                if best.is_none_or(|(bg, _)| gain > bg) {
                    best = Some((gain, to));
                }
            }
            if let Some((gain, to)) = best {
                part[u] = to;
                weights[from] -= g.vwgt[u];
                weights[to] += g.vwgt[u];
                cut -= gain;
                moved = true;
            }
        }
        debug_assert_eq!(cut, g.cut(part));
        trace.push(cut);
        if !moved {
            break;
        }
    }
    trace
}

/// Moves vertices out of parts heavier than `max_weight`. Candidates in an
/// overweight part are ranked by the cut change of their best feasible move
/// (smallest increase first, lowest id on ties). Returns `true` when balance
/// is reached.
fn rebalance(g: &WeightedGraph, part: &mut [usize], parts: usize, max_weight: u64) -> bool {
    let mut weights = g.part_weights(part, parts);
    let mut conn = vec![0u64; parts];
    loop {
        let Some(heavy) = (0..parts).find(|&p| weights[p] > max_weight) else {
            return true;
        };
        let mut ranked: Vec<(Reverse<i64>, usize)> = Vec::new();
        for u in 0..g.len() {
            if part[u] != heavy {
                continue;
            }
            connectivity(g, part, u, &mut conn);
            let best = (0..parts)
                .filter(|&to| to != heavy && weights[to] + g.vwgt[u] <= max_weight)
                .map(|to| conn[to] as i64 - conn[heavy] as i64)
                .max();
            if let Some(gain) = best {
                ranked.push((Reverse(gain), u));
            }
        }
        if ranked.is_empty() {
            return false;
        }
        ranked.sort_unstable();
        let mut moved = false;
        for (_, u) in ranked {
            if weights[heavy] <= max_weight {
                break;
            }
            connectivity(g, part, u, &mut conn);
            let mut best: Option<(i64, usize)> = None;
            for to in 0..parts {
                if to == heavy || weights[to] + g.vwgt[u] > max_weight {
                    continue;
                }
                let gain = conn[to] as i64 - conn[heavy] as i64;
                if best.is_none_or(|(bg, _)| gain > bg) {
                    best = Some((gain, to));
                }
            }
            if let Some((_, to)) = best {
                part[u] = to;
                weights[heavy] -= g.vwgt[u];
                weights[to] += g.vwgt[u];
                moved = true;
            }
        }
        if !moved {
            return false;
        }
    }
}

pub(crate) fn max_part_weight(total: u64, parts: usize, eps: f64) -> u64 {
    let bound = (1.0 + eps) * total as f64 / parts as f64;
    // tolerance keeps e.g. 3.0000000000000004 from rounding up to 4
    ((bound - 1e-9).ceil() as u64).max(1)
}

const REFINE_PASSES: usize = 20;
const INITIAL_TRIALS: usize = 4;

/// Full multilevel pipeline on the symmetrized graph.
pub(crate) fn multilevel_partition(
    g: &WeightedGraph,
    parts: usize,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = g.len();
    if parts == 1 {
        return vec![0; n];
    }
    let max_w = max_part_weight(g.total_weight(), parts, eps);
    let threshold = (20 * parts).max(200);
    let max_vwgt = (3 * g.total_weight()).div_ceil(2 * threshold as u64).max(1);

    let mut levels: Vec<Level> = Vec::new();
    let mut current = g.clone();
    while current.len() > threshold {
        let level = coarsen_once(&current, max_vwgt, rng);
        let shrink = level.graph.len() as f64 / current.len() as f64;
        current = level.graph.clone();
        levels.push(level);
        if shrink > 0.95 {
            break;
        }
    }

    let mut best: Option<(bool, u64, Vec<usize>)> = None;
    for _ in 0..INITIAL_TRIALS {
        let mut part = grow_partition(&current, parts, rng);
        rebalance(&current, &mut part, parts, max_w);
        refine(&current, &mut part, parts, max_w, REFINE_PASSES);
        let overweight = current
            .part_weights(&part, parts)
            .iter()
            .any(|&w| w > max_w);
        let cut = current.cut(&part);
        if best
            .as_ref()
            .is_none_or(|(bo, bc, _)| (overweight, cut) < (*bo, *bc))
        {
            best = Some((overweight, cut, part));
        }
    }
    let mut part = best.map(|b| b.2).unwrap_or_else(|| vec![0; current.len()]);

    for idx in (0..levels.len()).rev() {
        let fine = if idx == 0 { g } else { &levels[idx - 1].graph };
        let map = &levels[idx].fine_to_coarse;
        part = map.iter().map(|&c| part[c]).collect();
        rebalance(fine, &mut part, parts, max_w);
        refine(fine, &mut part, parts, max_w, REFINE_PASSES);
    }
    let balanced = rebalance(g, &mut part, parts, max_w);
    debug_assert!(balanced);
    part
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn symmetrize_merges_directions() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 0), (1, 2), (2, 2)]).unwrap();
        let w = WeightedGraph::symmetrize(&g);
        assert_eq!(w.neighbors(0).collect::<Vec<_>>(), vec![(1, 2)]);
        assert_eq!(w.neighbors(1).collect::<Vec<_>>(), vec![(0, 2), (2, 1)]);
        assert_eq!(w.neighbors(2).collect::<Vec<_>>(), vec![(1, 1)]);
        assert_eq!(w.cut(&[0, 0, 1]), 1);
        assert_eq!(w.cut(&[0, 1, 1]), 2);
    }

    #[test]
    fn coarsening_preserves_weight() {
        let pp = crate::graph::generate_planted_partition(400, 4, 0.1, 0.01, 0, 1).unwrap();
        let w = WeightedGraph::symmetrize(&pp.graph);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lvl = coarsen_once(&w, 1000, &mut rng);
        assert!(lvl.graph.len() < w.len());
        assert_eq!(lvl.graph.total_weight(), 400);
        // the coarse cut of a projected partition equals the fine cut
        let coarse_part: Vec<usize> = (0..lvl.graph.len()).map(|c| c % 2).collect();
        let fine_part: Vec<usize> = lvl.fine_to_coarse.iter().map(|&c| coarse_part[c]).collect();
        assert_eq!(lvl.graph.cut(&coarse_part), w.cut(&fine_part));
    }

    #[test]
    fn balance_bound_rounding() {
        assert_eq!(max_part_weight(6, 2, 0.0), 3);
        assert_eq!(max_part_weight(7, 2, 0.0), 4);
        assert_eq!(max_part_weight(100, 4, 0.05), 27);
    }

    #[test]
    fn rebalance_fixes_overweight() {
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]).unwrap();
        let w = WeightedGraph::symmetrize(&g);
        let mut part = vec![0; 6];
        assert!(rebalance(&w, &mut part, 2, 3));
        assert_eq!(part.iter().filter(|&&p| p == 0).count(), 3);
    }
}
