use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Graph;
use crate::error::{Error, Result};
use crate::ids::VertexId;
use crate::tensor::Matrix;

/// A synthetic clustered graph together with the community of every vertex.
///
/// Communities are contiguous id blocks of size `n / k`.
#[derive(Debug, Clone)]
pub struct PlantedPartition {
    pub graph: Graph,
    pub communities: Vec<usize>,
    pub num_communities: usize,
}

/// Samples a directed planted-partition graph.
///
/// Every ordered pair `(u, v)` with `u != v` becomes an arc independently, with
/// probability `p_in` inside a community and `p_out` across communities.
/// Features are i.i.d. uniform on `[0, 1)`.
pub fn generate_planted_partition(
    n: usize,
    k_communities: usize,
    p_in: f64,
    p_out: f64,
    feat_dim: usize,
    seed: u64,
) -> Result<PlantedPartition> {
    if k_communities == 0 || !n.is_multiple_of(k_communities) {
        return Err(Error::InvalidArgument(format!(
            "n = {n} must be divisible by the number of communities ({k_communities})"
        )));
    }
    let valid = |p: f64| (0.0..=1.0).contains(&p);
    if !valid(p_in) || !valid(p_out) || p_out > p_in {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in = {p_in}, p_out = {p_out}"
        )));
    }
    let block = n / k_communities;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(VertexId, VertexId)> = Vec::new();

    for u in 0..n {
        let base = (u / block) * block;
        let local_u = u - base;
        for_each_success(block.saturating_sub(1), p_in, &mut rng, |i| {
            let v = base + if i < local_u { i } else { i + 1 };
            edges.push((u, v));
        });
        for_each_success(n - block, p_out, &mut rng, |i| {
            let v = if i < base { i } else { i + block };
            edges.push((u, v));
        });
    }

    let mut feats = Matrix::zeros(n, feat_dim);
    for x in feats.as_mut_slice() {
        *x = rng.gen::<f64>();
    }
    let graph = Graph::from_edges(n, &edges)?.with_features(feats)?;
    let communities = (0..n).map(|v| v / block).collect();
    Ok(PlantedPartition {
        graph,
        communities,
        num_communities: k_communities,
    })
}

/// Calls `f(i)` for each `i in 0..len` that succeeds an independent
/// Bernoulli(`p`) trial, using geometric skips between successes.
fn for_each_success(len: usize, p: f64, rng: &mut ChaCha8Rng, mut f: impl FnMut(usize)) {
    if len == 0 || p <= 0.0 {
        return;
    }
    if p >= 1.0 {
        (0..len).for_each(f);
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut i = 0usize;
    loop {
        // u in (0, 1]
        let u: f64 = 1.0 - rng.gen::<f64>();
        let skip = (u.ln() / log_q).floor();
        if skip >= (len - i) as f64 {
            return;
        }
        i += skip as usize;
        f(i);
        i += 1;
        if i >= len {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_probabilities_give_complete_blocks() {
        let pp = generate_planted_partition(4, 2, 1.0, 0.0, 3, 1).unwrap();
        let mut e: Vec<_> = pp.graph.edges().collect();
        e.sort();
        assert_eq!(e, vec![(0, 1), (1, 0), (2, 3), (3, 2)]);
        assert_eq!(pp.communities, vec![0, 0, 1, 1]);
        assert_eq!(pp.graph.feat_dim(), 3);
    }

    #[test]
    fn same_seed_same_graph() {
        let a = generate_planted_partition(200, 4, 0.1, 0.01, 4, 9).unwrap();
        let b = generate_planted_partition(200, 4, 0.1, 0.01, 4, 9).unwrap();
        assert_eq!(a.graph, b.graph);
        let c = generate_planted_partition(200, 4, 0.1, 0.01, 4, 10).unwrap();
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn feature_range() {
        let a = generate_planted_partition(40, 2, 0.2, 0.0, 5, 3).unwrap();
        assert!(a
            .graph
            .features()
            .unwrap()
            .as_slice()
            .iter()
            .all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn invalid_arguments() {
        assert!(generate_planted_partition(10, 3, 0.5, 0.1, 1, 0).is_err());
        assert!(generate_planted_partition(10, 2, 0.1, 0.5, 1, 0).is_err());
        assert!(generate_planted_partition(10, 2, 1.5, 0.5, 1, 0).is_err());
        assert!(generate_planted_partition(10, 2, 0.5, -0.1, 1, 0).is_err());
    }

    #[test]
    fn intra_fraction_matches_expectation() {
        let (n, k, p_in, p_out) = (4000usize, 4usize, 0.1, 0.001);
        let pp = generate_planted_partition(n, k, p_in, p_out, 1, 5).unwrap();
        let intra = pp
            .graph
            .edges()
            .filter(|&(u, v)| pp.communities[u] == pp.communities[v])
            .count() as f64;
        let frac = intra / pp.graph.num_edges() as f64;
        let s = (n / k) as f64;
        let expected = p_in * (s - 1.0) / (p_in * (s - 1.0) + p_out * (n as f64 - s));
        assert!((frac - expected).abs() < 0.05, "{frac} vs {expected}");
        // no self loops
        assert!(pp.graph.edges().all(|(u, v)| u != v));
    }

    #[test]
    fn skip_sampler_hits_expected_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut hits = 0usize;
        for_each_success(100_000, 0.3, &mut rng, |_| hits += 1);
        assert!((hits as f64 / 100_000.0 - 0.3).abs() < 0.01);
    }
}
