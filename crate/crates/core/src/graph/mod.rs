//! Immutable graph storage: incoming-edge CSR plus a dense feature matrix.

mod generate;
pub mod io;

pub use generate::{generate_planted_partition, PlantedPartition};
pub use io::{load_graph, GraphFormat};

use crate::error::{Error, Result};
use crate::ids::{check_vertex, VertexId};
use crate::tensor::Matrix;

/// A directed graph stored destination-major: `row_offsets[v]..row_offsets[v+1]`
/// indexes the in-neighbors of `v` in `col_indices`.
///
/// Parallel edges are kept and counted separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_vertices: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<VertexId>,
    features: Option<Matrix>,
}

impl Graph {
    /// Builds the in-CSR from `(src, dst)` arcs. Sources of one destination keep
    /// their input order.
    pub fn from_edges(num_vertices: usize, edges: &[(VertexId, VertexId)]) -> Result<Self> {
        let mut counts = vec![0usize; num_vertices + 1];
        for &(u, v) in edges {
            check_vertex(u, num_vertices)?;
            check_vertex(v, num_vertices)?;
            counts[v + 1] += 1;
        }
        for i in 0..num_vertices {
            counts[i + 1] += counts[i];
        }
        let row_offsets = counts.clone();
        let mut cursor = counts;
        let mut col_indices = vec![0; edges.len()];
        for &(u, v) in edges {
            col_indices[cursor[v]] = u;
            cursor[v] += 1;
        }
        let g = Self {
            num_vertices,
            row_offsets,
            col_indices,
            features: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// Builds a graph from raw CSR arrays, validating them.
    pub fn from_csr(
        row_offsets: Vec<usize>,
        col_indices: Vec<VertexId>,
        features: Option<Matrix>,
    ) -> Result<Self> {
        if row_offsets.is_empty() {
            return Err(Error::InvalidArgument(
                "row_offsets must have n+1 entries".into(),
            ));
        }
        let g = Self {
            num_vertices: row_offsets.len() - 1,
            row_offsets,
            col_indices,
            features,
        };
        g.validate()?;
        Ok(g)
    }

    /// Attaches (or replaces) the input feature matrix.
    pub fn with_features(mut self, features: Matrix) -> Result<Self> {
        if features.rows() != self.num_vertices {
            return Err(Error::FeatureRows {
                rows: features.rows(),
                n: self.num_vertices,
            });
        }
        self.features = Some(features);
        Ok(self)
    }

    /// Checks the CSR well-formedness invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vertices;
        if self.row_offsets.len() != n + 1 || self.row_offsets[0] != 0 {
            return Err(Error::InvalidArgument(
                "row_offsets must start at 0 and have n+1 entries".into(),
            ));
        }
        if self.row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument(
                "row_offsets must be non-decreasing".into(),
            ));
        }
        if self.row_offsets[n] != self.col_indices.len() {
            return Err(Error::InvalidArgument(format!(
                "row_offsets[n] = {} but {} column indices",
                self.row_offsets[n],
                self.col_indices.len()
            )));
        }
        if let Some(&bad) = self.col_indices.iter().find(|&&u| u >= n) {
            return Err(Error::VertexOutOfRange { id: bad, n });
        }
        if let Some(f) = &self.features {
            if f.rows() != n {
                return Err(Error::FeatureRows { rows: f.rows(), n });
            }
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[VertexId] {
        &self.col_indices
    }

    pub fn features(&self) -> Option<&Matrix> {
        self.features.as_ref()
    }

    /// Feature width, 0 when no features are attached.
    pub fn feat_dim(&self) -> usize {
        self.features.as_ref().map_or(0, Matrix::cols)
    }

    #[inline]
    pub fn in_neighbors(&self, v: VertexId) -> &[VertexId] {
        &self.col_indices[self.row_offsets[v]..self.row_offsets[v + 1]]
    }

    #[inline]
    pub fn in_degree(&self, v: VertexId) -> usize {
        self.row_offsets[v + 1] - self.row_offsets[v]
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_vertices];
        for &u in &self.col_indices {
            out[u] += 1;
        }
        out
    }

    /// In-degree plus out-degree of every vertex.
    pub fn total_degrees(&self) -> Vec<usize> {
        let mut deg = self.out_degrees();
        for (v, d) in deg.iter_mut().enumerate() {
            *d += self.in_degree(v);
        }
        deg
    }

    /// All arcs as `(src, dst)`, grouped by destination.
    pub fn edges(&self) -> impl Iterator<Item = (VertexId, VertexId)> + '_ {
        (0..self.num_vertices).flat_map(move |v| self.in_neighbors(v).iter().map(move |&u| (u, v)))
    }

    /// Relabels vertices: vertex `v` becomes `new_id[v]`.
    pub fn permuted(&self, new_id: &[VertexId]) -> Result<Self> {
        if new_id.len() != self.num_vertices {
            return Err(Error::InvalidArgument("permutation length mismatch".into()));
        }
        let edges: Vec<_> = self.edges().map(|(u, v)| (new_id[u], new_id[v])).collect();
        let mut g = Self::from_edges(self.num_vertices, &edges)?;
        if let Some(f) = &self.features {
            let mut old_of = vec![0; self.num_vertices];
            for (old, &new) in new_id.iter().enumerate() {
                old_of[new] = old;
            }
            g = g.with_features(f.select_rows(&old_of))?;
        }
        Ok(g)
    }
}
