//! Immutable attributed-graph representation, symmetric adjacency
//! normalization, and the edge-set manipulation used by state transitions.
//!
//! Undirected edges are stored once in canonical `(i, j)` form with `i < j`;
//! the adjacency materializes both directions. Self-loops only ever appear
//! through the `A + I` term during normalization and are not prunable.

use std::collections::BTreeSet;
use std::sync::Arc;

use thiserror::Error;

/// Canonical undirected edge, `i < j`.
pub type Edge = (u32, u32);

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node id {0} out of range (n = {1})")]
    NodeOutOfRange(u32, usize),
    #[error("self-loop ({0}, {0}) rejected")]
    SelfLoop(u32),
    #[error("feature matrix has {got} values, expected n*d = {want}")]
    FeatureShape { got: usize, want: usize },
    #[error("edge ({0}, {1}) not present in graph")]
    EdgeNotPresent(u32, u32),
}

/// Canonicalize an undirected pair. Errors on self-loops.
pub fn canonical(i: u32, j: u32) -> Result<Edge, GraphError> {
    if i == j {
        return Err(GraphError::SelfLoop(i));
    }
    Ok(if i < j { (i, j) } else { (j, i) })
}

/// A set of canonical edges. BTreeSet keeps iteration order deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeSet(BTreeSet<Edge>);

impl EdgeSet {
    pub fn new() -> Self {
        Self(BTreeSet::new())
    }

    pub fn insert(&mut self, e: Edge) -> bool {
        debug_assert!(e.0 < e.1);
        self.0.insert(e)
    }

    pub fn contains(&self, e: &Edge) -> bool {
        self.0.contains(e)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Edge> {
        self.0.iter()
    }

    pub fn union_with(&mut self, other: &EdgeSet) {
        self.0.extend(other.0.iter().copied());
    }

    pub fn is_disjoint(&self, other: &EdgeSet) -> bool {
        self.0.is_disjoint(&other.0)
    }
}

impl FromIterator<Edge> for EdgeSet {
    fn from_iter<T: IntoIterator<Item = Edge>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Sparse matrix in CSR form with explicit values; rows and columns are
/// node-indexed. Column indices within a row are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<u32>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col[a..b], &self.val[a..b])
    }

    /// Dense copy, row-major. Test and oracle use only.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[i * self.n + j as usize] = v;
            }
        }
        out
    }
}

/// Immutable attributed graph: canonical edge list, neighbor lists
/// (the 0/1 adjacency), and a dense feature matrix shared by reference
/// so pruning never copies features.
#[derive(Debug, Clone)]
pub struct AttributedGraph {
    n: usize,
    d: usize,
    edges: Vec<Edge>,
    neighbors: Vec<Vec<u32>>,
    features: Arc<Vec<f64>>,
}

impl AttributedGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    /// Canonical edge list, sorted.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Sorted neighbor list of `i`.
    pub fn neighbors(&self, i: u32) -> &[u32] {
        &self.neighbors[i as usize]
    }

    pub fn degree(&self, i: u32) -> usize {
        self.neighbors[i as usize].len()
    }

    pub fn has_edge(&self, e: &Edge) -> bool {
        self.edges.binary_search(e).is_ok()
    }

    /// Row-major `n x d` feature matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.features)
    }

    pub fn edge_set(&self) -> EdgeSet {
        self.edges.iter().copied().collect()
    }
}

/// Build a graph from a raw edge list and feature matrix. Symmetric
/// duplicates are deduplicated; self-loops are rejected.
pub fn build_graph(
    n: usize,
    d: usize,
    edge_list: &[(u32, u32)],
    features: Vec<f64>,
) -> Result<AttributedGraph, GraphError> {
    if features.len() != n * d {
        return Err(GraphError::FeatureShape {
            got: features.len(),
            want: n * d,
        });
    }
    let mut set = BTreeSet::new();
    for &(i, j) in edge_list {
        if i as usize >= n {
            return Err(GraphError::NodeOutOfRange(i, n));
        }
        if j as usize >= n {
            return Err(GraphError::NodeOutOfRange(j, n));
        }
        set.insert(canonical(i, j)?);
    }
    let edges: Vec<Edge> = set.into_iter().collect();
    let mut neighbors = vec![Vec::new(); n];
    for &(i, j) in &edges {
        neighbors[i as usize].push(j);
        neighbors[j as usize].push(i);
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
    }
    Ok(AttributedGraph {
        n,
        d,
        edges,
        neighbors,
        features: Arc::new(features),
    })
}

/// Symmetrically normalized adjacency with self-loops:
/// `D^{-1/2} (A + I) D^{-1/2}` where `D` is the degree matrix of `A + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub csr: Csr,
    /// Degrees of `A + I`; always >= 1, so no division by zero.
    pub degrees: Vec<u32>,
}

pub fn normalize_adjacency(graph: &AttributedGraph) -> NormalizedAdjacency {
    let n = graph.n();
    let degrees: Vec<u32> = (0..n).map(|i| graph.degree(i as u32) as u32 + 1).collect();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col = Vec::new();
    let mut val = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        // Neighbors are sorted; merge the self-loop into position.
        let mut placed_self = false;
        for &j in graph.neighbors(i as u32) {
            if !placed_self && j as usize > i {
                col.push(i as u32);
                val.push(inv_sqrt[i] * inv_sqrt[i]);
                placed_self = true;
            }
            col.push(j);
            val.push(inv_sqrt[i] * inv_sqrt[j as usize]);
        }
        if !placed_self {
            col.push(i as u32);
            val.push(inv_sqrt[i] * inv_sqrt[i]);
        }
        row_ptr.push(col.len());
    }
    NormalizedAdjacency {
        csr: Csr {
            n,
            row_ptr,
            col,
            val,
        },
        degrees,
    }
}

/// Remove `cut` from the graph, returning a new graph with features shared.
/// Every cut edge must be present; a missing edge signals a mask-accounting
/// bug upstream and is rejected.
pub fn prune_edges(
    graph: &AttributedGraph,
    cut: &EdgeSet,
) -> Result<AttributedGraph, GraphError> {
    for e in cut.iter() {
        if !graph.has_edge(e) {
            return Err(GraphError::EdgeNotPresent(e.0, e.1));
        }
    }
    let edges: Vec<Edge> = graph
        .edges
        .iter()
        .copied()
        .filter(|e| !cut.contains(e))
        .collect();
    let mut neighbors = vec![Vec::new(); graph.n];
    for &(i, j) in &edges {
        neighbors[i as usize].push(j);
        neighbors[j as usize].push(i);
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
    }
    Ok(AttributedGraph {
        n: graph.n,
        d: graph.d,
        edges,
        neighbors,
        features: Arc::clone(&graph.features),
    })
}

/// All edges incident to `anchors`, minus `mask`. This is the pruner's
/// eligible action space for one step.
pub fn incident_edges(
    graph: &AttributedGraph,
    anchors: &BTreeSet<u32>,
    mask: &EdgeSet,
) -> EdgeSet {
    let mut out = EdgeSet::new();
    for &a in anchors {
        for &j in graph.neighbors(a) {
            let e = if a < j { (a, j) } else { (j, a) };
            if !mask.contains(&e) {
                out.insert(e);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(n: usize, d: usize) -> Vec<f64> {
        vec![0.0; n * d]
    }

    #[test]
    fn symmetric_duplicates_dedup() {
        let g = build_graph(2, 1, &[(0, 1), (1, 0)], feats(2, 1)).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn empty_edge_list_gives_isolated_nodes() {
        let g = build_graph(3, 1, &[], feats(3, 1)).unwrap();
        assert_eq!(g.num_edges(), 0);
        for i in 0..3 {
            assert_eq!(g.degree(i), 0);
        }
    }

    #[test]
    fn path_row_sums() {
        // Hand-built dense adjacency for 0-1-2: row sums [1, 2, 1].
        let g = build_graph(3, 1, &[(0, 1), (1, 2)], feats(3, 1)).unwrap();
        assert_eq!(g.degree(0), 1);
        assert_eq!(g.degree(1), 2);
        assert_eq!(g.degree(2), 1);
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(matches!(
            build_graph(2, 1, &[(0, 2)], feats(2, 1)),
            Err(GraphError::NodeOutOfRange(2, 2))
        ));
        assert!(matches!(
            build_graph(2, 1, &[(1, 1)], feats(2, 1)),
            Err(GraphError::SelfLoop(1))
        ));
        assert!(matches!(
            build_graph(2, 1, &[], vec![0.0; 3]),
            Err(GraphError::FeatureShape { got: 3, want: 2 })
        ));
    }

    #[test]
    fn normalize_single_edge() {
        let g = build_graph(2, 1, &[(0, 1)], feats(2, 1)).unwrap();
        let a = normalize_adjacency(&g);
        let dense = a.csr.to_dense();
        for v in dense {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_path() {
        let g = build_graph(3, 1, &[(0, 1), (1, 2)], feats(3, 1)).unwrap();
        let a = normalize_adjacency(&g).csr.to_dense();
        assert!((a[0] - 0.5).abs() < 1e-15);
        assert!((a[4] - 1.0 / 3.0).abs() < 1e-15);
        assert!((a[1] - 1.0 / 6.0_f64.sqrt()).abs() < 1e-15);
        // Symmetry.
        assert_eq!(a[1], a[3]);
        assert_eq!(a[5], a[7]);
    }

    #[test]
    fn isolated_node_self_loop_is_one() {
        let g = build_graph(3, 1, &[(0, 1)], feats(3, 1)).unwrap();
        let a = normalize_adjacency(&g).csr.to_dense();
        assert_eq!(a[2 * 3 + 2], 1.0);
    }

    #[test]
    fn prune_empty_cut_is_identity() {
        let g = build_graph(3, 1, &[(0, 1), (1, 2)], feats(3, 1)).unwrap();
        let g2 = prune_edges(&g, &EdgeSet::new()).unwrap();
        assert_eq!(g.edges(), g2.edges());
        assert_eq!(
            normalize_adjacency(&g).csr,
            normalize_adjacency(&g2).csr
        );
    }

    #[test]
    fn prune_triangle_edge() {
        let g = build_graph(3, 1, &[(0, 1), (1, 2), (0, 2)], feats(3, 1)).unwrap();
        let cut: EdgeSet = [(0, 1)].into_iter().collect();
        let g2 = prune_edges(&g, &cut).unwrap();
        assert_eq!(g2.degree(0), 1);
        assert_eq!(g2.degree(1), 1);
        assert_eq!(g2.degree(2), 2);
        assert!(!g2.has_edge(&(0, 1)));
    }

    #[test]
    fn prune_to_isolation_keeps_self_loop() {
        let g = build_graph(3, 1, &[(0, 1), (0, 2)], feats(3, 1)).unwrap();
        let cut: EdgeSet = [(0, 1), (0, 2)].into_iter().collect();
        let g2 = prune_edges(&g, &cut).unwrap();
        assert_eq!(g2.degree(0), 0);
        let a = normalize_adjacency(&g2).csr.to_dense();
        assert_eq!(a[0], 1.0);
    }

    #[test]
    fn prune_missing_edge_rejected() {
        let g = build_graph(3, 1, &[(0, 1)], feats(3, 1)).unwrap();
        let cut: EdgeSet = [(1, 2)].into_iter().collect();
        assert!(matches!(
            prune_edges(&g, &cut),
            Err(GraphError::EdgeNotPresent(1, 2))
        ));
    }

    #[test]
    fn incident_edges_path_and_mask() {
        let g = build_graph(3, 1, &[(0, 1), (1, 2)], feats(3, 1)).unwrap();
        let anchors: BTreeSet<u32> = [1].into_iter().collect();
        let e = incident_edges(&g, &anchors, &EdgeSet::new());
        assert_eq!(e, [(0, 1), (1, 2)].into_iter().collect());
        let mask: EdgeSet = [(0, 1)].into_iter().collect();
        let e = incident_edges(&g, &anchors, &mask);
        assert_eq!(e, [(1, 2)].into_iter().collect());
    }

    #[test]
    fn incident_edges_union_over_anchors() {
        let g = build_graph(3, 1, &[(0, 1), (1, 2), (0, 2)], feats(3, 1)).unwrap();
        let anchors: BTreeSet<u32> = [0, 2].into_iter().collect();
        let e = incident_edges(&g, &anchors, &EdgeSet::new());
        assert_eq!(e.len(), 3);
    }
}
