//! Skeleton topology: validation, normalized adjacency, hop expansion and
//! distance partitioning.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Undirected, connected joint graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    n_vertices: usize,
    edges: Vec<(usize, usize)>,
    parent_of: Vec<usize>,
    center: usize,
    /// Body-part index of each joint; empty when the topology carries no grouping.
    parts: Vec<usize>,
}

/// Neighbor partitioning strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionStrategy {
    /// One subset: every joint within `k` hops.
    Unilabel,
    /// `k + 1` subsets, one per exact hop distance `0..=k`.
    Distance,
}

impl PartitionStrategy {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "unilabel" => Ok(Self::Unilabel),
            "distance" => Ok(Self::Distance),
            other => Err(Error::Config(format!("unsupported partition strategy '{other}'"))),
        }
    }
}

/// Builds and validates a graph; parents are assigned by breadth-first search from `center`.
pub fn build_graph(n: usize, edges: &[(usize, usize)], center: usize) -> Result<GraphSpec> {
    if n < 2 {
        return Err(Error::Topology(format!("need at least 2 vertices, got {n}")));
    }
    if edges.is_empty() {
        return Err(Error::Topology("edge list is empty".into()));
    }
    if center >= n {
        return Err(Error::Index(format!("center {center} out of range for {n} vertices")));
    }
    if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= n || b >= n) {
        return Err(Error::Index(format!("edge ({a},{b}) out of range for {n} vertices")));
    }
    let adj = neighbor_lists(n, edges);
    let mut parent = vec![usize::MAX; n];
    parent[center] = center;
    let mut queue = VecDeque::from([center]);
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if parent[w] == usize::MAX {
                parent[w] = u;
                queue.push_back(w);
            }
        }
    }
    if let Some(lost) = parent.iter().position(|&p| p == usize::MAX) {
        return Err(Error::Topology(format!(
            "graph is disconnected: vertex {lost} unreachable from center {center}"
        )));
    }
    Ok(GraphSpec {
        n_vertices: n,
        edges: edges.to_vec(),
        parent_of: parent,
        center,
        parts: Vec::new(),
    })
}

fn neighbor_lists(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a != b {
            if !adj[a].contains(&b) {
                adj[a].push(b);
            }
            if !adj[b].contains(&a) {
                adj[b].push(a);
            }
        }
    }
    adj
}

impl GraphSpec {
    /// Attach a body-part index per joint.
    pub fn with_parts(mut self, parts: Vec<usize>) -> Result<Self> {
        if parts.len() != self.n_vertices {
            return Err(Error::Index(format!(
                "part grouping has {} entries for {} joints",
                parts.len(),
                self.n_vertices
            )));
        }
        self.parts = parts;
        Ok(self)
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn parent_of(&self) -> &[usize] {
        &self.parent_of
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    pub fn num_parts(&self) -> usize {
        self.parts.iter().max().map_or(0, |&m| m + 1)
    }

    /// Symmetric 0/1 adjacency without self loops.
    pub fn adjacency(&self) -> Vec<f64> {
        let n = self.n_vertices;
        let mut a = vec![0.0; n * n];
        for &(i, j) in &self.edges {
            if i != j {
                a[i * n + j] = 1.0;
                a[j * n + i] = 1.0;
            }
        }
        a
    }

    /// All-pairs hop distances.
    pub fn hop_distances(&self) -> Vec<Vec<usize>> {
        let adj = neighbor_lists(self.n_vertices, &self.edges);
        (0..self.n_vertices)
            .map(|s| {
                let mut dist = vec![usize::MAX; self.n_vertices];
                dist[s] = 0;
                let mut queue = VecDeque::from([s]);
                while let Some(u) = queue.pop_front() {
                    for &w in &adj[u] {
                        if dist[w] == usize::MAX {
                            dist[w] = dist[u] + 1;
                            queue.push_back(w);
                        }
                    }
                }
                dist
            })
            .collect()
    }

    pub fn diameter(&self) -> usize {
        self.hop_distances()
            .iter()
            .flat_map(|row| row.iter().copied())
            .max()
            .unwrap_or(0)
    }
}

/// `D^-1/2 * A * D^-1/2` for a dense `n x n` matrix; rows with zero degree stay zero.
pub fn symmetric_normalize(a: &[f64], n: usize) -> Vec<f64> {
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = a[i * n..(i + 1) * n].iter().sum();
            if deg > 0.0 {
                1.0 / deg.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv_sqrt[i] * a[i * n + j] * inv_sqrt[j];
        }
    }
    out
}

/// Normalized adjacency of the graph, optionally with self loops added first.
pub fn normalized_adjacency(g: &GraphSpec, self_loops: bool) -> Tensor<f64> {
    let n = g.n_vertices;
    let mut a = g.adjacency();
    if self_loops {
        for i in 0..n {
            a[i * n + i] += 1.0;
        }
    }
    Tensor::new(&[n, n], symmetric_normalize(&a, n)).expect("square")
}

/// 0/1 matrix marking vertex pairs within `k` hops (the diagonal included).
pub fn k_hop_adjacency(g: &GraphSpec, k: usize) -> Result<Tensor<f64>> {
    if k < 1 {
        return Err(Error::Parameter(format!("hop distance must be >= 1, got {k}")));
    }
    let n = g.n_vertices;
    let dist = g.hop_distances();
    let data = (0..n * n)
        .map(|ij| if dist[ij / n][ij % n] <= k { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::new(&[n, n], data).expect("square"))
}

/// Unnormalized 0/1 neighbor subsets under the chosen strategy.
pub fn partition(g: &GraphSpec, strategy: PartitionStrategy, k: usize) -> Result<Vec<Tensor<f64>>> {
    match strategy {
        PartitionStrategy::Unilabel => Ok(vec![k_hop_adjacency(g, k)?]),
        PartitionStrategy::Distance => {
            if k < 1 {
                return Err(Error::Parameter(format!("hop distance must be >= 1, got {k}")));
            }
            let n = g.n_vertices;
            let dist = g.hop_distances();
            Ok((0..=k)
                .map(|d| {
                    let data = (0..n * n)
                        .map(|ij| if dist[ij / n][ij % n] == d { 1.0 } else { 0.0 })
                        .collect();
                    Tensor::new(&[n, n], data).expect("square")
                })
                .collect())
        }
    }
}

/// Per-subset normalized adjacency matrices consumed by graph convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    pub matrices: Vec<Tensor<f64>>,
}

impl NormalizedAdjacency {
    /// Partition then normalize each subset by its own degree matrix.
    /// Subsets with no pairs (distances beyond the graph diameter) are dropped.
    pub fn build(g: &GraphSpec, strategy: PartitionStrategy, k: usize) -> Result<Self> {
        let n = g.n_vertices;
        let matrices = partition(g, strategy, k)?
            .into_iter()
            .filter(|m| m.data().iter().any(|&x| x != 0.0))
            .map(|m| Tensor::new(&[n, n], symmetric_normalize(m.data(), n)).expect("square"))
            .collect();
        Ok(Self { matrices })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> GraphSpec {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        build_graph(n, &edges, 0).unwrap()
    }

    /// Largest eigenvalue magnitude by power iteration.
    fn spectral_radius(m: &[f64], n: usize) -> f64 {
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
        let mut lambda = 0.0;
        for _ in 0..2000 {
            let w: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| m[i * n + j] * v[j]).sum())
                .collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.iter().map(|x| x / norm).collect();
        }
        lambda
    }

    #[test]
    fn minimal_chain_parents() {
        let g = build_graph(2, &[(0, 1)], 0).unwrap();
        assert_eq!(g.parent_of(), &[0, 0]);
    }

    #[test]
    fn out_of_range_edge_is_index_error() {
        assert!(matches!(build_graph(5, &[(0, 9)], 0), Err(Error::Index(_))));
    }

    #[test]
    fn disconnected_graph_is_topology_error() {
        assert!(matches!(
            build_graph(4, &[(0, 1), (2, 3)], 0),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn two_vertex_normalization_is_half() {
        let g = build_graph(2, &[(0, 1)], 0).unwrap();
        let a = normalized_adjacency(&g, true);
        assert!(a.data().iter().all(|&x| (x - 0.5).abs() < 1e-12));
    }

    #[test]
    fn zero_degree_rows_stay_zero() {
        // vertex 2 has no neighbors in this raw matrix
        let raw = [0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let out = symmetric_normalize(&raw, 3);
        assert!(out[6..9].iter().all(|&x| x == 0.0));
        assert!([out[2], out[5]].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalized_spectrum_bounded() {
        for g in [path(5), build_graph(4, &[(0, 1), (0, 2), (0, 3)], 0).unwrap()] {
            for loops in [true, false] {
                let a = normalized_adjacency(&g, loops);
                let n = g.n_vertices();
                for i in 0..n {
                    for j in 0..n {
                        assert_eq!(a.at(&[i, j]), a.at(&[j, i]));
                    }
                }
                assert!(spectral_radius(a.data(), n) <= 1.0 + 1e-6);
            }
        }
    }

    #[test]
    fn k_hop_patterns() {
        let g = path(3);
        let one = k_hop_adjacency(&g, 1).unwrap();
        let mut expected = g.adjacency();
        for i in 0..3 {
            expected[i * 3 + i] = 1.0;
        }
        assert_eq!(one.data(), expected.as_slice());
        assert!(k_hop_adjacency(&g, 2).unwrap().data().iter().all(|&x| x == 1.0));
        assert!(k_hop_adjacency(&path(6), 9).unwrap().data().iter().all(|&x| x == 1.0));
        assert!(matches!(k_hop_adjacency(&g, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn unilabel_minimal() {
        let g = build_graph(2, &[(0, 1)], 0).unwrap();
        let p = partition(&g, PartitionStrategy::Unilabel, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn distance_split_self_and_neighbors() {
        let g = path(4);
        let p = partition(&g, PartitionStrategy::Distance, 1).unwrap();
        assert_eq!(p[0], Tensor::eye(4));
        assert_eq!(p[1].data(), g.adjacency().as_slice());
    }

    #[test]
    fn distance_subsets_cover_k_hop() {
        let g = path(4);
        let p = partition(&g, PartitionStrategy::Distance, 2).unwrap();
        assert_eq!(p.len(), 3);
        let mask = k_hop_adjacency(&g, 2).unwrap();
        for ij in 0..16 {
            let s: f64 = p.iter().map(|m| m.data()[ij]).sum();
            assert_eq!(s, mask.data()[ij]);
            assert!(s <= 1.0);
        }
    }

    #[test]
    fn unsupported_strategy() {
        assert!(matches!(PartitionStrategy::parse("spatial"), Err(Error::Config(_))));
    }

    #[test]
    fn empty_subsets_dropped() {
        let g = path(3);
        let na = NormalizedAdjacency::build(&g, PartitionStrategy::Distance, 7).unwrap();
        assert_eq!(na.len(), 3);
    }
}
