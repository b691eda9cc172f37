use super::RegError;
use crate::KdTree;
use crate::{Matrix3, Point3, PointCloud3, Vector3};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Neighbour count of the proximity graph used for geodesic distances.
pub const PROXIMITY_K: usize = 8;

/// Symmetrized k-NN graph over a point cloud, edge weights in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityGraph {
    pub adjacency: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Copy, PartialEq)]
struct Visit(f64, usize);

impl Eq for Visit {}

impl Ord for Visit {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Visit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl ProximityGraph {
    pub fn knn(cloud: &PointCloud3, k: usize) -> Self {
        let n = cloud.len();
        let mut adjacency = vec![Vec::new(); n];
        if n > 1 {
            let tree = KdTree::from_cloud(cloud);
            let k = k.min(n - 1);
            for (i, p) in cloud.points.iter().enumerate() {
                for nb in tree.knn(p, k + 1).expect("k < n") {
                    if nb.index != i {
                        adjacency[i].push((nb.index, nb.distance));
                        adjacency[nb.index].push((i, nb.distance));
                    }
                }
            }
        }
        let mut g = Self { adjacency };
        g.normalize();
        g
    }

    /// Polyline adjacency: consecutive points only.
    pub fn polyline(cloud: &PointCloud3) -> Self {
        let n = cloud.len();
        let mut adjacency = vec![Vec::new(); n];
        for i in 1..n {
            let d = (cloud.points[i] - cloud.points[i - 1]).norm();
            adjacency[i].push((i - 1, d));
            adjacency[i - 1].push((i, d));
        }
        Self { adjacency }
    }

    fn normalize(&mut self) {
        for a in &mut self.adjacency {
            a.sort_by_key(|x| x.0);
            a.dedup_by_key(|e| e.0);
        }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    /// Component id per vertex, numbered in order of first vertex.
    pub fn components(&self) -> Vec<usize> {
        let n = self.len();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = next;
            while let Some(v) = stack.pop() {
                for &(w, _) in &self.adjacency[v] {
                    if comp[w] == usize::MAX {
                        comp[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    /// Joins every component to the growing main one through its closest
    /// point pair.
    pub fn bridge_components(&mut self, cloud: &PointCloud3) {
        loop {
            let comp = self.components();
            let count = comp.iter().copied().max().map_or(0, |m| m + 1);
            if count <= 1 {
                return;
            }
            let main: Vec<usize> = (0..comp.len()).filter(|&i| comp[i] == 0).collect();
            let main_cloud = cloud.select(&main);
            let tree = KdTree::from_cloud(&main_cloud);
            let mut best: Option<(f64, usize, usize)> = None;
            for (i, p) in cloud.points.iter().enumerate() {
                if comp[i] == 0 {
                    continue;
                }
                let nb = tree.nearest(p).expect("main component not empty");
                if best.is_none_or(|b| nb.distance < b.0) {
                    best = Some((nb.distance, i, main[nb.index]));
                }
            }
            let (d, a, b) = best.expect("another component exists");
            self.adjacency[a].push((b, d));
            self.adjacency[b].push((a, d));
            self.normalize();
        }
    }

    /// Shortest-path distances from `source`, exploring only up to `limit`.
    /// Entries beyond the limit stay infinite.
    pub fn dijkstra(&self, source: usize, limit: f64) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.len()];
        self.relax_from(source, limit, &mut dist);
        dist
    }

    /// Lowers `dist` with distances from `source` up to `limit`.
    fn relax_from(&self, source: usize, limit: f64, dist: &mut [f64]) {
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Visit(0.0, source));
        while let Some(Visit(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(w, len) in &self.adjacency[v] {
                let nd = d + len;
                if nd <= limit && nd < dist[w] {
                    dist[w] = nd;
                    heap.push(Visit(nd, w));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationNode {
    pub position: Point3,
    pub affine: Matrix3,
    pub translation: Vector3,
    pub neighbors: Vec<usize>,
    /// Index of the node's vertex in the graph's source cloud.
    pub vertex: usize,
}

impl DeformationNode {
    /// `A(p − g) + g + t`.
    #[inline]
    pub fn map(&self, p: &Point3) -> Point3 {
        self.position + self.affine * (p - self.position) + self.translation
    }
}

/// Node indices and blend weights for one point.
pub type Binding = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationGraph {
    pub nodes: Vec<DeformationNode>,
    pub sampling_radius: f64,
    pub binding_k: usize,
    /// Per vertex of the source cloud.
    pub vertex_bindings: Vec<Binding>,
}

impl DeformationGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Binds an arbitrary point to its `binding_k` nearest nodes.
    pub fn bind(&self, p: &Point3) -> Binding {
        let pos: Vec<Point3> = self.nodes.iter().map(|n| n.position).collect();
        bind_with(&KdTree::new(&pos), p, self.binding_k)
    }

    /// Blended deformation `Σ w_j (A_j(p − g_j) + g_j + t_j)` of `p`,
    /// evaluated as a displacement so that identity nodes return `p` exactly.
    pub fn deform(&self, p: &Point3, binding: &Binding) -> Point3 {
        let mut acc = Vector3::zeros();
        for &(j, w) in binding {
            let n = &self.nodes[j];
            acc += ((n.affine - Matrix3::identity()) * (p - n.position) + n.translation) * w;
        }
        p + acc
    }

    /// Deforms every vertex of the cloud the graph was built on.
    pub fn deform_vertices(&self, cloud: &PointCloud3) -> PointCloud3 {
        cloud
            .points
            .iter()
            .zip(&self.vertex_bindings)
            .map(|(p, b)| self.deform(p, b))
            .collect()
    }

    /// Resets every node to the identity transform.
    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            n.affine = Matrix3::identity();
            n.translation = Vector3::zeros();
        }
    }

    pub fn validate(&self) -> Result<(), RegError> {
        for (i, n) in self.nodes.iter().enumerate() {
            for &j in &n.neighbors {
                if j >= self.nodes.len() || !self.nodes[j].neighbors.contains(&i) {
                    return Err(RegError::InvalidGraph(format!("asymmetric edge {i}-{j}")));
                }
            }
            if n.neighbors.is_empty() && self.nodes.len() > 1 {
                return Err(RegError::InvalidGraph(format!("node {i} has no neighbours")));
            }
        }
        for (v, b) in self.vertex_bindings.iter().enumerate() {
            let sum: f64 = b.iter().map(|x| x.1).sum();
            if b.is_empty() || (sum - 1.0).abs() > 1e-9 || b.iter().any(|x| !(0.0..=1.0).contains(&x.1)) {
                return Err(RegError::InvalidGraph(format!("vertex {v} has an invalid binding")));
            }
        }
        Ok(())
    }
}

/// `w_j ∝ (1 − d_j/d_max)²` over the k nearest nodes, `d_max` being the
/// distance to the next node.
fn bind_with(tree: &KdTree, p: &Point3, k: usize) -> Binding {
    let n = tree.len();
    let hits = tree.knn(p, (k + 1).min(n)).expect("graph has nodes");
    let used = k.min(hits.len());
    let d_max = if hits.len() > used {
        hits[used].distance
    } else {
        hits[used - 1].distance * 1.5
    };
    let mut b: Binding = hits[..used]
        .iter()
        .map(|h| {
            let w = if d_max > 0.0 { (1.0 - h.distance / d_max).max(0.0f64).powi(2) } else { 1.0 };
            (h.index, w)
        })
        .collect();
    let sum: f64 = b.iter().map(|x| x.1).sum();
    if sum > 0.0 {
        b.iter_mut().for_each(|x| x.1 /= sum);
    } else {
        let w = 1.0 / used as f64;
        b.iter_mut().for_each(|x| x.1 = w);
    }
    b
}

/// Geodesic first-sampling of nodes, neighbourhoods within twice the
/// radius, and vertex bindings.
pub fn build_graph(cloud: &PointCloud3, radius: f64, binding_k: usize) -> Result<DeformationGraph, RegError> {
    let mut prox = ProximityGraph::knn(cloud, PROXIMITY_K);
    prox.bridge_components(cloud);
    build_graph_on(cloud, &prox, radius, binding_k)
}

/// As [`build_graph`] over a caller-supplied adjacency.
pub fn build_graph_on(
    cloud: &PointCloud3,
    prox: &ProximityGraph,
    radius: f64,
    binding_k: usize,
) -> Result<DeformationGraph, RegError> {
    if !(radius > 0.0) {
        return Err(RegError::InvalidParams {
            field: "radius",
            reason: "must be positive".into(),
        });
    }
    if binding_k == 0 {
        return Err(RegError::InvalidParams {
            field: "binding_k",
            reason: "must be at least 1".into(),
        });
    }
    if cloud.is_empty() {
        return Err(RegError::EmptySurface);
    }
    if prox.len() != cloud.len() {
        return Err(RegError::InvalidGraph("adjacency size differs from cloud".into()));
    }
    let comp = prox.components();
    if comp.iter().any(|&c| c != 0) {
        return Err(RegError::DisconnectedSurface(comp.iter().max().unwrap() + 1));
    }

    let mut nearest = vec![f64::INFINITY; cloud.len()];
    let mut node_vertices = Vec::new();
    for v in 0..cloud.len() {
        if nearest[v] > radius {
            node_vertices.push(v);
            prox.relax_from(v, radius, &mut nearest);
        }
    }

    let is_node: std::collections::HashMap<usize, usize> = node_vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); node_vertices.len()];
    for (i, &v) in node_vertices.iter().enumerate() {
        let d = prox.dijkstra(v, 2.0 * radius);
        for (w, dw) in d.iter().enumerate() {
            if dw.is_finite() && w != v {
                if let Some(&j) = is_node.get(&w) {
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
    }
    if node_vertices.len() > 1 {
        for i in 0..node_vertices.len() {
            if neighbors[i].is_empty() {
                let j = nearest_other_node(prox, node_vertices[i], &is_node);
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    for n in &mut neighbors {
        n.sort_unstable();
        n.dedup();
    }

    let nodes: Vec<DeformationNode> = node_vertices
        .iter()
        .zip(neighbors)
        .map(|(&v, nb)| DeformationNode {
            position: cloud.points[v],
            affine: Matrix3::identity(),
            translation: Vector3::zeros(),
            neighbors: nb,
            vertex: v,
        })
        .collect();
    let pos: Vec<Point3> = nodes.iter().map(|n| n.position).collect();
    let tree = KdTree::new(&pos);
    let vertex_bindings = cloud.points.iter().map(|p| bind_with(&tree, p, binding_k)).collect();
    Ok(DeformationGraph {
        nodes,
        sampling_radius: radius,
        binding_k,
        vertex_bindings,
    })
}

fn nearest_other_node(prox: &ProximityGraph, v: usize, is_node: &std::collections::HashMap<usize, usize>) -> usize {
    let d = prox.dijkstra(v, f64::INFINITY);
    let mut best: Option<(f64, usize)> = None;
    for (&w, &j) in is_node {
        if w != v && d[w].is_finite() && best.is_none_or(|b| d[w] < b.0 || (d[w] == b.0 && j < b.1)) {
            best = Some((d[w], j));
        }
    }
    best.expect("connected graph with several nodes").1
}

/// Downsamples for graph construction: the first point per voxel.
pub fn subsample(cloud: &PointCloud3, voxel: f64) -> (PointCloud3, Vec<usize>) {
    let keep = cloud.voxel_subsample(voxel);
    (cloud.select(&keep), keep)
}
