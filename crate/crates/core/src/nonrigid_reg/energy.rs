use super::graph::DeformationGraph;
use crate::{Matrix3, Point3, PointCloud3};
use serde::{Deserialize, Serialize};

/// A source vertex and the scene point it is pulled towards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub vertex: usize,
    pub target: Point3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    /// Welsch kernel scale, mm.
    pub welsch_c: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            alpha1: 10.0,
            alpha2: 100.0,
            welsch_c: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub l_ali: f64,
    pub l_reg: f64,
    pub l_rot: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub l_nr: f64,
}

/// Welsch kernel on a squared residual: `2c²(1 − exp(−s / 2c²))`.
#[inline]
pub fn welsch(s: f64, c: f64) -> f64 {
    let k = 2.0 * c * c;
    k * (1.0 - (-s / k).exp())
}

/// Derivative of [`welsch`] with respect to `s`.
#[inline]
pub fn welsch_weight(s: f64, c: f64) -> f64 {
    (-s / (2.0 * c * c)).exp()
}

/// `‖AᵀA − I‖²_F + (det A − 1)²`.
pub fn rotation_penalty(a: &Matrix3) -> f64 {
    (a.transpose() * a - Matrix3::identity()).norm_squared() + (a.determinant() - 1.0).powi(2)
}

pub fn regularization(graph: &DeformationGraph) -> f64 {
    let mut sum = 0.0;
    for ni in &graph.nodes {
        for &j in &ni.neighbors {
            let nj = &graph.nodes[j];
            // A(g_j − g_i) + g_i + t_i − (g_j + t_j), rearranged so that
            // the identity graph evaluates to exactly zero.
            let e = nj.position - ni.position;
            let r = (ni.affine - Matrix3::identity()) * e + ni.translation - nj.translation;
            sum += r.norm_squared();
        }
    }
    sum
}

pub fn alignment(graph: &DeformationGraph, vertices: &PointCloud3, corr: &[Correspondence], c: f64) -> f64 {
    corr.iter()
        .map(|k| {
            let p = graph.deform(&vertices.points[k.vertex], &graph.vertex_bindings[k.vertex]);
            welsch((p - k.target).norm_squared(), c)
        })
        .sum()
}

/// The registration energy `L_ali + α1·L_reg + α2·L_rot`.
pub fn energy(graph: &DeformationGraph, vertices: &PointCloud3, corr: &[Correspondence], w: &EnergyWeights) -> EnergyBreakdown {
    let l_ali = alignment(graph, vertices, corr, w.welsch_c);
    let l_reg = regularization(graph);
    let l_rot = graph.nodes.iter().map(|n| rotation_penalty(&n.affine)).sum();
    EnergyBreakdown {
        l_ali,
        l_reg,
        l_rot,
        alpha1: w.alpha1,
        alpha2: w.alpha2,
        l_nr: l_ali + w.alpha1 * l_reg + w.alpha2 * l_rot,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonrigid_reg::graph::build_graph;
    use crate::Vector3;

    fn grid() -> PointCloud3 {
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..10 {
                pts.push(Point3::new(i as f64 * 2.0, j as f64 * 2.0, 0.1 * (i * j) as f64));
            }
        }
        PointCloud3::new(pts)
    }

    fn self_corr(c: &PointCloud3) -> Vec<Correspondence> {
        c.points
            .iter()
            .enumerate()
            .map(|(vertex, &target)| Correspondence { vertex, target })
            .collect()
    }

    #[test]
    fn identity_graph_on_itself_is_exactly_zero() {
        let c = grid();
        let g = build_graph(&c, 6.0, 4).unwrap();
        let e = energy(&g, &c, &self_corr(&c), &EnergyWeights::default());
        assert_eq!((e.l_ali, e.l_reg, e.l_rot, e.l_nr), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn global_translation_costs_nothing() {
        let c = grid();
        let mut g = build_graph(&c, 1000.0, 4).unwrap();
        assert_eq!(g.len(), 1);
        let t = Vector3::new(3.0, -1.0, 2.0);
        g.nodes[0].translation = t;
        let corr: Vec<_> = c
            .points
            .iter()
            .enumerate()
            .map(|(vertex, p)| Correspondence { vertex, target: p + t })
            .collect();
        let e = energy(&g, &c, &corr, &EnergyWeights::default());
        assert!(e.l_ali < 1e-20);
        assert_eq!(e.l_reg, 0.0);
        assert_eq!(e.l_rot, 0.0);
    }

    #[test]
    fn doubled_affine_penalty() {
        // ‖4I − I‖²_F = 27 and (det − 1)² = 49.
        assert_eq!(rotation_penalty(&(Matrix3::identity() * 2.0)), 76.0);
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 1.1);
        assert!(rotation_penalty(r.matrix()) < 1e-24);
    }

    #[test]
    fn breakdown_sums() {
        let c = grid();
        let mut g = build_graph(&c, 6.0, 4).unwrap();
        for (i, n) in g.nodes.iter_mut().enumerate() {
            n.affine[(0, 1)] = 0.01 * i as f64;
            n.translation = Vector3::new(0.1 * i as f64, 0.0, -0.05);
        }
        let corr = self_corr(&c);
        let e = energy(&g, &c, &corr, &EnergyWeights::default());
        assert!(e.l_ali > 0.0 && e.l_reg > 0.0 && e.l_rot > 0.0);
        assert!((e.l_nr - (e.l_ali + e.alpha1 * e.l_reg + e.alpha2 * e.l_rot)).abs() <= 1e-9);
    }

    #[test]
    fn welsch_behaves() {
        assert_eq!(welsch(0.0, 5.0), 0.0);
        assert!((welsch(1e-6, 5.0) - 1e-6).abs() < 1e-12);
        assert!(welsch(1e9, 5.0) <= 50.0);
        let h = 1e-6;
        let s = 7.0;
        let fd = (welsch(s + h, 5.0) - welsch(s - h, 5.0)) / (2.0 * h);
        assert!((fd - welsch_weight(s, 5.0)).abs() < 1e-8);
    }
}
