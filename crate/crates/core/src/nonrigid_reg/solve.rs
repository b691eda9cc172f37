use super::energy::{energy, welsch_weight, Correspondence, EnergyBreakdown, EnergyWeights};
use super::graph::DeformationGraph;
use super::RegError;
use crate::KdTree;
use crate::{Matrix3, PointCloud3};
use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

type M12 = SMatrix<f64, 12, 12>;
type V12 = SVector<f64, 12>;
type J3 = SMatrix<f64, 3, 12>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveParams {
    #[serde(flatten)]
    pub weights: EnergyWeights,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Relative energy decrease per outer iteration below which to stop.
    pub tol: f64,
    /// Energies at or below this count as converged.
    pub abs_tol: f64,
    pub damping: f64,
    pub pcg_tol: f64,
    pub pcg_max_iter: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            weights: EnergyWeights::default(),
            max_outer: 50,
            max_inner: 5,
            tol: 1e-5,
            abs_tol: 1e-12,
            damping: 1e-6,
            pcg_tol: 1e-10,
            pcg_max_iter: 1000,
        }
    }
}

impl SolveParams {
    pub fn validate(&self) -> Result<(), RegError> {
        let w = &self.weights;
        let bad = |field, reason: &str| {
            Err(RegError::InvalidParams {
                field,
                reason: reason.into(),
            })
        };
        if !(w.alpha1 >= 0.0) {
            return bad("alpha1", "must be non-negative");
        }
        if !(w.alpha2 >= 0.0) {
            return bad("alpha2", "must be non-negative");
        }
        if !(w.welsch_c > 0.0) {
            return bad("welsch_c", "must be positive");
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("max_outer", "iteration limits must be positive");
        }
        if !(self.tol >= 0.0) {
            return bad("tol", "must be non-negative");
        }
        Ok(())
    }
}

/// One accepted state of the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub outer: usize,
    /// 0 right after a correspondence update, then one per accepted step.
    pub inner: usize,
    pub energy: EnergyBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub history: Vec<HistoryEntry>,
    pub outer_iterations: usize,
    pub converged: bool,
}

impl SolveReport {
    pub fn final_energy(&self) -> Option<EnergyBreakdown> {
        self.history.last().map(|h| h.energy)
    }

    pub fn is_monotone(&self) -> bool {
        self.history.windows(2).all(|w| w[1].energy.l_nr <= w[0].energy.l_nr)
    }
}

/// Block-sparse symmetric matrix with 12×12 blocks, both triangles stored.
struct BlockMatrix {
    cols: Vec<Vec<usize>>,
    blocks: Vec<Vec<M12>>,
}

impl BlockMatrix {
    fn with_pattern(graph: &DeformationGraph) -> Self {
        let n = graph.len();
        let mut cols: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (i, node) in graph.nodes.iter().enumerate() {
            cols[i].extend(&node.neighbors);
        }
        for b in &graph.vertex_bindings {
            for &(p, _) in b {
                for &(q, _) in b {
                    cols[p].push(q);
                }
            }
        }
        for c in &mut cols {
            c.sort_unstable();
            c.dedup();
        }
        let blocks = cols.iter().map(|c| vec![M12::zeros(); c.len()]).collect();
        Self { cols, blocks }
    }

    fn clear(&mut self) {
        for row in &mut self.blocks {
            row.iter_mut().for_each(|b| b.fill(0.0));
        }
    }

    #[inline]
    fn block_mut(&mut self, i: usize, j: usize) -> &mut M12 {
        let k = self.cols[i].binary_search(&j).expect("block in pattern");
        &mut self.blocks[i][k]
    }

    fn diag(&self, i: usize) -> &M12 {
        let k = self.cols[i].binary_search(&i).unwrap();
        &self.blocks[i][k]
    }

    fn mul(&self, x: &[V12], out: &mut [V12]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut acc = V12::zeros();
            for (k, &j) in self.cols[i].iter().enumerate() {
                acc += self.blocks[i][k] * x[j];
            }
            *o = acc;
        });
    }
}

struct System {
    h: BlockMatrix,
    g: Vec<V12>,
}

impl System {
    /// Adds `ω Σ J_pᵀ J_q` and `ω J_pᵀ r` for one residual block.
    fn add<const R: usize>(&mut self, omega: f64, r: &SVector<f64, R>, jac: &[(usize, SMatrix<f64, R, 12>)]) {
        for (p, jp) in jac {
            let jpt = jp.transpose();
            self.g[*p] += jpt * r * omega;
            for (q, jq) in jac {
                *self.h.block_mut(*p, *q) += jpt * jq * omega;
            }
        }
    }
}

fn alignment_jacobian(graph: &DeformationGraph, v: &crate::Point3, binding: &[(usize, f64)]) -> Vec<(usize, J3)> {
    binding
        .iter()
        .map(|&(j, w)| {
            let d = v - graph.nodes[j].position;
            let mut jm = J3::zeros();
            for k in 0..3 {
                for m in 0..3 {
                    jm[(k, 3 * k + m)] = w * d[m];
                }
                jm[(k, 9 + k)] = w;
            }
            (j, jm)
        })
        .collect()
}

fn rotation_residual(a: &Matrix3) -> (SVector<f64, 7>, SMatrix<f64, 7, 12>) {
    let b = a.transpose() * a - Matrix3::identity();
    let s2 = std::f64::consts::SQRT_2;
    let pairs = [(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (0, 1, s2), (0, 2, s2), (1, 2, s2)];
    let mut r = SVector::<f64, 7>::zeros();
    let mut j = SMatrix::<f64, 7, 12>::zeros();
    for (row, &(p, q, f)) in pairs.iter().enumerate() {
        r[row] = f * b[(p, q)];
        for k in 0..3 {
            // ∂(AᵀA)_pq / ∂A_kl = δ_lp A_kq + δ_lq A_kp
            j[(row, 3 * k + p)] += f * a[(k, q)];
            j[(row, 3 * k + q)] += f * a[(k, p)];
        }
    }
    r[6] = a.determinant() - 1.0;
    let cols = [a.column(0).into_owned(), a.column(1).into_owned(), a.column(2).into_owned()];
    let cof = [cols[1].cross(&cols[2]), cols[2].cross(&cols[0]), cols[0].cross(&cols[1])];
    for k in 0..3 {
        for l in 0..3 {
            j[(6, 3 * k + l)] = cof[l][k];
        }
    }
    (r, j)
}

fn assemble(sys: &mut System, graph: &DeformationGraph, vertices: &PointCloud3, corr: &[Correspondence], w: &EnergyWeights) {
    sys.h.clear();
    sys.g.iter_mut().for_each(|g| *g = V12::zeros());
    for c in corr {
        let v = &vertices.points[c.vertex];
        let b = &graph.vertex_bindings[c.vertex];
        let r = graph.deform(v, b) - c.target;
        let omega = welsch_weight(r.norm_squared(), w.welsch_c);
        if omega == 0.0 {
            continue;
        }
        sys.add(omega, &r, &alignment_jacobian(graph, v, b));
    }
    if w.alpha1 > 0.0 {
        for (i, ni) in graph.nodes.iter().enumerate() {
            for &j in &ni.neighbors {
                let nj = &graph.nodes[j];
                let e = nj.position - ni.position;
                let r = (ni.affine - Matrix3::identity()) * e + ni.translation - nj.translation;
                let mut ji = J3::zeros();
                let mut jj = J3::zeros();
                for k in 0..3 {
                    for m in 0..3 {
                        ji[(k, 3 * k + m)] = e[m];
                    }
                    ji[(k, 9 + k)] = 1.0;
                    jj[(k, 9 + k)] = -1.0;
                }
                sys.add(w.alpha1, &r, &[(i, ji), (j, jj)]);
            }
        }
    }
    if w.alpha2 > 0.0 {
        for (i, n) in graph.nodes.iter().enumerate() {
            let (r, j) = rotation_residual(&n.affine);
            sys.add(w.alpha2, &r, &[(i, j)]);
        }
    }
}

/// Preconditioned conjugate gradients on `(H + D) x = b` with block-Jacobi
/// preconditioning.
fn pcg(h: &BlockMatrix, damp: &[V12], b: &[V12], tol: f64, max_iter: usize) -> Vec<V12> {
    let n = b.len();
    let precond: Vec<M12> = (0..n)
        .map(|i| {
            let m = h.diag(i) + M12::from_diagonal(&damp[i]);
            m.cholesky().map(|c| c.inverse()).unwrap_or_else(|| {
                M12::from_diagonal(&m.diagonal().map(|d| if d > 0.0 { 1.0 / d } else { 0.0 }))
            })
        })
        .collect();
    let apply = |x: &[V12], out: &mut [V12]| {
        h.mul(x, out);
        for i in 0..n {
            out[i] += damp[i].component_mul(&x[i]);
        }
    };
    let dot = |a: &[V12], b: &[V12]| a.iter().zip(b).map(|(x, y)| x.dot(y)).sum::<f64>();
    let mut x = vec![V12::zeros(); n];
    let mut r = b.to_vec();
    let mut z: Vec<V12> = r.iter().zip(&precond).map(|(ri, m)| m * ri).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return x;
    }
    let mut ap = vec![V12::zeros(); n];
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        if dot(&r, &r).sqrt() <= tol * bnorm {
            break;
        }
        for i in 0..n {
            z[i] = precond[i] * r[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + p[i] * beta;
        }
    }
    x
}

fn apply_step(graph: &DeformationGraph, delta: &[V12], scale: f64) -> DeformationGraph {
    let mut g = graph.clone();
    for (n, d) in g.nodes.iter_mut().zip(delta) {
        for k in 0..3 {
            for m in 0..3 {
                n.affine[(k, m)] += scale * d[3 * k + m];
            }
            n.translation[k] += scale * d[9 + k];
        }
    }
    g
}

fn check_finite(cloud: &PointCloud3, what: &str) -> Result<(), RegError> {
    if cloud.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(RegError::NonFiniteEnergy(format!("non-finite point in {what}")));
    }
    Ok(())
}

struct Stepper<'a> {
    vertices: &'a PointCloud3,
    params: &'a SolveParams,
    sys: System,
}

impl<'a> Stepper<'a> {
    fn new(graph: &DeformationGraph, vertices: &'a PointCloud3, params: &'a SolveParams) -> Self {
        let n = graph.len();
        Self {
            vertices,
            params,
            sys: System {
                h: BlockMatrix::with_pattern(graph),
                g: vec![V12::zeros(); n],
            },
        }
    }

    /// One damped Gauss-Newton step with backtracking; `None` when no step
    /// lowers the energy.
    fn step(&mut self, graph: &DeformationGraph, corr: &[Correspondence], current: f64) -> Option<(DeformationGraph, EnergyBreakdown)> {
        let w = &self.params.weights;
        assemble(&mut self.sys, graph, self.vertices, corr, w);
        let n = graph.len();
        let mean_diag = (0..n).map(|i| self.sys.h.diag(i).trace()).sum::<f64>() / (12 * n) as f64;
        let floor = 1e-9 * mean_diag.max(1e-12);
        let damp: Vec<V12> = (0..n)
            .map(|i| self.sys.h.diag(i).diagonal() * self.params.damping + V12::repeat(floor))
            .collect();
        let rhs: Vec<V12> = self.sys.g.iter().map(|g| -g).collect();
        let delta = pcg(&self.sys.h, &damp, &rhs, self.params.pcg_tol, self.params.pcg_max_iter);
        let mut scale = 1.0;
        for _ in 0..30 {
            let cand = apply_step(graph, &delta, scale);
            let e = energy(&cand, self.vertices, corr, w);
            if e.l_nr.is_finite() && e.l_nr < current {
                return Some((cand, e));
            }
            scale *= 0.5;
        }
        None
    }
}

/// Minimizes the energy for fixed correspondences.
pub fn solve_fixed(
    graph: &DeformationGraph,
    vertices: &PointCloud3,
    corr: &[Correspondence],
    params: &SolveParams,
    max_steps: usize,
) -> Result<(DeformationGraph, Vec<EnergyBreakdown>), RegError> {
    params.validate()?;
    check_finite(vertices, "source")?;
    let mut g = graph.clone();
    let mut e = energy(&g, vertices, corr, &params.weights);
    if !e.l_nr.is_finite() {
        return Err(RegError::NonFiniteEnergy("initial energy".into()));
    }
    let mut hist = vec![e];
    let mut stepper = Stepper::new(&g, vertices, params);
    for _ in 0..max_steps {
        if e.l_nr <= params.abs_tol {
            break;
        }
        match stepper.step(&g, corr, e.l_nr) {
            Some((ng, ne)) => {
                g = ng;
                e = ne;
                hist.push(e);
            }
            None => break,
        }
    }
    Ok((g, hist))
}

/// Closest-point targets on `target` for every deformed vertex. A previous
/// target is kept unless the new one is strictly closer.
fn update_correspondences(
    graph: &DeformationGraph,
    vertices: &PointCloud3,
    tree: &KdTree,
    target: &PointCloud3,
    prev: Option<&[Correspondence]>,
) -> Vec<Correspondence> {
    (0..vertices.len())
        .into_par_iter()
        .map(|v| {
            let p = graph.deform(&vertices.points[v], &graph.vertex_bindings[v]);
            let nb = tree.nearest(&p).expect("target not empty");
            let cand = target.points[nb.index];
            let target = match prev {
                Some(old) if (p - old[v].target).norm_squared() <= (p - cand).norm_squared() => old[v].target,
                _ => cand,
            };
            Correspondence { vertex: v, target }
        })
        .collect()
}

/// Alternates closest-point correspondence updates and Gauss-Newton descent.
pub fn solve(
    graph: &DeformationGraph,
    vertices: &PointCloud3,
    target: &PointCloud3,
    params: &SolveParams,
) -> Result<(DeformationGraph, SolveReport), RegError> {
    params.validate()?;
    check_finite(vertices, "source")?;
    check_finite(target, "target")?;
    if target.is_empty() || vertices.is_empty() {
        return Err(RegError::EmptySurface);
    }
    if graph.vertex_bindings.len() != vertices.len() {
        return Err(RegError::InvalidGraph("bindings do not match the source cloud".into()));
    }
    let tree = KdTree::from_cloud(target);
    let mut g = graph.clone();
    let mut stepper = Stepper::new(&g, vertices, params);
    let mut history = Vec::new();
    let mut corr: Vec<Correspondence> = Vec::new();
    let mut converged = false;
    let mut reference: Option<f64> = None;
    let mut outer = 0;
    while outer < params.max_outer {
        corr = update_correspondences(&g, vertices, &tree, target, (outer > 0).then_some(&corr[..]));
        let mut e = energy(&g, vertices, &corr, &params.weights);
        if !e.l_nr.is_finite() {
            return Err(RegError::NonFiniteEnergy(format!("outer iteration {outer}")));
        }
        history.push(HistoryEntry { outer, inner: 0, energy: e });
        let start = reference.unwrap_or(e.l_nr);
        for inner in 1..=params.max_inner {
            if e.l_nr <= params.abs_tol {
                break;
            }
            match stepper.step(&g, &corr, e.l_nr) {
                Some((ng, ne)) => {
                    g = ng;
                    e = ne;
                    history.push(HistoryEntry { outer, inner, energy: e });
                }
                None => break,
            }
        }
        outer += 1;
        let end = e.l_nr;
        if end <= params.abs_tol || (start - end) <= params.tol * start.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        reference = Some(end);
    }
    Ok((
        g,
        SolveReport {
            history,
            outer_iterations: outer,
            converged,
        },
    ))
}

/// `‖AᵀA − I‖_F` per node.
pub fn orthogonality_defects(graph: &DeformationGraph) -> Vec<f64> {
    graph
        .nodes
        .iter()
        .map(|n| (n.affine.transpose() * n.affine - Matrix3::identity()).norm())
        .collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonrigid_reg::graph::build_graph;
    use crate::{Point3, RigidTransform, Vector3};

    fn sheet() -> PointCloud3 {
        let mut pts = Vec::new();
        for i in 0..30 {
            for j in 0..12 {
                let (x, y) = (i as f64 * 2.0, j as f64 * 2.0);
                pts.push(Point3::new(x, y, 3.0 * (x / 20.0).sin() + 0.02 * y * y));
            }
        }
        PointCloud3::new(pts)
    }

    #[test]
    fn rotation_jacobian_matches_finite_differences() {
        let a = Matrix3::new(1.1, 0.2, -0.1, 0.05, 0.9, 0.3, -0.2, 0.1, 1.2);
        let (r0, j) = rotation_residual(&a);
        let h = 1e-6;
        for k in 0..3 {
            for l in 0..3 {
                let mut ap = a;
                ap[(k, l)] += h;
                let mut am = a;
                am[(k, l)] -= h;
                let fd = (rotation_residual(&ap).0 - rotation_residual(&am).0) / (2.0 * h);
                for row in 0..7 {
                    assert!((fd[row] - j[(row, 3 * k + l)]).abs() < 1e-6, "row {row} param {k}{l}");
                }
            }
        }
        assert!((r0.norm_squared() - super::super::energy::rotation_penalty(&a)).abs() < 1e-12);
    }

    #[test]
    fn identical_surfaces_converge_immediately() {
        let s = sheet();
        let g = build_graph(&s, 8.0, 4).unwrap();
        let (_, rep) = solve(&g, &s, &s, &SolveParams::default()).unwrap();
        assert!(rep.outer_iterations <= 2);
        assert!(rep.final_energy().unwrap().l_nr <= 1e-8);
        assert!(rep.converged);
    }

    #[test]
    fn unregularized_single_node_fits_rigid_motion() {
        let s = sheet();
        let g = build_graph(&s, 1e4, 4).unwrap();
        let m = RigidTransform::about_axis(&Vector3::new(0.2, 1.0, 0.3).normalize(), 0.3, &Point3::new(10.0, 5.0, 0.0))
            .compose(&RigidTransform::from_translation(Vector3::new(2.0, -3.0, 1.0)));
        let corr: Vec<_> = s
            .points
            .iter()
            .enumerate()
            .map(|(vertex, p)| Correspondence { vertex, target: m.apply(p) })
            .collect();
        let params = SolveParams {
            weights: EnergyWeights {
                alpha1: 0.0,
                alpha2: 0.0,
                welsch_c: 50.0,
            },
            ..Default::default()
        };
        let (out, hist) = solve_fixed(&g, &s, &corr, &params, 20).unwrap();
        assert!(hist.last().unwrap().l_ali < 1e-6, "{:?}", hist.last());
        assert!(hist.windows(2).all(|w| w[1].l_nr <= w[0].l_nr));
        assert!((out.nodes[0].affine - m.rotation).norm() < 1e-6);
    }

    #[test]
    fn strong_rigidity_keeps_affines_orthogonal() {
        let s = sheet();
        let target: PointCloud3 = s
            .points
            .iter()
            .map(|p| Point3::new(p.x * 1.05, p.y, p.z + 0.03 * p.x))
            .collect();
        let g = build_graph(&s, 8.0, 4).unwrap();
        let params = SolveParams {
            weights: EnergyWeights {
                alpha2: 1e6,
                ..Default::default()
            },
            max_outer: 10,
            ..Default::default()
        };
        let (out, rep) = solve(&g, &s, &target, &params).unwrap();
        assert!(rep.is_monotone());
        assert!(orthogonality_defects(&out).iter().all(|&d| d <= 1e-3));
    }

    #[test]
    fn bent_sheet_registration_is_monotone_and_close() {
        let s = sheet();
        let target: PointCloud3 = s
            .points
            .iter()
            .map(|p| {
                let z = p.z + 4.0 * ((p.x - 30.0) / 30.0).powi(2);
                Point3::new(p.x + 0.5, p.y - 0.3, z)
            })
            .collect();
        let g = build_graph(&s, 8.0, 4).unwrap();
        let (out, rep) = solve(&g, &s, &target, &SolveParams::default()).unwrap();
        assert!(rep.is_monotone());
        let def = out.deform_vertices(&s);
        let tree = KdTree::from_cloud(&target);
        let mut d: Vec<f64> = def.points.iter().map(|p| tree.nearest(p).unwrap().distance).collect();
        d.sort_by(f64::total_cmp);
        assert!(d[d.len() / 2] < 0.5, "median {}", d[d.len() / 2]);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let s = sheet();
        let g = build_graph(&s, 8.0, 4).unwrap();
        let mut bad = s.clone();
        bad.points[3].x = f64::NAN;
        assert!(matches!(solve(&g, &s, &bad, &SolveParams::default()), Err(RegError::NonFiniteEnergy(_))));
    }
}
