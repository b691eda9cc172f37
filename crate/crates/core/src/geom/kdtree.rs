use super::{GeomError, Point3, PointCloud};
use crate::Real;

const LEAF_SIZE: usize = 12;
/// Below this many points queries scan the whole cloud.
const EXHAUSTIVE_BELOW: usize = 64;

/// A neighbour returned by a query: index into the cloud and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T> {
    pub index: usize,
    pub distance: T,
}

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: T, left: usize, right: usize },
}

/// Static k-d tree over a point set.
///
/// Results are ordered by ascending distance, ties broken by lower index.
#[derive(Debug, Clone)]
pub struct KdTree<T: Real> {
    points: Vec<Point3<T>>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<T: Real> KdTree<T> {
    pub fn new(points: &[Point3<T>]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if points.len() >= EXHAUSTIVE_BELOW {
            let n = points.len();
            tree.build(0, n);
        }
        tree
    }

    pub fn from_cloud(cloud: &PointCloud<T>) -> Self {
        Self::new(&cloud.points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (lo, hi) = self.order[start..end].iter().fold(
            ([T::max_value().unwrap(); 3], [T::min_value().unwrap(); 3]),
            |(mut lo, mut hi), &i| {
                for d in 0..3 {
                    lo[d] = lo[d].min(self.points[i][d]);
                    hi[d] = hi[d].max(self.points[i][d]);
                }
                (lo, hi)
            },
        );
        let dim = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
            .unwrap();
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][dim].partial_cmp(&pts[b][dim]).unwrap().then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][dim];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    /// The `k` nearest points to `query`.
    pub fn knn(&self, query: &Point3<T>, k: usize) -> Result<Vec<Neighbor<T>>, GeomError> {
        if self.points.is_empty() {
            return Err(GeomError::EmptyCloud);
        }
        if k == 0 || k > self.points.len() {
            return Err(GeomError::InvalidK {
                k,
                len: self.points.len(),
            });
        }
        let mut best: Vec<(T, usize)> = Vec::with_capacity(k + 1);
        if self.nodes.is_empty() {
            for i in 0..self.points.len() {
                offer(&mut best, k, (self.points[i] - query).norm_squared(), i);
            }
        } else {
            self.search(0, query, k, &mut best);
        }
        Ok(best
            .into_iter()
            .map(|(d2, index)| Neighbor {
                index,
                distance: d2.sqrt(),
            })
            .collect())
    }

    pub fn nearest(&self, query: &Point3<T>) -> Result<Neighbor<T>, GeomError> {
        Ok(self.knn(query, 1)?[0])
    }

    /// Every point within `radius` of `query` (inclusive), ascending by distance.
    pub fn within_radius(&self, query: &Point3<T>, radius: T) -> Vec<Neighbor<T>> {
        let r2 = radius * radius;
        let mut out: Vec<(T, usize)> = Vec::new();
        if self.nodes.is_empty() {
            for (i, p) in self.points.iter().enumerate() {
                let d2 = (p - query).norm_squared();
                if d2 <= r2 {
                    out.push((d2, i));
                }
            }
        } else {
            self.radius_search(0, query, r2, &mut out);
        }
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        out.into_iter()
            .map(|(d2, index)| Neighbor {
                index,
                distance: d2.sqrt(),
            })
            .collect()
    }

    fn search(&self, node: usize, q: &Point3<T>, k: usize, best: &mut Vec<(T, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    offer(best, k, (self.points[i] - q).norm_squared(), i);
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                // `<=` keeps equal-distance candidates so the index tie-break holds.
                if best.len() < k || diff * diff <= best[best.len() - 1].0 {
                    self.search(far, q, k, best);
                }
            }
        }
    }

    fn radius_search(&self, node: usize, q: &Point3<T>, r2: T, out: &mut Vec<(T, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 <= r2 {
                        out.push((d2, i));
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.radius_search(near, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_search(far, q, r2, out);
                }
            }
        }
    }
}

/// Inserts `(d2, idx)` into the sorted candidate list, keeping at most `k`.
#[inline]
fn offer<T: Real>(best: &mut Vec<(T, usize)>, k: usize, d2: T, idx: usize) {
    let worse = |a: &(T, usize)| a.0 > d2 || (a.0 == d2 && a.1 > idx);
    if best.len() == k && !worse(&best[k - 1]) {
        return;
    }
    let pos = best.iter().position(worse).unwrap_or(best.len());
    best.insert(pos, (d2, idx));
    if best.len() > k {
        best.pop();
    }
}

/// One-off k-nearest-neighbour query over `cloud`.
pub fn knn<T: Real>(
    query: &Point3<T>,
    cloud: &PointCloud<T>,
    k: usize,
) -> Result<Vec<Neighbor<T>>, GeomError> {
    KdTree::from_cloud(cloud).knn(query, k)
}
