//! Static 3-d tree for exact nearest-neighbour queries.

use crate::geometry::Point3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Balanced k-d tree over a borrowed point set. Built once, queried many
/// times; distances are computed the same way as a brute-force scan so the
/// results match it exactly.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [Point3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
pub fn dist_sq(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Point3]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis])
        });
        let value = pts[self.order[mid]][axis];
        self.nodes.push(Node::Split { axis, value, left: 0, right: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point, `None` when empty.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Point3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist_sq(q, &self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point3> = (0..500)
            .map(|_| Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let tree = KdTree::build(&pts);
        for _ in 0..500 {
            let q = Point3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            let (i, d) = tree.nearest(&q).unwrap();
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, p) in pts.iter().enumerate() {
                let dj = dist_sq(&q, p);
                if dj < best.1 {
                    best = (j, dj);
                }
            }
            assert_eq!(d, best.1);
            assert_eq!(i, best.0);
        }
    }

    proptest::proptest! {
        #[test]
        fn nearest_distance_is_minimal(
            pts in proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..80),
            q in (-6.0..6.0f64, -6.0..6.0f64, -6.0..6.0f64),
        ) {
            let pts: Vec<Point3> = pts.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect();
            let q = Point3::new(q.0, q.1, q.2);
            let (i, d) = KdTree::build(&pts).nearest(&q).unwrap();
            let best = pts.iter().map(|p| dist_sq(&q, p)).fold(f64::INFINITY, f64::min);
            proptest::prop_assert_eq!(d, best);
            proptest::prop_assert_eq!(dist_sq(&q, &pts[i]), d);
        }
    }

    #[test]
    fn duplicates_and_empty() {
        let pts = vec![Point3::new(1.0, 1.0, 1.0); 20];
        let tree = KdTree::build(&pts);
        assert_eq!(tree.nearest(&Point3::origin()).unwrap(), (0, 3.0));
        assert!(KdTree::build(&[]).nearest(&Point3::origin()).is_none());
    }
}
