//! Exact k-nearest-neighbor search over a static point set.
//!
//! Results are ordered by `(squared distance, index)`, which makes them
//! identical (bit for bit, including tie resolution) to a brute-force scan
//! that uses the same ordering.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::cloud::{dist_sq, Point3};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree over borrowed points. `order` holds point indices arranged
/// so every node owns a contiguous range.
#[derive(Debug, Clone)]
pub struct NeighborIndex<'a> {
    points: &'a [Point3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

#[inline]
fn neighbor_cmp(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.dist_sq
        .total_cmp(&b.dist_sq)
        .then_with(|| a.index.cmp(&b.index))
}

impl<'a> NeighborIndex<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(points, &mut order, 0, points.len(), &mut nodes);
        }
        Self {
            points,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point to `query`; lowest index wins ties. `None` on an empty set.
    pub fn nearest(&self, query: &Point3) -> Option<Neighbor> {
        let mut best = Neighbor {
            index: usize::MAX,
            dist_sq: f64::INFINITY,
        };
        if self.nodes.is_empty() {
            return None;
        }
        self.nearest_rec(0, query, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: usize, q: &Point3, best: &mut Neighbor) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist_sq: dist_sq(q, &self.points[i]),
                    };
                    if neighbor_cmp(&cand, best) == Ordering::Less {
                        *best = cand;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.dist_sq {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points sorted by `(distance, index)`. Excludes the point
    /// with index `skip`, if given (used to drop the query itself).
    pub fn k_nearest(&self, query: &Point3, k: usize, skip: Option<usize>) -> Vec<Neighbor> {
        let mut heap: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.knn_rec(0, query, k, skip, &mut heap);
        }
        heap
    }

    fn knn_rec(&self, node: usize, q: &Point3, k: usize, skip: Option<usize>, out: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == skip {
                        continue;
                    }
                    let cand = Neighbor {
                        index: i,
                        dist_sq: dist_sq(q, &self.points[i]),
                    };
                    if out.len() == k {
                        if neighbor_cmp(&cand, &out[k - 1]) != Ordering::Less {
                            continue;
                        }
                        out.pop();
                    }
                    let pos = out
                        .binary_search_by(|n| neighbor_cmp(n, &cand))
                        .unwrap_or_else(|p| p);
                    out.insert(pos, cand);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, skip, out);
                if out.len() < k || diff * diff <= out[k - 1].dist_sq {
                    self.knn_rec(far, q, k, skip, out);
                }
            }
        }
    }
}

fn build(points: &[Point3], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in slice.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    if hi[axis] <= lo[axis] {
        // all points coincide
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[slice[mid]][axis];
    // left: [start, start+mid) has coords <= value; right: coords >= value
    nodes.push(Node::Leaf { start, end });
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}
