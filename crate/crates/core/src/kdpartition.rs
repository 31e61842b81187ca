//! Balanced k-d partitions whose leaves pair up positionally across clouds.
//!
//! Construction rule (our choice; nothing upstream pins it down):
//! * split axis = axis with the largest coordinate spread among the node's
//!   points, lowest axis on ties;
//! * points are ordered by `(coordinate, original index)` and the left child
//!   takes the first `ceil(n / 2)`;
//! * the stored split value is the midpoint between the largest left and the
//!   smallest right coordinate.
//!
//! Leaf sizes therefore depend only on `M` and `depth`, so two clouds with the
//! same point count always produce leaves of pairwise equal size.

use alloc::vec::Vec;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KdPartition {
    depth: u32,
    leaves: Vec<Vec<usize>>,
    split_axes: Vec<usize>,
    split_values: Vec<f64>,
}

impl KdPartition {
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Leaves in left-to-right DFS order.
    pub fn leaves(&self) -> &[Vec<usize>] {
        &self.leaves
    }

    /// Split axis per internal node, in breadth-first (heap) order.
    pub fn split_axes(&self) -> &[usize] {
        &self.split_axes
    }

    /// Split value per internal node, in breadth-first (heap) order.
    pub fn split_values(&self) -> &[f64] {
        &self.split_values
    }
}

/// Smallest leaf size for `m` points at `depth` under the `ceil(n/2)` rule is
/// `floor(m / 2^depth)`, so `2^depth <= m` is both necessary and sufficient.
pub fn build_partition(cloud: &PointCloud, depth: u32) -> Result<KdPartition> {
    let m = cloud.len();
    let needed = 1usize.checked_shl(depth).filter(|&n| n <= m);
    let Some(leaf_count) = needed else {
        return Err(Error::DepthTooLarge {
            depth,
            needed: 1usize.checked_shl(depth).unwrap_or(usize::MAX),
            points: m,
        });
    };
    let pts = cloud.points();
    let internal = leaf_count - 1;
    let mut split_axes = alloc::vec![0usize; internal];
    let mut split_values = alloc::vec![0.0f64; internal];

    // Breadth-first over levels; each level's node list is already in DFS leaf
    // order because children are pushed left then right.
    let mut level: Vec<Vec<usize>> = alloc::vec![(0..m).collect()];
    let mut heap_id = 0usize;
    for _ in 0..depth {
        let mut next = Vec::with_capacity(level.len() * 2);
        for mut node in level {
            let axis = widest_axis(pts, &node);
            node.sort_by(|&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
            let cut = node.len().div_ceil(2);
            let right = node.split_off(cut);
            let left_max = pts[*node.last().expect("non-empty left")][axis];
            let right_min = pts[right[0]][axis];
            split_axes[heap_id] = axis;
            split_values[heap_id] = 0.5 * (left_max + right_min);
            heap_id += 1;
            next.push(node);
            next.push(right);
        }
        level = next;
    }
    Ok(KdPartition {
        depth,
        leaves: level,
        split_axes,
        split_values,
    })
}

fn widest_axis(pts: &[[f64; 3]], node: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in node {
        for a in 0..3 {
            lo[a] = lo[a].min(pts[i][a]);
            hi[a] = hi[a].max(pts[i][a]);
        }
    }
    let mut best = 0;
    for a in 1..3 {
        if hi[a] - lo[a] > hi[best] - lo[best] {
            best = a;
        }
    }
    best
}

/// Pair leaves of two partitions positionally.
pub fn leaf_pair_iter<'a>(
    a: &'a KdPartition,
    b: &'a KdPartition,
) -> Result<impl Iterator<Item = (&'a [usize], &'a [usize])> + 'a> {
    if a.depth != b.depth {
        return Err(Error::DepthMismatch {
            left: a.depth,
            right: b.depth,
        });
    }
    for (leaf, (la, lb)) in a.leaves.iter().zip(&b.leaves).enumerate() {
        if la.len() != lb.len() {
            return Err(Error::LeafSizeMismatch {
                leaf,
                left: la.len(),
                right: lb.len(),
            });
        }
    }
    Ok(a
        .leaves
        .iter()
        .zip(&b.leaves)
        .map(|(x, y)| (x.as_slice(), y.as_slice())))
}
