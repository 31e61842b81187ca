//! Point-cloud distances: Chamfer, augmented Chamfer, exact EMD (small-n
//! oracle), the k-d/auction EMD upper bound, and the kNN sampling-rate
//! normalizer.
//!
//! EMD is reported as a mean per point (`sum / M`) so it is on the same scale
//! as the EM-kD value, which averages per leaf and then across leaves. The
//! classical sum form is `M ×` the value returned here.

use alloc::vec::Vec;

use crate::cloud::{dist, PointCloud};
use crate::error::{Error, Result};
use crate::kdpartition::{build_partition, leaf_pair_iter};
use crate::lap::{self, auction_assign, distance_matrix, hungarian_with_cap};
use crate::par;
use crate::spatial::NeighborIndex;

/// Default neighbor count for [`sampling_normalizer`].
pub const DEFAULT_NORMALIZER_K: usize = 5;
/// Default EM-kD leaf size.
pub const DEFAULT_LEAF_SIZE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Chamfer,
    AugChamfer,
    EmdExactMean,
    Emkd,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Chamfer => "chamfer",
            MetricKind::AugChamfer => "aug_chamfer",
            MetricKind::EmdExactMean => "emd_exact_mean",
            MetricKind::Emkd => "emkd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub value: f64,
    pub kind: MetricKind,
    pub depth: Option<u32>,
    pub epsilon: Option<f64>,
    pub normalizer: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmkdParams {
    pub depth: u32,
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl EmkdParams {
    /// Depth giving leaves of `leaf_size` points (floor of `log2(m / leaf_size)`,
    /// zero when `m <= leaf_size`), with ε = 1 and 100 rounds.
    pub fn for_leaf_size(m: usize, leaf_size: usize) -> Self {
        let mut depth = 0;
        while (m >> (depth + 1)) >= leaf_size.max(1) {
            depth += 1;
        }
        Self {
            depth,
            epsilon: lap::DEFAULT_EPSILON,
            max_iterations: lap::DEFAULT_ROUNDS,
        }
    }
}

/// The two directed nearest-neighbor sums `(Σ_p min_q, Σ_q min_p)`.
pub fn directed_chamfer(p: &PointCloud, q: &PointCloud) -> (f64, f64) {
    let qi = NeighborIndex::new(q.points());
    let pi = NeighborIndex::new(p.points());
    let forward = p
        .points()
        .iter()
        .map(|x| libm::sqrt(qi.nearest(x).expect("non-empty").dist_sq))
        .sum();
    let backward = q
        .points()
        .iter()
        .map(|x| libm::sqrt(pi.nearest(x).expect("non-empty").dist_sq))
        .sum();
    (forward, backward)
}

pub fn chamfer(p: &PointCloud, q: &PointCloud) -> f64 {
    let (a, b) = directed_chamfer(p, q);
    a + b
}

pub fn aug_chamfer(p: &PointCloud, q: &PointCloud) -> f64 {
    let (a, b) = directed_chamfer(p, q);
    a.max(b)
}

/// Exact EMD divided by M, via the Hungarian oracle. Capped at
/// [`lap::HUNGARIAN_CAP`] points.
pub fn emd_exact_mean(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    emd_exact_mean_with_cap(p, q, lap::HUNGARIAN_CAP)
}

pub fn emd_exact_mean_with_cap(p: &PointCloud, q: &PointCloud, cap: usize) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SizeMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let n = p.len();
    if n > cap {
        return Err(Error::OracleCap { size: n, cap });
    }
    let cost = distance_matrix(p.points(), q.points());
    let sol = hungarian_with_cap(&cost, n, cap)?;
    Ok(sol.cost / n as f64)
}

/// Match the leftover sources of an incomplete auction to the nearest still
/// free target, in source order (lowest target index on ties).
pub(crate) fn fill_greedy(a: &[[f64; 3]], b: &[[f64; 3]], assignment: &mut [Option<usize>], distances: &mut [f64]) {
    let mut taken = alloc::vec![false; b.len()];
    for j in assignment.iter().flatten() {
        taken[*j] = true;
    }
    for i in 0..a.len() {
        if assignment[i].is_some() {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (j, bj) in b.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let d = dist(&a[i], bj);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let (j, d) = best.expect("a free target exists while a source is free");
        taken[j] = true;
        assignment[i] = Some(j);
        distances[i] = d;
    }
}

/// k-d/auction EMD upper bound.
///
/// Both clouds are partitioned to `2^depth` leaves, an auction runs on every
/// positional leaf pair, and the result is the mean over leaves of each leaf's
/// mean matched distance. Leaves the auction leaves incomplete are finished by
/// [`fill_greedy`] so every leaf contributes a full bijection.
pub fn emkd(p: &PointCloud, q: &PointCloud, params: &EmkdParams) -> Result<MetricReport> {
    if p.len() != q.len() {
        return Err(Error::SizeMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let pa = build_partition(p, params.depth)?;
    let qa = build_partition(q, params.depth)?;
    let pairs: Vec<(&[usize], &[usize])> = leaf_pair_iter(&pa, &qa)?.collect();
    let leaf_means = par::map(&pairs, |(sl, tl)| -> Result<f64> {
        let a: Vec<[f64; 3]> = sl.iter().map(|&i| *p.point(i)).collect();
        let b: Vec<[f64; 3]> = tl.iter().map(|&i| *q.point(i)).collect();
        let mut sol = auction_assign(&a, &b, params.epsilon, params.max_iterations)?;
        if !sol.complete {
            fill_greedy(&a, &b, &mut sol.assignment, &mut sol.distances);
        }
        Ok(sol.distances.iter().sum::<f64>() / a.len() as f64)
    });
    let mut sum = 0.0;
    for m in leaf_means {
        sum += m?;
    }
    Ok(MetricReport {
        value: sum / pairs.len() as f64,
        kind: MetricKind::Emkd,
        depth: Some(params.depth),
        epsilon: Some(params.epsilon),
        normalizer: None,
    })
}

/// Mean distance from each point to its `k` nearest other points.
pub fn sampling_normalizer(p: &PointCloud, k: usize) -> Result<f64> {
    let m = p.len();
    if k == 0 || k >= m {
        return Err(Error::NeighborCount { k, points: m });
    }
    let idx = NeighborIndex::new(p.points());
    let mut total = 0.0;
    for (i, x) in p.points().iter().enumerate() {
        for n in idx.k_nearest(x, k, Some(i)) {
            total += libm::sqrt(n.dist_sq);
        }
    }
    Ok(total / (m * k) as f64)
}

/// `ln(d_A(p, q) / T(q))`; `-∞` when `d_A = 0`.
pub fn normalized_log_aug_chamfer(p: &PointCloud, q: &PointCloud, k: usize) -> Result<f64> {
    let t = sampling_normalizer(q, k)?;
    Ok(normalized_log(aug_chamfer(p, q), t))
}

/// `ln(value / normalizer)` with the `-∞` sentinel for a zero value.
pub fn normalized_log(value: f64, normalizer: f64) -> f64 {
    if value == 0.0 {
        f64::NEG_INFINITY
    } else {
        libm::log(value / normalizer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn chamfer_hand_example() {
        let p = cloud(&[[0.0, 0.0, 0.0]]);
        let q = cloud(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&p, &q), 4.0);
        assert_eq!(aug_chamfer(&p, &q), 3.0);
        assert_eq!(chamfer(&q, &q), 0.0);
        assert_eq!(aug_chamfer(&p, &p), 0.0);
    }

    #[test]
    fn emd_hand_example() {
        let p = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let q = cloud(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        // {p0→q1, p1→q0} costs 1 + 0, the other pairing 1 + √2
        assert_eq!(emd_exact_mean(&p, &q).unwrap(), 0.5);
        assert_eq!(emd_exact_mean(&p, &p).unwrap(), 0.0);
        assert!(matches!(
            emd_exact_mean(&p, &cloud(&[[0.0; 3]])),
            Err(Error::SizeMismatch { .. })
        ));
        assert!(matches!(
            emd_exact_mean_with_cap(&p, &q, 1),
            Err(Error::OracleCap { size: 2, cap: 1 })
        ));
    }

    #[test]
    fn normalizer_on_unit_lattice() {
        let mut pts = vec![];
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let c = cloud(&pts);
        assert_eq!(sampling_normalizer(&c, 3).unwrap(), 1.0);
        assert_eq!(sampling_normalizer(&c.scaled(2.5), 3).unwrap(), 2.5);
        assert_eq!(
            sampling_normalizer(&c, 8),
            Err(Error::NeighborCount { k: 8, points: 8 })
        );
    }

    #[test]
    fn normalized_log_examples() {
        let p = cloud(&[[0.0, 0.0, 0.0]]);
        let q = cloud(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(normalized_log_aug_chamfer(&p, &q, 1).unwrap(), libm::log(3.0));
        assert_eq!(normalized_log_aug_chamfer(&q, &q, 1).unwrap(), f64::NEG_INFINITY);
        let a = normalized_log_aug_chamfer(&p, &q, 1).unwrap();
        let b = normalized_log_aug_chamfer(&p.scaled(4.0), &q.scaled(4.0), 1).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn emkd_identity_and_depth_zero() {
        let pts: Vec<[f64; 3]> = (0..64)
            .map(|i| [(i % 4) as f64, ((i / 4) % 4) as f64, (i / 16) as f64])
            .collect();
        let c = cloud(&pts);
        for depth in 0..=3 {
            let r = emkd(&c, &c, &EmkdParams { depth, epsilon: 1e-3, max_iterations: 10_000 }).unwrap();
            assert!(r.value <= 1e-3, "depth {depth}: {}", r.value);
            assert_eq!(r.depth, Some(depth));
        }
        let shifted = c.translated([0.3, -0.2, 0.1]);
        let params = EmkdParams { depth: 0, epsilon: 1e-3, max_iterations: 10_000 };
        let sol = auction_assign(c.points(), shifted.points(), 1e-3, 10_000).unwrap();
        let direct = sol.distances.iter().sum::<f64>() / 64.0;
        assert_eq!(emkd(&c, &shifted, &params).unwrap().value, direct);
    }

    #[test]
    fn leaf_size_depth() {
        assert_eq!(EmkdParams::for_leaf_size(65536, 1024).depth, 6);
        assert_eq!(EmkdParams::for_leaf_size(1024, 1024).depth, 0);
        assert_eq!(EmkdParams::for_leaf_size(500, 1024).depth, 0);
        assert_eq!(EmkdParams::for_leaf_size(3000, 1024).depth, 1);
    }
}
