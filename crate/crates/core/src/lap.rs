//! Linear assignment: a forward ε-auction over Euclidean costs, and a dense
//! Hungarian solver used as an exact oracle for small problems.

use alloc::vec;
use alloc::vec::Vec;

use crate::cloud::{dist, Point3};
use crate::error::{Error, Result};

/// Default Hungarian size cap.
pub const HUNGARIAN_CAP: usize = 512;

/// Auction defaults: ε = 1 scene unit and 100 rounds.
pub const DEFAULT_EPSILON: f64 = 1.0;
pub const DEFAULT_ROUNDS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionSolution {
    /// Source `i` is matched to target `assignment[i]`.
    pub assignment: Vec<Option<usize>>,
    /// `‖a_i − b_σ(i)‖`, or `+∞` for unassigned sources.
    pub distances: Vec<f64>,
    pub prices: Vec<f64>,
    pub epsilon: f64,
    pub iterations_run: usize,
    pub complete: bool,
}

impl AuctionSolution {
    /// Sum of distances over assigned pairs.
    pub fn assigned_cost(&self) -> f64 {
        self.distances.iter().filter(|d| d.is_finite()).sum()
    }

    pub fn assigned_count(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_some()).count()
    }
}

fn check_points(pts: &[Point3]) -> Result<()> {
    match pts
        .iter()
        .position(|p| !(p[0].is_finite() && p[1].is_finite() && p[2].is_finite()))
    {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Gauss–Seidel forward auction on benefit `−‖a_i − b_j‖`.
///
/// One round lets every source that is unassigned at the start of the round
/// bid once; `max_rounds` caps the number of rounds. When the cap binds the
/// result may be incomplete, but assigned pairs still satisfy
/// ε-complementary slackness.
pub fn auction_assign(a: &[Point3], b: &[Point3], epsilon: f64, max_rounds: usize) -> Result<AuctionSolution> {
    auction_with_observer(a, b, epsilon, max_rounds, |_| {})
}

/// Same as [`auction_assign`], calling `observe(prices)` after every round.
pub fn auction_with_observer<F: FnMut(&[f64])>(
    a: &[Point3],
    b: &[Point3],
    epsilon: f64,
    max_rounds: usize,
    mut observe: F,
) -> Result<AuctionSolution> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::SizeMismatch {
            left: n,
            right: b.len(),
        });
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("epsilon must be > 0, got {epsilon}")));
    }
    check_points(a)?;
    check_points(b)?;

    let mut prices = vec![0.0f64; n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut assignment: Vec<Option<usize>> = vec![None; n];
    let mut unassigned: Vec<usize> = (0..n).collect();
    let mut rounds = 0;

    while !unassigned.is_empty() && rounds < max_rounds {
        let bidders = core::mem::take(&mut unassigned);
        for i in bidders {
            let ai = &a[i];
            let mut best_j = 0usize;
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for (j, bj) in b.iter().enumerate() {
                let v = -dist(ai, bj) - prices[j];
                if v > best {
                    second = best;
                    best = v;
                    best_j = j;
                } else if v > second {
                    second = v;
                }
            }
            let increment = if second.is_finite() { best - second + epsilon } else { epsilon };
            prices[best_j] += increment;
            if let Some(prev) = owner[best_j].replace(i) {
                assignment[prev] = None;
                unassigned.push(prev);
            }
            assignment[i] = Some(best_j);
        }
        rounds += 1;
        unassigned.sort_unstable();
        observe(&prices);
    }

    let distances = assignment
        .iter()
        .enumerate()
        .map(|(i, s)| s.map_or(f64::INFINITY, |j| dist(&a[i], &b[j])))
        .collect();
    Ok(AuctionSolution {
        complete: unassigned.is_empty(),
        assignment,
        distances,
        prices,
        epsilon,
        iterations_run: rounds,
    })
}

/// Exact minimum-cost perfect matching with its dual certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct HungarianSolution {
    /// Row `i` is matched to column `assignment[i]`.
    pub assignment: Vec<usize>,
    /// `Σ cost[i][assignment[i]]`, summed in row order.
    pub cost: f64,
    /// Dual potentials: `row[i] + col[j] <= cost[i][j]`, tight on matched pairs.
    pub row_potentials: Vec<f64>,
    pub col_potentials: Vec<f64>,
}

/// Shortest-augmenting-path Hungarian method, O(n³). `cost` is row-major
/// `n × n`.
pub fn hungarian_assign(cost: &[f64], n: usize) -> Result<HungarianSolution> {
    hungarian_with_cap(cost, n, HUNGARIAN_CAP)
}

pub fn hungarian_with_cap(cost: &[f64], n: usize, cap: usize) -> Result<HungarianSolution> {
    if n > cap {
        return Err(Error::OracleCap { size: n, cap });
    }
    if cost.len() != n * n {
        return Err(Error::SizeMismatch {
            left: n * n,
            right: cost.len(),
        });
    }
    if let Some(k) = cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFiniteCost { row: k / n, col: k % n });
    }
    if n == 0 {
        return Ok(HungarianSolution {
            assignment: vec![],
            cost: 0.0,
            row_potentials: vec![],
            col_potentials: vec![],
        });
    }

    // 1-based arrays, index 0 is the virtual root.
    let c = |i: usize, j: usize| cost[(i - 1) * n + (j - 1)];
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(HungarianSolution {
        assignment,
        cost: total,
        row_potentials: u[1..].to_vec(),
        col_potentials: v[1..].to_vec(),
    })
}

/// Dense Euclidean cost matrix between two equally sized point sets.
pub fn distance_matrix(a: &[Point3], b: &[Point3]) -> Vec<f64> {
    let mut m = Vec::with_capacity(a.len() * b.len());
    for p in a {
        for q in b {
            m.push(dist(p, q));
        }
    }
    m
}
