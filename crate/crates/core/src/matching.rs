//! Source/target correspondences for the assignment-based training scheme.
//!
//! A matching is stored by row alignment: source row `i` is matched to target
//! row `i`. Changing the matching means permuting target rows; the target
//! multiset never changes.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::cloud::{dist, PointCloud, Point3};
use crate::error::{Error, Result};
use crate::kdpartition::{build_partition, leaf_pair_iter};
use crate::lap::{self, auction_assign};
use crate::par;
use crate::rng;
use crate::spatial::NeighborIndex;

/// Default flow clamp: `f = 1 / max(w, δ)`.
pub const DEFAULT_CLAMP_DELTA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingState {
    target: PointCloud,
    /// `target[i] == original[permutation[i]]`.
    permutation: Vec<usize>,
    /// Accepted reassignment swaps, one entry per logged period.
    pub swap_log: Vec<usize>,
}

impl MatchingState {
    pub fn new(target: PointCloud) -> Self {
        let permutation = (0..target.len()).collect();
        Self {
            target,
            permutation,
            swap_log: Vec::new(),
        }
    }

    /// Rebuild a state from the original target and a stored permutation.
    pub fn from_permutation(original: &PointCloud, permutation: Vec<usize>) -> Result<Self> {
        if permutation.len() != original.len() {
            return Err(Error::SizeMismatch {
                left: original.len(),
                right: permutation.len(),
            });
        }
        let mut seen = vec![false; permutation.len()];
        for &p in &permutation {
            if p >= seen.len() || seen[p] {
                return Err(Error::InvalidParameter(alloc::format!(
                    "not a permutation: entry {p}"
                )));
            }
            seen[p] = true;
        }
        let mut target = original.clone();
        target.gather_in_place(&permutation);
        Ok(Self {
            target,
            permutation,
            swap_log: Vec::new(),
        })
    }

    pub fn target(&self) -> &PointCloud {
        &self.target
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    fn swap(&mut self, a: usize, b: usize) {
        self.target.swap_rows(a, b);
        self.permutation.swap(a, b);
    }

    fn apply_gather(&mut self, perm: &[usize]) {
        self.target.gather_in_place(perm);
        self.permutation = perm.iter().map(|&j| self.permutation[j]).collect();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QapWeights {
    pub clamp_delta: f64,
}

impl Default for QapWeights {
    fn default() -> Self {
        Self {
            clamp_delta: DEFAULT_CLAMP_DELTA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QapMode {
    /// All ordered source pairs; limited to [`lap::HUNGARIAN_CAP`] points.
    Exact,
    /// Each source point paired with its `n` nearest source neighbors.
    Neighbors(usize),
}

/// `E(A) = Σ f(q, q̂) · w(A(q), A(q̂))` over ordered source pairs, with
/// `w` the Euclidean distance and `f = 1 / max(w_source, δ)`.
pub fn qap_energy(source: &PointCloud, state: &MatchingState, weights: &QapWeights, mode: QapMode) -> Result<f64> {
    let m = source.len();
    if state.len() != m {
        return Err(Error::SizeMismatch {
            left: m,
            right: state.len(),
        });
    }
    if !(weights.clamp_delta > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!(
            "clamp_delta must be > 0, got {}",
            weights.clamp_delta
        )));
    }
    let s = source.points();
    let t = state.target.points();
    let term = |i: usize, j: usize| dist(&t[i], &t[j]) / dist(&s[i], &s[j]).max(weights.clamp_delta);
    let mut e = 0.0;
    match mode {
        QapMode::Exact => {
            if m > lap::HUNGARIAN_CAP {
                return Err(Error::OracleCap {
                    size: m,
                    cap: lap::HUNGARIAN_CAP,
                });
            }
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        e += term(i, j);
                    }
                }
            }
        }
        QapMode::Neighbors(cap) => {
            let idx = NeighborIndex::new(s);
            for (i, p) in s.iter().enumerate() {
                for n in idx.k_nearest(p, cap, Some(i)) {
                    e += term(i, n.index);
                }
            }
        }
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyParams {
    pub depth: u32,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GreedyReport {
    pub leaves: usize,
    pub incomplete_leaves: usize,
    /// Source rows matched by the random fill rather than by the auction.
    pub randomly_matched: usize,
}

/// Initial matching from per-leaf auctions.
///
/// Per positional leaf pair: run the auction, order matched pairs by distance
/// (source index on ties), keep the first pair per target, pair the leftover
/// sources with the leftover targets in a seeded random order, then realign
/// target rows so each source row holds its chosen target point.
pub fn qaad_greedy(source: &PointCloud, state: &mut MatchingState, params: &GreedyParams) -> Result<GreedyReport> {
    let m = source.len();
    if state.len() != m {
        return Err(Error::SizeMismatch {
            left: m,
            right: state.len(),
        });
    }
    let sp = build_partition(source, params.depth)?;
    let tp = build_partition(&state.target, params.depth)?;
    let pairs: Vec<(usize, (&[usize], &[usize]))> = leaf_pair_iter(&sp, &tp)?.enumerate().collect();
    let target = &state.target;
    let per_leaf = par::map(&pairs, |&(leaf, (sl, tl))| -> Result<(Vec<(usize, usize)>, bool, usize)> {
        let a: Vec<Point3> = sl.iter().map(|&i| *source.point(i)).collect();
        let b: Vec<Point3> = tl.iter().map(|&i| *target.point(i)).collect();
        let sol = auction_assign(&a, &b, params.epsilon, params.max_iterations)?;

        let mut order: Vec<usize> = (0..a.len()).filter(|&i| sol.assignment[i].is_some()).collect();
        order.sort_by(|&x, &y| sol.distances[x].total_cmp(&sol.distances[y]).then(x.cmp(&y)));
        let mut source_used = vec![false; a.len()];
        let mut target_used = vec![false; b.len()];
        let mut matched = Vec::with_capacity(a.len());
        for i in order {
            let j = sol.assignment[i].expect("filtered");
            if !target_used[j] {
                target_used[j] = true;
                source_used[i] = true;
                matched.push((i, j));
            }
        }
        let rest_s: Vec<usize> = (0..a.len()).filter(|&i| !source_used[i]).collect();
        let mut rest_t: Vec<usize> = (0..b.len()).filter(|&j| !target_used[j]).collect();
        let filled = rest_s.len();
        if filled > 0 {
            let mut r = rng::stream_rng(params.seed, rng::stream::GREEDY | leaf as u64);
            rest_t.shuffle(&mut r);
            matched.extend(rest_s.into_iter().zip(rest_t));
        }
        let global = matched.into_iter().map(|(i, j)| (sl[i], tl[j])).collect();
        Ok((global, sol.complete, filled))
    });

    let mut perm = vec![usize::MAX; m];
    let mut report = GreedyReport {
        leaves: pairs.len(),
        ..Default::default()
    };
    for leaf in per_leaf {
        let (global, complete, filled) = leaf?;
        report.incomplete_leaves += usize::from(!complete);
        report.randomly_matched += filled;
        for (s, t) in global {
            perm[s] = t;
        }
    }
    debug_assert!(perm.iter().all(|&p| p != usize::MAX));
    state.apply_gather(&perm);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReassignOutcome {
    /// Accepted `(source row, target row)` swaps, strongest decline first.
    pub swaps: Vec<(usize, usize)>,
    /// Summed pair losses over the accepted swaps, before and after.
    pub touched_loss_before: f64,
    pub touched_loss_after: f64,
}

impl ReassignOutcome {
    pub fn accepted(&self) -> usize {
        self.swaps.len()
    }
}

/// In-training refinement of the matching.
///
/// For each sampled source row `s` with prediction `p_s`: find the nearest
/// target among rows `target_query_ids` (global row `n`), predict source row
/// `n` through `predict_fn`, and compare
/// `‖p_s − T[s]‖ + ‖p_n − T[n]‖` against the swapped
/// `‖p_s − T[n]‖ + ‖p_n − T[s]‖`. Strict improvements are ranked by decline
/// (source row on ties); the first candidate per target row is kept, and a
/// candidate is accepted only if neither of its rows already takes part in
/// an accepted swap. Accepted swaps exchange target rows.
pub fn qaad_reassignment<F>(
    source_sample_ids: &[usize],
    target_query_ids: &[usize],
    predictions: &[Point3],
    mut predict_fn: F,
    state: &mut MatchingState,
) -> Result<ReassignOutcome>
where
    F: FnMut(&[usize]) -> Result<Vec<Point3>>,
{
    let m = state.len();
    if predictions.len() != source_sample_ids.len() {
        return Err(Error::SizeMismatch {
            left: source_sample_ids.len(),
            right: predictions.len(),
        });
    }
    for &i in source_sample_ids.iter().chain(target_query_ids) {
        if i >= m {
            return Err(Error::IndexOutOfRange { index: i, len: m });
        }
    }
    if source_sample_ids.is_empty() || target_query_ids.is_empty() {
        return Ok(ReassignOutcome::default());
    }

    let t = state.target.points();
    let query: Vec<Point3> = target_query_ids.iter().map(|&i| t[i]).collect();
    let index = NeighborIndex::new(&query);
    let nn_ids: Vec<usize> = predictions
        .iter()
        .map(|p| target_query_ids[index.nearest(p).expect("non-empty").index])
        .collect();
    let predict_nn = predict_fn(&nn_ids)?;
    if predict_nn.len() != nn_ids.len() {
        return Err(Error::SizeMismatch {
            left: nn_ids.len(),
            right: predict_nn.len(),
        });
    }

    struct Candidate {
        s: usize,
        n: usize,
        before: f64,
        after: f64,
    }
    let mut cands: Vec<Candidate> = Vec::new();
    for (k, (&s, &n)) in source_sample_ids.iter().zip(&nn_ids).enumerate() {
        let (p, pn) = (&predictions[k], &predict_nn[k]);
        let before = dist(p, &t[s]) + dist(pn, &t[n]);
        let after = dist(p, &t[n]) + dist(pn, &t[s]);
        if after < before && s != n {
            cands.push(Candidate { s, n, before, after });
        }
    }
    cands.sort_by(|x, y| {
        (x.after - x.before)
            .total_cmp(&(y.after - y.before))
            .then(x.s.cmp(&y.s))
    });

    let mut first_for_target = vec![false; m];
    let mut row_used = vec![false; m];
    let mut out = ReassignOutcome::default();
    for c in cands {
        if first_for_target[c.n] {
            continue;
        }
        first_for_target[c.n] = true;
        if row_used[c.s] || row_used[c.n] {
            continue;
        }
        row_used[c.s] = true;
        row_used[c.n] = true;
        out.swaps.push((c.s, c.n));
        out.touched_loss_before += c.before;
        out.touched_loss_after += c.after;
    }
    for &(s, n) in &out.swaps {
        state.swap(s, n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn crossed_pair_is_uncrossed() {
        let a = [0.0, 0.0, 0.0];
        let b = [5.0, 0.0, 0.0];
        let mut state = MatchingState::new(cloud(&[b, a]));
        // prediction for source 0 sits on A (row 1), for source 1 on B (row 0)
        let preds = [a, b];
        let predict = |ids: &[usize]| Ok(ids.iter().map(|&i| preds[i]).collect());
        let out = qaad_reassignment(&[0, 1], &[0, 1], &preds, predict, &mut state).unwrap();
        assert_eq!(out.accepted(), 1);
        assert_eq!(out.touched_loss_after, 0.0);
        assert_eq!(out.touched_loss_before, 10.0);
        assert_eq!(state.target().points(), &[a, b]);
        assert_eq!(state.permutation(), &[1, 0]);
    }

    #[test]
    fn aligned_predictions_do_not_swap() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let mut state = MatchingState::new(cloud(&pts));
        let predict = |ids: &[usize]| Ok(ids.iter().map(|&i| pts[i]).collect());
        let out = qaad_reassignment(&[0, 1, 2], &[0, 1, 2], &pts, predict, &mut state).unwrap();
        assert_eq!(out.accepted(), 0);
        assert_eq!(state.target().points(), &pts);
    }

    #[test]
    fn reassignment_input_errors() {
        let pts = [[0.0; 3], [1.0; 3]];
        let mut state = MatchingState::new(cloud(&pts));
        let predict = |ids: &[usize]| Ok(ids.iter().map(|&i| pts[i]).collect());
        assert!(matches!(
            qaad_reassignment(&[0, 2], &[0], &pts, predict, &mut state),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
        assert!(matches!(
            qaad_reassignment(&[0], &[0], &pts, predict, &mut state),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn energy_identity_counts_pairs() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [2.0, 2.0, 1.0]];
        let c = cloud(&pts);
        let state = MatchingState::new(c.clone());
        let e = qap_energy(&c, &state, &QapWeights::default(), QapMode::Exact).unwrap();
        assert!((e - 12.0).abs() < 1e-12);
        let e2 = qap_energy(&c, &state, &QapWeights::default(), QapMode::Neighbors(2)).unwrap();
        assert!((e2 - 8.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_on_identical_clouds_is_identity() {
        let pts: Vec<[f64; 3]> = (0..64).map(|i| [(i % 4) as f64, ((i / 4) % 4) as f64, (i / 16) as f64]).collect();
        let c = cloud(&pts);
        let mut state = MatchingState::new(c.clone());
        let params = GreedyParams {
            depth: 2,
            epsilon: 1e-3,
            max_iterations: 10_000,
            seed: 0,
        };
        qaad_greedy(&c, &mut state, &params).unwrap();
        assert_eq!(state.target(), &c);
    }

    #[test]
    fn from_permutation_validates() {
        let c = cloud(&[[0.0; 3], [1.0; 3], [2.0; 3]]);
        let s = MatchingState::from_permutation(&c, vec![2, 0, 1]).unwrap();
        assert_eq!(s.target().points(), &[[2.0; 3], [0.0; 3], [1.0; 3]]);
        assert!(MatchingState::from_permutation(&c, vec![0, 0, 1]).is_err());
        assert!(MatchingState::from_permutation(&c, vec![0, 1]).is_err());
    }
}
