//! Training loop: greedy initial matching once per instance, then per batch
//! sample source rows, predict, refine the matching, and take an Adam step.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::adam::{adam_step, AdamState, DEFAULT_LR};
use crate::cloud::{Dataset, Point3};
use crate::error::{Error, Result};
use crate::loss::{loss_aligned, loss_aug_chamfer_sample};
use crate::matching::{qaad_greedy, qaad_reassignment, GreedyParams, GreedyReport, MatchingState};
use crate::net::{FoldingNet, Params};
use crate::{par, rng, sampling};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean distance between each prediction and its matched target row.
    AlignedL2,
    /// Augmented Chamfer between the predictions and the rows matched to the
    /// sampled sources (matching-free).
    AugChamferSample,
}

impl LossKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "aligned_l2" => Some(Self::AlignedL2),
            "aug_chamfer_sample" => Some(Self::AugChamferSample),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::AlignedL2 => "aligned_l2",
            Self::AugChamferSample => "aug_chamfer_sample",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Total epochs; a resumed session continues up to this count.
    pub epochs: usize,
    pub batch_size: usize,
    /// Source rows per step; also the size of the target query sample.
    pub sample_size: usize,
    /// k-d depth for the initial matching.
    pub depth: u32,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub loss: LossKind,
    pub reassignment: bool,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            sample_size: 2048,
            depth: 3,
            epsilon: crate::lap::DEFAULT_EPSILON,
            max_iterations: crate::lap::DEFAULT_ROUNDS,
            loss: LossKind::AlignedL2,
            reassignment: true,
            lr: DEFAULT_LR,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, points: usize, patches: usize, instances: usize) -> Result<()> {
        if self.sample_size == 0 || self.sample_size > points {
            return Err(Error::SampleTooLarge {
                sample_size: self.sample_size,
                population: points,
            });
        }
        if !self.sample_size.is_multiple_of(patches) {
            return Err(Error::SampleNotDivisible {
                sample_size: self.sample_size,
                patches,
            });
        }
        if self.batch_size == 0 || self.batch_size > instances {
            return Err(Error::InvalidParameter(alloc::format!(
                "batch_size {} must be in 1..={instances}",
                self.batch_size
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidParameter(alloc::format!("lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub epoch: usize,
    pub batch: usize,
    /// Mean loss over the batch instances, measured before the step.
    pub loss: f64,
    pub swaps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub swaps: usize,
    pub batches: Vec<BatchStats>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub epoch_swaps: Vec<usize>,
    /// Wall-clock per epoch; zeros without the `std` feature.
    pub epoch_millis: Vec<u64>,
    pub batches: Vec<BatchStats>,
}

/// Mutable training session. Snapshotting `net`, `adam`, the matching
/// permutations, `epochs_done` and `greedy_done` between epochs is enough to
/// resume bit-identically.
#[derive(Debug, Clone)]
pub struct Trainer<'d> {
    dataset: &'d Dataset,
    net: FoldingNet,
    adam: AdamState,
    matchings: Vec<MatchingState>,
    cfg: TrainConfig,
    epochs_done: usize,
    greedy_done: bool,
}

impl<'d> Trainer<'d> {
    pub fn new(dataset: &'d Dataset, net: FoldingNet, cfg: TrainConfig) -> Result<Self> {
        let adam = AdamState::for_params(net.params(), cfg.lr);
        let matchings = dataset.clouds().iter().cloned().map(MatchingState::new).collect();
        Self::from_parts(dataset, net, adam, matchings, cfg, 0, false)
    }

    pub fn from_parts(
        dataset: &'d Dataset,
        net: FoldingNet,
        adam: AdamState,
        matchings: Vec<MatchingState>,
        cfg: TrainConfig,
        epochs_done: usize,
        greedy_done: bool,
    ) -> Result<Self> {
        let nc = *net.config();
        if dataset.points_per_cloud() != nc.points {
            return Err(Error::SizeMismatch {
                left: nc.points,
                right: dataset.points_per_cloud(),
            });
        }
        if dataset.len() != nc.instances || matchings.len() != nc.instances {
            return Err(Error::SizeMismatch {
                left: nc.instances,
                right: if dataset.len() != nc.instances { dataset.len() } else { matchings.len() },
            });
        }
        cfg.validate(nc.points, nc.patches, nc.instances)?;
        Ok(Self {
            dataset,
            net,
            adam,
            matchings,
            cfg,
            epochs_done,
            greedy_done,
        })
    }

    pub fn dataset(&self) -> &'d Dataset {
        self.dataset
    }

    pub fn net(&self) -> &FoldingNet {
        &self.net
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn matchings(&self) -> &[MatchingState] {
        &self.matchings
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn greedy_done(&self) -> bool {
        self.greedy_done
    }

    pub fn into_net(self) -> FoldingNet {
        self.net
    }

    /// Initial matching for every instance against the current source cloud.
    /// Runs at most once per session; returns the per-instance reports when
    /// it ran, an empty list otherwise.
    pub fn ensure_greedy(&mut self) -> Result<Vec<GreedyReport>> {
        if self.greedy_done {
            return Ok(Vec::new());
        }
        let source = self.net.source_cloud()?;
        let cfg = self.cfg;
        let mut jobs: Vec<(usize, &mut MatchingState)> = self.matchings.iter_mut().enumerate().collect();
        let results = par::map_mut(&mut jobs, |(i, state)| {
            let params = GreedyParams {
                depth: cfg.depth,
                epsilon: cfg.epsilon,
                max_iterations: cfg.max_iterations,
                seed: cfg.seed.wrapping_add(*i as u64),
            };
            qaad_greedy(&source, state, &params)
        });
        let reports = results.into_iter().collect::<Result<Vec<_>>>()?;
        self.greedy_done = true;
        Ok(reports)
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.cfg.epochs
    }

    /// One epoch; `on_batch` sees each batch's statistics as soon as its step
    /// is applied.
    pub fn run_epoch<F: FnMut(&BatchStats)>(&mut self, mut on_batch: F) -> Result<EpochStats> {
        self.ensure_greedy()?;
        let epoch = self.epochs_done;
        let nc = *self.net.config();
        let cfg = self.cfg;
        let mut r = rng::stream_rng(cfg.seed, rng::stream::EPOCH | epoch as u64);
        let mut order: Vec<usize> = (0..nc.instances).collect();
        order.shuffle(&mut r);

        let mut stats = EpochStats {
            epoch,
            mean_loss: 0.0,
            swaps: 0,
            batches: Vec::new(),
        };
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let s_ids = sampling::sample_indices(&mut r, nc.points, cfg.sample_size, true, nc.patches)?;
            let t_ids = sampling::sample_indices(&mut r, nc.points, cfg.sample_size, false, 1)?;

            let mut member = vec![usize::MAX; nc.instances];
            for (pos, &i) in chunk.iter().enumerate() {
                member[i] = pos;
            }
            let mut jobs: Vec<(usize, &mut MatchingState)> = self
                .matchings
                .iter_mut()
                .enumerate()
                .filter(|(i, _)| member[*i] != usize::MAX)
                .collect();
            jobs.sort_by_key(|(i, _)| member[*i]);

            let net = &self.net;
            let results = par::map_mut(&mut jobs, |(inst, state)| -> Result<(f64, usize, Params)> {
                let inst = *inst;
                let cache = net.forward(inst, &s_ids)?;
                let swaps = if cfg.reassignment {
                    qaad_reassignment(&s_ids, &t_ids, cache.output(), |ids| net.predict(inst, ids), state)?.accepted()
                } else {
                    0
                };
                let rows: Vec<Point3> = s_ids.iter().map(|&i| *state.target().point(i)).collect();
                let (value, up) = match cfg.loss {
                    LossKind::AlignedL2 => loss_aligned(cache.output(), &rows)?,
                    LossKind::AugChamferSample => loss_aug_chamfer_sample(cache.output(), &rows)?,
                };
                Ok((value, swaps, net.backward(&cache, &up)?))
            });

            let mut total: Option<Params> = None;
            let mut batch_loss = 0.0;
            let mut batch_swaps = 0;
            for res in results {
                let (value, swaps, g) = res?;
                batch_loss += value;
                batch_swaps += swaps;
                match &mut total {
                    None => total = Some(g),
                    Some(t) => t.add_assign(&g),
                }
            }
            let mut grads = total.expect("batch is non-empty");
            grads.scale(1.0 / chunk.len() as f64);
            adam_step(&mut self.net, &mut self.adam, &grads)?;

            loss_sum += batch_loss;
            let bs = BatchStats {
                epoch,
                batch: b,
                loss: batch_loss / chunk.len() as f64,
                swaps: batch_swaps,
            };
            stats.swaps += batch_swaps;
            on_batch(&bs);
            stats.batches.push(bs);
        }
        stats.mean_loss = loss_sum / nc.instances as f64;
        self.epochs_done += 1;
        Ok(stats)
    }

    /// Run the remaining epochs.
    pub fn train(&mut self) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        while !self.is_finished() {
            #[cfg(feature = "std")]
            let start = std::time::Instant::now();
            let stats = self.run_epoch(|_| {})?;
            #[cfg(feature = "std")]
            let ms = start.elapsed().as_millis() as u64;
            #[cfg(not(feature = "std"))]
            let ms = 0;
            report.epoch_losses.push(stats.mean_loss);
            report.epoch_swaps.push(stats.swaps);
            report.epoch_millis.push(ms);
            report.batches.extend(stats.batches);
        }
        Ok(report)
    }
}

/// Which instance seeds the trainable source cloud: uniform over the
/// dataset, drawn from its own random stream.
pub fn init_instance(seed: u64, instances: usize) -> usize {
    use rand::Rng as _;
    rng::stream_rng(seed, rng::stream::SOURCE_PICK).random_range(0..instances.max(1))
}

/// Train `net` in place on `dataset` from a fresh session.
pub fn train(dataset: &Dataset, net: &mut FoldingNet, cfg: &TrainConfig) -> Result<TrainReport> {
    let mut t = Trainer::new(dataset, net.clone(), *cfg)?;
    if cfg.epochs == 0 {
        return Ok(TrainReport::default());
    }
    let report = t.train()?;
    *net = t.into_net();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;
    use crate::synth::{synthetic_dataset, SynthKind};

    fn setup(n: usize) -> (Dataset, FoldingNet) {
        let ds = synthetic_dataset(SynthKind::GaussianBlobs, n, 64, 9, true).unwrap();
        let cfg = NetConfig {
            points: 64,
            patches: 4,
            latent_dim: 4,
            instances: n,
            width: 16,
            seed: 9,
        };
        let net = FoldingNet::init(cfg, ds.cloud(0)).unwrap();
        (ds, net)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 2,
            sample_size: 16,
            depth: 1,
            epsilon: 1e-2,
            max_iterations: 10_000,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (ds, mut net) = setup(3);
        let before = net.clone();
        let rep = train(&ds, &mut net, &TrainConfig { epochs: 0, ..small_cfg() }).unwrap();
        assert!(rep.epoch_losses.is_empty());
        assert_eq!(net, before);
    }

    #[test]
    fn report_lengths_and_remainder_batch() {
        let (ds, mut net) = setup(3);
        let rep = train(&ds, &mut net, &small_cfg()).unwrap();
        assert_eq!(rep.epoch_losses.len(), 3);
        assert_eq!(rep.epoch_swaps.len(), 3);
        assert_eq!(rep.epoch_millis.len(), 3);
        // 3 instances in batches of 2: one full batch and one remainder
        assert_eq!(rep.batches.len(), 6);
    }

    #[test]
    fn targets_are_only_permuted() {
        let (ds, net) = setup(2);
        let mut t = Trainer::new(&ds, net, small_cfg()).unwrap();
        t.train().unwrap();
        for (m, c) in t.matchings().iter().zip(ds.clouds()) {
            let mut perm = m.permutation().to_vec();
            for (row, &orig) in perm.iter().enumerate() {
                assert_eq!(m.target().point(row), c.point(orig));
            }
            perm.sort_unstable();
            assert_eq!(perm, (0..64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn config_validation() {
        let (ds, net) = setup(2);
        let bad = TrainConfig { sample_size: 18, ..small_cfg() };
        assert!(matches!(
            Trainer::new(&ds, net.clone(), bad),
            Err(Error::SampleNotDivisible { sample_size: 18, patches: 4 })
        ));
        let bad = TrainConfig { batch_size: 3, ..small_cfg() };
        assert!(matches!(Trainer::new(&ds, net, bad), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn runs_are_deterministic() {
        let (ds, net) = setup(3);
        let mut a = Trainer::new(&ds, net.clone(), small_cfg()).unwrap();
        let mut b = Trainer::new(&ds, net, small_cfg()).unwrap();
        assert_eq!(a.train().unwrap().epoch_losses, b.train().unwrap().epoch_losses);
        assert_eq!(a.net(), b.net());
    }
}
