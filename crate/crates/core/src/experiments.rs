//! Desk-scale experiments: the sampling-density study for Chamfer-type
//! objectives and the EM-kD evaluation of a trained network.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::adam::AdamState;
use crate::cloud::{Dataset, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::loss::{loss_aug_chamfer_sample, loss_chamfer_sample, loss_mse};
use crate::metrics::{aug_chamfer, emkd, normalized_log, sampling_normalizer, EmkdParams, DEFAULT_NORMALIZER_K};
use crate::net::FoldingNet;
use crate::{par, rng, sampling, synth};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyObjective {
    /// Gradient descent on the augmented Chamfer distance itself.
    AugChamferDirect,
    /// Gradient descent on the standard Chamfer distance.
    ChamferProxy,
    /// Mean squared error under a fixed random bijection.
    MseRandomPerfect,
}

impl StudyObjective {
    pub const ALL: [Self; 3] = [Self::AugChamferDirect, Self::ChamferProxy, Self::MseRandomPerfect];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "aug_chamfer_direct" => Some(Self::AugChamferDirect),
            "chamfer_proxy" => Some(Self::ChamferProxy),
            "mse_random_perfect" => Some(Self::MseRandomPerfect),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::AugChamferDirect => "aug_chamfer_direct",
            Self::ChamferProxy => "chamfer_proxy",
            Self::MseRandomPerfect => "mse_random_perfect",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChamferStudyConfig {
    pub target: PointCloud,
    /// Subsample fractions in `(0, 1]`.
    pub fractions: Vec<f64>,
    pub objectives: Vec<StudyObjective>,
    pub steps: usize,
    pub lr: f64,
    /// Neighbor count for the sampling-rate normalizer.
    pub k: usize,
    pub seed: u64,
}

impl ChamferStudyConfig {
    pub fn new(target: PointCloud) -> Self {
        Self {
            target,
            fractions: vec![1.0, 0.1, 0.01],
            objectives: StudyObjective::ALL.to_vec(),
            steps: 2000,
            lr: 0.1,
            k: DEFAULT_NORMALIZER_K,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyCurve {
    pub objective: StudyObjective,
    pub fraction: f64,
    /// Points in the subsampled target (and in the source cube).
    pub points: usize,
    /// `ln(d_A / T(target))` before the first step and after each step;
    /// `-∞` when `d_A = 0`.
    pub values: Vec<f64>,
    /// Aligned MSE under the fixed bijection after the last step, for
    /// [`StudyObjective::MseRandomPerfect`].
    pub final_mse: Option<f64>,
}

impl StudyCurve {
    pub fn final_value(&self) -> f64 {
        *self.values.last().expect("curve has its step-0 value")
    }
}

/// Every `(fraction, objective)` pair of `cfg`, fraction-major.
pub fn chamfer_study(cfg: &ChamferStudyConfig) -> Result<Vec<StudyCurve>> {
    let mut jobs = Vec::new();
    for (fi, &f) in cfg.fractions.iter().enumerate() {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidParameter(alloc::format!("fraction {f} outside (0, 1]")));
        }
        for &obj in &cfg.objectives {
            jobs.push((fi, f, obj));
        }
    }
    par::map(&jobs, |&(fi, f, obj)| study_job(cfg, fi, f, obj))
        .into_iter()
        .collect()
}

/// Subsampled target for fraction slot `fi`: `round(f · M)` rows drawn
/// uniformly without replacement. Shared by all objectives of that slot.
pub fn study_subsample(target: &PointCloud, fraction: f64, fi: usize, k: usize, seed: u64) -> Result<PointCloud> {
    let m = target.len();
    let count = libm::round(fraction * m as f64) as usize;
    let count = count.clamp(k + 1, m);
    if count == m {
        return Ok(target.clone());
    }
    let mut r = rng::stream_rng(seed, rng::stream::STUDY | fi as u64);
    let ids = sampling::sample_indices(&mut r, m, count, false, 1)?;
    target.select(&ids)
}

fn study_job(cfg: &ChamferStudyConfig, fi: usize, fraction: f64, objective: StudyObjective) -> Result<StudyCurve> {
    let target = study_subsample(&cfg.target, fraction, fi, cfg.k, cfg.seed)?;
    let normalizer = sampling_normalizer(&target, cfg.k)?;
    let m = target.len();
    let tc = target.centroid();
    let cube = synth::grid_cube_truncated(m)?;
    let cc = cube.centroid();
    let base: Vec<Point3> = cube
        .translated([tc[0] - cc[0], tc[1] - cc[1], tc[2] - cc[2]])
        .into_points();

    let bijection: Vec<Point3> = if objective == StudyObjective::MseRandomPerfect {
        let mut perm: Vec<usize> = (0..m).collect();
        let mut r = rng::stream_rng(cfg.seed, rng::stream::STUDY | (1 << 16) | fi as u64);
        perm.shuffle(&mut r);
        perm.iter().map(|&j| *target.point(j)).collect()
    } else {
        Vec::new()
    };

    let mut offsets = vec![0.0; 3 * m];
    let mut adam = AdamState::new(&[3 * m], cfg.lr);
    let current = |off: &[f64]| -> Vec<Point3> {
        base.iter()
            .enumerate()
            .map(|(i, p)| [p[0] + off[3 * i], p[1] + off[3 * i + 1], p[2] + off[3 * i + 2]])
            .collect()
    };
    let measure = |pts: Vec<Point3>| -> Result<f64> {
        Ok(normalized_log(aug_chamfer(&PointCloud::new(pts)?, &target), normalizer))
    };

    let mut values = Vec::with_capacity(cfg.steps + 1);
    values.push(measure(current(&offsets))?);
    for _ in 0..cfg.steps {
        let pts = current(&offsets);
        let (_, grad) = match objective {
            StudyObjective::AugChamferDirect => loss_aug_chamfer_sample(&pts, target.points())?,
            StudyObjective::ChamferProxy => loss_chamfer_sample(&pts, target.points())?,
            StudyObjective::MseRandomPerfect => loss_mse(&pts, &bijection)?,
        };
        let flat: Vec<f64> = grad.into_iter().flatten().collect();
        adam.step_tensors(&mut [&mut offsets], &[&flat], &["offset"])?;
        values.push(measure(current(&offsets))?);
    }
    let final_mse = if objective == StudyObjective::MseRandomPerfect {
        Some(loss_mse(&current(&offsets), &bijection)?.0)
    } else {
        None
    };
    Ok(StudyCurve {
        objective,
        fraction,
        points: m,
        values,
        final_mse,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmkdEvaluation {
    pub per_instance: Vec<f64>,
    pub mean: f64,
}

/// Reconstruct every instance at full resolution and score it against its
/// ground truth.
pub fn evaluate_emkd(dataset: &Dataset, net: &FoldingNet, params: &EmkdParams) -> Result<EmkdEvaluation> {
    if dataset.len() != net.config().instances {
        return Err(Error::SizeMismatch {
            left: net.config().instances,
            right: dataset.len(),
        });
    }
    let mut per_instance = Vec::with_capacity(dataset.len());
    for (i, truth) in dataset.clouds().iter().enumerate() {
        let rec = net.reconstruct(i)?;
        per_instance.push(emkd(&rec, truth, params)?.value);
    }
    let mean = per_instance.iter().sum::<f64>() / per_instance.len() as f64;
    Ok(EmkdEvaluation { per_instance, mean })
}
