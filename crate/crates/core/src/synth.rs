//! Synthetic point clouds for desk-scale experiments.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::cloud::{Dataset, PointCloud, Point3};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Integer lattice `{0..s-1}^3`, unit nearest-neighbor spacing. `m` must be a perfect cube.
    GridCube,
    /// Bumpy sphere (3/4 of the points) carrying a row of small, densely
    /// sampled box-shaped protrusions (1/4 of the points).
    TwoScaleTeeth,
    /// Four anisotropic Gaussian clusters.
    GaussianBlobs,
}

impl SynthKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grid_cube" => Some(Self::GridCube),
            "two_scale_teeth" => Some(Self::TwoScaleTeeth),
            "gaussian_blobs" => Some(Self::GaussianBlobs),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::GridCube => "grid_cube",
            Self::TwoScaleTeeth => "two_scale_teeth",
            Self::GaussianBlobs => "gaussian_blobs",
        }
    }
}

pub fn gen_synthetic(kind: SynthKind, m: usize, seed: u64) -> Result<PointCloud> {
    match kind {
        SynthKind::GridCube => grid_cube(m),
        SynthKind::TwoScaleTeeth => Ok(two_scale_teeth(m, seed)?.0),
        SynthKind::GaussianBlobs => gaussian_blobs(m, seed),
    }
}

fn exact_cube_root(m: usize) -> Option<usize> {
    let mut s = 0usize;
    while (s + 1) * (s + 1) * (s + 1) <= m {
        s += 1;
    }
    (s * s * s == m && s > 0).then_some(s)
}

pub fn grid_cube(m: usize) -> Result<PointCloud> {
    let side = exact_cube_root(m).ok_or(Error::IncompatibleCount {
        points: m,
        kind: "grid_cube",
    })?;
    lattice(side, m)
}

/// First `m` points, in row-major `(x, y, z)` order, of the smallest integer
/// lattice cube holding at least `m` points.
pub fn grid_cube_truncated(m: usize) -> Result<PointCloud> {
    if m == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut side = 1usize;
    while side * side * side < m {
        side += 1;
    }
    lattice(side, m)
}

fn lattice(side: usize, m: usize) -> Result<PointCloud> {
    let mut pts = Vec::with_capacity(m);
    'outer: for x in 0..side {
        for y in 0..side {
            for z in 0..side {
                if pts.len() == m {
                    break 'outer;
                }
                pts.push([x as f64, y as f64, z as f64]);
            }
        }
    }
    PointCloud::new(pts)
}

fn unit_direction(r: &mut Rng) -> Point3 {
    loop {
        let v: Point3 = [
            StandardNormal.sample(r),
            StandardNormal.sample(r),
            StandardNormal.sample(r),
        ];
        let n = libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Returns the cloud and the number of base-surface points; rows
/// `0..base` lie on the smooth surface and the remaining rows on protrusions.
///
/// The sphere radius grows with `m` so the base spacing stays near one scene
/// unit; the protrusions are sampled roughly four times denser.
pub fn two_scale_teeth(m: usize, seed: u64) -> Result<(PointCloud, usize)> {
    if m < 8 {
        return Err(Error::IncompatibleCount {
            points: m,
            kind: "two_scale_teeth",
        });
    }
    let mut r = rng::stream_rng(seed, rng::stream::SYNTH);
    let base = m - m / 4;
    let radius = libm::sqrt(base as f64 / (4.0 * PI));
    // low-frequency shape variation
    let a1: f64 = r.random_range(0.05..0.15);
    let a2: f64 = r.random_range(0.03..0.08);
    let phase: f64 = r.random_range(0.0..2.0 * PI);
    let mut pts = Vec::with_capacity(m);
    for _ in 0..base {
        let d = unit_direction(&mut r);
        let theta = libm::acos(d[2].clamp(-1.0, 1.0));
        let phi = libm::atan2(d[1], d[0]);
        let s = radius * (1.0 + a1 * libm::sin(2.0 * theta) * libm::cos(3.0 * phi + phase) + a2 * libm::cos(5.0 * theta));
        pts.push([s * d[0], s * d[1], s * d[2]]);
    }
    // a jaw-like arc of teeth around the lower front of the sphere
    let teeth = 12usize;
    let rest = m - base;
    let (w, h) = (0.05 * radius, 0.15 * radius);
    let arc: f64 = r.random_range(0.8..1.1);
    for t in 0..teeth {
        let count = rest / teeth + usize::from(t < rest % teeth);
        let ang = -arc / 2.0 + arc * (t as f64 + 0.5) / teeth as f64;
        let center = [radius * libm::sin(ang), -radius * libm::cos(ang), -0.35 * radius];
        for _ in 0..count {
            let u: f64 = r.random_range(-0.5..0.5);
            let v: f64 = r.random_range(-0.5..0.5);
            let z: f64 = r.random_range(0.0..1.0);
            pts.push([center[0] + w * u, center[1] + w * v, center[2] - h * z]);
        }
    }
    Ok((PointCloud::new(pts)?, base))
}

pub fn gaussian_blobs(m: usize, seed: u64) -> Result<PointCloud> {
    if m == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut r = rng::stream_rng(seed, rng::stream::SYNTH);
    let blobs = 4usize;
    let spread = libm::cbrt(m as f64);
    let params: Vec<(Point3, Point3)> = (0..blobs)
        .map(|_| {
            let c = [
                r.random_range(-spread..spread),
                r.random_range(-spread..spread),
                r.random_range(-spread..spread),
            ];
            let s = [
                r.random_range(0.1..0.3) * spread,
                r.random_range(0.1..0.3) * spread,
                r.random_range(0.1..0.3) * spread,
            ];
            (c, s)
        })
        .collect();
    let mut pts = Vec::with_capacity(m);
    for i in 0..m {
        let (c, s) = params[i % blobs];
        let g: [f64; 3] = [
            StandardNormal.sample(&mut r),
            StandardNormal.sample(&mut r),
            StandardNormal.sample(&mut r),
        ];
        pts.push([c[0] + s[0] * g[0], c[1] + s[1] * g[1], c[2] + s[2] * g[2]]);
    }
    PointCloud::new(pts)
}

/// `n` independent instances of one kind, optionally normalized to the unit
/// sphere. Instance `i` uses seed `seed + i`.
pub fn synthetic_dataset(kind: SynthKind, n: usize, m: usize, seed: u64, normalize: bool) -> Result<Dataset> {
    let mut clouds = Vec::with_capacity(n);
    let mut names: Vec<String> = Vec::with_capacity(n);
    for i in 0..n {
        let c = gen_synthetic(kind, m, seed.wrapping_add(i as u64))?;
        clouds.push(if normalize { c.normalized_unit_sphere() } else { c });
        names.push(format!("{}_{:04}", kind.name(), i));
    }
    Dataset::new(clouds, names)
}
