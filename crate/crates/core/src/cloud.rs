//! Point-cloud data model.
//!
//! Row order is meaningful: the matching between a source cloud and a target
//! cloud is encoded by aligning rows, so every operation here preserves order.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn dist_sq(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn dist(a: &Point3, b: &Point3) -> f64 {
    libm::sqrt(dist_sq(a, b))
}

/// An ordered, non-empty list of finite points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(index) = points
            .iter()
            .position(|p| !(p[0].is_finite() && p[1].is_finite() && p[2].is_finite()))
        {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { points })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with slices.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    #[inline]
    pub fn point(&self, i: usize) -> &Point3 {
        &self.points[i]
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// Gather rows in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = self.points.get(i).ok_or(Error::IndexOutOfRange {
                index: i,
                len: self.points.len(),
            })?;
            out.push(*p);
        }
        PointCloud::new(out)
    }

    /// Exchange two rows.
    #[inline]
    pub(crate) fn swap_rows(&mut self, a: usize, b: usize) {
        self.points.swap(a, b);
    }

    /// Replace rows with `rows[perm[i]]`. `perm` must be a permutation.
    pub(crate) fn gather_in_place(&mut self, perm: &[usize]) {
        debug_assert_eq!(perm.len(), self.points.len());
        let gathered: Vec<Point3> = perm.iter().map(|&j| self.points[j]).collect();
        self.points = gathered;
    }

    pub fn centroid(&self) -> Point3 {
        let mut c = [0.0; 3];
        for p in &self.points {
            c[0] += p[0];
            c[1] += p[1];
            c[2] += p[2];
        }
        let n = self.points.len() as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }

    pub fn translated(&self, offset: Point3) -> PointCloud {
        let points = self
            .points
            .iter()
            .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
            .collect();
        PointCloud { points }
    }

    /// Multiply every coordinate by `s`. `s` must be finite.
    pub fn scaled(&self, s: f64) -> PointCloud {
        let points = self
            .points
            .iter()
            .map(|p| [p[0] * s, p[1] * s, p[2] * s])
            .collect();
        PointCloud { points }
    }

    /// Center at the centroid and scale so the farthest point lies on the unit
    /// sphere. A single-point (or fully degenerate) cloud is only centered.
    pub fn normalized_unit_sphere(&self) -> PointCloud {
        let c = self.centroid();
        let centered = self.translated([-c[0], -c[1], -c[2]]);
        let r = centered
            .points
            .iter()
            .map(|p| dist_sq(p, &[0.0; 3]))
            .fold(0.0_f64, f64::max);
        if r > 0.0 {
            centered.scaled(1.0 / libm::sqrt(r))
        } else {
            centered
        }
    }
}

/// A collection of equally sized clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    clouds: Vec<PointCloud>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(clouds: Vec<PointCloud>, names: Vec<String>) -> Result<Self> {
        let first = clouds.first().ok_or(Error::EmptyCloud)?.len();
        if names.len() != clouds.len() {
            return Err(Error::SizeMismatch {
                left: clouds.len(),
                right: names.len(),
            });
        }
        for c in &clouds {
            if c.len() != first {
                return Err(Error::SizeMismatch {
                    left: first,
                    right: c.len(),
                });
            }
        }
        Ok(Self { clouds, names })
    }

    /// Instance count N.
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    /// Points per cloud M.
    pub fn points_per_cloud(&self) -> usize {
        self.clouds[0].len()
    }

    pub fn clouds(&self) -> &[PointCloud] {
        &self.clouds
    }

    pub fn cloud(&self, i: usize) -> &PointCloud {
        &self.clouds[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}
