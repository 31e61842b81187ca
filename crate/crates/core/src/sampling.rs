//! Uniform index sampling without replacement, optionally stratified so every
//! source patch contributes the same number of points.

use alloc::vec::Vec;
use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSpec {
    pub sample_size: usize,
    pub per_patch_equal: bool,
    pub seed: u64,
}

/// Draw `spec.sample_size` distinct indices from `0..m` seeded by `spec.seed`.
///
/// With `per_patch_equal`, `0..m` is split into `patches` contiguous blocks of
/// `m / patches` rows and exactly `sample_size / patches` indices come from
/// each block. The result is sorted ascending.
pub fn uniform_sample_indices(m: usize, spec: &SampleSpec, patches: usize) -> Result<Vec<usize>> {
    let mut rng = rng::stream_rng(spec.seed, rng::stream::SAMPLING);
    sample_indices(&mut rng, m, spec.sample_size, spec.per_patch_equal, patches)
}

pub fn sample_indices(
    rng: &mut Rng,
    m: usize,
    sample_size: usize,
    per_patch_equal: bool,
    patches: usize,
) -> Result<Vec<usize>> {
    if sample_size > m {
        return Err(Error::SampleTooLarge {
            sample_size,
            population: m,
        });
    }
    if !per_patch_equal {
        let mut out = index::sample(rng, m, sample_size).into_vec();
        out.sort_unstable();
        return Ok(out);
    }
    if patches == 0 || !m.is_multiple_of(patches) {
        return Err(Error::PatchesNotDivisible { points: m, patches });
    }
    if !sample_size.is_multiple_of(patches) {
        return Err(Error::SampleNotDivisible {
            sample_size,
            patches,
        });
    }
    let block = m / patches;
    let per = sample_size / patches;
    let mut out = Vec::with_capacity(sample_size);
    for k in 0..patches {
        let mut part = index::sample(rng, block, per).into_vec();
        part.sort_unstable();
        out.extend(part.into_iter().map(|i| k * block + i));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn per_patch_counts_are_exact() {
        let spec = SampleSpec {
            sample_size: 4,
            per_patch_equal: true,
            seed: 11,
        };
        let ids = uniform_sample_indices(8, &spec, 2).unwrap();
        assert_eq!(ids.len(), 4);
        assert_eq!(ids.iter().filter(|&&i| i < 4).count(), 2);
        assert_eq!(ids.iter().filter(|&&i| (4..8).contains(&i)).count(), 2);
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SampleSpec {
            sample_size: 16,
            per_patch_equal: false,
            seed: 5,
        };
        assert_eq!(
            uniform_sample_indices(100, &spec, 1).unwrap(),
            uniform_sample_indices(100, &spec, 1).unwrap()
        );
    }

    #[test]
    fn without_replacement() {
        let spec = SampleSpec {
            sample_size: 64,
            per_patch_equal: true,
            seed: 3,
        };
        let ids = uniform_sample_indices(64, &spec, 4).unwrap();
        assert_eq!(ids, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn errors() {
        let mut spec = SampleSpec {
            sample_size: 9,
            per_patch_equal: false,
            seed: 0,
        };
        assert_eq!(
            uniform_sample_indices(8, &spec, 1),
            Err(Error::SampleTooLarge {
                sample_size: 9,
                population: 8
            })
        );
        spec.sample_size = 6;
        spec.per_patch_equal = true;
        assert_eq!(
            uniform_sample_indices(8, &spec, 4),
            Err(Error::SampleNotDivisible {
                sample_size: 6,
                patches: 4
            })
        );
        assert!(matches!(
            uniform_sample_indices(9, &spec, 2),
            Err(Error::PatchesNotDivisible { .. })
        ));
    }

    #[test]
    fn inclusion_frequency_is_uniform() {
        // Each index is included with probability s/m per draw; its count over
        // `draws` trials is Binomial(draws, s/m).
        let (m, s, k, draws) = (24usize, 6usize, 3usize, 100_000usize);
        let mut counts = vec![0u32; m];
        let mut rng = rng::stream_rng(2024, rng::stream::SAMPLING);
        for _ in 0..draws {
            for i in sample_indices(&mut rng, m, s, true, k).unwrap() {
                counts[i] += 1;
            }
        }
        let p = s as f64 / m as f64;
        let mean = draws as f64 * p;
        let sigma = libm::sqrt(draws as f64 * p * (1.0 - p));
        let mut chi2 = 0.0;
        for &c in &counts {
            let dev = c as f64 - mean;
            assert!(dev.abs() <= 3.0 * sigma, "count {c} vs mean {mean}");
            chi2 += dev * dev / (mean * (1.0 - p));
        }
        // chi-square with m - 1 = 23 dof: 0.999 quantile is 49.7
        assert!(chi2 < 49.7, "chi2 = {chi2}");
    }
}
