//! Seeded synthetic corpora for tests, benchmarks, and acceptance runs.
//!
//! Objects are grouped around cluster prototypes so that a corpus has the
//! locality an index can exploit: distributions within a cluster are close
//! under the EMD, distributions from different clusters are far. Two bin
//! layouts are supported: `Scatter` places each object's bins at jittered
//! prototype locations (bins move), `Grid` fixes one global lattice of bin
//! locations and varies only the weights (classic histogram databases).
//! Generation is a single pass over one seeded stream, so a (spec, seed)
//! pair always reproduces the same corpus bit for bit.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as RandDistribution, Normal};

use crate::distribution::DiscreteDistribution;
use crate::error::{Error, Result};

/// How bin locations are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Per-object bin locations, jittered around the cluster prototype.
    Scatter,
    /// One fixed lattice of locations shared by every object; only the
    /// weights vary.
    Grid,
}

/// Parameters of a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Number of distributions.
    pub count: usize,
    /// Bins per distribution.
    pub bins: usize,
    /// Coordinate dimension.
    pub dim: usize,
    /// Number of cluster prototypes.
    pub clusters: usize,
    /// Within-cluster jitter, as a fraction of the extent.
    pub spread: f64,
    /// Bin layout.
    pub layout: Layout,
    /// Coordinates live in `[-extent, extent]^dim`.
    pub extent: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 100,
            bins: 16,
            dim: 2,
            clusters: 8,
            spread: 0.05,
            layout: Layout::Scatter,
            extent: 10.0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.count == 0
            || self.bins == 0
            || self.dim == 0
            || self.clusters == 0
            || !(self.spread > 0.0)
            || !(self.extent > 0.0)
        {
            return Err(Error::InvalidParameter(format!(
                "synthetic spec requires positive count/bins/dim/clusters/spread/extent, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Generates the corpus for `(spec, seed)`, ids `0..count`.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Vec<DiscreteDistribution>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Cluster prototypes: a location and a weight profile each.
    let prototypes: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| {
            (0..spec.dim)
                .map(|_| rng.gen_range(-0.8 * spec.extent..0.8 * spec.extent))
                .collect()
        })
        .collect();
    let profiles: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| (0..spec.bins).map(|_| rng.gen_range(0.2..1.0)).collect())
        .collect();

    let lattice = if spec.layout == Layout::Grid {
        Some(lattice_points(spec))
    } else {
        None
    };
    let jitter = Normal::new(0.0, spec.spread * spec.extent)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let mut out = Vec::with_capacity(spec.count);
    for id in 0..spec.count {
        let cluster = id % spec.clusters;
        let (bins, weights) = match spec.layout {
            Layout::Scatter => {
                let mut bins = Vec::with_capacity(spec.bins * spec.dim);
                for _ in 0..spec.bins {
                    for proto in &prototypes[cluster] {
                        let x = proto + jitter.sample(&mut rng);
                        bins.push(x.clamp(-spec.extent, spec.extent));
                    }
                }
                let weights: Vec<f64> =
                    (0..spec.bins).map(|_| rng.gen_range(0.2..1.0)).collect();
                (bins, weights)
            }
            Layout::Grid => {
                let bins = lattice.as_ref().unwrap().clone();
                // Cluster weight profile with per-object multiplicative
                // noise keeps objects of one cluster near each other.
                let weights: Vec<f64> = profiles[cluster]
                    .iter()
                    .map(|p| p * rng.gen_range(0.7..1.3))
                    .collect();
                (bins, weights)
            }
        };
        out.push(DiscreteDistribution::new_renormalized(
            id as u64, spec.dim, bins, weights,
        )?);
    }
    Ok(out)
}

/// First `bins` points of a regular lattice covering the box, row-major.
fn lattice_points(spec: &SyntheticSpec) -> Vec<f64> {
    let per_axis = (spec.bins as f64)
        .powf(1.0 / spec.dim as f64)
        .ceil()
        .max(1.0) as usize;
    let coord = |i: usize| -> f64 {
        if per_axis == 1 {
            0.0
        } else {
            -spec.extent + 2.0 * spec.extent * i as f64 / (per_axis - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(spec.bins * spec.dim);
    for flat in 0..spec.bins {
        let mut rest = flat;
        for _ in 0..spec.dim {
            out.push(coord(rest % per_axis));
            rest /= per_axis;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emd::exact_emd;

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec {
            count: 30,
            ..SyntheticSpec::default()
        };
        assert_eq!(generate(&spec, 9).unwrap(), generate(&spec, 9).unwrap());
        assert_ne!(generate(&spec, 9).unwrap(), generate(&spec, 10).unwrap());
    }

    #[test]
    fn shapes_and_ids_match_the_spec() {
        for layout in [Layout::Scatter, Layout::Grid] {
            let spec = SyntheticSpec {
                count: 25,
                bins: 9,
                dim: 3,
                clusters: 4,
                layout,
                ..SyntheticSpec::default()
            };
            let data = generate(&spec, 3).unwrap();
            assert_eq!(data.len(), 25);
            for (i, d) in data.iter().enumerate() {
                assert_eq!(d.id(), i as u64);
                assert_eq!(d.dim(), 3);
                assert_eq!(d.len(), 9, "layout {layout:?} merged bins");
                for b in 0..d.len() {
                    assert!(d.bin(b).iter().all(|c| c.abs() <= spec.extent));
                }
            }
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        for broken in [
            SyntheticSpec {
                count: 0,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                bins: 0,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                clusters: 0,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                spread: 0.0,
                ..SyntheticSpec::default()
            },
        ] {
            assert!(generate(&broken, 1).is_err());
        }
    }

    #[test]
    fn clusters_are_tighter_within_than_between() {
        for layout in [Layout::Scatter, Layout::Grid] {
            let spec = SyntheticSpec {
                count: 24,
                bins: 8,
                dim: 2,
                clusters: 3,
                spread: 0.02,
                layout,
                extent: 10.0,
            };
            let data = generate(&spec, 17).unwrap();
            let mut within = Vec::new();
            let mut between = Vec::new();
            for i in 0..data.len() {
                for j in (i + 1)..data.len() {
                    let d = exact_emd(&data[i], &data[j]).unwrap();
                    if i % spec.clusters == j % spec.clusters {
                        within.push(d);
                    } else {
                        between.push(d);
                    }
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            assert!(
                mean(&within) < mean(&between),
                "layout {layout:?}: within {} vs between {}",
                mean(&within),
                mean(&between)
            );
        }
    }
}
