//! Seeded test objects: dense cell-like samples and sparse bead samples.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ImageGrid, Shape};
use crate::rng;

/// Minimum fraction of nonzero pixels in a dense object.
pub const DENSE_MIN_FILL: f64 = 0.4;
/// Soft rim: intensity falls from full at normalized radius `RIM_INNER`
/// to zero at `RIM_OUTER`.
const RIM_INNER: f64 = 0.8;
const RIM_OUTER: f64 = 1.2;
const MAX_EXTRA_BLOBS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectKind {
    /// Overlapping soft-edged ellipses. `n_blobs` is a minimum: blobs keep
    /// being added until at least 40% of pixels are nonzero.
    DenseCells {
        n_blobs: usize,
        radius_min: f64,
        radius_max: f64,
    },
    /// `n_beads` isolated pixels at peak brightness.
    SparseBeads { n_beads: usize },
}

impl ObjectKind {
    pub fn dense_default() -> Self {
        ObjectKind::DenseCells {
            n_blobs: 6,
            radius_min: 3.0,
            radius_max: 6.0,
        }
    }

    pub fn sparse_default() -> Self {
        ObjectKind::SparseBeads { n_beads: 10 }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ObjectKind::DenseCells { .. } => "dense",
            ObjectKind::SparseBeads { .. } => "sparse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub kind: ObjectKind,
    pub size: Shape,
    pub peak_photons: f64,
    pub seed: u64,
}

impl ObjectSpec {
    pub fn new(kind: ObjectKind, size: Shape, peak_photons: f64, seed: u64) -> Self {
        Self {
            kind,
            size,
            peak_photons,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_photons > 0.0 && self.peak_photons.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "peak photons must be > 0, got {}",
                self.peak_photons
            )));
        }
        if self.size.width < 8 || self.size.height < 8 {
            return Err(Error::Dimension(format!(
                "objects need at least 8x8 pixels, got {}",
                self.size
            )));
        }
        match self.kind {
            ObjectKind::DenseCells {
                n_blobs,
                radius_min,
                radius_max,
            } => {
                if n_blobs == 0 {
                    return Err(Error::InvalidParameter("blob count must be ≥ 1".into()));
                }
                if !(radius_min > 0.0 && radius_min <= radius_max) {
                    return Err(Error::InvalidParameter(format!(
                        "bad blob radius range {radius_min}..{radius_max}"
                    )));
                }
            }
            ObjectKind::SparseBeads { n_beads } => {
                if n_beads == 0 {
                    return Err(Error::InvalidParameter("bead count must be ≥ 1".into()));
                }
                if n_beads > self.size.len() {
                    return Err(Error::InvalidParameter(format!(
                        "{n_beads} beads do not fit in {} pixels",
                        self.size.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn generate_object(spec: &ObjectSpec) -> Result<ImageGrid> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, &format!("object/{:?}/{}", spec.kind, spec.size));
    let Shape { width, height } = spec.size;
    let values = match spec.kind {
        ObjectKind::SparseBeads { n_beads } => {
            let mut v = vec![0.0; spec.size.len()];
            for i in index::sample(&mut rng, v.len(), n_beads) {
                v[i] = spec.peak_photons;
            }
            v
        }
        ObjectKind::DenseCells {
            n_blobs,
            radius_min,
            radius_max,
        } => dense_cells(&mut rng, spec, n_blobs, radius_min, radius_max)?,
    };
    ImageGrid::new(width, height, values)
}

fn dense_cells<R: Rng>(
    rng: &mut R,
    spec: &ObjectSpec,
    n_blobs: usize,
    radius_min: f64,
    radius_max: f64,
) -> Result<Vec<f64>> {
    let shape = spec.size;
    let mut v = vec![0.0; shape.len()];
    let nonzero = |v: &[f64]| v.iter().filter(|&&x| x > 0.0).count();
    let mut placed = 0;
    while placed < n_blobs || (nonzero(&v) as f64) < DENSE_MIN_FILL * shape.len() as f64 {
        if placed >= n_blobs + MAX_EXTRA_BLOBS {
            return Err(Error::InvalidParameter(
                "dense object could not reach the minimum fill".into(),
            ));
        }
        let cx = rng.random_range(0.0..shape.width as f64);
        let cy = rng.random_range(0.0..shape.height as f64);
        let mut radius = || {
            if radius_max > radius_min {
                rng.random_range(radius_min..=radius_max)
            } else {
                radius_min
            }
        };
        let (rx, ry) = (radius(), radius());
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let amplitude = rng.random_range(0.5..=1.0);
        let (cos, sin) = (theta.cos(), theta.sin());
        for r in 0..shape.height {
            for c in 0..shape.width {
                let (dx, dy) = (c as f64 - cx, r as f64 - cy);
                let u = (dx * cos + dy * sin) / rx;
                let w = (-dx * sin + dy * cos) / ry;
                let rho = (u * u + w * w).sqrt();
                let value = amplitude * rim_profile(rho);
                let px = &mut v[r * shape.width + c];
                *px = (*px + value).min(1.0);
            }
        }
        placed += 1;
    }
    let max = v.iter().copied().fold(0.0, f64::max);
    Ok(v.into_iter().map(|x| x / max * spec.peak_photons).collect())
}

/// Flat top with a raised-cosine edge.
fn rim_profile(rho: f64) -> f64 {
    if rho <= RIM_INNER {
        1.0
    } else if rho >= RIM_OUTER {
        0.0
    } else {
        let t = (rho - RIM_INNER) / (RIM_OUTER - RIM_INNER);
        0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Fraction of strictly positive pixels.
pub fn sparsity(obj: &ImageGrid) -> f64 {
    obj.values().iter().filter(|&&v| v > 0.0).count() as f64 / obj.shape().len() as f64
}
