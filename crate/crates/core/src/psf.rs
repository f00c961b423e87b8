//! Seeded surrogate PSFs spanning a range of multiplexing: fixed lenslet
//! layouts, a random multi-focal lenslet array and a speckle-like diffuser.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ImageGrid, Shape};
use crate::rng;

/// Width of each lenslet focal spot, in pixels.
pub const LENSLET_SIGMA: f64 = 0.75;
const RML_MIN_SEPARATION: f64 = 2.0;
const RML_RETRY_BUDGET: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PsfKind {
    /// A single unit pixel; `H` becomes the identity.
    Delta,
    /// `n` equal Gaussian spots on a fixed layout.
    Lenslets { n: usize },
    /// Random multi-focal lenslets: spots at random positions with random widths.
    Rml {
        n_spots: usize,
        width_min: f64,
        width_max: f64,
    },
    /// Exponentiated low-pass Gaussian noise; `contrast` is the half-width
    /// of the log-intensity range.
    Diffuser {
        correlation_length: f64,
        contrast: f64,
    },
}

impl PsfKind {
    pub fn rml_default() -> Self {
        PsfKind::Rml {
            n_spots: 15,
            width_min: 0.6,
            width_max: 2.0,
        }
    }

    pub fn diffuser_default() -> Self {
        PsfKind::Diffuser {
            correlation_length: 3.0,
            contrast: 2.0,
        }
    }

    /// Short identifier used in file names and manifests.
    pub fn label(&self) -> String {
        match self {
            PsfKind::Delta => "delta".into(),
            PsfKind::Lenslets { n } => format!("lenslets{n}"),
            PsfKind::Rml { .. } => "rml".into(),
            PsfKind::Diffuser { .. } => "diffuser".into(),
        }
    }

    /// Whether the PSF is a stand-in for hardware the toolkit cannot model.
    pub fn is_surrogate(&self) -> bool {
        !matches!(self, PsfKind::Delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfSpec {
    pub kind: PsfKind,
    pub size: Shape,
    pub seed: u64,
}

impl PsfSpec {
    pub fn new(kind: PsfKind, size: Shape, seed: u64) -> Self {
        Self { kind, size, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidParameter(m));
        match self.kind {
            PsfKind::Delta => {}
            PsfKind::Lenslets { n: 0 } => return invalid("lenslet count must be ≥ 1".into()),
            PsfKind::Rml {
                n_spots,
                width_min,
                width_max,
            } => {
                if n_spots == 0 {
                    return invalid("RML spot count must be ≥ 1".into());
                }
                if !(width_min > 0.0 && width_min <= width_max) {
                    return invalid(format!("bad RML width range {width_min}..{width_max}"));
                }
            }
            PsfKind::Diffuser {
                correlation_length,
                contrast,
            } => {
                if !(correlation_length >= 1.0) {
                    return invalid("diffuser correlation length must be ≥ 1".into());
                }
                if !contrast.is_finite() {
                    return invalid("diffuser contrast must be finite".into());
                }
            }
            PsfKind::Lenslets { .. } => {}
        }
        if !matches!(self.kind, PsfKind::Delta) && (self.size.width < 8 || self.size.height < 8) {
            return Err(Error::Dimension(format!(
                "multi-spot PSFs need at least 8x8 pixels, got {}",
                self.size
            )));
        }
        Ok(())
    }

    fn stream_label(&self) -> String {
        // Debug formatting of plain numeric fields is stable.
        format!("psf/{:?}/{}", self.kind, self.size)
    }
}

/// Generate the PSF for `spec`, normalized to unit total mass.
pub fn generate_psf(spec: &PsfSpec) -> Result<ImageGrid> {
    spec.validate()?;
    let Shape { width, height } = spec.size;
    let mut values = match spec.kind {
        PsfKind::Delta => return ImageGrid::new(1, 1, vec![1.0]),
        PsfKind::Lenslets { n } => {
            let spots: Vec<_> = lenslet_layout(n)
                .into_iter()
                .map(|(fx, fy)| ((fx * width as f64).round(), (fy * height as f64).round()))
                .collect();
            let mut v = vec![0.0; spec.size.len()];
            for (x, y) in spots {
                add_spot(&mut v, spec.size, x, y, LENSLET_SIGMA, 1.0);
            }
            v
        }
        PsfKind::Rml {
            n_spots,
            width_min,
            width_max,
        } => {
            let mut rng = rng::stream(spec.seed, &spec.stream_label());
            let spots = place_spots(&mut rng, spec.size, n_spots)?;
            let mut v = vec![0.0; spec.size.len()];
            for (x, y) in spots {
                let sigma = if width_max > width_min {
                    rng.random_range(width_min..=width_max)
                } else {
                    width_min
                };
                // Equal energy per focal spot regardless of its width.
                add_spot(&mut v, spec.size, x, y, sigma, 1.0 / (sigma * sigma));
            }
            v
        }
        PsfKind::Diffuser {
            correlation_length,
            contrast,
        } => {
            let mut rng = rng::stream(spec.seed, &spec.stream_label());
            let noise: Vec<f64> = (0..spec.size.len())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let mut z = circular_gaussian_blur(&noise, spec.size, correlation_length);
            normalize_log_field(&mut z);
            z.iter().map(|zi| (contrast * zi).exp()).collect()
        }
    };
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("generated PSF has no mass".into()));
    }
    values.iter_mut().for_each(|v| *v /= total);
    ImageGrid::new(width, height, values)
}

/// Fractional spot positions inside the central half of the grid.
fn lenslet_layout(n: usize) -> Vec<(f64, f64)> {
    match n {
        1 => vec![(0.5, 0.5)],
        2 => vec![(0.25, 0.5), (0.75, 0.5)],
        3 => vec![(0.5, 0.25), (0.25, 0.75), (0.75, 0.75)],
        4 => vec![(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)],
        5 => vec![
            (0.25, 0.25),
            (0.75, 0.25),
            (0.5, 0.5),
            (0.25, 0.75),
            (0.75, 0.75),
        ],
        _ => {
            // Fill a regular grid over the central half row by row.
            let cols = (n as f64).sqrt().ceil() as usize;
            let rows = n.div_ceil(cols);
            let at = |i: usize, m: usize| {
                if m == 1 {
                    0.5
                } else {
                    0.25 + 0.5 * i as f64 / (m - 1) as f64
                }
            };
            (0..n)
                .map(|i| (at(i % cols, cols), at(i / cols, rows)))
                .collect()
        }
    }
}

fn add_spot(values: &mut [f64], shape: Shape, cx: f64, cy: f64, sigma: f64, amplitude: f64) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    for r in 0..shape.height {
        let dy = r as f64 - cy;
        for c in 0..shape.width {
            let dx = c as f64 - cx;
            values[r * shape.width + c] += amplitude * (-(dx * dx + dy * dy) * inv).exp();
        }
    }
}

fn place_spots<R: Rng>(rng: &mut R, shape: Shape, n: usize) -> Result<Vec<(f64, f64)>> {
    let mut spots: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut rejected = 0;
    let (xmax, ymax) = ((shape.width - 1) as f64, (shape.height - 1) as f64);
    while spots.len() < n {
        let p = (rng.random_range(0.0..=xmax), rng.random_range(0.0..=ymax));
        let clear = spots
            .iter()
            .all(|q| (p.0 - q.0).hypot(p.1 - q.1) >= RML_MIN_SEPARATION);
        if clear {
            spots.push(p);
        } else {
            rejected += 1;
            if rejected > RML_RETRY_BUDGET {
                return Err(Error::Placement {
                    requested: n,
                    retries: RML_RETRY_BUDGET,
                });
            }
        }
    }
    Ok(spots)
}

/// Separable Gaussian blur with periodic boundaries.
fn circular_gaussian_blur(values: &[f64], shape: Shape, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let (w, h) = (shape.width as isize, shape.height as isize);
    let mut tmp = vec![0.0; values.len()];
    for r in 0..h {
        for c in 0..w {
            tmp[(r * w + c) as usize] = (-radius..=radius)
                .zip(&kernel)
                .map(|(t, k)| k * values[(r * w + (c + t).rem_euclid(w)) as usize])
                .sum();
        }
    }
    let mut out = vec![0.0; values.len()];
    for r in 0..h {
        for c in 0..w {
            out[(r * w + c) as usize] = (-radius..=radius)
                .zip(&kernel)
                .map(|(t, k)| k * tmp[((r + t).rem_euclid(h) * w + c) as usize])
                .sum();
        }
    }
    out
}

/// Remove the mean and scale to unit peak magnitude, so `exp(contrast·z)`
/// spans exactly `[e^-contrast, e^contrast]` at its extremes.
fn normalize_log_field(z: &mut [f64]) {
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    z.iter_mut().for_each(|v| *v -= mean);
    let peak = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in z.iter_mut() {
        *v = if peak > 0.0 { *v / peak } else { 0.0 };
    }
}

/// Normalized inverse participation ratio `(Σp)² / (N·Σp²)`: `1/N` for a
/// single bright pixel, 1 for a uniform PSF.
pub fn multiplexing_index(psf: &ImageGrid) -> Result<f64> {
    let sum = psf.sum();
    if !(sum > 0.0) {
        return Err(Error::InvalidParameter("PSF has zero mass".into()));
    }
    let sum_sq: f64 = psf.values().iter().map(|p| p * p).sum();
    Ok(sum * sum / (psf.shape().len() as f64 * sum_sq))
}

/// Fraction of pixels above `fraction × max`.
pub fn occupancy(psf: &ImageGrid, fraction: f64) -> f64 {
    let threshold = fraction * psf.max();
    psf.values().iter().filter(|&&v| v > threshold).count() as f64 / psf.shape().len() as f64
}

/// Strict 8-neighbour local maxima above `fraction × max`, as `(row, col)`.
pub fn local_maxima(psf: &ImageGrid, fraction: f64) -> Vec<(usize, usize)> {
    let threshold = fraction * psf.max();
    let (w, h) = (psf.width() as isize, psf.height() as isize);
    let mut peaks = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = psf.get(r as usize, c as usize);
            if v <= threshold {
                continue;
            }
            let is_peak = (-1..=1)
                .flat_map(|dr| (-1..=1).map(move |dc| (dr, dc)))
                .filter(|&d| d != (0, 0))
                .all(|(dr, dc)| {
                    let (rr, cc) = (r + dr, c + dc);
                    rr < 0 || cc < 0 || rr >= h || cc >= w || psf.get(rr as usize, cc as usize) < v
                });
            if is_peak {
                peaks.push((r as usize, c as usize));
            }
        }
    }
    peaks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lenslets(n: usize) -> ImageGrid {
        generate_psf(&PsfSpec::new(PsfKind::Lenslets { n }, Shape::square(32), 1)).unwrap()
    }

    #[test]
    fn single_lenslet_is_centred_and_normalized() {
        let p = lenslets(1);
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert_eq!(local_maxima(&p, 0.5), vec![(16, 16)]);
    }

    #[test]
    fn two_lenslets_on_central_row() {
        let p = lenslets(2);
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert_eq!(local_maxima(&p, 0.5), vec![(16, 8), (16, 24)]);
    }

    #[test]
    fn lenslet_peak_count_matches_n() {
        for n in 1..=9 {
            assert_eq!(local_maxima(&lenslets(n), 0.5).len(), n, "n = {n}");
        }
    }

    #[test]
    fn diffuser_is_highly_multiplexed() {
        let p = generate_psf(&PsfSpec::new(
            PsfKind::diffuser_default(),
            Shape::square(32),
            42,
        ))
        .unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(
            occupancy(&p, 0.1) >= 0.3,
            "occupancy {}",
            occupancy(&p, 0.1)
        );
    }

    #[test]
    fn index_of_delta_and_uniform() {
        let mut v = vec![0.0; 1024];
        v[100] = 3.0;
        let delta = ImageGrid::new(32, 32, v).unwrap();
        assert!((multiplexing_index(&delta).unwrap() - 1.0 / 1024.0).abs() < 1e-15);
        let uniform = ImageGrid::new(32, 32, vec![0.25; 1024]).unwrap();
        assert!((multiplexing_index(&uniform).unwrap() - 1.0).abs() < 1e-12);
        assert!(multiplexing_index(&ImageGrid::zeros(Shape::square(4))).is_err());
    }

    #[test]
    fn index_orders_encoders() {
        let size = Shape::square(32);
        let idx = |kind| {
            multiplexing_index(&generate_psf(&PsfSpec::new(kind, size, 42)).unwrap()).unwrap()
        };
        let l1 = idx(PsfKind::Lenslets { n: 1 });
        let l5 = idx(PsfKind::Lenslets { n: 5 });
        let diff = idx(PsfKind::diffuser_default());
        assert!(l1 < l5 && l5 < diff, "{l1} {l5} {diff}");
    }

    #[test]
    fn rml_is_seeded() {
        let spec = PsfSpec::new(PsfKind::rml_default(), Shape::square(32), 9);
        let a = generate_psf(&spec).unwrap();
        assert_eq!(a, generate_psf(&spec).unwrap());
        let b = generate_psf(&PsfSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a, b);
        assert!((a.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rml_overcrowding_is_a_placement_error() {
        let spec = PsfSpec::new(
            PsfKind::Rml {
                n_spots: 200,
                width_min: 0.6,
                width_max: 2.0,
            },
            Shape::square(8),
            1,
        );
        assert!(matches!(generate_psf(&spec), Err(Error::Placement { .. })));
    }

    #[test]
    fn invalid_specs_rejected() {
        let s = Shape::square(32);
        assert!(generate_psf(&PsfSpec::new(PsfKind::Lenslets { n: 0 }, s, 0)).is_err());
        assert!(generate_psf(&PsfSpec::new(
            PsfKind::Lenslets { n: 2 },
            Shape::square(6),
            0
        ))
        .is_err());
        let bad = PsfKind::Rml {
            n_spots: 3,
            width_min: 2.0,
            width_max: 1.0,
        };
        assert!(generate_psf(&PsfSpec::new(bad, s, 0)).is_err());
        let bad = PsfKind::Diffuser {
            correlation_length: 0.5,
            contrast: 1.0,
        };
        assert!(generate_psf(&PsfSpec::new(bad, s, 0)).is_err());
    }
}
