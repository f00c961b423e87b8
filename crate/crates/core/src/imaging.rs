//! Discrete forward model: intensity grids, the dense full-convolution
//! system matrix and noiseless image formation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width/height of a pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
}

impl Shape {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub const fn square(n: usize) -> Self {
        Self::new(n, n)
    }

    pub const fn len(&self) -> usize {
        self.width * self.height
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

fn check_non_negative(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
        Some(index) => Err(Error::NegativeValue {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// A 2-D non-negative intensity array (photons per pixel), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    shape: Shape,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "grid must be non-empty, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        check_non_negative(&values)?;
        Ok(Self {
            shape: Shape::new(width, height),
            values,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    /// Build from nested rows, `rows[r][c]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(width, height, rows.concat())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.shape.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// The `row`-th row as a slice.
    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.shape.width;
        &self.values[row * w..(row + 1) * w]
    }

    /// Zero-pad to `target`, centring the content. An odd surplus puts the
    /// extra row/column at the bottom/right.
    pub fn pad_centered(&self, target: Shape) -> Result<Self> {
        if target.width < self.width() || target.height < self.height() {
            return Err(Error::Dimension(format!(
                "padded size {target} is smaller than the grid {}",
                self.shape
            )));
        }
        let top = (target.height - self.height()) / 2;
        let left = (target.width - self.width()) / 2;
        let mut out = Self::zeros(target);
        for r in 0..self.height() {
            let dst = (r + top) * target.width + left;
            out.values[dst..dst + self.width()].copy_from_slice(self.row(r));
        }
        Ok(out)
    }
}

/// Row-major flattening of an object grid: the parameter vector being
/// estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorizedObject {
    values: DVector<f64>,
    shape: Shape,
}

impl VectorizedObject {
    pub fn new(values: DVector<f64>, shape: Shape) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "{} values for object shape {shape}",
                values.len()
            )));
        }
        check_non_negative(values.as_slice())?;
        Ok(Self { values, shape })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multiply every intensity by `c ≥ 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.values * c, self.shape)
    }
}

pub fn vectorize(obj: &ImageGrid) -> VectorizedObject {
    VectorizedObject {
        values: DVector::from_column_slice(obj.values()),
        shape: obj.shape(),
    }
}

pub fn devectorize(v: &VectorizedObject) -> ImageGrid {
    ImageGrid {
        shape: v.shape,
        values: v.values.as_slice().to_vec(),
    }
}

/// Dense `k × d` matrix realizing full 2-D convolution with a fixed,
/// zero-padded PSF. Column `j` is the padded PSF translated to object
/// pixel `j`; measurement pixels are indexed row-major over the
/// `(obj_w + pad_w − 1) × (obj_h + pad_h − 1)` plane.
#[derive(Debug, Clone)]
pub struct SystemMatrix {
    matrix: DMatrix<f64>,
    object_shape: Shape,
    pad_shape: Shape,
    psf_id: String,
}

impl SystemMatrix {
    pub fn build(psf: &ImageGrid, object_shape: Shape, pad_shape: Shape) -> Result<Self> {
        if object_shape.is_empty() {
            return Err(Error::Dimension(format!(
                "object shape must be positive, got {object_shape}"
            )));
        }
        let padded = psf.pad_centered(pad_shape)?;
        let meas = Shape::new(
            object_shape.width + pad_shape.width - 1,
            object_shape.height + pad_shape.height - 1,
        );
        let mut matrix = DMatrix::zeros(meas.len(), object_shape.len());
        for (j, mut col) in matrix.column_iter_mut().enumerate() {
            let (oy, ox) = (j / object_shape.width, j % object_shape.width);
            for pr in 0..pad_shape.height {
                let dst = (oy + pr) * meas.width + ox;
                col.as_mut_slice()[dst..dst + pad_shape.width].copy_from_slice(padded.row(pr));
            }
        }
        Ok(Self {
            matrix,
            object_shape,
            pad_shape,
            psf_id: "psf".to_string(),
        })
    }

    pub fn with_psf_id(mut self, id: impl Into<String>) -> Self {
        self.psf_id = id.into();
        self
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// k, the number of measurement pixels.
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// d, the number of object pixels.
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn object_shape(&self) -> Shape {
        self.object_shape
    }

    pub fn pad_shape(&self) -> Shape {
        self.pad_shape
    }

    pub fn measurement_shape(&self) -> Shape {
        Shape::new(
            self.object_shape.width + self.pad_shape.width - 1,
            self.object_shape.height + self.pad_shape.height - 1,
        )
    }

    pub fn psf_id(&self) -> &str {
        &self.psf_id
    }

    fn check_cols(&self, d: usize) -> Result<()> {
        if d != self.cols() {
            return Err(Error::Dimension(format!(
                "object has {d} pixels, system matrix expects {}",
                self.cols()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_rows(&self, k: usize) -> Result<()> {
        if k != self.rows() {
            return Err(Error::Dimension(format!(
                "measurement has {k} pixels, system matrix produces {}",
                self.rows()
            )));
        }
        Ok(())
    }

    /// Noiseless image formation `b = Hv`.
    pub fn forward(&self, v: &VectorizedObject) -> Result<DVector<f64>> {
        self.check_cols(v.len())?;
        Ok(&self.matrix * v.values())
    }

    /// `Hᵀy` for an arbitrary (possibly signed) measurement-space vector.
    pub fn adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rows(y.len())?;
        Ok(self.matrix.tr_mul(y))
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.matrix.column_iter().map(|c| c.sum()).collect()
    }

    /// Check the structural invariants: non-negative entries and equal
    /// column sums (every column is a translate of the same PSF).
    pub fn validate(&self) -> Result<()> {
        if let Some(index) = self.matrix.iter().position(|v| !(*v >= 0.0)) {
            return Err(Error::NegativeValue {
                index,
                value: self.matrix.as_slice()[index],
            });
        }
        let sums = self.column_sums();
        let reference = sums.first().copied().unwrap_or(0.0);
        for (j, s) in sums.iter().enumerate() {
            if (s - reference).abs() > 1e-12 * reference.abs().max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "column {j} sums to {s}, column 0 to {reference}"
                )));
            }
        }
        Ok(())
    }

    /// Overwrite a single entry. Only meant for exercising invariant checks.
    #[doc(hidden)]
    pub fn set_entry_unchecked(&mut self, row: usize, col: usize, value: f64) {
        self.matrix[(row, col)] = value;
    }
}
