//! Image and measurement data model.
//!
//! An [`ImageGrid`] is an `N×N` real image embedded in a `P×P` zero-padded
//! frame (row-major, index `r * P + c`). The default support is the `N×N`
//! top-left block, which with `P = 2N` gives four magnitude measurements per
//! unknown pixel.

use std::sync::Arc;

use crate::error::{check_dim, invalid, Error, Result};

/// Boolean support mask over a `P×P` frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    padded_dim: usize,
    mask: Arc<[bool]>,
}

impl Support {
    /// The `inner×inner` top-left block of a `padded×padded` frame.
    pub fn top_left(inner_dim: usize, padded_dim: usize) -> Self {
        let mut mask = vec![false; padded_dim * padded_dim];
        for r in 0..inner_dim.min(padded_dim) {
            for c in 0..inner_dim.min(padded_dim) {
                mask[r * padded_dim + c] = true;
            }
        }
        Self {
            padded_dim,
            mask: mask.into(),
        }
    }

    pub fn from_mask(padded_dim: usize, mask: Vec<bool>) -> Result<Self> {
        check_dim("support mask length", padded_dim * padded_dim, mask.len())?;
        Ok(Self {
            padded_dim,
            mask: mask.into(),
        })
    }

    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    #[inline]
    pub fn contains(&self, index: usize) -> bool {
        self.mask[index]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Real image in a zero-padded frame with its support mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    inner_dim: usize,
    padded_dim: usize,
    values: Vec<f64>,
    support: Support,
}

impl ImageGrid {
    /// All-zero frame with the default top-left support.
    pub fn zeros(inner_dim: usize, padded_dim: usize) -> Self {
        Self {
            inner_dim,
            padded_dim,
            values: vec![0.0; padded_dim * padded_dim],
            support: Support::top_left(inner_dim, padded_dim),
        }
    }

    /// Embeds `inner_dim²` row-major pixels in the top-left corner of a
    /// `padded_dim²` frame.
    pub fn from_inner(inner_dim: usize, padded_dim: usize, pixels: &[f64]) -> Result<Self> {
        validate_dims(inner_dim, padded_dim)?;
        check_dim("inner pixel count", inner_dim * inner_dim, pixels.len())?;
        let mut img = Self::zeros(inner_dim, padded_dim);
        for r in 0..inner_dim {
            img.values[r * padded_dim..r * padded_dim + inner_dim]
                .copy_from_slice(&pixels[r * inner_dim..(r + 1) * inner_dim]);
        }
        img.check_finite()?;
        Ok(img)
    }

    /// Full-frame constructor with the default top-left support.
    pub fn from_frame(inner_dim: usize, padded_dim: usize, values: Vec<f64>) -> Result<Self> {
        validate_dims(inner_dim, padded_dim)?;
        check_dim("frame value count", padded_dim * padded_dim, values.len())?;
        let img = Self {
            inner_dim,
            padded_dim,
            values,
            support: Support::top_left(inner_dim, padded_dim),
        };
        img.check_finite()?;
        Ok(img)
    }

    /// Same geometry and support, new frame values. Panics on length mismatch.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "frame length mismatch");
        Self {
            inner_dim: self.inner_dim,
            padded_dim: self.padded_dim,
            values,
            support: self.support.clone(),
        }
    }

    /// Replaces the support mask.
    pub fn with_support(mut self, support: Support) -> Result<Self> {
        check_dim("support dimension", self.padded_dim, support.padded_dim())?;
        self.support = support;
        Ok(self)
    }

    pub fn inner_dim(&self) -> usize {
        self.inner_dim
    }

    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.padded_dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.padded_dim + c] = v;
    }

    /// Row-major copy of the `N×N` top-left window.
    pub fn inner_values(&self) -> Vec<f64> {
        let (n, p) = (self.inner_dim, self.padded_dim);
        let mut out = Vec::with_capacity(n * n);
        for r in 0..n {
            out.extend_from_slice(&self.values[r * p..r * p + n]);
        }
        out
    }

    /// Euclidean norm over the full frame.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("image values"))
        }
    }

    pub fn same_geometry(&self, other: &ImageGrid) -> Result<()> {
        check_dim("padded dimension", self.padded_dim, other.padded_dim)?;
        check_dim("inner dimension", self.inner_dim, other.inner_dim)
    }

    /// `a·self + b·other`, elementwise.
    pub fn lin_comb(&self, a: f64, other: &ImageGrid, b: f64) -> ImageGrid {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        self.with_values(values)
    }

    /// Euclidean distance over the full frame.
    pub fn distance(&self, other: &ImageGrid) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Elementwise mean of a non-empty set of images sharing one geometry.
pub fn mean_image(images: &[ImageGrid]) -> Result<ImageGrid> {
    let first = images.first().ok_or(Error::NotEnough {
        what: "images",
        required: 1,
        actual: 0,
    })?;
    let mut acc = vec![0.0; first.len()];
    for img in images {
        first.same_geometry(img)?;
        for (a, v) in acc.iter_mut().zip(img.values()) {
            *a += v;
        }
    }
    let k = images.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(first.with_values(acc))
}

fn validate_dims(inner_dim: usize, padded_dim: usize) -> Result<()> {
    if inner_dim == 0 {
        return Err(invalid("inner_dim", "must be positive"));
    }
    if padded_dim < inner_dim {
        return Err(invalid(
            "padded_dim",
            format!("{padded_dim} is smaller than inner_dim {inner_dim}"),
        ));
    }
    Ok(())
}

/// Magnitude measurements `y` on the `P×P` frequency grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeMeasurements {
    padded_dim: usize,
    magnitudes: Vec<f64>,
    /// Noise scale used at synthesis.
    pub alpha: f64,
    /// Seed used at synthesis; 0 for external data.
    pub seed: u64,
}

impl MagnitudeMeasurements {
    pub fn new(padded_dim: usize, magnitudes: Vec<f64>, alpha: f64, seed: u64) -> Result<Self> {
        check_dim(
            "measurement count",
            padded_dim * padded_dim,
            magnitudes.len(),
        )?;
        if magnitudes.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("magnitudes"));
        }
        if magnitudes.iter().any(|&m| m < 0.0) {
            return Err(invalid("magnitudes", "must be non-negative"));
        }
        if !(alpha >= 0.0) {
            return Err(invalid("alpha", "must be non-negative"));
        }
        Ok(Self {
            padded_dim,
            magnitudes,
            alpha,
            seed,
        })
    }

    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }
}

/// Gaussian approximation of Poisson noise on intensities:
/// `w ~ N(0, α²·|Ax|²)` evaluated at pixel scale `intensity_scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub alpha: f64,
    /// Pixel value that maps to 1.0 internally when the noise is drawn.
    /// 1.0 applies the model literally to `[0,1]` images; 255 applies it in
    /// 8-bit units.
    pub intensity_scale: f64,
}

impl NoiseModel {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            intensity_scale: 1.0,
        }
    }

    pub fn with_intensity_scale(mut self, scale: f64) -> Self {
        self.intensity_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(invalid("alpha", format!("{} is not >= 0", self.alpha)));
        }
        if !(self.intensity_scale > 0.0) || !self.intensity_scale.is_finite() {
            return Err(invalid("intensity_scale", "must be positive"));
        }
        Ok(())
    }
}
