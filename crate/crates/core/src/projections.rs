//! Magnitude and space projections and their reflectors.

use num_complex::Complex64;

use crate::error::{check_dim, invalid, Result};
use crate::fourier::{plan, ComplexSpectrum};
use crate::grid::{ImageGrid, MagnitudeMeasurements, Support};

/// Which space-domain constraints `P_S` enforces. Realness is always implied
/// by the real-part truncation of `A†`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SpaceConstraint {
    /// Zero outside the support only (a linear subspace).
    Support,
    /// Zero outside the support and non-negative inside.
    #[default]
    SupportNonNegative,
}

impl SpaceConstraint {
    #[inline]
    pub(crate) fn violates(self, support: &Support, index: usize, value: f64) -> bool {
        !support.contains(index) || (self == SpaceConstraint::SupportNonNegative && value < 0.0)
    }
}

/// Frame indices where the space constraints fail.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConstraintViolationSet {
    pub indices: Vec<usize>,
}

impl ConstraintViolationSet {
    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Selects the projector a reflection is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionKind {
    Space,
    Magnitude,
}

/// Replaces every spectral magnitude by `y`, keeping the phase; phase 1 where
/// the spectrum vanishes.
pub(crate) fn impose_magnitudes(spec: &mut [Complex64], y: &[f64]) {
    for (v, &m) in spec.iter_mut().zip(y) {
        let norm = v.norm();
        *v = if norm == 0.0 {
            Complex64::new(m, 0.0)
        } else {
            *v * (m / norm)
        };
    }
}

/// The field `y ⊙ Ax/|Ax|` on the frequency grid, before `A†`.
pub fn magnitude_projected_field(x: &ImageGrid, y: &MagnitudeMeasurements) -> Result<ComplexSpectrum> {
    check_dim("padded dimension", x.padded_dim(), y.padded_dim())?;
    let mut spec = plan(x.padded_dim()).forward_real(x.values());
    impose_magnitudes(&mut spec, y.magnitudes());
    ComplexSpectrum::new(x.padded_dim(), spec)
}

/// `P_F x = Re A†(y ⊙ Ax/|Ax|)`.
pub fn project_magnitude(x: &ImageGrid, y: &MagnitudeMeasurements) -> Result<ImageGrid> {
    check_dim("padded dimension", x.padded_dim(), y.padded_dim())?;
    Ok(x.with_values(project_magnitude_values(x.values(), y)))
}

pub(crate) fn project_magnitude_values(x: &[f64], y: &MagnitudeMeasurements) -> Vec<f64> {
    let op = plan(y.padded_dim());
    let mut spec = op.forward_real(x);
    impose_magnitudes(&mut spec, y.magnitudes());
    op.inverse_real(spec)
}

/// `P_S` with support and non-negativity; returns the violation set `γ`
/// (non-zero values outside the support and negative values inside).
pub fn project_space(x: &ImageGrid) -> (ImageGrid, ConstraintViolationSet) {
    project_space_with(x, SpaceConstraint::SupportNonNegative)
}

pub fn project_space_with(
    x: &ImageGrid,
    constraint: SpaceConstraint,
) -> (ImageGrid, ConstraintViolationSet) {
    let mut values = x.values().to_vec();
    let mut indices = Vec::new();
    for (i, v) in values.iter_mut().enumerate() {
        if constraint.violates(x.support(), i, *v) {
            // a zero outside the support already satisfies the constraint
            if *v != 0.0 {
                indices.push(i);
            }
            *v = 0.0;
        }
    }
    (x.with_values(values), ConstraintViolationSet { indices })
}

pub(crate) fn project_space_in_place(values: &mut [f64], support: &Support, constraint: SpaceConstraint) {
    for (i, v) in values.iter_mut().enumerate() {
        if constraint.violates(support, i, *v) {
            *v = 0.0;
        }
    }
}

/// `R = 2P − I` for the selected projector. The magnitude reflector needs `y`.
pub fn reflect(
    x: &ImageGrid,
    which: ProjectionKind,
    y: Option<&MagnitudeMeasurements>,
) -> Result<ImageGrid> {
    reflect_with(x, which, y, SpaceConstraint::SupportNonNegative)
}

pub fn reflect_with(
    x: &ImageGrid,
    which: ProjectionKind,
    y: Option<&MagnitudeMeasurements>,
    constraint: SpaceConstraint,
) -> Result<ImageGrid> {
    let projected = match which {
        ProjectionKind::Space => project_space_with(x, constraint).0,
        ProjectionKind::Magnitude => {
            let y = y.ok_or_else(|| invalid("y", "magnitude reflection needs measurements"))?;
            project_magnitude(x, y)?
        }
    };
    Ok(projected.lin_comb(2.0, x, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::{forward, measure};
    use crate::grid::NoiseModel;

    fn sample() -> ImageGrid {
        ImageGrid::from_inner(3, 6, &[0.2, 0.5, 0.1, 0.9, 0.4, 0.3, 0.7, 0.6, 0.8]).unwrap()
    }

    #[test]
    fn feasible_image_is_fixed_by_space_projection() {
        let x = sample();
        let (p, gamma) = project_space(&x);
        assert_eq!(p, x);
        assert!(gamma.is_empty());
    }

    #[test]
    fn all_negative_frame_projects_to_zero() {
        let x = sample().with_values(vec![-1.0; 36]);
        let (p, gamma) = project_space(&x);
        assert!(p.values().iter().all(|&v| v == 0.0));
        assert_eq!(gamma.indices, (0..36).collect::<Vec<_>>());
    }

    #[test]
    fn consistent_image_is_fixed_by_magnitude_projection() {
        let x = sample();
        let y = measure(&x, &NoiseModel::new(0.0), 0).unwrap();
        let p = project_magnitude(&x, &y).unwrap();
        assert!(p.distance(&x) < 1e-10);
    }

    #[test]
    fn zero_image_gets_unit_phase() {
        let x = sample();
        let y = measure(&x, &NoiseModel::new(0.0), 0).unwrap();
        let zero = ImageGrid::zeros(3, 6);
        let p = project_magnitude(&zero, &y).unwrap();
        let spec: Vec<Complex64> = y.magnitudes().iter().map(|&m| Complex64::new(m, 0.0)).collect();
        let expected = plan(6).inverse_real(spec);
        for (a, b) in p.values().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn projected_field_has_measured_magnitudes() {
        let x = sample();
        let y = measure(&x.lin_comb(1.0, &sample().with_values(vec![0.05; 36]), 1.0), &NoiseModel::new(0.0), 0).unwrap();
        let field = magnitude_projected_field(&x, &y).unwrap();
        for (m, &t) in field.magnitudes().iter().zip(y.magnitudes()) {
            assert!((m - t).abs() < 1e-12);
        }
        assert!(forward(&x).is_ok());
    }

    #[test]
    fn reflect_fixed_point_and_zero() {
        let x = sample();
        assert_eq!(reflect(&x, ProjectionKind::Space, None).unwrap(), x);
        let zero = ImageGrid::zeros(3, 6);
        assert_eq!(reflect(&zero, ProjectionKind::Space, None).unwrap(), zero);
        assert!(reflect(&x, ProjectionKind::Magnitude, None).is_err());
    }
}
