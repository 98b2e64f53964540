//! Oversampled unitary 2D DFT forward operator and measurement model.
//!
//! `A` maps a `P×P` real frame to its unitary DFT (`1/P` scaling in both
//! directions), so `A` is norm preserving and `A†` is its adjoint. The
//! pseudoinverse keeps only the real part of the inverse transform.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_dim, Error, Result};
use crate::grid::{ImageGrid, MagnitudeMeasurements, NoiseModel, Support};
use crate::rng::{rng_from_seed, standard_normal_vec};

/// SNR value reported when the measurement noise is exactly zero.
pub const SNR_CAP_DB: f64 = 300.0;

/// Cached row transforms for one frame size.
pub struct Fourier2d {
    dim: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

static PLANS: OnceLock<Mutex<HashMap<usize, Arc<Fourier2d>>>> = OnceLock::new();

/// Shared plan for a `dim×dim` frame.
pub fn plan(dim: usize) -> Arc<Fourier2d> {
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(dim)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Fourier2d {
                dim,
                fwd: planner.plan_fft_forward(dim),
                inv: planner.plan_fft_inverse(dim),
            })
        })
        .clone()
}

impl Fourier2d {
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let p = self.dim;
        debug_assert_eq!(data.len(), p * p);
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(data, &mut scratch);
        transpose_square(data, p);
        fft.process_with_scratch(data, &mut scratch);
        transpose_square(data, p);
        let scale = 1.0 / p as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    /// Unitary forward transform in place.
    pub fn forward_in_place(&self, data: &mut [Complex64]) {
        self.transform(data, &self.fwd);
    }

    /// Unitary inverse transform in place.
    pub fn inverse_in_place(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inv);
    }

    /// Spectrum of a real frame.
    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward_in_place(&mut data);
        data
    }

    /// Real part of the inverse transform.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.inverse_in_place(&mut spectrum);
        spectrum.into_iter().map(|v| v.re).collect()
    }
}

fn transpose_square(data: &mut [Complex64], p: usize) {
    for r in 0..p {
        for c in r + 1..p {
            data.swap(r * p + c, c * p + r);
        }
    }
}

/// Complex coefficients on the `P×P` frequency grid (unitary normalization).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    padded_dim: usize,
    values: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn new(padded_dim: usize, values: Vec<Complex64>) -> Result<Self> {
        check_dim("spectrum length", padded_dim * padded_dim, values.len())?;
        Ok(Self { padded_dim, values })
    }

    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Unitary DFT of the padded frame.
pub fn forward(image: &ImageGrid) -> Result<ComplexSpectrum> {
    image.check_finite()?;
    let p = image.padded_dim();
    ComplexSpectrum::new(p, plan(p).forward_real(image.values()))
}

/// Result of `A†` with the discarded imaginary energy kept for diagnostics.
#[derive(Clone, Debug)]
pub struct Backprojection {
    pub image: ImageGrid,
    /// `‖Im(A† s)‖₂²`, the energy dropped by real-part truncation.
    pub discarded_imag_energy: f64,
}

/// `A†`: inverse unitary DFT, real part of the full frame. The support is
/// attached but not enforced.
pub fn pseudoinverse(spectrum: &ComplexSpectrum, support: &Support) -> Result<ImageGrid> {
    Ok(pseudoinverse_with_diagnostics(spectrum, support, None)?.image)
}

/// Same as [`pseudoinverse`], reporting the discarded imaginary energy.
/// `inner_dim` defaults to the bounding size of the support when `None`.
pub fn pseudoinverse_with_diagnostics(
    spectrum: &ComplexSpectrum,
    support: &Support,
    inner_dim: Option<usize>,
) -> Result<Backprojection> {
    let p = spectrum.padded_dim();
    check_dim("support dimension", p, support.padded_dim())?;
    if spectrum.values().iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("spectrum"));
    }
    let mut data = spectrum.values().to_vec();
    plan(p).inverse_in_place(&mut data);
    let discarded_imag_energy = data.iter().map(|v| v.im * v.im).sum();
    let values: Vec<f64> = data.into_iter().map(|v| v.re).collect();
    let n = inner_dim.unwrap_or_else(|| support_extent(support));
    let image = ImageGrid::from_frame(n.max(1).min(p), p, values)?.with_support(support.clone())?;
    Ok(Backprojection {
        image,
        discarded_imag_energy,
    })
}

fn support_extent(support: &Support) -> usize {
    let p = support.padded_dim();
    let mut extent = 0;
    for r in 0..p {
        for c in 0..p {
            if support.contains(r * p + c) {
                extent = extent.max(r + 1).max(c + 1);
            }
        }
    }
    extent
}

/// Noisy magnitude measurements `y = sqrt(max(|Ax|² + w, 0))`.
///
/// With `intensity_scale = s`, the noise is drawn for the image `s·x` and the
/// magnitudes are reported back in the image's own units, i.e.
/// `w ~ N(0, α²|A(sx)|²)` and `y = sqrt(max(|A(sx)|² + w, 0)) / s`.
pub fn measure(image: &ImageGrid, noise: &NoiseModel, seed: u64) -> Result<MagnitudeMeasurements> {
    noise.validate()?;
    let spectrum = forward(image)?;
    let p = image.padded_dim();
    let clean: Vec<f64> = spectrum.magnitudes();
    let magnitudes = if noise.alpha == 0.0 {
        clean
    } else {
        let s = noise.intensity_scale;
        let eps = standard_normal_vec(&mut rng_from_seed(seed), p * p);
        clean
            .iter()
            .zip(&eps)
            .map(|(&m, &e)| {
                let amp = m * s;
                let intensity = amp * amp + noise.alpha * amp * e;
                intensity.max(0.0).sqrt() / s
            })
            .collect()
    };
    MagnitudeMeasurements::new(p, magnitudes, noise.alpha, seed)
}

/// How the SNR numerator and denominator are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SnrMode {
    /// `‖|Ax|²‖² / ‖y² − |Ax|²‖²`
    #[default]
    Intensity,
    /// `‖|Ax|‖² / ‖y − |Ax|‖²`
    Field,
}

/// Measurement SNR in dB, capped at [`SNR_CAP_DB`] for noiseless data.
pub fn snr_db(image: &ImageGrid, meas: &MagnitudeMeasurements, mode: SnrMode) -> Result<f64> {
    check_dim("padded dimension", image.padded_dim(), meas.padded_dim())?;
    let clean = forward(image)?.magnitudes();
    let (mut num, mut den) = (0.0, 0.0);
    for (&a, &y) in clean.iter().zip(meas.magnitudes()) {
        match mode {
            SnrMode::Intensity => {
                let (ia, iy) = (a * a, y * y);
                num += ia * ia;
                den += (iy - ia) * (iy - ia);
            }
            SnrMode::Field => {
                num += a * a;
                den += (y - a) * (y - a);
            }
        }
    }
    if den == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (num / den).log10()).min(SNR_CAP_DB))
}

/// `‖y − |A·image|‖₂²`.
pub fn residual(image: &ImageGrid, meas: &MagnitudeMeasurements) -> Result<f64> {
    check_dim("padded dimension", image.padded_dim(), meas.padded_dim())?;
    Ok(residual_of_values(image.values(), meas))
}

pub(crate) fn residual_of_values(values: &[f64], meas: &MagnitudeMeasurements) -> f64 {
    let spec = plan(meas.padded_dim()).forward_real(values);
    residual_of_spectrum(&spec, meas)
}

pub(crate) fn residual_of_spectrum(spec: &[Complex64], meas: &MagnitudeMeasurements) -> f64 {
    spec.iter()
        .zip(meas.magnitudes())
        .map(|(v, &y)| {
            let d = y - v.norm();
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta(p: usize, r: usize, c: usize) -> ImageGrid {
        let mut img = ImageGrid::zeros(p, p);
        img.set(r, c, 1.0);
        img
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let spec = forward(&delta(4, 0, 0)).unwrap();
        for v in spec.values() {
            assert!((v.re - 0.25).abs() < 1e-15 && v.im.abs() < 1e-15);
        }
    }

    #[test]
    fn flat_spectrum_inverts_to_delta() {
        let spec = ComplexSpectrum::new(4, vec![Complex64::new(0.25, 0.0); 16]).unwrap();
        let img = pseudoinverse(&spec, &Support::top_left(4, 4)).unwrap();
        for (i, v) in img.values().iter().enumerate() {
            let expected = if i == 0 { 1.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_image_zero_spectrum() {
        let spec = forward(&ImageGrid::zeros(2, 4)).unwrap();
        assert!(spec.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn forward_rejects_non_finite() {
        let mut img = ImageGrid::zeros(2, 4);
        img.values_mut()[0] = f64::INFINITY;
        assert!(forward(&img).is_err());
    }

    #[test]
    fn pseudoinverse_checks_dimensions() {
        let spec = ComplexSpectrum::new(4, vec![Complex64::default(); 16]).unwrap();
        assert!(pseudoinverse(&spec, &Support::top_left(2, 6)).is_err());
    }

    #[test]
    fn measure_noiseless_and_zero_image() {
        let img = ImageGrid::from_inner(2, 4, &[0.1, 0.7, 0.3, 0.9]).unwrap();
        let meas = measure(&img, &NoiseModel::new(0.0), 9).unwrap();
        assert_eq!(meas.magnitudes(), forward(&img).unwrap().magnitudes().as_slice());
        assert_eq!(residual(&img, &meas).unwrap(), 0.0);
        assert_eq!(snr_db(&img, &meas, SnrMode::Intensity).unwrap(), SNR_CAP_DB);

        let zero = ImageGrid::zeros(2, 4);
        let meas = measure(&zero, &NoiseModel::new(5.0), 9).unwrap();
        assert!(meas.magnitudes().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn measure_rejects_negative_alpha() {
        let img = ImageGrid::zeros(2, 4);
        assert!(measure(&img, &NoiseModel::new(-1.0), 0).is_err());
    }

    #[test]
    fn measure_is_seed_deterministic() {
        let img = ImageGrid::from_inner(2, 4, &[0.1, 0.7, 0.3, 0.9]).unwrap();
        let noise = NoiseModel::new(0.5);
        assert_eq!(measure(&img, &noise, 4).unwrap(), measure(&img, &noise, 4).unwrap());
        assert_ne!(measure(&img, &noise, 4).unwrap(), measure(&img, &noise, 5).unwrap());
    }

    #[test]
    fn snr_zero_db_when_intensity_doubles() {
        let img = ImageGrid::from_inner(2, 4, &[0.1, 0.7, 0.3, 0.9]).unwrap();
        let doubled: Vec<f64> = forward(&img)
            .unwrap()
            .magnitudes()
            .iter()
            .map(|m| m * 2f64.sqrt())
            .collect();
        let meas = MagnitudeMeasurements::new(4, doubled, 0.0, 0).unwrap();
        assert!(snr_db(&img, &meas, SnrMode::Intensity).unwrap().abs() < 1e-12);
    }

    #[test]
    fn residual_of_zero_image_is_measurement_energy() {
        let img = ImageGrid::from_inner(2, 4, &[0.1, 0.7, 0.3, 0.9]).unwrap();
        let meas = measure(&img, &NoiseModel::new(0.0), 0).unwrap();
        let energy: f64 = meas.magnitudes().iter().map(|m| m * m).sum();
        let r = residual(&ImageGrid::zeros(2, 4), &meas).unwrap();
        assert!((r - energy).abs() < 1e-15);
    }
}
