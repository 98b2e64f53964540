//! PSNR and SSIM over the support window, with trivial-ambiguity resolution.

use crate::aggregation::{apply_transform, EquivariantTransform, TransformKind};
use crate::error::{invalid, Result};
use crate::grid::ImageGrid;

/// Reported PSNR when the images are identical.
pub const PSNR_CAP_DB: f64 = 300.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ambiguity {
    Identity,
    Rot180,
}

impl Ambiguity {
    pub fn as_str(self) -> &'static str {
        match self {
            Ambiguity::Identity => "identity",
            Ambiguity::Rot180 => "rot180",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub ambiguity_used: Ambiguity,
    pub shift_search_used: bool,
    /// Circular shift (rows, cols) applied when the shift search ran.
    pub shift: (usize, usize),
}

fn window_pair(x: &ImageGrid, reference: &ImageGrid) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    x.same_geometry(reference)?;
    Ok((x.inner_values(), reference.inner_values(), x.inner_dim()))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// `10·log₁₀(1/MSE)` over the `N×N` window, peak value 1.
pub fn psnr(x: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    let (a, b, _) = window_pair(x, reference)?;
    Ok(psnr_from_mse(mse(&a, &b)))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gy in &g {
        for gx in &g {
            w.push(gy * gx);
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over
/// every window position that fits inside the `N×N` support window.
pub fn ssim(x: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    let (a, b, n) = window_pair(x, reference)?;
    if n < SSIM_WINDOW {
        return Err(invalid(
            "image",
            format!("{n}x{n} window is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"),
        ));
    }
    let w = gaussian_window();
    let positions = n - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for r0 in 0..positions {
        for c0 in 0..positions {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dr in 0..SSIM_WINDOW {
                for dc in 0..SSIM_WINDOW {
                    let wt = w[dr * SSIM_WINDOW + dc];
                    let i = (r0 + dr) * n + c0 + dc;
                    let (u, v) = (a[i], b[i]);
                    mx += wt * u;
                    my += wt * v;
                    sxx += wt * u * u;
                    syy += wt * v * v;
                    sxy += wt * u * v;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        }
    }
    Ok(total / (positions * positions) as f64)
}

/// Circularly shifts the whole frame by `(dr, dc)`.
pub fn circular_shift(x: &ImageGrid, dr: usize, dc: usize) -> ImageGrid {
    let p = x.padded_dim();
    let mut out = vec![0.0; p * p];
    for r in 0..p {
        for c in 0..p {
            out[((r + dr) % p) * p + (c + dc) % p] = x.values()[r * p + c];
        }
    }
    x.with_values(out)
}

fn best_shift(x: &ImageGrid, reference: &ImageGrid) -> (usize, usize, f64) {
    let p = x.padded_dim();
    let n = x.inner_dim();
    let target = reference.inner_values();
    let mut best = (0, 0, f64::INFINITY);
    for dr in 0..p {
        for dc in 0..p {
            let mut err = 0.0;
            for r in 0..n {
                let sr = (r + p - dr) % p;
                for c in 0..n {
                    let sc = (c + p - dc) % p;
                    let d = x.values()[sr * p + sc] - target[r * n + c];
                    err += d * d;
                }
            }
            if err < best.2 {
                best = (dr, dc, err);
            }
        }
    }
    best
}

/// Picks the better of `x` and its 180° rotation (the conjugate-inversion
/// twin) by PSNR against `reference`. With `search_shifts`, each candidate is
/// also aligned by the circular shift that minimizes the window error.
pub fn resolve_ambiguity(
    x: &ImageGrid,
    reference: &ImageGrid,
    search_shifts: bool,
) -> Result<(ImageGrid, MetricReport)> {
    x.same_geometry(reference)?;
    let twin = apply_transform(x, &EquivariantTransform::new(TransformKind::Rot180, x.inner_dim()));
    let mut best: Option<(ImageGrid, Ambiguity, (usize, usize), f64)> = None;
    for (candidate, amb) in [(x.clone(), Ambiguity::Identity), (twin, Ambiguity::Rot180)] {
        let (aligned, shift) = if search_shifts {
            let (dr, dc, _) = best_shift(&candidate, reference);
            (circular_shift(&candidate, dr, dc), (dr, dc))
        } else {
            (candidate, (0, 0))
        };
        let score = psnr(&aligned, reference)?;
        if best.as_ref().is_none_or(|b| score > b.3) {
            best = Some((aligned, amb, shift, score));
        }
    }
    let (image, ambiguity_used, shift, psnr_db) = best.expect("two candidates");
    let ssim = if image.inner_dim() >= SSIM_WINDOW {
        ssim(&image, reference)?
    } else {
        f64::NAN
    };
    Ok((
        image,
        MetricReport {
            psnr_db,
            ssim,
            ambiguity_used,
            shift_search_used: search_shifts,
            shift,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(n: usize) -> ImageGrid {
        let px: Vec<f64> = (0..n * n)
            .map(|i| {
                let (r, c) = (i / n, i % n);
                if (r / 4 + c / 4) % 2 == 0 { 0.9 } else { 0.1 }
            })
            .collect();
        ImageGrid::from_inner(n, 2 * n, &px).unwrap()
    }

    #[test]
    fn psnr_cap_and_offset() {
        let x = pattern(16);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
        let shifted: Vec<f64> = x.inner_values().iter().map(|v| v + 0.1).collect();
        let y = ImageGrid::from_inner(16, 32, &shifted).unwrap();
        assert!((psnr(&y, &x).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&y, &x).unwrap(), psnr(&x, &y).unwrap());
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let x = pattern(32);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let inv: Vec<f64> = x.inner_values().iter().map(|v| 1.0 - v).collect();
        let y = ImageGrid::from_inner(32, 64, &inv).unwrap();
        assert!(ssim(&y, &x).unwrap() < 0.5);
        assert!((ssim(&y, &x).unwrap() - ssim(&x, &y).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ssim_of_constants_is_luminance_term() {
        let (a, b) = (0.3, 0.7);
        let x = ImageGrid::from_inner(12, 24, &[a; 144]).unwrap();
        let y = ImageGrid::from_inner(12, 24, &[b; 144]).unwrap();
        let expected = (2.0 * a * b + SSIM_C1) / (a * a + b * b + SSIM_C1);
        assert!((ssim(&x, &y).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_windows() {
        let x = pattern(8);
        assert!(ssim(&x, &x).is_err());
    }

    #[test]
    fn resolves_twin_and_reports_shift_penalty() {
        let x = pattern(16);
        let mut asym = x.clone();
        asym.set(0, 0, 0.5);
        let twin = apply_transform(&asym, &EquivariantTransform::new(TransformKind::Rot180, 16));
        let (_, rep) = resolve_ambiguity(&asym, &asym, false).unwrap();
        assert_eq!((rep.ambiguity_used, rep.psnr_db), (Ambiguity::Identity, PSNR_CAP_DB));
        let (_, rep) = resolve_ambiguity(&twin, &asym, false).unwrap();
        assert_eq!((rep.ambiguity_used, rep.psnr_db), (Ambiguity::Rot180, PSNR_CAP_DB));

        let moved = circular_shift(&asym, 3, 5);
        let (_, rep) = resolve_ambiguity(&moved, &asym, false).unwrap();
        assert!(rep.psnr_db < 30.0);
        let (_, rep) = resolve_ambiguity(&moved, &asym, true).unwrap();
        assert_eq!(rep.psnr_db, PSNR_CAP_DB);
        assert_eq!(rep.shift, (32 - 3, 32 - 5));
    }
}
