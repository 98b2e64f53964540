//! Ensemble variance as a predicted error, and isotonic calibration of that
//! prediction against realized errors.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::grid::ImageGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyReport {
    /// Mean over support pixels of the per-pixel sample variance.
    pub predicted_variance: f64,
    /// Unbiased sample variance per frame pixel.
    pub per_pixel_variance: Vec<f64>,
    pub calibrated_error: Option<f64>,
}

/// Per-pixel unbiased variance across `samples`.
pub fn empirical_variance(samples: &[ImageGrid]) -> Result<UncertaintyReport> {
    if samples.len() < 2 {
        return Err(Error::NotEnough {
            what: "samples",
            required: 2,
            actual: samples.len(),
        });
    }
    let first = &samples[0];
    for s in &samples[1..] {
        first.same_geometry(s)?;
    }
    let q = samples.len() as f64;
    let mut mean = vec![0.0; first.len()];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= q);
    let mut var = vec![0.0; first.len()];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(s.values()).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= q - 1.0);
    let support = first.support();
    let count = support.count().max(1) as f64;
    let predicted_variance = var
        .iter()
        .enumerate()
        .filter(|(i, _)| support.contains(*i))
        .map(|(_, v)| v)
        .sum::<f64>()
        / count;
    Ok(UncertaintyReport {
        predicted_variance,
        per_pixel_variance: var,
        calibrated_error: None,
    })
}

/// Nondecreasing piecewise-linear map through `(predicted, fitted)` points,
/// flat beyond either end.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationModel {
    pub breakpoints: Vec<(f64, f64)>,
}

/// Weighted pool-adjacent-violators. Returns `(start, end, value, weight)`
/// blocks covering the input in order.
fn pav(values: &[f64], weights: &[f64]) -> Vec<(usize, usize, f64, f64)> {
    let mut blocks: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(values.len());
    for (i, (&v, &w)) in values.iter().zip(weights).enumerate() {
        blocks.push((i, i + 1, v, w));
        while blocks.len() > 1 {
            let b = blocks[blocks.len() - 1];
            let a = blocks[blocks.len() - 2];
            if a.2 <= b.2 {
                break;
            }
            let w = a.3 + b.3;
            let merged = (a.0, b.1, (a.2 * a.3 + b.2 * b.3) / w, w);
            blocks.pop();
            *blocks.last_mut().expect("two blocks") = merged;
        }
    }
    blocks
}

/// Sorted distinct predictions with the mean actual value and count of each.
fn pool_ties(pairs: &[(f64, f64)]) -> Result<Vec<(f64, f64, f64)>> {
    if pairs.iter().any(|(p, a)| !p.is_finite() || !a.is_finite()) {
        return Err(Error::NonFinite("calibration pairs"));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut pooled: Vec<(f64, f64, f64)> = Vec::new();
    for (p, a) in sorted {
        match pooled.last_mut() {
            Some(last) if last.0 == p => {
                last.1 += a;
                last.2 += 1.0;
            }
            _ => pooled.push((p, a, 1.0)),
        }
    }
    for g in &mut pooled {
        g.1 /= g.2;
    }
    Ok(pooled)
}

/// Least-squares nondecreasing fit of `actual` on `predicted`, one value per
/// input pair, in input order.
pub fn isotonic_values(pairs: &[(f64, f64)]) -> Result<Vec<f64>> {
    let pooled = pool_ties(pairs)?;
    let values: Vec<f64> = pooled.iter().map(|g| g.1).collect();
    let weights: Vec<f64> = pooled.iter().map(|g| g.2).collect();
    let mut fitted = vec![0.0; pooled.len()];
    for (s, e, v, _) in pav(&values, &weights) {
        fitted[s..e].fill(v);
    }
    Ok(pairs
        .iter()
        .map(|(p, _)| {
            let i = pooled.partition_point(|g| g.0 < *p);
            fitted[i]
        })
        .collect())
}

/// Fits the calibration map. Each pooled block contributes one breakpoint at
/// the weighted mean of its predictions.
pub fn fit_isotonic(pairs: &[(f64, f64)]) -> Result<CalibrationModel> {
    if pairs.len() < 2 {
        return Err(Error::NotEnough {
            what: "calibration pairs",
            required: 2,
            actual: pairs.len(),
        });
    }
    let pooled = pool_ties(pairs)?;
    let values: Vec<f64> = pooled.iter().map(|g| g.1).collect();
    let weights: Vec<f64> = pooled.iter().map(|g| g.2).collect();
    let breakpoints = pav(&values, &weights)
        .into_iter()
        .map(|(s, e, v, w)| {
            let x = pooled[s..e].iter().map(|g| g.0 * g.2).sum::<f64>() / w;
            (x, v)
        })
        .collect();
    Ok(CalibrationModel { breakpoints })
}

impl CalibrationModel {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(invalid("breakpoints", "empty"));
        }
        for w in breakpoints.windows(2) {
            if !(w[0].0 < w[1].0) || w[0].1 > w[1].1 {
                return Err(invalid("breakpoints", "must be increasing in both coordinates"));
            }
        }
        Ok(Self { breakpoints })
    }

    /// `predicted,fitted` lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("predicted,fitted\n");
        for (p, f) in &self.breakpoints {
            s.push_str(&format!("{p},{f}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("predicted")) {
                continue;
            }
            let parse = |s: Option<&str>| {
                s.and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| invalid("calibration csv", format!("bad line {}: {line}", n + 1)))
            };
            let mut it = line.split(',');
            points.push((parse(it.next())?, parse(it.next())?));
        }
        Self::new(points)
    }
}

/// Piecewise-linear interpolation between breakpoints, flat outside.
pub fn calibrate(model: &CalibrationModel, predicted: f64) -> f64 {
    let b = &model.breakpoints;
    let (first, last) = (b[0], b[b.len() - 1]);
    if predicted <= first.0 {
        return first.1;
    }
    if predicted >= last.0 {
        return last.1;
    }
    let i = b.partition_point(|p| p.0 <= predicted);
    let (x0, y0) = b[i - 1];
    let (x1, y1) = b[i];
    if predicted == x0 {
        return y0;
    }
    y0 + (predicted - x0) / (x1 - x0) * (y1 - y0)
}

/// For each nominal level `q`, the fraction of `(std, error)` pairs with
/// `|error| ≤ Φ⁻¹((1 + q)/2)·std`.
pub fn coverage_curve(predictions: &[(f64, f64)], levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    if predictions.is_empty() || levels.is_empty() {
        return Err(invalid("coverage", "needs predictions and levels"));
    }
    let normal = Normal::standard();
    levels
        .iter()
        .map(|&q| {
            if !(q > 0.0 && q < 1.0) {
                return Err(invalid("level", format!("{q} not in (0, 1)")));
            }
            let z = normal.inverse_cdf((1.0 + q) / 2.0);
            let covered = predictions
                .iter()
                .filter(|(s, e)| if s.is_infinite() { true } else { e.abs() <= z * s })
                .count();
            Ok((q, covered as f64 / predictions.len() as f64))
        })
        .collect()
}

/// Mean of `|empirical − nominal|` over a coverage curve.
pub fn coverage_gap(curve: &[(f64, f64)]) -> f64 {
    curve.iter().map(|(n, e)| (e - n).abs()).sum::<f64>() / curve.len().max(1) as f64
}

/// `nominal,empirical` lines.
pub fn coverage_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("nominal,empirical\n");
    for (n, e) in curve {
        s.push_str(&format!("{n},{e}\n"));
    }
    s
}
