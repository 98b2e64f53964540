//! Equivariant-transform augmentation and posterior-sample averaging.
//!
//! A combined run reconstructs from the ensemble and from its transformed
//! copy, maps the second result back and averages the pair. Aggregation
//! repeats this `p` times and keeps all `2p` branch outputs as samples.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::grid::{mean_image, ImageGrid, MagnitudeMeasurements};
use crate::initialization::InitEnsemble;
use crate::refinement::{reconstruct, Denoise, RefinementConfig};
use crate::rng::{derive_seed, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    /// No-op, for tests that need both branches to coincide.
    Identity,
    /// Point reflection within the support window. For real images this is
    /// the conjugate-inversion twin and leaves `|Ax|` unchanged.
    Rot180,
    /// Experimental: does not preserve oversampled Fourier magnitudes.
    FlipH,
    /// Experimental: does not preserve oversampled Fourier magnitudes.
    FlipV,
}

impl TransformKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Self::Identity),
            "rot180" => Some(Self::Rot180),
            "flip_h" => Some(Self::FlipH),
            "flip_v" => Some(Self::FlipV),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Rot180 => "rot180",
            Self::FlipH => "flip_h",
            Self::FlipV => "flip_v",
        }
    }

    pub fn is_experimental(self) -> bool {
        matches!(self, Self::FlipH | Self::FlipV)
    }
}

/// A pixel permutation of the top-left `inner_dim × inner_dim` window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EquivariantTransform {
    pub kind: TransformKind,
    pub inner_dim: usize,
}

impl EquivariantTransform {
    pub fn new(kind: TransformKind, inner_dim: usize) -> Self {
        Self { kind, inner_dim }
    }

    /// Every supported kind is an involution.
    pub fn inverse(&self) -> Self {
        *self
    }

    fn source(&self, r: usize, c: usize) -> (usize, usize) {
        let last = self.inner_dim - 1;
        match self.kind {
            TransformKind::Identity => (r, c),
            TransformKind::Rot180 => (last - r, last - c),
            TransformKind::FlipH => (r, last - c),
            TransformKind::FlipV => (last - r, c),
        }
    }
}

/// Permutes the window pixels; everything outside the window stays put.
pub fn apply_transform(x: &ImageGrid, t: &EquivariantTransform) -> ImageGrid {
    let p = x.padded_dim();
    let n = t.inner_dim.min(x.inner_dim());
    let t = EquivariantTransform::new(t.kind, n);
    let src = x.values();
    let mut out = src.to_vec();
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = t.source(r, c);
            out[r * p + c] = src[sr * p + sc];
        }
    }
    x.with_values(out)
}

fn transform_ensemble(ensemble: &InitEnsemble, t: &EquivariantTransform) -> Result<InitEnsemble> {
    InitEnsemble::from_estimates(
        ensemble.estimates.iter().map(|e| apply_transform(e, t)).collect(),
        ensemble.residuals.clone(),
        ensemble.seeds.clone(),
    )
}

/// Both branch outputs of one combined run, the second already mapped back.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedRun {
    pub direct: ImageGrid,
    pub transformed_back: ImageGrid,
    pub combined: ImageGrid,
}

/// Reconstructs from `ensemble` and from its transform (with a fresh seed),
/// then averages the first output with the back-transformed second one.
pub fn combined_run<D: Denoise + ?Sized>(
    y: &MagnitudeMeasurements,
    ensemble: &InitEnsemble,
    model: &D,
    cfg: &RefinementConfig,
    t: &EquivariantTransform,
) -> Result<CombinedRun> {
    let transformed = transform_ensemble(ensemble, t)?;
    let branch_cfg = RefinementConfig {
        seed: derive_seed(cfg.seed, stream::AGGREGATE_BRANCH, 1),
        ..cfg.clone()
    };
    let (direct, other) = rayon::join(
        || reconstruct(y, ensemble, model, cfg),
        || reconstruct(y, &transformed, model, &branch_cfg),
    );
    let direct = direct?;
    let transformed_back = apply_transform(&other?, &t.inverse());
    let combined = direct.lin_comb(0.5, &transformed_back, 0.5);
    Ok(CombinedRun {
        direct,
        transformed_back,
        combined,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult {
    /// The `2p` branch outputs, in run order (direct, mapped-back) pairs.
    pub samples: Vec<ImageGrid>,
    /// The `p` pairwise means.
    pub combined: Vec<ImageGrid>,
    /// Average of the samples.
    pub mean: ImageGrid,
    pub p: usize,
}

/// `p` independent combined runs; run `j` uses a seed derived from
/// `(cfg.seed, j)`.
pub fn aggregate<D: Denoise + Sync + ?Sized>(
    y: &MagnitudeMeasurements,
    ensemble: &InitEnsemble,
    model: &D,
    cfg: &RefinementConfig,
    t: &EquivariantTransform,
    p: usize,
) -> Result<EnsembleResult> {
    if p == 0 {
        return Err(invalid("p", "need at least one run"));
    }
    let runs: Vec<CombinedRun> = (0..p)
        .into_par_iter()
        .map(|j| {
            let run_cfg = RefinementConfig {
                seed: derive_seed(cfg.seed, stream::AGGREGATE_RUN, j as u64),
                ..cfg.clone()
            };
            combined_run(y, ensemble, model, &run_cfg, t)
        })
        .collect::<Result<_>>()?;
    let mut samples = Vec::with_capacity(2 * p);
    let mut combined = Vec::with_capacity(p);
    for run in runs {
        samples.push(run.direct);
        samples.push(run.transformed_back);
        combined.push(run.combined);
    }
    let mean = mean_image(&samples)?;
    Ok(EnsembleResult {
        samples,
        combined,
        mean,
        p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asym(n: usize, p: usize) -> ImageGrid {
        let px: Vec<f64> = (0..n * n).map(|i| ((i * 7 + 3) % 11) as f64 / 10.0).collect();
        ImageGrid::from_inner(n, p, &px).unwrap()
    }

    #[test]
    fn transforms_are_involutions() {
        let x = asym(5, 10);
        for kind in [TransformKind::Identity, TransformKind::Rot180, TransformKind::FlipH, TransformKind::FlipV] {
            let t = EquivariantTransform::new(kind, 5);
            assert_eq!(apply_transform(&apply_transform(&x, &t), &t.inverse()), x);
        }
    }

    #[test]
    fn rot180_moves_corners() {
        let x = asym(4, 8);
        let r = apply_transform(&x, &EquivariantTransform::new(TransformKind::Rot180, 4));
        assert_eq!(r.get(0, 0), x.get(3, 3));
        assert_eq!(r.get(1, 2), x.get(2, 1));
        assert_eq!(r.get(5, 5), 0.0);
        let f = apply_transform(&x, &EquivariantTransform::new(TransformKind::FlipH, 4));
        assert_eq!(f.get(1, 0), x.get(1, 3));
    }

    #[test]
    fn constant_image_is_unchanged() {
        let x = ImageGrid::from_inner(4, 8, &[0.3; 16]).unwrap();
        let t = EquivariantTransform::new(TransformKind::Rot180, 4);
        assert_eq!(apply_transform(&x, &t), x);
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in [TransformKind::Identity, TransformKind::Rot180, TransformKind::FlipH, TransformKind::FlipV] {
            assert_eq!(TransformKind::parse(kind.as_str()), Some(kind));
        }
        assert!(TransformKind::FlipV.is_experimental());
        assert!(!TransformKind::Rot180.is_experimental());
    }
}
