//! Iterative refinement from the initialization ensemble.
//!
//! Starting from the ensemble mean plus noise, each step `i = T, …, 1`
//! denoises the iterate, blends the measured magnitudes with those of the
//! denoised image, runs `K` HIO iterations against the blend, and moves the
//! iterate a fraction `1/i` of the way toward the result.

use crate::aggregation::{apply_transform, EquivariantTransform, TransformKind};
use crate::denoiser::DenoiserModel;
use crate::error::{check_dim, invalid, Error, Result};
use crate::fourier::plan;
use crate::grid::{mean_image, ImageGrid, MagnitudeMeasurements};
use crate::initialization::InitEnsemble;
use crate::projections::{project_space_with, SpaceConstraint};
use crate::rng::{derive_seed, stream, support_noise};
use crate::solvers::hio_step_with;

/// Anything that can play the denoiser inside the refinement loop.
pub trait Denoise: Sync {
    /// Required ensemble size, if fixed.
    fn expected_k(&self) -> Option<usize>;

    /// Denoises `x_t` at continuous time `t ∈ (0, 1]`.
    fn denoise_at(&self, x_t: &ImageGrid, t: f64, inits: &[ImageGrid]) -> Result<ImageGrid>;
}

impl Denoise for DenoiserModel {
    fn expected_k(&self) -> Option<usize> {
        Some(self.k())
    }

    fn denoise_at(&self, x_t: &ImageGrid, t: f64, inits: &[ImageGrid]) -> Result<ImageGrid> {
        self.denoise(x_t, self.time_index(t), inits)
    }
}

/// Returns the ground truth, in whichever orientation (as is or its 180°
/// twin) lies closer to the input. Isolates the data-consistency part of the
/// loop.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    pub truth: ImageGrid,
}

impl Denoise for OracleDenoiser {
    fn expected_k(&self) -> Option<usize> {
        None
    }

    fn denoise_at(&self, x_t: &ImageGrid, _t: f64, _inits: &[ImageGrid]) -> Result<ImageGrid> {
        x_t.same_geometry(&self.truth)?;
        let twin = apply_transform(&self.truth, &EquivariantTransform::new(TransformKind::Rot180, x_t.inner_dim()));
        if twin.distance(x_t) < self.truth.distance(x_t) {
            Ok(twin)
        } else {
            Ok(self.truth.clone())
        }
    }
}

/// Returns the mean of `x_t` and the init estimates, the output of a model
/// whose residual head is zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanDenoiser;

impl Denoise for MeanDenoiser {
    fn expected_k(&self) -> Option<usize> {
        None
    }

    fn denoise_at(&self, x_t: &ImageGrid, _t: f64, inits: &[ImageGrid]) -> Result<ImageGrid> {
        let mut all = Vec::with_capacity(inits.len() + 1);
        all.push(x_t.clone());
        all.extend_from_slice(inits);
        let mean = mean_image(&all)?;
        // the model only ever writes the support window
        let (n, p) = (x_t.inner_dim(), x_t.padded_dim());
        let mut values = vec![0.0; p * p];
        for r in 0..n {
            values[r * p..r * p + n].copy_from_slice(&mean.values()[r * p..r * p + n]);
        }
        Ok(x_t.with_values(values))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementConfig {
    /// Number of steps `T`.
    pub steps: usize,
    /// HIO iterations per step `K`.
    pub inner_iters: usize,
    pub beta: f64,
    /// `σ_0 … σ_T`.
    pub sigma: Vec<f64>,
    /// `λ_1 … λ_T`.
    pub lambda: Vec<f64>,
    pub seed: u64,
    pub constraint: SpaceConstraint,
    /// Apply `P_S` to the returned image.
    pub final_projection: bool,
}

/// `λ_i` log-spaced from `10^−0.64` at `i = 1` to `10^−0.10` at `i = T`.
pub fn default_lambda(steps: usize) -> Vec<f64> {
    let (lo, hi) = (-0.64, -0.10);
    (0..steps)
        .map(|i| {
            let frac = if steps > 1 { i as f64 / (steps - 1) as f64 } else { 0.0 };
            10f64.powf(lo + frac * (hi - lo))
        })
        .collect()
}

impl RefinementConfig {
    /// `K = 5`, `β = 0.9`, constant `σ = 1`, default `λ`.
    pub fn new(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            inner_iters: 5,
            beta: 0.9,
            sigma: vec![1.0; steps + 1],
            lambda: default_lambda(steps),
            seed,
            constraint: SpaceConstraint::SupportNonNegative,
            final_projection: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.inner_iters == 0 {
            return Err(invalid("steps", "steps and inner_iters must be positive"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid("beta", format!("{} not in (0, 1]", self.beta)));
        }
        check_dim("sigma length", self.steps + 1, self.sigma.len())?;
        check_dim("lambda length", self.steps, self.lambda.len())?;
        if self.lambda.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(invalid("lambda", "entries must lie in [0, 1]"));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(invalid("sigma", "entries must be non-negative"));
        }
        for i in 2..=self.steps {
            if self.radicand(i) < -1e-15 {
                return Err(invalid(
                    "sigma",
                    format!("sigma[{}]^2 - sigma[{i}]^2 is negative", i - 1),
                ));
            }
        }
        Ok(())
    }

    fn radicand(&self, i: usize) -> f64 {
        self.sigma[i - 1].powi(2) - self.sigma[i].powi(2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementState {
    /// Index of the next step to run; 0 once finished.
    pub step: usize,
    /// `x′_{step+1}`.
    pub x_prime: ImageGrid,
    pub trace: Option<Vec<ImageGrid>>,
}

/// `λ·y + (1 − λ)·|Az|`.
pub fn blend_measurements(
    y: &MagnitudeMeasurements,
    z: &ImageGrid,
    lambda: f64,
) -> Result<MagnitudeMeasurements> {
    check_dim("padded dimension", y.padded_dim(), z.padded_dim())?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid("lambda", format!("{lambda} not in [0, 1]")));
    }
    let spec = plan(z.padded_dim()).forward_real(z.values());
    let blended = y
        .magnitudes()
        .iter()
        .zip(&spec)
        .map(|(&m, s)| lambda * m + (1.0 - lambda) * s.norm())
        .collect();
    MagnitudeMeasurements::new(y.padded_dim(), blended, y.alpha, y.seed)
}

/// `K` HIO steps against `y_blend`.
pub fn data_consistency(
    x: &ImageGrid,
    y_blend: &MagnitudeMeasurements,
    inner_iters: usize,
    beta: f64,
    constraint: SpaceConstraint,
) -> Result<ImageGrid> {
    if inner_iters == 0 {
        return Err(invalid("inner_iters", "must be at least 1"));
    }
    let mut z = x.clone();
    for _ in 0..inner_iters {
        z = hio_step_with(&z, y_blend, beta, constraint)?;
    }
    Ok(z)
}

fn check_ensemble<D: Denoise + ?Sized>(ensemble: &InitEnsemble, model: &D) -> Result<()> {
    if ensemble.is_empty() {
        return Err(Error::NotEnough {
            what: "ensemble estimates",
            required: 1,
            actual: 0,
        });
    }
    if let Some(k) = model.expected_k() {
        check_dim("ensemble size", k, ensemble.len())?;
    }
    Ok(())
}

/// `x′_{T+1} = mean + σ_T·w`, with `w` standard normal on the support.
pub fn initial_state(ensemble: &InitEnsemble, cfg: &RefinementConfig) -> Result<RefinementState> {
    cfg.validate()?;
    let w = support_noise(ensemble.mean.support(), derive_seed(cfg.seed, stream::REFINE_START, 0));
    let sigma = cfg.sigma[cfg.steps];
    let values = ensemble.mean.values().iter().zip(&w).map(|(m, w)| m + sigma * w).collect();
    Ok(RefinementState {
        step: cfg.steps,
        x_prime: ensemble.mean.with_values(values),
        trace: None,
    })
}

/// One step `i = state.step`, returning the state for `i − 1`.
pub fn refine_step<D: Denoise + ?Sized>(
    state: RefinementState,
    ensemble: &InitEnsemble,
    model: &D,
    y: &MagnitudeMeasurements,
    cfg: &RefinementConfig,
) -> Result<RefinementState> {
    cfg.validate()?;
    check_ensemble(ensemble, model)?;
    let i = state.step;
    if i == 0 || i > cfg.steps {
        return Err(invalid("step", format!("{i} not in 1..={}", cfg.steps)));
    }
    let t = i as f64 / cfg.steps as f64;
    let x_i = model.denoise_at(&state.x_prime, t, &ensemble.estimates)?;
    let y_blend = blend_measurements(y, &x_i, cfg.lambda[i - 1])?;
    let z = data_consistency(&x_i, &y_blend, cfg.inner_iters, cfg.beta, cfg.constraint)?;
    let a = 1.0 / i as f64;
    let radicand = if i > 1 { cfg.radicand(i).max(0.0) } else { 0.0 };
    let noise_scale = (i - 1) as f64 / cfg.steps as f64 * radicand.sqrt();
    let values: Vec<f64> = if noise_scale > 0.0 {
        let eps = support_noise(z.support(), derive_seed(cfg.seed, stream::REFINE_STEP, i as u64));
        z.values()
            .iter()
            .zip(state.x_prime.values())
            .zip(&eps)
            .map(|((&zv, &xv), &e)| a * zv + (1.0 - a) * xv + noise_scale * e)
            .collect()
    } else {
        z.values()
            .iter()
            .zip(state.x_prime.values())
            .map(|(&zv, &xv)| a * zv + (1.0 - a) * xv)
            .collect()
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { iteration: i });
    }
    let x_prime = state.x_prime.with_values(values);
    let trace = state.trace.map(|mut t| {
        t.push(x_prime.clone());
        t
    });
    Ok(RefinementState {
        step: i - 1,
        x_prime,
        trace,
    })
}

fn run<D: Denoise + ?Sized>(
    y: &MagnitudeMeasurements,
    ensemble: &InitEnsemble,
    model: &D,
    cfg: &RefinementConfig,
    keep_trace: bool,
) -> Result<(ImageGrid, Vec<ImageGrid>)> {
    check_ensemble(ensemble, model)?;
    let mut state = initial_state(ensemble, cfg)?;
    if keep_trace {
        state.trace = Some(vec![state.x_prime.clone()]);
    }
    while state.step > 0 {
        state = refine_step(state, ensemble, model, y, cfg)?;
    }
    let out = if cfg.final_projection {
        project_space_with(&state.x_prime, cfg.constraint).0
    } else {
        state.x_prime
    };
    Ok((out, state.trace.unwrap_or_default()))
}

/// Runs steps `T` down to 1 and returns `x′_1`.
pub fn reconstruct<D: Denoise + ?Sized>(
    y: &MagnitudeMeasurements,
    ensemble: &InitEnsemble,
    model: &D,
    cfg: &RefinementConfig,
) -> Result<ImageGrid> {
    run(y, ensemble, model, cfg, false).map(|(x, _)| x)
}

/// As [`reconstruct`], also returning `x′_{T+1}, x′_T, …, x′_1`.
pub fn reconstruct_traced<D: Denoise + ?Sized>(
    y: &MagnitudeMeasurements,
    ensemble: &InitEnsemble,
    model: &D,
    cfg: &RefinementConfig,
) -> Result<(ImageGrid, Vec<ImageGrid>)> {
    run(y, ensemble, model, cfg, true)
}

/// Coordinate search over `λ`: each entry in turn takes the grid value that
/// minimizes the summed measurement residual of the reconstructions.
pub fn tune_lambda<D: Denoise + ?Sized>(
    problems: &[(MagnitudeMeasurements, InitEnsemble)],
    model: &D,
    cfg: &RefinementConfig,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let score = |lambda: &[f64]| -> Result<f64> {
        let c = RefinementConfig {
            lambda: lambda.to_vec(),
            ..cfg.clone()
        };
        problems.iter().try_fold(0.0, |acc, (y, e)| {
            let x = reconstruct(y, e, model, &c)?;
            Ok(acc + crate::fourier::residual(&x, y)?)
        })
    };
    let mut lambda = cfg.lambda.clone();
    let mut best = score(&lambda)?;
    for i in 0..lambda.len() {
        for &g in grid {
            let mut trial = lambda.clone();
            trial[i] = g;
            let s = score(&trial)?;
            if s < best {
                best = s;
                lambda = trial;
            }
        }
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::{measure, residual};
    use crate::grid::NoiseModel;

    fn truth() -> ImageGrid {
        let px: Vec<f64> = (0..25).map(|i| 0.2 + ((i * 3 % 7) as f64) / 10.0).collect();
        ImageGrid::from_inner(5, 10, &px).unwrap()
    }

    fn ensemble(x: &ImageGrid) -> InitEnsemble {
        let a = x.lin_comb(1.0, &x.with_values(vec![0.05; 100]), 1.0);
        let b = x.lin_comb(0.9, x, 0.0);
        InitEnsemble::from_estimates(vec![a, b], vec![0.0, 0.0], vec![1, 2]).unwrap()
    }

    #[test]
    fn lambda_ladder() {
        let l = default_lambda(4);
        assert!((l[0] - 10f64.powf(-0.64)).abs() < 1e-15);
        assert!((l[3] - 10f64.powf(-0.10)).abs() < 1e-15);
        assert!(l.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn blend_endpoints() {
        let x = truth();
        let y = measure(&x, &NoiseModel::new(0.0), 0).unwrap();
        let z = ensemble(&x).estimates[0].clone();
        assert_eq!(blend_measurements(&y, &z, 1.0).unwrap().magnitudes(), y.magnitudes());
        let self_mags = measure(&z, &NoiseModel::new(0.0), 0).unwrap();
        assert_eq!(blend_measurements(&y, &z, 0.0).unwrap().magnitudes(), self_mags.magnitudes());
    }

    #[test]
    fn step_one_returns_consistency_output() {
        let x = truth();
        let y = measure(&x, &NoiseModel::new(0.0), 0).unwrap();
        let e = ensemble(&x);
        let cfg = RefinementConfig::new(3, 1);
        let state = RefinementState {
            step: 1,
            x_prime: e.mean.clone(),
            trace: None,
        };
        let out = refine_step(state, &e, &MeanDenoiser, &y, &cfg).unwrap();
        let x1 = MeanDenoiser.denoise_at(&e.mean, 1.0 / 3.0, &e.estimates).unwrap();
        let yb = blend_measurements(&y, &x1, cfg.lambda[0]).unwrap();
        let z = data_consistency(&x1, &yb, 5, 0.9, cfg.constraint).unwrap();
        assert_eq!(out.step, 0);
        assert_eq!(out.x_prime, z);
    }

    #[test]
    fn oracle_step_is_consistent() {
        let x = truth();
        let y = measure(&x, &NoiseModel::new(0.0), 0).unwrap();
        let e = ensemble(&x);
        let mut cfg = RefinementConfig::new(1, 0);
        cfg.lambda = vec![1.0];
        let out = reconstruct(&y, &e, &OracleDenoiser { truth: x.clone() }, &cfg).unwrap();
        assert!(residual(&out, &y).unwrap() <= 1e-8);
        assert!(out.distance(&x) < 1e-8);
    }

    #[test]
    fn increasing_sigma_is_rejected() {
        let mut cfg = RefinementConfig::new(3, 0);
        cfg.sigma = vec![1.0, 0.5, 1.0, 1.0];
        assert!(cfg.validate().is_err());
        cfg.sigma = vec![2.0, 1.5, 1.0, 0.5];
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn model_size_must_match_ensemble() {
        let x = truth();
        let y = measure(&x, &NoiseModel::new(0.0), 0).unwrap();
        let model = DenoiserModel::zeros(crate::denoiser::DenoiserArch::new(3), 8).unwrap();
        assert!(reconstruct(&y, &ensemble(&x), &model, &RefinementConfig::new(2, 0)).is_err());
    }

    #[test]
    fn trace_has_one_snapshot_per_step() {
        let x = truth();
        let y = measure(&x, &NoiseModel::new(0.0), 0).unwrap();
        let cfg = RefinementConfig::new(4, 9);
        let (out, trace) = reconstruct_traced(&y, &ensemble(&x), &MeanDenoiser, &cfg).unwrap();
        assert_eq!(trace.len(), 5);
        assert_eq!(out, reconstruct(&y, &ensemble(&x), &MeanDenoiser, &cfg).unwrap());
    }
}
